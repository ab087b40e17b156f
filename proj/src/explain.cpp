#include "midemo/explain.hpp"

#include <Eigen/Dense>

#include "midemo/eval.hpp"
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace midemo::explain {

namespace {

std::string fmtg(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::vector<std::string> default_names(std::size_t n, const char* prefix) {
  std::vector<std::string> names;
  names.reserve(n);
  for (std::size_t i = 0; i < n; ++i) names.push_back(prefix + std::to_string(i));
  return names;
}

Eigen::MatrixXd to_eigen(const Mat& m) {
  Eigen::MatrixXd out(m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) out(r, c) = m.at(r, c);
  return out;
}

}  // namespace

std::vector<double> LinearMap::apply(std::span<const double> x) const {
  if (x.size() != in_dim())
    throw DimensionError("LinearMap::apply: expected " + std::to_string(in_dim()) +
                         " inputs, got " + std::to_string(x.size()));
  std::vector<double> y(out_dim());
  for (std::size_t e = 0; e < out_dim(); ++e) {
    double acc = 0.0;
    for (std::size_t f = 0; f < in_dim(); ++f) acc += weights.at(f, e) * x[f];
    y[e] = acc + intercepts[e];
  }
  return y;
}

Mat LinearMap::apply(const Mat& x) const {
  if (x.cols != in_dim())
    throw DimensionError("LinearMap::apply: matrix has " + std::to_string(x.cols) +
                         " columns, expected " + std::to_string(in_dim()));
  Mat y(x.rows, out_dim());
  for (std::size_t s = 0; s < x.rows; ++s) {
    auto row = apply(std::span<const double>(x.data.data() + s * x.cols, x.cols));
    for (std::size_t e = 0; e < out_dim(); ++e) y.at(s, e) = row[e];
  }
  return y;
}

LinearMap fit_ols(const Mat& x, const Mat& y, const OlsOptions& opts) {
  const std::size_t n = x.rows, p = x.cols, q = y.cols;
  if (y.rows != n)
    throw DimensionError("fit_ols: X has " + std::to_string(n) + " rows, Y has " +
                         std::to_string(y.rows));
  if (n < p + 2)
    throw DataError("fit_ols: need at least " + std::to_string(p + 2) +
                    " rows for " + std::to_string(p) + " features, got " +
                    std::to_string(n));
  for (double v : x.data)
    if (!std::isfinite(v)) throw NumericError("fit_ols: non-finite value in X");
  for (double v : y.data)
    if (!std::isfinite(v)) throw NumericError("fit_ols: non-finite value in Y");

  Eigen::MatrixXd design(n, p + 1);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < p; ++c) design(r, c) = x.at(r, c);
    design(r, p) = 1.0;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design,
                                        Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sigma = svd.singularValues();
  const double tau = opts.sv_threshold * sigma(0);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sigma.size(); ++i)
    if (sigma(i) > tau) ++rank;

  if (rank < static_cast<Eigen::Index>(p + 1) && !opts.allow_pseudo_inverse) {
    // Name the columns involved in the null space.
    std::string cols;
    const auto& v = svd.matrixV();
    for (Eigen::Index k = rank; k < sigma.size(); ++k) {
      double peak = v.col(k).cwiseAbs().maxCoeff();
      for (Eigen::Index c = 0; c <= static_cast<Eigen::Index>(p); ++c) {
        if (std::abs(v(c, k)) >= 0.1 * peak) {
          std::string name = (c == static_cast<Eigen::Index>(p))
                                 ? std::string("intercept")
                                 : "x" + std::to_string(c);
          if (cols.find(name) == std::string::npos)
            cols += (cols.empty() ? "" : ", ") + name;
        }
      }
    }
    throw SingularMatrix("fit_ols: rank-deficient design (rank " +
                         std::to_string(rank) + " of " + std::to_string(p + 1) +
                         "); dependent columns: " + cols);
  }

  // Minimum-norm least squares through the truncated SVD.
  Eigen::MatrixXd uty = svd.matrixU().transpose() * to_eigen(y);
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (sigma(i) > tau)
      uty.row(i) /= sigma(i);
    else
      uty.row(i).setZero();
  }
  Eigen::MatrixXd coeff = svd.matrixV() * uty;  // (p+1) x q

  LinearMap map;
  map.weights = Mat(p, q);
  map.intercepts.resize(q);
  for (std::size_t f = 0; f < p; ++f)
    for (std::size_t e = 0; e < q; ++e) map.weights.at(f, e) = coeff(f, e);
  for (std::size_t e = 0; e < q; ++e) map.intercepts[e] = coeff(p, e);
  return map;
}

EffectsTensor compute_effects(const LinearMap& map, const Mat& x,
                              const std::vector<std::string>& song_ids,
                              const std::string& provenance) {
  if (x.cols != map.in_dim())
    throw DimensionError("compute_effects: feature count mismatch");
  if (!song_ids.empty() && song_ids.size() != x.rows)
    throw DimensionError("compute_effects: song id count mismatch");
  for (double v : x.data)
    if (!std::isfinite(v)) throw NumericError("compute_effects: non-finite feature");

  EffectsTensor out;
  out.song_ids = song_ids.empty() ? default_names(x.rows, "row") : song_ids;
  out.n_features = map.in_dim();
  out.n_targets = map.out_dim();
  out.provenance = provenance;
  out.values.resize(x.rows * out.n_features * out.n_targets);
  std::size_t idx = 0;
  for (std::size_t s = 0; s < x.rows; ++s)
    for (std::size_t f = 0; f < out.n_features; ++f)
      for (std::size_t e = 0; e < out.n_targets; ++e)
        out.values[idx++] = map.weights.at(f, e) * x.at(s, f);
  return out;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw DataError("quantile: empty input");
  std::sort(values.begin(), values.end());
  const double h = static_cast<double>(values.size() - 1) * p;
  const std::size_t lo = static_cast<std::size_t>(h);
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

EffectsDistribution effects_distribution(const EffectsTensor& effects) {
  if (effects.song_ids.empty())
    throw DataError("effects_distribution: no songs");
  EffectsDistribution dist;
  dist.n_features = effects.n_features;
  dist.n_targets = effects.n_targets;
  dist.cells.resize(effects.n_features * effects.n_targets);
  std::vector<double> cell(effects.song_ids.size());
  for (std::size_t f = 0; f < effects.n_features; ++f) {
    for (std::size_t e = 0; e < effects.n_targets; ++e) {
      for (std::size_t s = 0; s < effects.song_ids.size(); ++s)
        cell[s] = effects.at(s, f, e);
      BoxStats& box = dist.cells[f * effects.n_targets + e];
      box.q1 = quantile(cell, 0.25);
      box.median = quantile(cell, 0.5);
      box.q3 = quantile(cell, 0.75);
      const double iqr = box.q3 - box.q1;
      const double lo_fence = box.q1 - 1.5 * iqr;
      const double hi_fence = box.q3 + 1.5 * iqr;
      box.lo_whisker = std::numeric_limits<double>::infinity();
      box.hi_whisker = -std::numeric_limits<double>::infinity();
      box.outliers.clear();
      for (double v : cell) {
        if (v < lo_fence || v > hi_fence) {
          box.outliers.push_back(v);
        } else {
          box.lo_whisker = std::min(box.lo_whisker, v);
          box.hi_whisker = std::max(box.hi_whisker, v);
        }
      }
      std::sort(box.outliers.begin(), box.outliers.end());
    }
  }
  return dist;
}

CorrelationMatrix correlation_matrix(const Mat& features, const Mat& targets) {
  if (features.rows != targets.rows)
    throw DimensionError("correlation_matrix: row count mismatch");
  if (features.rows < 2)
    throw DataError("correlation_matrix: need at least 2 rows");
  CorrelationMatrix out;
  out.r = Mat(features.cols, targets.cols);
  out.degenerate.assign(features.cols * targets.cols, false);
  std::vector<double> fcol(features.rows), tcol(targets.rows);
  for (std::size_t f = 0; f < features.cols; ++f) {
    for (std::size_t r = 0; r < features.rows; ++r) fcol[r] = features.at(r, f);
    for (std::size_t e = 0; e < targets.cols; ++e) {
      for (std::size_t r = 0; r < targets.rows; ++r) tcol[r] = targets.at(r, e);
      try {
        out.r.at(f, e) = eval::pearson(fcol, tcol);
      } catch (const eval::DegenerateCorrelation&) {
        out.r.at(f, e) = 0.0;
        out.degenerate[f * targets.cols + e] = true;
      }
    }
  }
  return out;
}

ContrastPair select_contrast_pair(const Mat& emotion, const Mat& midlevel,
                                  PairMode mode) {
  const std::size_t n = emotion.rows;
  if (midlevel.rows != n)
    throw DimensionError("select_contrast_pair: row count mismatch");
  if (n < 2) throw DataError("select_contrast_pair: need at least 2 songs");

  auto pair_distances = [n](const Mat& m) {
    std::vector<double> d;
    d.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) {
          const double diff = m.at(i, c) - m.at(j, c);
          acc += diff * diff;
        }
        d.push_back(std::sqrt(acc));
      }
    }
    return d;
  };

  const std::vector<double> de = pair_distances(emotion);
  const std::vector<double> dm = pair_distances(midlevel);

  auto scale = [](const std::vector<double>& d, bool& degenerate) {
    const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
    std::vector<double> s(d.size(), 0.0);
    if (*hi == *lo) {
      degenerate = true;
      return s;
    }
    const double span = *hi - *lo;
    for (std::size_t k = 0; k < d.size(); ++k) s[k] = (d[k] - *lo) / span;
    return s;
  };

  ContrastPair best;
  bool deg_e = false, deg_m = false;
  const std::vector<double> se = scale(de, deg_e);
  const std::vector<double> sm = scale(dm, deg_m);
  best.degenerate = deg_e || deg_m;

  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j, ++k) {
      const double score = (mode == PairMode::Paper) ? se[k] - (1.0 - sm[k])
                                                     : sm[k] - se[k];
      if (score > best_score) {
        best_score = score;
        best.i = i;
        best.j = j;
        best.d_e_raw = de[k];
        best.d_mid_raw = dm[k];
        best.d_e = se[k];
        best.d_mid = sm[k];
        best.d_comb = se[k] - (1.0 - sm[k]);
      }
    }
  }
  return best;
}

SongReport song_report(const std::string& song_id, const EffectsTensor& effects,
                       const LinearMap& map, const Mat* annotations,
                       std::vector<std::string> features,
                       std::vector<std::string> targets, std::size_t top_k) {
  auto it = std::find(effects.song_ids.begin(), effects.song_ids.end(), song_id);
  if (it == effects.song_ids.end())
    throw DataError("song_report: unknown song id '" + song_id + "'");
  const std::size_t s =
      static_cast<std::size_t>(it - effects.song_ids.begin());
  if (map.in_dim() != effects.n_features || map.out_dim() != effects.n_targets)
    throw DimensionError("song_report: map shape does not match effects tensor");
  if (annotations && (annotations->rows != effects.song_ids.size() ||
                      annotations->cols != effects.n_targets))
    throw DimensionError("song_report: annotation matrix shape mismatch");

  SongReport rep;
  rep.song_id = song_id;
  rep.features = features.empty() ? default_names(effects.n_features, "feature")
                                  : std::move(features);
  rep.targets = targets.empty() ? default_names(effects.n_targets, "target")
                                : std::move(targets);
  rep.effects = Mat(effects.n_features, effects.n_targets);
  rep.intercepts = map.intercepts;
  rep.predicted.resize(effects.n_targets);
  rep.annotated.assign(effects.n_targets,
                       std::numeric_limits<double>::quiet_NaN());
  for (std::size_t e = 0; e < effects.n_targets; ++e) {
    double sum = 0.0;
    for (std::size_t f = 0; f < effects.n_features; ++f) {
      rep.effects.at(f, e) = effects.at(s, f, e);
      sum += effects.at(s, f, e);
    }
    rep.predicted[e] = sum + map.intercepts[e];
    if (annotations) rep.annotated[e] = annotations->at(s, e);
  }

  rep.top_positive.resize(effects.n_targets);
  rep.top_negative.resize(effects.n_targets);
  for (std::size_t e = 0; e < effects.n_targets; ++e) {
    std::vector<std::size_t> order(effects.n_features);
    for (std::size_t f = 0; f < order.size(); ++f) order[f] = f;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return rep.effects.at(a, e) > rep.effects.at(b, e);
    });
    for (std::size_t f : order) {
      if (rep.effects.at(f, e) > 0.0 && rep.top_positive[e].size() < top_k)
        rep.top_positive[e].push_back({rep.features[f], rep.effects.at(f, e)});
    }
    for (auto rit = order.rbegin(); rit != order.rend(); ++rit) {
      if (rep.effects.at(*rit, e) < 0.0 && rep.top_negative[e].size() < top_k)
        rep.top_negative[e].push_back({rep.features[*rit], rep.effects.at(*rit, e)});
    }
  }
  return rep;
}

std::string song_report_json(const SongReport& report) {
  nlohmann::ordered_json doc;
  doc["song_id"] = report.song_id;
  doc["targets"] = nlohmann::ordered_json::array();
  for (std::size_t e = 0; e < report.targets.size(); ++e) {
    nlohmann::ordered_json t;
    t["name"] = report.targets[e];
    t["predicted"] = report.predicted[e];
    if (std::isfinite(report.annotated[e])) t["annotated"] = report.annotated[e];
    t["intercept"] = report.intercepts[e];
    t["effects"] = nlohmann::ordered_json::object();
    for (std::size_t f = 0; f < report.features.size(); ++f)
      t["effects"][report.features[f]] = report.effects.at(f, e);
    auto contrib = [](const std::vector<FeatureContribution>& list) {
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (const auto& c : list)
        arr.push_back({{"feature", c.feature}, {"effect", c.effect}});
      return arr;
    };
    t["top_positive"] = contrib(report.top_positive[e]);
    t["top_negative"] = contrib(report.top_negative[e]);
    doc["targets"].push_back(t);
  }
  return doc.dump(2) + "\n";
}

std::string song_report_text(const SongReport& report) {
  std::ostringstream out;
  out << "song " << report.song_id << "\n";
  for (std::size_t e = 0; e < report.targets.size(); ++e) {
    out << "  " << report.targets[e] << ": predicted " << fmt3(report.predicted[e]);
    if (std::isfinite(report.annotated[e]))
      out << ", annotated " << fmt3(report.annotated[e]);
    out << "\n    intercept " << fmt3(report.intercepts[e]);
    for (const auto& c : report.top_positive[e])
      out << "  +" << c.feature << " " << fmt3(c.effect);
    for (const auto& c : report.top_negative[e])
      out << "  " << c.feature << " " << fmt3(c.effect);
    out << "\n";
  }
  return out.str();
}

std::string effects_csv(const EffectsTensor& effects,
                        std::span<const std::string> features,
                        std::span<const std::string> targets) {
  std::ostringstream out;
  out << "song_id,feature,target,effect\n";
  for (std::size_t s = 0; s < effects.song_ids.size(); ++s)
    for (std::size_t f = 0; f < effects.n_features; ++f)
      for (std::size_t e = 0; e < effects.n_targets; ++e)
        out << effects.song_ids[s] << "," << features[f] << "," << targets[e]
            << "," << fmtg(effects.at(s, f, e)) << "\n";
  return out.str();
}

std::string distribution_csv(const EffectsDistribution& dist,
                             std::span<const std::string> features,
                             std::span<const std::string> targets) {
  std::ostringstream out;
  out << "feature,target,q1,median,q3,lo_whisker,hi_whisker,n_outliers\n";
  for (std::size_t f = 0; f < dist.n_features; ++f)
    for (std::size_t e = 0; e < dist.n_targets; ++e) {
      const BoxStats& b = dist.at(f, e);
      out << features[f] << "," << targets[e] << "," << fmtg(b.q1) << ","
          << fmtg(b.median) << "," << fmtg(b.q3) << "," << fmtg(b.lo_whisker)
          << "," << fmtg(b.hi_whisker) << "," << b.outliers.size() << "\n";
    }
  return out.str();
}

std::string weights_csv(const LinearMap& map,
                        std::span<const std::string> features,
                        std::span<const std::string> targets) {
  std::ostringstream out;
  out << "feature";
  for (const auto& t : targets) out << "," << t;
  out << "\n";
  for (std::size_t f = 0; f < map.in_dim(); ++f) {
    out << features[f];
    for (std::size_t e = 0; e < map.out_dim(); ++e)
      out << "," << fmtg(map.weights.at(f, e));
    out << "\n";
  }
  out << "intercept";
  for (std::size_t e = 0; e < map.out_dim(); ++e)
    out << "," << fmtg(map.intercepts[e]);
  out << "\n";
  return out.str();
}

std::string correlation_csv(const CorrelationMatrix& corr,
                            std::span<const std::string> features,
                            std::span<const std::string> targets) {
  std::ostringstream out;
  out << "feature";
  for (const auto& t : targets) out << "," << t;
  out << "\n";
  for (std::size_t f = 0; f < corr.r.rows; ++f) {
    out << features[f];
    for (std::size_t e = 0; e < corr.r.cols; ++e) {
      out << ",";
      if (corr.degenerate[f * corr.r.cols + e])
        out << "degenerate";
      else
        out << fmtg(corr.r.at(f, e));
    }
    out << "\n";
  }
  return out.str();
}

namespace {

// Diverging blue-white-red fill for a value in [-peak, peak].
std::string heat_color(double v, double peak) {
  double t = peak > 0 ? std::clamp(v / peak, -1.0, 1.0) : 0.0;
  int r, g, b;
  if (t >= 0) {
    r = static_cast<int>(255 * (1.0 - t) + 178 * t);
    g = static_cast<int>(255 * (1.0 - t) + 24 * t);
    b = static_cast<int>(255 * (1.0 - t) + 43 * t);
  } else {
    t = -t;
    r = static_cast<int>(255 * (1.0 - t) + 33 * t);
    g = static_cast<int>(255 * (1.0 - t) + 102 * t);
    b = static_cast<int>(255 * (1.0 - t) + 172 * t);
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace

std::string weights_svg(const LinearMap& map,
                        std::span<const std::string> features,
                        std::span<const std::string> targets) {
  const int cell = 64, left = 150, top = 40;
  const int width = left + cell * static_cast<int>(map.out_dim()) + 20;
  const int height = top + cell * static_cast<int>(map.in_dim()) + 20;
  double peak = 0.0;
  for (double v : map.weights.data) peak = std::max(peak, std::abs(v));

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (std::size_t e = 0; e < map.out_dim(); ++e)
    svg << "<text x=\"" << left + cell * static_cast<int>(e) + cell / 2
        << "\" y=\"" << top - 8 << "\" text-anchor=\"middle\">" << targets[e]
        << "</text>\n";
  for (std::size_t f = 0; f < map.in_dim(); ++f) {
    svg << "<text x=\"" << left - 6 << "\" y=\""
        << top + cell * static_cast<int>(f) + cell / 2 + 4
        << "\" text-anchor=\"end\">" << features[f] << "</text>\n";
    for (std::size_t e = 0; e < map.out_dim(); ++e) {
      const double v = map.weights.at(f, e);
      svg << "<rect x=\"" << left + cell * static_cast<int>(e) << "\" y=\""
          << top + cell * static_cast<int>(f) << "\" width=\"" << cell
          << "\" height=\"" << cell << "\" fill=\"" << heat_color(v, peak)
          << "\" stroke=\"#888\"/>\n";
      svg << "<text x=\"" << left + cell * static_cast<int>(e) + cell / 2
          << "\" y=\"" << top + cell * static_cast<int>(f) + cell / 2 + 4
          << "\" text-anchor=\"middle\">" << fmt3(v) << "</text>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string distribution_svg(const EffectsDistribution& dist,
                             std::span<const std::string> features,
                             std::span<const std::string> targets,
                             const EffectsTensor* highlight,
                             std::span<const std::size_t> highlight_rows) {
  // One panel per target; inside each, one horizontal boxplot per feature.
  const int panel_w = 240, row_h = 22, left = 150, top = 30, gap = 34;
  const int panel_h = row_h * static_cast<int>(dist.n_features);
  const int width = left + panel_w + 40;
  const int height =
      top + (panel_h + gap) * static_cast<int>(dist.n_targets) + 10;

  double lo = 0.0, hi = 0.0;
  for (const auto& b : dist.cells) {
    lo = std::min({lo, b.lo_whisker,
                   b.outliers.empty() ? b.lo_whisker : b.outliers.front()});
    hi = std::max({hi, b.hi_whisker,
                   b.outliers.empty() ? b.hi_whisker : b.outliers.back()});
  }
  if (highlight) {
    for (double v : highlight->values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi == lo) hi = lo + 1.0;
  auto sx = [&](double v) {
    return left + (v - lo) / (hi - lo) * (panel_w - 20) + 10;
  };

  static const char* marker_colors[] = {"#d62728", "#1f77b4", "#2ca02c",
                                        "#9467bd"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (std::size_t e = 0; e < dist.n_targets; ++e) {
    const int py = top + static_cast<int>(e) * (panel_h + gap);
    svg << "<text x=\"" << left << "\" y=\"" << py - 8
        << "\" font-weight=\"bold\">" << targets[e] << "</text>\n";
    const double zx = sx(0.0);
    svg << "<line x1=\"" << zx << "\" y1=\"" << py << "\" x2=\"" << zx
        << "\" y2=\"" << py + panel_h << "\" stroke=\"#ccc\"/>\n";
    for (std::size_t f = 0; f < dist.n_features; ++f) {
      const BoxStats& b = dist.at(f, e);
      const int cy = py + static_cast<int>(f) * row_h + row_h / 2;
      svg << "<text x=\"" << left - 6 << "\" y=\"" << cy + 4
          << "\" text-anchor=\"end\">" << features[f] << "</text>\n";
      svg << "<line x1=\"" << sx(b.lo_whisker) << "\" y1=\"" << cy << "\" x2=\""
          << sx(b.hi_whisker) << "\" y2=\"" << cy << "\" stroke=\"#444\"/>\n";
      svg << "<rect x=\"" << sx(b.q1) << "\" y=\"" << cy - 6 << "\" width=\""
          << std::max(1.0, sx(b.q3) - sx(b.q1)) << "\" height=\"12\" fill=\"#9ecae1\" stroke=\"#444\"/>\n";
      svg << "<line x1=\"" << sx(b.median) << "\" y1=\"" << cy - 6 << "\" x2=\""
          << sx(b.median) << "\" y2=\"" << cy + 6
          << "\" stroke=\"#08306b\" stroke-width=\"2\"/>\n";
      for (double v : b.outliers)
        svg << "<circle cx=\"" << sx(v) << "\" cy=\"" << cy
            << "\" r=\"2\" fill=\"none\" stroke=\"#666\"/>\n";
      if (highlight) {
        for (std::size_t h = 0; h < highlight_rows.size(); ++h) {
          const double v = highlight->at(highlight_rows[h], f, e);
          const char* color = marker_colors[h % 4];
          if (h % 2 == 0)
            svg << "<rect x=\"" << sx(v) - 3 << "\" y=\"" << cy - 3
                << "\" width=\"6\" height=\"6\" fill=\"" << color << "\"/>\n";
          else
            svg << "<circle cx=\"" << sx(v) << "\" cy=\"" << cy
                << "\" r=\"3.5\" fill=\"" << color << "\"/>\n";
        }
      }
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace midemo::explain
