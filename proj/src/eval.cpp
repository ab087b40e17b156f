#include "midemo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace midemo::eval {

namespace {

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw DimensionError("pearson: length mismatch (" + std::to_string(x.size()) +
                         " vs " + std::to_string(y.size()) + ")");
  const std::size_t n = x.size();
  if (n < 2) throw DataError("pearson: need at least 2 samples");

  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);

  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  // Constant inputs leave only rounding residue in the variance; treat
  // anything at that scale as zero.
  const double x_floor = static_cast<double>(n) * std::pow(1e-12 * (std::abs(mx) + 1.0), 2);
  const double y_floor = static_cast<double>(n) * std::pow(1e-12 * (std::abs(my) + 1.0), 2);
  if (sxx <= x_floor || syy <= y_floor)
    throw DegenerateCorrelation("pearson: zero variance input");
  return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

double ResultsRow::average() const {
  if (r.empty()) return 0.0;
  return std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
}

double CoEReport::average() const {
  if (coe.empty()) return 0.0;
  return std::accumulate(coe.begin(), coe.end(), 0.0) /
         static_cast<double>(coe.size());
}

CoEReport cost_of_explainability(const ResultsRow& baseline,
                                 const ResultsRow& candidate) {
  if (baseline.targets != candidate.targets) {
    std::string missing;
    for (const auto& t : baseline.targets)
      if (std::find(candidate.targets.begin(), candidate.targets.end(), t) ==
          candidate.targets.end())
        missing += (missing.empty() ? "" : ", ") + t;
    throw DataError("cost_of_explainability: target sets differ" +
                    (missing.empty() ? "" : " (candidate lacks: " + missing + ")"));
  }
  CoEReport rep;
  rep.baseline = baseline.scheme;
  rep.candidate = candidate.scheme;
  rep.targets = baseline.targets;
  rep.coe.resize(baseline.r.size());
  for (std::size_t i = 0; i < baseline.r.size(); ++i)
    rep.coe[i] = baseline.r[i] - candidate.r[i];
  return rep;
}

ResultsRow aggregate_results(const std::string& scheme,
                             const std::vector<std::string>& targets,
                             const std::vector<std::vector<double>>& per_run,
                             const std::vector<std::vector<bool>>& degenerate) {
  if (per_run.empty()) throw DataError("aggregate_results: no runs");
  for (const auto& run : per_run)
    if (run.size() != targets.size())
      throw DataError("aggregate_results: run has " + std::to_string(run.size()) +
                      " values for " + std::to_string(targets.size()) + " targets");

  ResultsRow row;
  row.scheme = scheme;
  row.targets = targets;
  row.r.assign(targets.size(), 0.0);
  row.degenerate.assign(targets.size(), false);
  for (const auto& run : per_run)
    for (std::size_t t = 0; t < targets.size(); ++t) row.r[t] += run[t];
  for (auto& v : row.r) v /= static_cast<double>(per_run.size());
  for (const auto& flags : degenerate) {
    if (flags.size() != targets.size())
      throw DataError("aggregate_results: degenerate flag size mismatch");
    for (std::size_t t = 0; t < targets.size(); ++t)
      if (flags[t]) row.degenerate[t] = true;
  }
  return row;
}

double round2(double v) {
  return (v < 0 ? -1.0 : 1.0) * std::floor(std::abs(v) * 100.0 + 0.5) / 100.0;
}

std::string results_csv(const ResultsTable& table) {
  std::ostringstream out;
  out << "scheme";
  if (!table.rows.empty())
    for (const auto& t : table.rows.front().targets) out << "," << t;
  out << ",avg\n";
  for (const auto& row : table.rows) {
    out << row.scheme;
    for (double v : row.r) out << "," << fmt2(v);
    out << "," << fmt2(row.average()) << "\n";
  }
  return out.str();
}

std::string results_json(const ResultsTable& table, const std::string& config_hash) {
  nlohmann::ordered_json doc;
  doc["config_hash"] = config_hash;
  doc["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : table.rows) {
    nlohmann::ordered_json j;
    j["scheme"] = row.scheme;
    j["targets"] = row.targets;
    j["r"] = row.r;
    j["degenerate"] = row.degenerate;
    j["avg"] = row.average();
    doc["rows"].push_back(j);
  }
  return doc.dump(2) + "\n";
}

std::string coe_csv(const CoEReport& report) {
  std::ostringstream out;
  out << "baseline,candidate";
  for (const auto& t : report.targets) out << "," << t;
  out << ",avg\n" << report.baseline << "," << report.candidate;
  for (double v : report.coe) out << "," << fmt2(v);
  out << "," << fmt2(report.average()) << "\n";
  return out.str();
}

std::string coe_json(const CoEReport& report) {
  nlohmann::ordered_json doc;
  doc["baseline"] = report.baseline;
  doc["candidate"] = report.candidate;
  doc["targets"] = report.targets;
  doc["coe"] = report.coe;
  doc["avg"] = report.average();
  return doc.dump(2) + "\n";
}

}  // namespace midemo::eval
