#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "midemo/core.hpp"

namespace midemo::explain {

class SingularMatrix : public NumericError {
 public:
  using NumericError::NumericError;
};

// Affine map y = W^T x + b. Rows of `weights` are input features, columns
// are targets, so weights.at(f, e) is the weight of feature f on target e.
struct LinearMap {
  Mat weights;                     // in_dim x out_dim
  std::vector<double> intercepts;  // out_dim

  std::size_t in_dim() const { return weights.rows; }
  std::size_t out_dim() const { return weights.cols; }

  std::vector<double> apply(std::span<const double> x) const;
  Mat apply(const Mat& x) const;  // n x in_dim -> n x out_dim
};

struct OlsOptions {
  // Singular values below sv_threshold * max treated as zero.
  double sv_threshold = 1e-10;
  // When false (default), rank deficiency raises SingularMatrix naming the
  // dependent columns; when true, the minimum-norm solution is returned.
  bool allow_pseudo_inverse = false;
};

// Least squares with intercept: minimizes ||[X 1] B - Y||_F per column.
// X is n x p, Y is n x q; requires n >= p + 2.
LinearMap fit_ols(const Mat& x, const Mat& y, const OlsOptions& opts = {});

// Per-song, per-feature, per-target effect values: weight times feature value.
struct EffectsTensor {
  std::vector<std::string> song_ids;  // n
  std::size_t n_features = 0;
  std::size_t n_targets = 0;
  std::vector<double> values;  // n * n_features * n_targets, row-major
  std::string provenance;      // which map and feature source produced this

  double at(std::size_t s, std::size_t f, std::size_t e) const {
    return values[(s * n_features + f) * n_targets + e];
  }
};

EffectsTensor compute_effects(const LinearMap& map, const Mat& x,
                              const std::vector<std::string>& song_ids,
                              const std::string& provenance = "annotations");

// Tukey boxplot statistics. Quartiles use linear interpolation of order
// statistics (the "type 7" rule); whiskers extend to the most extreme datum
// within 1.5 IQR of the quartiles.
struct BoxStats {
  double median = 0, q1 = 0, q3 = 0;
  double lo_whisker = 0, hi_whisker = 0;
  std::vector<double> outliers;
};

struct EffectsDistribution {
  std::size_t n_features = 0;
  std::size_t n_targets = 0;
  std::vector<BoxStats> cells;  // n_features * n_targets row-major

  const BoxStats& at(std::size_t f, std::size_t e) const {
    return cells[f * n_targets + e];
  }
};

EffectsDistribution effects_distribution(const EffectsTensor& effects);

// Type-7 quantile of unsorted data, exposed for reuse.
double quantile(std::vector<double> values, double p);

struct CorrelationMatrix {
  Mat r;                        // features x targets
  std::vector<bool> degenerate; // same layout; true where a column was constant
};

// Pairwise Pearson correlation between annotation columns.
CorrelationMatrix correlation_matrix(const Mat& features, const Mat& targets);

enum class PairMode { Paper, Intent };

// Pair of songs mined by combining per-space pairwise distances.
// Scaled distances are min-max over the full pairwise distance multiset.
// Paper mode maximizes d_e - (1 - d_mid); intent mode maximizes d_mid - d_e.
struct ContrastPair {
  std::size_t i = 0, j = 0;  // row indices, i < j
  double d_e_raw = 0, d_mid_raw = 0;
  double d_e = 0, d_mid = 0;  // scaled to [0, 1]
  double d_comb = 0;
  bool degenerate = false;  // all distances equal in some space
};

ContrastPair select_contrast_pair(const Mat& emotion, const Mat& midlevel,
                                  PairMode mode);

struct FeatureContribution {
  std::string feature;
  double effect = 0;
};

struct SongReport {
  std::string song_id;
  std::vector<std::string> features;
  std::vector<std::string> targets;
  std::vector<double> predicted;               // per target
  std::vector<double> annotated;               // NaN when unavailable
  Mat effects;                                 // features x targets
  std::vector<double> intercepts;
  std::vector<std::vector<FeatureContribution>> top_positive;  // per target
  std::vector<std::vector<FeatureContribution>> top_negative;
};

// Per-target decomposition for one song. `annotations` (optional) must be
// row-aligned with `effects.song_ids`.
SongReport song_report(const std::string& song_id, const EffectsTensor& effects,
                       const LinearMap& map, const Mat* annotations = nullptr,
                       std::vector<std::string> features = {},
                       std::vector<std::string> targets = {},
                       std::size_t top_k = 3);

std::string song_report_json(const SongReport& report);
std::string song_report_text(const SongReport& report);

// Long-format CSV: song_id,feature,target,effect.
std::string effects_csv(const EffectsTensor& effects,
                        std::span<const std::string> features,
                        std::span<const std::string> targets);

// One row per (feature, target) cell with the boxplot statistics.
std::string distribution_csv(const EffectsDistribution& dist,
                             std::span<const std::string> features,
                             std::span<const std::string> targets);

std::string weights_csv(const LinearMap& map,
                        std::span<const std::string> features,
                        std::span<const std::string> targets);

std::string correlation_csv(const CorrelationMatrix& corr,
                            std::span<const std::string> features,
                            std::span<const std::string> targets);

// Static SVG renderings (no timestamps, deterministic output).
std::string weights_svg(const LinearMap& map,
                        std::span<const std::string> features,
                        std::span<const std::string> targets);

std::string distribution_svg(const EffectsDistribution& dist,
                             std::span<const std::string> features,
                             std::span<const std::string> targets,
                             const EffectsTensor* highlight = nullptr,
                             std::span<const std::size_t> highlight_rows = {});

}  // namespace midemo::explain
