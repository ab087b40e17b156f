#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "midemo/core.hpp"

namespace midemo::eval {

// Thrown when a correlation is requested for a zero-variance sequence.
// Callers that aggregate over many targets map this to r = 0 plus a
// degenerate flag instead of propagating it (see trainer).
class DegenerateCorrelation : public NumericError {
 public:
  using NumericError::NumericError;
};

// Sample Pearson correlation, two-pass in 64-bit.
double pearson(std::span<const double> x, std::span<const double> y);

// One row of correlation results: a named scheme evaluated per target.
struct ResultsRow {
  std::string scheme;
  std::vector<std::string> targets;
  std::vector<double> r;            // unrounded, one per target
  std::vector<bool> degenerate;     // true where r was forced to 0

  double average() const;
};

struct ResultsTable {
  std::vector<ResultsRow> rows;
};

struct CoEReport {
  std::string baseline;
  std::string candidate;
  std::vector<std::string> targets;
  std::vector<double> coe;  // r(baseline) - r(candidate), positive = loss
  double average() const;
};

// Elementwise r(baseline) - r(candidate) on unrounded values.
// Throws DataError if the target sets differ.
CoEReport cost_of_explainability(const ResultsRow& baseline,
                                 const ResultsRow& candidate);

// Per-target arithmetic mean over runs. `per_run` holds one vector of r
// values per run, all over the same `targets`. Degenerate flags are OR-ed.
ResultsRow aggregate_results(const std::string& scheme,
                             const std::vector<std::string>& targets,
                             const std::vector<std::vector<double>>& per_run,
                             const std::vector<std::vector<bool>>& degenerate = {});

// CSV with 2-decimal presentation, one row per scheme plus "avg" column.
std::string results_csv(const ResultsTable& table);
// Full-precision JSON string (sorted keys, no timestamps).
std::string results_json(const ResultsTable& table, const std::string& config_hash);

std::string coe_csv(const CoEReport& report);
std::string coe_json(const CoEReport& report);

// Round half away from zero to two decimals, the presentation used in CSV.
double round2(double v);

}  // namespace midemo::eval
