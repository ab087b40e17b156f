#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace midemo {

inline constexpr std::size_t kNumMidLevel = 7;
inline constexpr std::size_t kNumEmotions = 8;

// Canonical column order for annotation tables and result rows.
inline constexpr std::array<const char*, kNumMidLevel> kMidLevelNames = {
    "melodiousness",    "articulation",   "rhythmic_stability",
    "rhythmic_complexity", "dissonance",  "tonal_stability",
    "minorness"};

inline constexpr std::array<const char*, kNumEmotions> kEmotionNames = {
    "valence", "energy", "tension", "anger",
    "fear",    "happy",  "sad",     "tender"};

// Raw ratings are multiplied by this factor on load.
inline constexpr double kRatingScale = 0.1;
inline constexpr double kMidLevelRawMin = 1.0;
inline constexpr double kMidLevelRawMax = 10.0;
inline constexpr double kEmotionRawMin = 1.0;
inline constexpr double kEmotionRawMax = 7.83;

// Dense row-major matrix of doubles, the interchange type between modules.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// Data, schema and validation failures (CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/matrix shape mismatches.
class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

// Bad configuration values (CLI exit code 2).
class ConfigError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values, rank deficiency, degenerate statistics (CLI exit code 3).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace midemo
