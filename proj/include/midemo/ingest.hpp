#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "midemo/core.hpp"

namespace midemo::ingest {

inline constexpr int kTargetSampleRate = 22050;

// Mono, peak-normalized audio.
struct Waveform {
  std::vector<float> samples;
  int sample_rate = kTargetSampleRate;
  std::string source_id;

  double seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Decode a PCM WAV file (integer 8/16/24/32 or IEEE float 32/64, any channel
// count), average channels to mono, resample to target_rate and normalize so
// the peak absolute amplitude is 1.0. All-zero audio is left untouched.
Waveform load_audio(const std::filesystem::path& path, int target_rate = kTargetSampleRate);

// The resampler behind load_audio: polyphase windowed sinc (Kaiser window,
// 16-tap half-width). Identity when rates match.
std::vector<float> resample(const std::vector<float>& samples, int src_rate,
                            int dst_rate);

// Minimal PCM16 WAV writer, used by prepare tooling and tests.
void write_wav(const std::filesystem::path& path,
               const std::vector<float>& samples, int sample_rate);

enum class Schema { MidLevel, Emotion };

std::size_t schema_width(Schema schema);
const std::vector<std::string>& schema_columns(Schema schema);

// Validated annotation matrix; values are raw ratings scaled by 0.1.
struct AnnotationTable {
  Schema schema = Schema::MidLevel;
  std::vector<std::string> song_ids;
  Mat values;  // n x 7 (midlevel) or n x 8 (emotion)

  std::size_t size() const { return song_ids.size(); }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  std::size_t index_of(const std::string& id) const;
  std::vector<double> row(const std::string& id) const;

  // Rebuild the id index; called by the loader and after manual edits.
  void reindex();

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

// Load a CSV with header `song_id,<canonical columns>`. Raw values must lie
// in [1, 10] (midlevel) or [1, 7.83] (emotion) and are multiplied by 0.1.
AnnotationTable load_annotations(const std::filesystem::path& path, Schema schema);

// Write raw (unscaled) values back out; load_annotations(write(t)) == t.
void write_annotations(const AnnotationTable& table,
                       const std::filesystem::path& path);

// Restrict a table to the given ids, in the given order.
AnnotationTable subset(const AnnotationTable& table,
                       const std::vector<std::string>& ids);

struct Split {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::uint64_t seed = 0;
  double ratio = 0.0;  // test fraction
};

// `runs` reshuffled exact partitions; split k is a Fisher-Yates shuffle of
// the sorted ids under pcg32 seeded with base_seed + k, with
// round(ratio * n) ids going to the test side.
std::vector<Split> make_splits(const std::vector<std::string>& song_ids,
                               double ratio, std::uint64_t base_seed,
                               std::size_t runs);

// JSON manifest of all splits, for reproducibility.
void write_split_manifest(const std::vector<Split>& splits,
                          const std::filesystem::path& path,
                          const std::string& config_hash = "");
std::vector<Split> read_split_manifest(const std::filesystem::path& path);

}  // namespace midemo::ingest
