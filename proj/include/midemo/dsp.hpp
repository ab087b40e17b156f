#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "midemo/core.hpp"
#include "midemo/ingest.hpp"
#include "midemo/rng.hpp"

namespace midemo::dsp {

// The published 31.25 fps at 22050 Hz implies a fractional hop of 705.6
// samples; hop=705 (31.28 fps) keeps an integer hop and, with center
// padding, a 10 s crop yields exactly floor(220500/705)+1 = 313 frames.
struct SpectrogramConfig {
  int sample_rate = 22050;
  int frame_size = 2048;  // power of two
  int hop = 705;
  int n_bands = 149;
  double crop_seconds = 10.0;
  double fmin = 30.0;
  double fmax = 11025.0;
  double log_floor_db = -100.0;
  double power_eps = 1e-10;
  int n_frames = 313;

  int crop_samples() const {
    return static_cast<int>(crop_seconds * sample_rate + 0.5);
  }
  void validate() const;
  std::uint64_t hash() const;
};

// Log-magnitude spectrogram, n_frames x n_bands, row-major (time major).
struct Spectrogram {
  int rows = 0;  // time frames
  int cols = 0;  // frequency bands
  std::vector<float> values;
  std::string source_id;
  std::int64_t crop_offset = 0;

  float at(int t, int b) const { return values[static_cast<std::size_t>(t) * cols + b]; }
};

// Triangular filterbank with log-spaced center frequencies, applied to the
// one-sided power spectrum of a frame_size FFT.
struct Filterbank {
  int n_bands = 0;
  int n_bins = 0;
  std::vector<double> weights;  // n_bands x n_bins, row-major
  std::vector<double> centers_hz;

  static Filterbank build(const SpectrogramConfig& cfg);
};

// Crop -> Hann STFT (center padded) -> power -> filterbank -> 10*log10(p+eps),
// floored at log_floor_db. The crop is zero padded when the waveform ends
// before crop_seconds elapse.
Spectrogram compute_spectrogram(const ingest::Waveform& w,
                                const SpectrogramConfig& cfg,
                                std::int64_t crop_offset);

// Uniform offset in [0, max(0, len - crop_samples)], inclusive.
std::int64_t random_crop_offset(const ingest::Waveform& w,
                                const SpectrogramConfig& cfg, Pcg32& rng);

// Zero-mean unit-variance view over all cells, the form fed to the network.
// Constant spectrograms standardize to all zeros.
std::vector<float> standardize(const Spectrogram& spec);

// Binary cache: 16-byte header (magic "MSPC", u32 version, u32 rows, u32
// cols) then row-major little-endian f32, with a JSON sidecar at
// <path>.json carrying the config hash, source id and crop offset.
void write_cache(const Spectrogram& spec, const std::filesystem::path& path,
                 std::uint64_t config_hash);
Spectrogram read_cache(const std::filesystem::path& path);

// True when the cache file and sidecar exist, parse, and match the hash.
bool cache_valid(const std::filesystem::path& path, std::uint64_t config_hash);

}  // namespace midemo::dsp
