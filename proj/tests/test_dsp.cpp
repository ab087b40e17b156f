#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "midemo/dsp.hpp"
#include "support/oracles.hpp"

using namespace midemo;
namespace fs = std::filesystem;

namespace {

ingest::Waveform make_wave(std::vector<float> samples, const char* id = "test") {
  ingest::Waveform w;
  w.samples = std::move(samples);
  w.sample_rate = 22050;
  w.source_id = id;
  return w;
}

ingest::Waveform sine_wave(double freq, double seconds, double amplitude = 0.9) {
  std::vector<float> s(static_cast<std::size_t>(22050 * seconds));
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = static_cast<float>(
        amplitude * std::sin(2.0 * std::numbers::pi * freq * i / 22050.0));
  return make_wave(std::move(s), "sine");
}

fs::path temp_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "midemo_dsp_tests";
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("spectrogram shape is fixed regardless of duration") {
  const dsp::SpectrogramConfig cfg;
  for (double seconds : {1.0, 3.0, 10.0, 15.0}) {
    const auto w = sine_wave(500.0, seconds);
    const auto spec = dsp::compute_spectrogram(w, cfg, 0);
    CHECK(spec.rows == 313);
    CHECK(spec.cols == 149);
    CHECK(spec.values.size() == 313u * 149u);
    for (float v : spec.values) {
      CHECK(std::isfinite(v));
      CHECK(v >= cfg.log_floor_db);
    }
  }
}

TEST_CASE("silence maps to the log floor everywhere") {
  const dsp::SpectrogramConfig cfg;
  const auto w = make_wave(std::vector<float>(22050 * 2, 0.0f));
  const auto spec = dsp::compute_spectrogram(w, cfg, 0);
  for (float v : spec.values) CHECK(v == doctest::Approx(cfg.log_floor_db));
}

TEST_CASE("pure tones localize to the nearest band") {
  const dsp::SpectrogramConfig cfg;
  const auto fb = dsp::Filterbank::build(cfg);
  const double bin_hz = 22050.0 / 2048.0;

  for (double target : {100.0, 440.0, 1000.0, 3000.0, 8000.0}) {
    // Choose the band whose center is nearest the target, then snap the tone
    // to the FFT bin nearest that center so energy stays concentrated.
    std::size_t band = 0;
    for (std::size_t b = 1; b < fb.centers_hz.size(); ++b)
      if (std::abs(fb.centers_hz[b] - target) <
          std::abs(fb.centers_hz[band] - target))
        band = b;
    const double tone = std::round(fb.centers_hz[band] / bin_hz) * bin_hz;
    std::size_t nearest = 0;
    for (std::size_t b = 1; b < fb.centers_hz.size(); ++b)
      if (std::abs(fb.centers_hz[b] - tone) <
          std::abs(fb.centers_hz[nearest] - tone))
        nearest = b;

    const auto spec = dsp::compute_spectrogram(sine_wave(tone, 10.0), cfg, 0);
    int hits = 0;
    for (int t = 0; t < spec.rows; ++t) {
      int argmax = 0;
      for (int b = 1; b < spec.cols; ++b)
        if (spec.at(t, b) > spec.at(t, argmax)) argmax = b;
      if (argmax == static_cast<int>(nearest)) ++hits;
    }
    INFO("tone " << tone << " Hz, band " << nearest);
    CHECK(hits >= static_cast<int>(0.95 * spec.rows));
  }
}

TEST_CASE("440 Hz sine checked against the direct DFT oracle") {
  const dsp::SpectrogramConfig cfg;
  const auto w = sine_wave(440.0, 10.0);
  const auto spec = dsp::compute_spectrogram(w, cfg, 0);
  const auto fb = dsp::Filterbank::build(cfg);

  // Library path: argmax band of a mid-signal frame.
  const int frame = 150;
  int argmax = 0;
  for (int b = 1; b < spec.cols; ++b)
    if (spec.at(frame, b) > spec.at(frame, argmax)) argmax = b;

  // Oracle: direct DFT of the same windowed frame.
  const int n = cfg.frame_size;
  std::vector<double> windowed(n);
  const std::int64_t start = static_cast<std::int64_t>(frame) * cfg.hop - n / 2;
  for (int i = 0; i < n; ++i) {
    const std::int64_t src = start + i;
    const double s = (src >= 0 && src < static_cast<std::int64_t>(w.samples.size()))
                         ? w.samples[static_cast<std::size_t>(src)]
                         : 0.0;
    windowed[i] = s * 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / n));
  }
  const auto mag = oracles::dft_magnitude(windowed);
  std::size_t peak_bin = 0;
  for (std::size_t k = 1; k < mag.size(); ++k)
    if (mag[k] > mag[peak_bin]) peak_bin = k;
  const double peak_hz = static_cast<double>(peak_bin) * 22050.0 / n;
  CHECK(std::abs(peak_hz - 440.0) < 11.0);  // within one bin

  // The argmax band's support must contain the oracle peak frequency.
  const double lo = argmax > 0 ? fb.centers_hz[argmax - 1] : 0.0;
  const double hi = argmax + 1 < fb.n_bands ? fb.centers_hz[argmax + 1] : 11025.0;
  CHECK(peak_hz >= lo);
  CHECK(peak_hz <= hi);
}

TEST_CASE("amplitude scaling never decreases any cell") {
  const dsp::SpectrogramConfig cfg;
  Pcg32 rng(71);
  std::vector<float> noise(22050 * 2);
  for (auto& v : noise) v = static_cast<float>(rng.uniform(-0.4, 0.4));
  const auto base = dsp::compute_spectrogram(make_wave(noise), cfg, 0);
  std::vector<float> louder = noise;
  for (auto& v : louder) v *= 2.0f;
  const auto scaled = dsp::compute_spectrogram(make_wave(std::move(louder)), cfg, 0);
  for (std::size_t i = 0; i < base.values.size(); ++i)
    CHECK(scaled.values[i] >= base.values[i]);
}

TEST_CASE("spectrogram is deterministic") {
  const dsp::SpectrogramConfig cfg;
  const auto w = sine_wave(750.0, 12.0);
  const auto a = dsp::compute_spectrogram(w, cfg, 4410);
  const auto b = dsp::compute_spectrogram(w, cfg, 4410);
  CHECK(a.values == b.values);
}

TEST_CASE("crop offset validation") {
  const dsp::SpectrogramConfig cfg;
  const auto w = sine_wave(500.0, 2.0);
  CHECK_THROWS_AS(dsp::compute_spectrogram(w, cfg, -1), DataError);
  CHECK_THROWS_AS(
      dsp::compute_spectrogram(w, cfg, static_cast<std::int64_t>(w.samples.size())),
      DataError);
  // inside the signal but shorter than the crop: zero-padded, not an error
  const auto spec = dsp::compute_spectrogram(w, cfg, 22050);
  CHECK(spec.rows == 313);
}

TEST_CASE("random crop offsets") {
  const dsp::SpectrogramConfig cfg;

  SUBCASE("exactly 10 s leaves only offset zero") {
    const auto w = sine_wave(500.0, 10.0);
    Pcg32 rng(3);
    for (int i = 0; i < 5; ++i) CHECK(dsp::random_crop_offset(w, cfg, rng) == 0);
  }

  SUBCASE("fixed seed reproduces the offset sequence") {
    const auto w = sine_wave(500.0, 15.0);
    Pcg32 a(9), b(9);
    for (int i = 0; i < 10; ++i)
      CHECK(dsp::random_crop_offset(w, cfg, a) == dsp::random_crop_offset(w, cfg, b));
  }

  SUBCASE("offsets are uniform over the valid range") {
    const auto w = sine_wave(500.0, 15.0);
    const std::int64_t max_offset =
        static_cast<std::int64_t>(w.samples.size()) - cfg.crop_samples();
    Pcg32 rng(123);
    const int draws = 10000, bins = 20;
    std::vector<int> counts(bins, 0);
    for (int i = 0; i < draws; ++i) {
      const auto off = dsp::random_crop_offset(w, cfg, rng);
      REQUIRE(off >= 0);
      REQUIRE(off <= max_offset);
      const int bin = static_cast<int>(
          std::min<std::int64_t>(bins - 1, off * bins / (max_offset + 1)));
      ++counts[bin];
    }
    const double expected = static_cast<double>(draws) / bins;
    double chi2 = 0.0;
    for (int c : counts) {
      const double d = c - expected;
      chi2 += d * d / expected;
    }
    // dof = 19, critical value at alpha = 0.001
    CHECK(chi2 < 43.82);
  }
}

TEST_CASE("standardize gives zero mean unit variance") {
  const dsp::SpectrogramConfig cfg;
  const auto spec = dsp::compute_spectrogram(sine_wave(900.0, 10.0), cfg, 0);
  const auto z = dsp::standardize(spec);
  double mean = 0.0;
  for (float v : z) mean += v;
  mean /= static_cast<double>(z.size());
  double var = 0.0;
  for (float v : z) var += (v - mean) * (v - mean);
  var /= static_cast<double>(z.size());
  CHECK(std::abs(mean) < 1e-4);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-3));

  SUBCASE("constant input standardizes to zeros") {
    dsp::Spectrogram flat;
    flat.rows = 2;
    flat.cols = 3;
    flat.values.assign(6, -100.0f);
    for (float v : dsp::standardize(flat)) CHECK(v == 0.0f);
  }
}

TEST_CASE("cache round trip and validation") {
  const dsp::SpectrogramConfig cfg;
  const auto spec = dsp::compute_spectrogram(sine_wave(620.0, 10.0), cfg, 0);
  const auto path = temp_dir() / "spec.mspc";
  dsp::write_cache(spec, path, cfg.hash());

  const auto loaded = dsp::read_cache(path);
  CHECK(loaded.rows == spec.rows);
  CHECK(loaded.cols == spec.cols);
  CHECK(loaded.values == spec.values);
  CHECK(loaded.source_id == spec.source_id);

  CHECK(dsp::cache_valid(path, cfg.hash()));
  CHECK_FALSE(dsp::cache_valid(path, cfg.hash() + 1));
  CHECK_FALSE(dsp::cache_valid(temp_dir() / "absent.mspc", cfg.hash()));

  SUBCASE("corrupted file fails validation") {
    auto bytes = path;
    std::ofstream out(bytes, std::ios::binary);
    out << "garbage";
    out.close();
    CHECK_FALSE(dsp::cache_valid(path, cfg.hash()));
    CHECK_THROWS_AS(dsp::read_cache(path), DataError);
  }
}

TEST_CASE("config validation") {
  dsp::SpectrogramConfig cfg;
  cfg.frame_size = 1000;  // not a power of two
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.frame_size = 2048;
  cfg.hop = 4096;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.hop = 705;
  cfg.n_bands = 2000;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
