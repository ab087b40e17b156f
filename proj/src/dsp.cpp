#include "midemo/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>

#include "json.hpp"

namespace midemo::dsp {

namespace {

// Iterative radix-2 Cooley-Tukey, in place. n must be a power of two.
void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wn(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wn;
      }
    }
  }
}

std::uint64_t fnv1a(const void* bytes, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

constexpr char kCacheMagic[4] = {'M', 'S', 'P', 'C'};
constexpr std::uint32_t kCacheVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void SpectrogramConfig::validate() const {
  if (frame_size <= 0 || (frame_size & (frame_size - 1)) != 0)
    throw ConfigError("spectrogram: frame_size must be a power of two");
  if (hop <= 0 || hop >= frame_size)
    throw ConfigError("spectrogram: hop must be in (0, frame_size)");
  if (n_bands <= 0 || n_bands > frame_size / 2 + 1)
    throw ConfigError("spectrogram: n_bands must be in (0, frame_size/2 + 1]");
  if (sample_rate <= 0 || crop_seconds <= 0 || n_frames <= 0)
    throw ConfigError("spectrogram: rate, crop and frame count must be positive");
  if (!(fmin > 0 && fmin < fmax))
    throw ConfigError("spectrogram: need 0 < fmin < fmax");
}

std::uint64_t SpectrogramConfig::hash() const {
  const double fields[] = {static_cast<double>(sample_rate),
                           static_cast<double>(frame_size),
                           static_cast<double>(hop),
                           static_cast<double>(n_bands),
                           crop_seconds,
                           fmin,
                           fmax,
                           log_floor_db,
                           power_eps,
                           static_cast<double>(n_frames)};
  return fnv1a(fields, sizeof(fields));
}

Filterbank Filterbank::build(const SpectrogramConfig& cfg) {
  cfg.validate();
  Filterbank fb;
  fb.n_bands = cfg.n_bands;
  fb.n_bins = cfg.frame_size / 2 + 1;
  fb.weights.assign(static_cast<std::size_t>(fb.n_bands) * fb.n_bins, 0.0);
  fb.centers_hz.resize(cfg.n_bands);

  // n_bands + 2 geometrically spaced edge frequencies; band b peaks at
  // edge b+1 with support (edge b, edge b+2).
  std::vector<double> edges(cfg.n_bands + 2);
  const double log_lo = std::log(cfg.fmin);
  const double log_hi = std::log(cfg.fmax);
  for (int i = 0; i < cfg.n_bands + 2; ++i)
    edges[i] = std::exp(log_lo + (log_hi - log_lo) * i / (cfg.n_bands + 1));

  const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.frame_size;
  for (int b = 0; b < cfg.n_bands; ++b) {
    const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    fb.centers_hz[b] = mid;
    for (int k = 0; k < fb.n_bins; ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f > lo && f < mid)
        w = (f - lo) / (mid - lo);
      else if (f == mid)
        w = 1.0;
      else if (f > mid && f < hi)
        w = (hi - f) / (hi - mid);
      fb.weights[static_cast<std::size_t>(b) * fb.n_bins + k] = w;
    }
  }
  return fb;
}

Spectrogram compute_spectrogram(const ingest::Waveform& w,
                                const SpectrogramConfig& cfg,
                                std::int64_t crop_offset) {
  cfg.validate();
  if (w.samples.empty()) throw DataError("compute_spectrogram: empty waveform");
  if (w.sample_rate != cfg.sample_rate)
    throw DataError("compute_spectrogram: waveform rate " +
                    std::to_string(w.sample_rate) + " != config rate " +
                    std::to_string(cfg.sample_rate));
  const std::int64_t len = static_cast<std::int64_t>(w.samples.size());
  if (crop_offset < 0 || crop_offset >= len)
    throw DataError("compute_spectrogram: crop offset " +
                    std::to_string(crop_offset) + " outside signal of length " +
                    std::to_string(len));

  const int crop_len = cfg.crop_samples();
  std::vector<double> crop(static_cast<std::size_t>(crop_len), 0.0);
  const std::int64_t avail = std::min<std::int64_t>(crop_len, len - crop_offset);
  for (std::int64_t i = 0; i < avail; ++i)
    crop[static_cast<std::size_t>(i)] = w.samples[static_cast<std::size_t>(crop_offset + i)];

  const int n = cfg.frame_size;
  std::vector<double> window(n);
  for (int i = 0; i < n; ++i)
    window[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / n));

  const Filterbank fb = Filterbank::build(cfg);

  Spectrogram spec;
  spec.rows = cfg.n_frames;
  spec.cols = cfg.n_bands;
  spec.source_id = w.source_id;
  spec.crop_offset = crop_offset;
  spec.values.resize(static_cast<std::size_t>(cfg.n_frames) * cfg.n_bands);

  std::vector<std::complex<double>> buf(static_cast<std::size_t>(n));
  std::vector<double> power(static_cast<std::size_t>(fb.n_bins));
  for (int t = 0; t < cfg.n_frames; ++t) {
    // center-padded framing: frame t covers [t*hop - n/2, t*hop + n/2)
    const std::int64_t start = static_cast<std::int64_t>(t) * cfg.hop - n / 2;
    for (int i = 0; i < n; ++i) {
      const std::int64_t src = start + i;
      const double s = (src >= 0 && src < crop_len)
                           ? crop[static_cast<std::size_t>(src)]
                           : 0.0;
      buf[static_cast<std::size_t>(i)] = s * window[i];
    }
    fft(buf);
    for (int k = 0; k < fb.n_bins; ++k) power[static_cast<std::size_t>(k)] = std::norm(buf[static_cast<std::size_t>(k)]);

    for (int b = 0; b < cfg.n_bands; ++b) {
      const double* wrow = fb.weights.data() + static_cast<std::size_t>(b) * fb.n_bins;
      double acc = 0.0;
      for (int k = 0; k < fb.n_bins; ++k) acc += wrow[k] * power[static_cast<std::size_t>(k)];
      const double db = 10.0 * std::log10(acc + cfg.power_eps);
      spec.values[static_cast<std::size_t>(t) * cfg.n_bands + b] =
          static_cast<float>(std::max(db, cfg.log_floor_db));
    }
  }
  return spec;
}

std::int64_t random_crop_offset(const ingest::Waveform& w,
                                const SpectrogramConfig& cfg, Pcg32& rng) {
  if (w.samples.empty()) throw DataError("random_crop_offset: empty waveform");
  const std::int64_t len = static_cast<std::int64_t>(w.samples.size());
  const std::int64_t max_offset = std::max<std::int64_t>(0, len - cfg.crop_samples());
  if (max_offset == 0) return 0;
  // crops are at most ~32 bit at sane rates; bounded() covers the range
  return rng.bounded(static_cast<std::uint32_t>(max_offset + 1));
}

std::vector<float> standardize(const Spectrogram& spec) {
  const std::size_t n = spec.values.size();
  if (n == 0) throw DataError("standardize: empty spectrogram");
  double mean = 0.0;
  for (float v : spec.values) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (float v : spec.values) {
    const double d = v - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  std::vector<float> out(n);
  if (var <= 1e-20) return out;  // constant input -> zeros
  const double inv = 1.0 / std::sqrt(var);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = static_cast<float>((spec.values[i] - mean) * inv);
  return out;
}

void write_cache(const Spectrogram& spec, const std::filesystem::path& path,
                 std::uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_cache: cannot open " + path.string());
  out.write(kCacheMagic, 4);
  put_u32(out, kCacheVersion);
  put_u32(out, static_cast<std::uint32_t>(spec.rows));
  put_u32(out, static_cast<std::uint32_t>(spec.cols));
  for (float v : spec.values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
  }
  out.close();

  nlohmann::ordered_json side;
  char hex[20];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(config_hash));
  side["config_hash"] = hex;
  side["source_id"] = spec.source_id;
  side["crop_offset"] = spec.crop_offset;
  side["input_standardization"] = "per_spectrogram_zscore";
  std::ofstream sout(path.string() + ".json");
  if (!sout) throw DataError("write_cache: cannot open sidecar for " + path.string());
  sout << side.dump(2) << "\n";
}

Spectrogram read_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_cache: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCacheMagic, 4) != 0)
    throw DataError("read_cache: bad magic in " + path.string());
  const std::uint32_t version = get_u32(in);
  if (version != kCacheVersion)
    throw DataError("read_cache: unsupported version in " + path.string());
  Spectrogram spec;
  spec.rows = static_cast<int>(get_u32(in));
  spec.cols = static_cast<int>(get_u32(in));
  if (spec.rows <= 0 || spec.cols <= 0 ||
      static_cast<std::int64_t>(spec.rows) * spec.cols > (1 << 28))
    throw DataError("read_cache: implausible shape in " + path.string());
  spec.values.resize(static_cast<std::size_t>(spec.rows) * spec.cols);
  for (float& v : spec.values) {
    const std::uint32_t bits = get_u32(in);
    std::memcpy(&v, &bits, 4);
  }
  if (!in) throw DataError("read_cache: truncated data in " + path.string());

  std::ifstream sin(path.string() + ".json");
  if (sin) {
    try {
      nlohmann::json side;
      sin >> side;
      spec.source_id = side.value("source_id", "");
      spec.crop_offset = side.value("crop_offset", std::int64_t{0});
    } catch (const nlohmann::json::exception&) {
      // sidecar is advisory on read; cache_valid() enforces it
    }
  }
  return spec;
}

bool cache_valid(const std::filesystem::path& path, std::uint64_t config_hash) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return false;
  std::ifstream sin(path.string() + ".json");
  if (!sin) return false;
  char hex[20];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(config_hash));
  try {
    nlohmann::json side;
    sin >> side;
    if (side.value("config_hash", "") != hex) return false;
  } catch (const nlohmann::json::exception&) {
    return false;
  }
  try {
    read_cache(path);
  } catch (const DataError&) {
    return false;
  }
  return true;
}

}  // namespace midemo::dsp
