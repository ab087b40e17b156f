#include "midemo/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "midemo/rng.hpp"

namespace midemo::ingest {

namespace {

// ---- WAV decoding ---------------------------------------------------------

struct WavFormat {
  std::uint16_t format = 0;  // 1 = PCM, 3 = IEEE float
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

double decode_sample(const unsigned char* p, const WavFormat& fmt) {
  switch (fmt.format) {
    case 1:  // integer PCM
      switch (fmt.bits) {
        case 8:  // unsigned
          return (static_cast<int>(*p) - 128) / 128.0;
        case 16: {
          std::int16_t v;
          std::memcpy(&v, p, 2);
          return v / 32768.0;
        }
        case 24: {
          std::int32_t v = (p[0] << 8) | (p[1] << 16) |
                           (static_cast<std::int32_t>(static_cast<std::int8_t>(p[2]))
                            << 24);
          return (v >> 8) / 8388608.0;
        }
        case 32: {
          std::int32_t v;
          std::memcpy(&v, p, 4);
          return v / 2147483648.0;
        }
        default:
          throw DataError("load_audio: unsupported PCM bit depth " +
                          std::to_string(fmt.bits));
      }
    case 3:  // IEEE float
      if (fmt.bits == 32) {
        float v;
        std::memcpy(&v, p, 4);
        return v;
      }
      if (fmt.bits == 64) {
        double v;
        std::memcpy(&v, p, 8);
        return v;
      }
      throw DataError("load_audio: unsupported float bit depth " +
                      std::to_string(fmt.bits));
    default:
      throw DataError("load_audio: unsupported WAV format tag " +
                      std::to_string(fmt.format));
  }
}

// ---- Kaiser-windowed sinc kernel ------------------------------------------

double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double half_sq = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= half_sq / (k * k);
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

constexpr double kKaiserBeta = 8.6;
constexpr int kHalfWidthTaps = 16;  // sinc zero crossings per side
constexpr int kPhaseSteps = 1024;   // table resolution per input sample

}  // namespace

Waveform load_audio(const std::filesystem::path& path, int target_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_audio: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw DataError("load_audio: not a RIFF/WAVE file: " + path.string());

  WavFormat fmt;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* tag = reinterpret_cast<const char*>(bytes.data() + pos);
    const std::uint32_t len = read_u32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size())
      throw DataError("load_audio: truncated chunk in " + path.string());
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (len < 16) throw DataError("load_audio: malformed fmt chunk");
      fmt.format = read_u16(bytes.data() + body);
      fmt.channels = read_u16(bytes.data() + body + 2);
      fmt.sample_rate = read_u32(bytes.data() + body + 4);
      fmt.bits = read_u16(bytes.data() + body + 14);
      if (fmt.format == 0xFFFE && len >= 40)  // WAVE_FORMAT_EXTENSIBLE
        fmt.format = read_u16(bytes.data() + body + 24);
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1);  // chunks are word-aligned
  }
  if (fmt.channels == 0 || fmt.sample_rate == 0)
    throw DataError("load_audio: missing fmt chunk in " + path.string());
  if (!data) throw DataError("load_audio: missing data chunk in " + path.string());

  const std::size_t bytes_per_sample = fmt.bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * fmt.channels;
  if (frame_bytes == 0 || data_len / frame_bytes == 0)
    throw DataError("load_audio: zero-length audio in " + path.string());
  const std::size_t n_frames = data_len / frame_bytes;

  std::vector<float> mono(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::uint16_t c = 0; c < fmt.channels; ++c)
      acc += decode_sample(data + i * frame_bytes + c * bytes_per_sample, fmt);
    mono[i] = static_cast<float>(acc / fmt.channels);
  }

  Waveform w;
  w.source_id = path.stem().string();
  w.sample_rate = target_rate;
  w.samples = resample(mono, static_cast<int>(fmt.sample_rate), target_rate);
  if (w.samples.empty()) throw DataError("load_audio: empty after resampling");

  float peak = 0.0f;
  for (float s : w.samples) peak = std::max(peak, std::abs(s));
  if (peak > 0.0f)
    for (float& s : w.samples) s /= peak;
  return w;
}

std::vector<float> resample(const std::vector<float>& samples, int src_rate,
                            int dst_rate) {
  if (src_rate <= 0 || dst_rate <= 0)
    throw ConfigError("resample: rates must be positive");
  if (samples.empty()) return {};
  if (src_rate == dst_rate) return samples;

  const double ratio = static_cast<double>(dst_rate) / src_rate;
  const double scale = std::min(1.0, ratio);      // anti-alias cutoff
  const double half_width = kHalfWidthTaps / scale;  // in input samples

  // Tabulate h(u) = scale * sinc(scale*u) * kaiser(u/half_width) on a dense
  // grid over u in [0, half_width]; evaluated by linear interpolation.
  const int table_len = static_cast<int>(half_width * kPhaseSteps) + 2;
  std::vector<double> table(table_len);
  const double i0_beta = bessel_i0(kKaiserBeta);
  for (int i = 0; i < table_len; ++i) {
    const double u = static_cast<double>(i) / kPhaseSteps;
    const double frac = u / half_width;
    if (frac >= 1.0) {
      table[i] = 0.0;
      continue;
    }
    const double window =
        bessel_i0(kKaiserBeta * std::sqrt(1.0 - frac * frac)) / i0_beta;
    const double x = scale * u;
    const double sinc =
        (x == 0.0) ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
    table[i] = scale * sinc * window;
  }
  auto kernel = [&](double u) {
    u = std::abs(u) * kPhaseSteps;
    const int i = static_cast<int>(u);
    if (i + 1 >= table_len) return 0.0;
    const double frac = u - i;
    return table[i] + frac * (table[i + 1] - table[i]);
  };

  const std::size_t out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(samples.size()) * ratio));
  std::vector<float> out(out_len);
  const std::size_t n = samples.size();
  for (std::size_t m = 0; m < out_len; ++m) {
    const double t = static_cast<double>(m) / ratio;  // center, input units
    const long k_lo = std::max<long>(0, static_cast<long>(std::ceil(t - half_width)));
    const long k_hi =
        std::min<long>(static_cast<long>(n) - 1,
                       static_cast<long>(std::floor(t + half_width)));
    double acc = 0.0;
    for (long k = k_lo; k <= k_hi; ++k)
      acc += samples[static_cast<std::size_t>(k)] * kernel(t - k);
    out[m] = static_cast<float>(acc);
  }
  return out;
}

void write_wav(const std::filesystem::path& path,
               const std::vector<float>& samples, int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_wav: cannot open " + path.string());
  const std::uint32_t data_len = static_cast<std::uint32_t>(samples.size() * 2);
  auto put_u32 = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 4);
  };
  auto put_u16 = [&](std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 2);
  };
  out.write("RIFF", 4);
  put_u32(36 + data_len);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(static_cast<std::uint32_t>(sample_rate));
  put_u32(static_cast<std::uint32_t>(sample_rate * 2));
  put_u16(2);
  put_u16(16);
  out.write("data", 4);
  put_u32(data_len);
  for (float s : samples) {
    const double clamped = std::clamp(static_cast<double>(s), -1.0, 1.0);
    put_u16(static_cast<std::uint16_t>(
        static_cast<std::int16_t>(std::lround(clamped * 32767.0))));
  }
}

// ---- Annotations -----------------------------------------------------------

std::size_t schema_width(Schema schema) {
  return schema == Schema::MidLevel ? kNumMidLevel : kNumEmotions;
}

const std::vector<std::string>& schema_columns(Schema schema) {
  static const std::vector<std::string> mid(kMidLevelNames.begin(),
                                            kMidLevelNames.end());
  static const std::vector<std::string> emo(kEmotionNames.begin(),
                                            kEmotionNames.end());
  return schema == Schema::MidLevel ? mid : emo;
}

std::size_t AnnotationTable::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end())
    throw DataError("annotation table: unknown song id '" + id + "'");
  return it->second;
}

std::vector<double> AnnotationTable::row(const std::string& id) const {
  const std::size_t r = index_of(id);
  return {values.data.begin() + static_cast<long>(r * values.cols),
          values.data.begin() + static_cast<long>((r + 1) * values.cols)};
}

void AnnotationTable::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < song_ids.size(); ++i) index_[song_ids[i]] = i;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

double raw_max(Schema schema) {
  return schema == Schema::MidLevel ? kMidLevelRawMax : kEmotionRawMax;
}

}  // namespace

AnnotationTable load_annotations(const std::filesystem::path& path, Schema schema) {
  std::ifstream in(path);
  if (!in) throw DataError("load_annotations: cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line))
    throw DataError("load_annotations: empty file " + path.string());
  const auto header = split_csv_line(line);
  const auto& expected = schema_columns(schema);
  if (header.size() != expected.size() + 1 || header[0] != "song_id") {
    throw DataError("load_annotations: header must be song_id," +
                    [&] {
                      std::string joined;
                      for (const auto& c : expected)
                        joined += (joined.empty() ? "" : ",") + c;
                      return joined;
                    }() +
                    " in " + path.string());
  }
  for (std::size_t c = 0; c < expected.size(); ++c)
    if (header[c + 1] != expected[c])
      throw DataError("load_annotations: column " + std::to_string(c + 1) +
                      " is '" + header[c + 1] + "', expected '" + expected[c] +
                      "'");

  AnnotationTable table;
  table.schema = schema;
  std::vector<double> flat;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != expected.size() + 1)
      throw DataError("load_annotations: row " + std::to_string(row_no) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(expected.size() + 1));
    if (fields[0].empty())
      throw DataError("load_annotations: row " + std::to_string(row_no) +
                      ": empty song_id");
    table.song_ids.push_back(fields[0]);
    for (std::size_t c = 0; c < expected.size(); ++c) {
      const std::string& cell = fields[c + 1];
      char* end = nullptr;
      const double raw = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size() || !std::isfinite(raw))
        throw DataError("load_annotations: non-numeric cell at row " +
                        std::to_string(row_no) + ", column '" + expected[c] + "'");
      // Small tolerance at the top edge absorbs write/reload rounding.
      if (raw < kMidLevelRawMin - 1e-9 || raw > raw_max(schema) + 1e-9)
        throw DataError("load_annotations: value " + cell + " out of range [1, " +
                        std::to_string(raw_max(schema)) + "] at row " +
                        std::to_string(row_no) + ", column '" + expected[c] + "'");
      flat.push_back(raw * kRatingScale);
    }
  }
  if (table.song_ids.empty())
    throw DataError("load_annotations: no data rows in " + path.string());

  table.values = Mat(table.song_ids.size(), expected.size());
  table.values.data = std::move(flat);
  table.reindex();
  for (std::size_t i = 0; i < table.song_ids.size(); ++i) {
    // reindex keeps the last duplicate; detect collisions explicitly
    if (table.index_of(table.song_ids[i]) != i)
      throw DataError("load_annotations: duplicate song id '" + table.song_ids[i] +
                      "'");
  }
  return table;
}

void write_annotations(const AnnotationTable& table,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("write_annotations: cannot open " + path.string());
  out << "song_id";
  for (const auto& c : schema_columns(table.schema)) out << "," << c;
  out << "\n";
  char buf[40];
  for (std::size_t r = 0; r < table.size(); ++r) {
    out << table.song_ids[r];
    for (std::size_t c = 0; c < table.values.cols; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", table.values.at(r, c) / kRatingScale);
      out << "," << buf;
    }
    out << "\n";
  }
}

AnnotationTable subset(const AnnotationTable& table,
                       const std::vector<std::string>& ids) {
  AnnotationTable out;
  out.schema = table.schema;
  out.song_ids = ids;
  out.values = Mat(ids.size(), table.values.cols);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const std::size_t src = table.index_of(ids[r]);
    for (std::size_t c = 0; c < table.values.cols; ++c)
      out.values.at(r, c) = table.values.at(src, c);
  }
  out.reindex();
  return out;
}

// ---- Splits ----------------------------------------------------------------

std::vector<Split> make_splits(const std::vector<std::string>& song_ids,
                               double ratio, std::uint64_t base_seed,
                               std::size_t runs) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw ConfigError("make_splits: ratio must be in (0, 1)");
  if (runs < 1) throw ConfigError("make_splits: runs must be >= 1");
  if (song_ids.size() < 2) throw ConfigError("make_splits: need at least 2 songs");

  std::vector<std::string> sorted = song_ids;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw DataError("make_splits: duplicate song ids");

  const std::size_t n = sorted.size();
  const std::size_t test_n =
      static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  if (test_n == 0 || test_n >= n)
    throw ConfigError("make_splits: ratio " + std::to_string(ratio) +
                      " leaves an empty side for n=" + std::to_string(n));

  std::vector<Split> splits;
  splits.reserve(runs);
  for (std::size_t k = 0; k < runs; ++k) {
    Split s;
    s.seed = base_seed + k;
    s.ratio = ratio;
    std::vector<std::string> ids = sorted;
    Pcg32 rng(s.seed);
    shuffle(ids, rng);
    s.test_ids.assign(ids.begin(), ids.begin() + static_cast<long>(test_n));
    s.train_ids.assign(ids.begin() + static_cast<long>(test_n), ids.end());
    std::sort(s.test_ids.begin(), s.test_ids.end());
    std::sort(s.train_ids.begin(), s.train_ids.end());
    splits.push_back(std::move(s));
  }
  return splits;
}

void write_split_manifest(const std::vector<Split>& splits,
                          const std::filesystem::path& path,
                          const std::string& config_hash) {
  nlohmann::ordered_json doc;
  doc["prng"] = "pcg32";
  if (!config_hash.empty()) doc["config_hash"] = config_hash;
  doc["splits"] = nlohmann::ordered_json::array();
  for (const auto& s : splits) {
    nlohmann::ordered_json j;
    j["seed"] = s.seed;
    j["ratio"] = s.ratio;
    j["train_ids"] = s.train_ids;
    j["test_ids"] = s.test_ids;
    doc["splits"].push_back(j);
  }
  std::ofstream out(path);
  if (!out) throw DataError("write_split_manifest: cannot open " + path.string());
  out << doc.dump(2) << "\n";
}

std::vector<Split> read_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("read_split_manifest: cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("read_split_manifest: " + std::string(e.what()));
  }
  std::vector<Split> splits;
  for (const auto& j : doc.at("splits")) {
    Split s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.ratio = j.at("ratio").get<double>();
    s.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    s.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    splits.push_back(std::move(s));
  }
  return splits;
}

}  // namespace midemo::ingest
