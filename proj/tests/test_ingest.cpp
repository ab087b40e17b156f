#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "doctest.h"
#include "midemo/ingest.hpp"
#include "midemo/rng.hpp"
#include "support/oracles.hpp"

using namespace midemo;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "midemo_ingest_tests";
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::vector<float> sine(double freq, double amplitude, int rate, double seconds) {
  std::vector<float> out(static_cast<std::size_t>(rate * seconds));
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(
        amplitude * std::sin(2.0 * std::numbers::pi * freq * i / rate));
  return out;
}

void write_csv(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string midlevel_header() {
  std::string h = "song_id";
  for (const auto& c : ingest::schema_columns(ingest::Schema::MidLevel))
    h += "," + c;
  return h;
}

}  // namespace

TEST_CASE("load_audio on silence resamples without normalizing") {
  const auto path = temp_dir() / "silence.wav";
  ingest::write_wav(path, std::vector<float>(44100, 0.0f), 44100);
  const auto w = ingest::load_audio(path);
  CHECK(w.sample_rate == 22050);
  CHECK(w.samples.size() == 22050);
  for (float s : w.samples) CHECK(s == 0.0f);
}

TEST_CASE("load_audio normalizes a sine and preserves its frequency") {
  const auto path = temp_dir() / "sine440.wav";
  ingest::write_wav(path, sine(440.0, 0.5, 44100, 1.0), 44100);
  const auto w = ingest::load_audio(path);
  REQUIRE(w.samples.size() == 22050);

  float peak = 0.0f;
  for (float s : w.samples) peak = std::max(peak, std::abs(s));
  CHECK(peak == doctest::Approx(1.0).epsilon(1e-4));

  // Dominant DFT bin of the resampled signal must sit at 440 Hz. Use a 4096
  // sample window (bin width ~5.4 Hz) away from the edges.
  std::vector<double> window(4096);
  for (std::size_t i = 0; i < window.size(); ++i) window[i] = w.samples[4096 + i];
  const auto mag = oracles::dft_magnitude(window);
  std::size_t best = 1;
  for (std::size_t k = 1; k + 1 < mag.size(); ++k)
    if (mag[k] > mag[best]) best = k;
  const double freq = static_cast<double>(best) * 22050.0 / 4096.0;
  CHECK(std::abs(freq - 440.0) < 6.0);
}

TEST_CASE("resample is the identity when rates match") {
  Pcg32 rng(5);
  std::vector<float> x(1000);
  for (auto& v : x) v = static_cast<float>(rng.uniform(-1, 1));
  const auto y = ingest::resample(x, 22050, 22050);
  REQUIRE(y.size() == x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(std::abs(y[i] - x[i]) < 1e-6f);
}

TEST_CASE("load_audio averages stereo channels") {
  // Hand-written stereo PCM16 WAV: L = 0.5, R = -0.5 everywhere -> mono 0.
  const auto path = temp_dir() / "stereo.wav";
  {
    std::ofstream out(path, std::ios::binary);
    auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<char*>(&v), 4); };
    auto u16 = [&](std::uint16_t v) { out.write(reinterpret_cast<char*>(&v), 2); };
    const std::uint32_t frames = 22050;
    out.write("RIFF", 4);
    u32(36 + frames * 4);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    u32(16);
    u16(1);
    u16(2);
    u32(22050);
    u32(22050 * 4);
    u16(4);
    u16(16);
    out.write("data", 4);
    u32(frames * 4);
    for (std::uint32_t i = 0; i < frames; ++i) {
      u16(static_cast<std::uint16_t>(16384));
      u16(static_cast<std::uint16_t>(-16384));
    }
  }
  const auto w = ingest::load_audio(path);
  for (float s : w.samples) CHECK(std::abs(s) < 1e-4f);
}

TEST_CASE("load_audio error paths") {
  CHECK_THROWS_AS(ingest::load_audio(temp_dir() / "missing.wav"), DataError);
  const auto bad = temp_dir() / "bad.wav";
  write_csv(bad, "this is not a wav file");
  CHECK_THROWS_AS(ingest::load_audio(bad), DataError);

  SUBCASE("zero-length audio is rejected") {
    const auto empty = temp_dir() / "empty.wav";
    ingest::write_wav(empty, {}, 22050);
    CHECK_THROWS_AS(ingest::load_audio(empty), DataError);
  }
}

TEST_CASE("annotation loading scales and validates") {
  const auto path = temp_dir() / "midlevel.csv";
  write_csv(path, midlevel_header() +
                      "\nsong1,10,5,1,2,3,4,5\n"
                      "song2,1,2,3,4,5,6,7\n");
  const auto table = ingest::load_annotations(path, ingest::Schema::MidLevel);
  CHECK(table.size() == 2);
  CHECK(table.values.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(table.values.at(1, 0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(table.row("song2")[6] == doctest::Approx(0.7).epsilon(1e-12));

  SUBCASE("emotion top of range scales to 0.783") {
    const auto epath = temp_dir() / "emotion.csv";
    std::string h = "song_id";
    for (const auto& c : ingest::schema_columns(ingest::Schema::Emotion))
      h += "," + c;
    write_csv(epath, h + "\ns,7.83,1,2,3,4,5,6,7\n");
    const auto emo = ingest::load_annotations(epath, ingest::Schema::Emotion);
    CHECK(emo.values.at(0, 0) == doctest::Approx(0.783).epsilon(1e-12));
  }
}

TEST_CASE("annotation loader rejects malformed input") {
  const auto dir = temp_dir();

  SUBCASE("header only") {
    write_csv(dir / "empty.csv", midlevel_header() + "\n");
    CHECK_THROWS_AS(
        ingest::load_annotations(dir / "empty.csv", ingest::Schema::MidLevel),
        DataError);
  }

  SUBCASE("wrong column name") {
    write_csv(dir / "badcol.csv",
              "song_id,melodiousness,articulation,rhythmic_stability,"
              "rhythmic_complexity,dissonance,tonal_stability,sadness\n"
              "s,1,2,3,4,5,6,7\n");
    CHECK_THROWS_AS(
        ingest::load_annotations(dir / "badcol.csv", ingest::Schema::MidLevel),
        DataError);
  }

  SUBCASE("missing column") {
    write_csv(dir / "missingcol.csv",
              "song_id,melodiousness,articulation\ns,1,2\n");
    CHECK_THROWS_AS(ingest::load_annotations(dir / "missingcol.csv",
                                             ingest::Schema::MidLevel),
                    DataError);
  }

  SUBCASE("non-numeric cell names row and column") {
    write_csv(dir / "nonnum.csv",
              midlevel_header() + "\nsong1,10,5,oops,2,3,4,5\n");
    try {
      ingest::load_annotations(dir / "nonnum.csv", ingest::Schema::MidLevel);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("row 2") != std::string::npos);
      CHECK(msg.find("rhythmic_stability") != std::string::npos);
    }
  }

  SUBCASE("duplicate song id") {
    write_csv(dir / "dup.csv", midlevel_header() +
                                   "\ns,1,2,3,4,5,6,7\ns,2,3,4,5,6,7,8\n");
    CHECK_THROWS_AS(
        ingest::load_annotations(dir / "dup.csv", ingest::Schema::MidLevel),
        DataError);
  }

  SUBCASE("out-of-range raw values") {
    write_csv(dir / "high.csv", midlevel_header() + "\ns,10.5,2,3,4,5,6,7\n");
    CHECK_THROWS_AS(
        ingest::load_annotations(dir / "high.csv", ingest::Schema::MidLevel),
        DataError);
    write_csv(dir / "low.csv", midlevel_header() + "\ns,0.5,2,3,4,5,6,7\n");
    CHECK_THROWS_AS(
        ingest::load_annotations(dir / "low.csv", ingest::Schema::MidLevel),
        DataError);
  }
}

TEST_CASE("annotation write/load round trip preserves values") {
  const auto path = temp_dir() / "roundtrip.csv";
  Pcg32 rng(61);
  ingest::AnnotationTable table;
  table.schema = ingest::Schema::MidLevel;
  table.values = Mat(12, kNumMidLevel);
  for (std::size_t r = 0; r < 12; ++r) {
    table.song_ids.push_back("song" + std::to_string(r));
    for (std::size_t c = 0; c < kNumMidLevel; ++c)
      table.values.at(r, c) = rng.uniform(1.0, 10.0) * kRatingScale;
  }
  table.reindex();
  ingest::write_annotations(table, path);
  const auto loaded = ingest::load_annotations(path, ingest::Schema::MidLevel);
  REQUIRE(loaded.size() == table.size());
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t c = 0; c < kNumMidLevel; ++c)
      CHECK(std::abs(loaded.values.at(r, c) - table.values.at(r, c)) < 1e-12);

  // scaled values stay inside the schema interval
  for (double v : loaded.values.data) {
    CHECK(v >= kMidLevelRawMin * kRatingScale - 1e-12);
    CHECK(v <= kMidLevelRawMax * kRatingScale + 1e-12);
  }
}

TEST_CASE("make_splits partitions exactly") {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("s" + std::to_string(i));

  const auto splits = ingest::make_splits(ids, 0.2, 99, 3);
  REQUIRE(splits.size() == 3);
  for (const auto& s : splits) {
    CHECK(s.test_ids.size() == 2);
    CHECK(s.train_ids.size() == 8);
    std::set<std::string> all(s.train_ids.begin(), s.train_ids.end());
    for (const auto& id : s.test_ids) {
      CHECK(all.count(id) == 0);
      all.insert(id);
    }
    CHECK(all.size() == ids.size());
  }

  SUBCASE("deterministic for equal seeds") {
    const auto again = ingest::make_splits(ids, 0.2, 99, 3);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(splits[k].train_ids == again[k].train_ids);
      CHECK(splits[k].test_ids == again[k].test_ids);
    }
  }

  SUBCASE("different seeds reshuffle") {
    const auto other = ingest::make_splits(ids, 0.2, 100, 1);
    CHECK(other[0].test_ids == splits[1].test_ids);  // seed 100 == 99+1
  }

  SUBCASE("360 songs at 80:20 give 72 test songs") {
    std::vector<std::string> many;
    for (int i = 0; i < 360; ++i) many.push_back("t" + std::to_string(i));
    const auto big = ingest::make_splits(many, 0.2, 1, 1);
    CHECK(big[0].test_ids.size() == 72);
    CHECK(big[0].train_ids.size() == 288);
  }

  SUBCASE("input order does not matter") {
    auto reversed = ids;
    std::reverse(reversed.begin(), reversed.end());
    const auto again = ingest::make_splits(reversed, 0.2, 99, 1);
    CHECK(again[0].test_ids == splits[0].test_ids);
  }

  SUBCASE("bad configurations") {
    CHECK_THROWS_AS(ingest::make_splits(ids, 0.0, 1, 1), ConfigError);
    CHECK_THROWS_AS(ingest::make_splits(ids, 0.01, 1, 1), ConfigError);
    CHECK_THROWS_AS(ingest::make_splits({"a"}, 0.5, 1, 1), ConfigError);
    CHECK_THROWS_AS(ingest::make_splits({"a", "a", "b"}, 0.5, 1, 1), DataError);
  }
}

TEST_CASE("split manifest round trip") {
  std::vector<std::string> ids;
  for (int i = 0; i < 20; ++i) ids.push_back("m" + std::to_string(i));
  const auto splits = ingest::make_splits(ids, 0.25, 7, 2);
  const auto path = temp_dir() / "splits.json";
  ingest::write_split_manifest(splits, path, "cafe0123");
  const auto loaded = ingest::read_split_manifest(path);
  REQUIRE(loaded.size() == splits.size());
  for (std::size_t k = 0; k < splits.size(); ++k) {
    CHECK(loaded[k].seed == splits[k].seed);
    CHECK(loaded[k].ratio == doctest::Approx(splits[k].ratio));
    CHECK(loaded[k].train_ids == splits[k].train_ids);
    CHECK(loaded[k].test_ids == splits[k].test_ids);
  }
}
