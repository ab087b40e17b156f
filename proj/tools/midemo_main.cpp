// Command-line front end: prepare -> train -> eval/coe/explain/report over a
// single TOML config, writing reproducible artifacts under the output dir.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "midemo/config.hpp"
#include "midemo/core.hpp"
#include "midemo/dsp.hpp"
#include "midemo/eval.hpp"
#include "midemo/explain.hpp"
#include "midemo/ingest.hpp"
#include "midemo/models.hpp"
#include "midemo/trainer.hpp"

namespace fs = std::filesystem;
using namespace midemo;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

config::ExperimentConfig load_config(const CommonArgs& args) {
  if (args.config_path.empty())
    throw ConfigError("--config is required for this command");
  return config::load_experiment_config(args.config_path, args.overrides);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Skips the write when the content is already on disk, keeping re-runs
// byte-identical and cheap.
bool write_if_changed(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (fs::exists(path, ec)) {
    if (read_file(path) == content) return false;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  return true;
}

std::string stamp(const config::ExperimentConfig& cfg) {
  return "# config_hash=" + cfg.hash_hex() + " seed=" +
         std::to_string(cfg.base_seed) + "\n";
}

std::string svg_stamp(const config::ExperimentConfig& cfg) {
  return "<!-- config_hash=" + cfg.hash_hex() + " seed=" +
         std::to_string(cfg.base_seed) + " -->\n";
}

std::string run_context(const config::ExperimentConfig& cfg, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["config_hash"] = cfg.hash_hex();
  j["seed"] = seed;
  return j.dump();
}

std::vector<std::string> split_csv_ids(const std::string& arg) {
  std::vector<std::string> ids;
  std::stringstream ss(arg);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) ids.push_back(item);
  return ids;
}

struct LoadedData {
  std::optional<ingest::AnnotationTable> midlevel;
  std::optional<ingest::AnnotationTable> emotion;
};

LoadedData load_tables(const config::ExperimentConfig& cfg) {
  LoadedData data;
  if (!cfg.midlevel_csv.empty())
    data.midlevel =
        ingest::load_annotations(cfg.midlevel_csv, ingest::Schema::MidLevel);
  if (!cfg.emotion_csv.empty())
    data.emotion =
        ingest::load_annotations(cfg.emotion_csv, ingest::Schema::Emotion);
  if (!data.midlevel && !data.emotion)
    throw ConfigError("config must set data.midlevel_csv and/or data.emotion_csv");
  return data;
}

std::vector<std::string> union_ids(const LoadedData& data) {
  std::set<std::string> ids;
  if (data.midlevel)
    ids.insert(data.midlevel->song_ids.begin(), data.midlevel->song_ids.end());
  if (data.emotion)
    ids.insert(data.emotion->song_ids.begin(), data.emotion->song_ids.end());
  return {ids.begin(), ids.end()};
}

// Songs used by the protocol for a scheme: the emotion set, or the full
// mid-level set for a2mid+.
const std::vector<std::string>& protocol_ids(models::Scheme scheme,
                                             const LoadedData& data) {
  if (scheme == models::Scheme::A2MidPlus) {
    if (!data.midlevel)
      throw ConfigError("scheme a2mid+ needs data.midlevel_csv");
    return data.midlevel->song_ids;
  }
  if (scheme == models::Scheme::A2Mid && !data.emotion)
    throw ConfigError("scheme a2mid splits the emotion-dataset songs; set "
                      "data.emotion_csv");
  if (!data.emotion) throw ConfigError("scheme needs data.emotion_csv");
  return data.emotion->song_ids;
}

fs::path cache_file(const config::ExperimentConfig& cfg, const std::string& id) {
  return cfg.output_dir / "cache" / (id + ".mspc");
}

std::map<std::string, ingest::Waveform> load_waveforms(
    const config::ExperimentConfig& cfg, const std::vector<std::string>& ids) {
  std::map<std::string, ingest::Waveform> out;
  for (const auto& id : ids) {
    const fs::path path = cfg.audio_dir / (id + ".wav");
    out[id] = ingest::load_audio(path, cfg.spectrogram.sample_rate);
  }
  return out;
}

trainer::FixedProvider cache_provider(const config::ExperimentConfig& cfg,
                                      const std::vector<std::string>& ids) {
  std::map<std::string, dsp::Spectrogram> specs;
  for (const auto& id : ids) {
    const fs::path path = cache_file(cfg, id);
    if (!dsp::cache_valid(path, cfg.spectrogram.hash()))
      throw DataError("spectrogram cache missing or stale for '" + id +
                      "'; run `midemo prepare` first");
    specs[id] = dsp::read_cache(path);
  }
  return trainer::FixedProvider(std::move(specs));
}

// ---- prepare ----------------------------------------------------------------

int cmd_prepare(const CommonArgs& common) {
  const auto cfg = load_config(common);
  cfg.validate_paths();
  if (cfg.audio_dir.empty())
    throw ConfigError("prepare needs data.audio_dir");
  const auto data = load_tables(cfg);

  fs::create_directories(cfg.output_dir / "cache");
  fs::create_directories(cfg.output_dir / "splits");

  // Consistency between the audio directory and the annotation tables.
  std::set<std::string> audio_ids;
  for (const auto& entry : fs::directory_iterator(cfg.audio_dir))
    if (entry.path().extension() == ".wav")
      audio_ids.insert(entry.path().stem().string());
  const auto annotated = union_ids(data);

  std::vector<std::string> missing_audio, missing_annotation;
  for (const auto& id : annotated)
    if (!audio_ids.count(id)) missing_audio.push_back(id);
  for (const auto& id : audio_ids)
    if (std::find(annotated.begin(), annotated.end(), id) == annotated.end())
      missing_annotation.push_back(id);

  nlohmann::ordered_json report;
  report["config_hash"] = cfg.hash_hex();
  report["audio_files"] = audio_ids.size();
  report["annotated_songs"] = annotated.size();
  report["missing_audio"] = missing_audio;
  report["missing_annotation"] = missing_annotation;
  write_if_changed(cfg.output_dir / "validation_report.json",
                   report.dump(2) + "\n");

  if (!missing_audio.empty() || !missing_annotation.empty()) {
    std::cerr << "validation failed: " << missing_audio.size()
              << " annotated song(s) without audio, " << missing_annotation.size()
              << " audio file(s) without annotation; see "
              << (cfg.output_dir / "validation_report.json") << "\n";
    return 2;
  }

  std::size_t written = 0, unchanged = 0;
  for (const auto& id : annotated) {
    const fs::path path = cache_file(cfg, id);
    if (dsp::cache_valid(path, cfg.spectrogram.hash())) {
      ++unchanged;
      continue;
    }
    const auto w = ingest::load_audio(cfg.audio_dir / (id + ".wav"),
                                      cfg.spectrogram.sample_rate);
    const std::int64_t len = static_cast<std::int64_t>(w.samples.size());
    const std::int64_t center =
        std::max<std::int64_t>(0, (len - cfg.spectrogram.crop_samples()) / 2);
    const auto spec = dsp::compute_spectrogram(w, cfg.spectrogram, center);
    dsp::write_cache(spec, path, cfg.spectrogram.hash());
    ++written;
  }

  const auto scheme = models::scheme_from_name(cfg.scheme);
  const auto& ids = protocol_ids(scheme, data);
  const double ratio =
      scheme == models::Scheme::A2MidPlus ? 0.08 : cfg.test_ratio;
  const std::size_t runs = scheme == models::Scheme::A2MidPlus ? 1 : cfg.runs;
  const auto splits = ingest::make_splits(ids, ratio, cfg.base_seed, runs);
  ingest::write_split_manifest(splits,
                               cfg.output_dir / "splits" / "splits.json",
                               cfg.hash_hex());

  std::cout << "cache: " << written << " written, " << unchanged
            << " unchanged\nsplits: " << splits.size() << " run(s) at ratio "
            << ratio << "\n";
  return 0;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const CommonArgs& common, const std::string& scheme_arg,
              int runs_arg, long long seed_arg, std::size_t jobs) {
  auto cfg = load_config(common);
  if (!scheme_arg.empty()) cfg.scheme = scheme_arg;
  if (runs_arg > 0) cfg.runs = static_cast<std::size_t>(runs_arg);
  if (seed_arg >= 0) cfg.base_seed = static_cast<std::uint64_t>(seed_arg);
  const auto scheme = models::scheme_from_name(cfg.scheme);
  cfg.validate_paths();
  const auto data = load_tables(cfg);

  fs::create_directories(cfg.output_dir / "checkpoints");
  fs::create_directories(cfg.output_dir / "results");
  fs::create_directories(cfg.output_dir / "splits");

  trainer::DataBundle bundle;
  bundle.midlevel = data.midlevel ? &*data.midlevel : nullptr;
  bundle.emotion = data.emotion ? &*data.emotion : nullptr;

  std::optional<trainer::WaveformProvider> provider;
  if (models::scheme_has_network(scheme)) {
    if (cfg.audio_dir.empty())
      throw ConfigError("training scheme '" + cfg.scheme +
                        "' needs data.audio_dir");
    // a2mid2e stage 1 may train on every mid-level song; other schemes only
    // touch the protocol ids.
    std::vector<std::string> needed = protocol_ids(scheme, data);
    if (scheme == models::Scheme::A2Mid2E && data.midlevel)
      needed = data.midlevel->song_ids;
    provider.emplace(load_waveforms(cfg, needed), cfg.spectrogram);
    bundle.provider = &*provider;
  }

  trainer::ProtocolOptions opts;
  opts.runs = scheme == models::Scheme::A2MidPlus ? 1 : cfg.runs;
  opts.base_seed = cfg.base_seed;
  opts.test_ratio = scheme == models::Scheme::A2MidPlus ? 0.08 : cfg.test_ratio;
  opts.training = cfg.training;
  opts.trunk = cfg.trunk;
  opts.jobs = jobs;

  const std::string tag = models::scheme_name(scheme);
  opts.run_sink = [&](std::size_t k, trainer::RunResult& run,
                      models::SchemeModel* model) {
    if (model) {
      const fs::path ckpt = cfg.output_dir / "checkpoints" /
                            (tag + "_run" + std::to_string(k) + ".ckpt");
      model->save(ckpt, run_context(cfg, run.seed));
      run.checkpoint = ckpt.string();
    }
    write_if_changed(cfg.output_dir / "results" /
                         (tag + "_run" + std::to_string(k) + ".json"),
                     trainer::run_result_json(run, cfg.hash_hex()));
    if (!run.log.empty())
      write_if_changed(cfg.output_dir / "results" /
                           (tag + "_run" + std::to_string(k) + "_log.jsonl"),
                       trainer::epoch_log_jsonl(run.log));
  };

  const auto result = trainer::run_protocol(scheme, bundle, opts);

  ingest::write_split_manifest(result.splits,
                               cfg.output_dir / "splits" /
                                   ("splits_" + tag + ".json"),
                               cfg.hash_hex());

  eval::ResultsTable table;
  table.rows.push_back(result.mean_row);
  const std::string csv = eval::results_csv(table);
  write_if_changed(cfg.output_dir / "results" / (tag + "_results.csv"),
                   stamp(cfg) + csv);
  write_if_changed(cfg.output_dir / "results" / (tag + "_results.json"),
                   eval::results_json(table, cfg.hash_hex()));
  std::cout << csv;
  return 0;
}

// ---- eval -------------------------------------------------------------------

int cmd_eval(const CommonArgs& common, const std::string& checkpoint,
             std::size_t run_index) {
  const auto cfg = load_config(common);
  cfg.validate_paths();
  const auto data = load_tables(cfg);
  auto model = models::SchemeModel::load(checkpoint);
  const auto scheme = model.scheme();

  const auto& ids = protocol_ids(scheme, data);
  const double ratio =
      scheme == models::Scheme::A2MidPlus ? 0.08 : cfg.test_ratio;
  const std::size_t runs = scheme == models::Scheme::A2MidPlus ? 1 : cfg.runs;
  const auto splits = ingest::make_splits(ids, ratio, cfg.base_seed, runs);
  if (run_index >= splits.size())
    throw ConfigError("--run " + std::to_string(run_index) + " out of range (" +
                      std::to_string(splits.size()) + " runs)");
  const auto& split = splits[run_index];

  const bool midlevel_targets =
      scheme == models::Scheme::A2Mid || scheme == models::Scheme::A2MidPlus;
  if (midlevel_targets && !data.midlevel)
    throw ConfigError("eval of this checkpoint needs data.midlevel_csv");
  const ingest::AnnotationTable& truth =
      midlevel_targets ? *data.midlevel : *data.emotion;

  const auto provider = cache_provider(cfg, split.test_ids);
  const auto result = trainer::evaluate_on_test(
      [&](const std::string& id) {
        const auto out = model.predict(provider.eval_view(id));
        if (midlevel_targets) return *out.midlevel;
        if (!out.emotion)
          throw DataError("checkpoint scheme '" + models::scheme_name(scheme) +
                          "' produces no emotion output (missing linear map?)");
        return *out.emotion;
      },
      truth, split.test_ids);

  nlohmann::ordered_json j;
  j["config_hash"] = cfg.hash_hex();
  j["checkpoint"] = checkpoint;
  j["scheme"] = models::scheme_name(scheme);
  j["split_seed"] = split.seed;
  j["targets"] = result.targets;
  j["r"] = result.r;
  j["degenerate"] = result.degenerate;
  std::cout << j.dump(2) << "\n";
  return 0;
}

// ---- coe --------------------------------------------------------------------

eval::ResultsRow row_from_results_file(const fs::path& path,
                                       const std::string& scheme) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("coe: cannot parse " + path.string() + ": " + e.what());
  }
  if (!doc.contains("rows") || doc["rows"].empty())
    throw DataError("coe: no result rows in " + path.string());
  for (const auto& j : doc["rows"]) {
    if (!scheme.empty() && j.at("scheme").get<std::string>() != scheme) continue;
    eval::ResultsRow row;
    row.scheme = j.at("scheme").get<std::string>();
    row.targets = j.at("targets").get<std::vector<std::string>>();
    row.r = j.at("r").get<std::vector<double>>();
    row.degenerate.assign(row.targets.size(), false);
    return row;
  }
  throw DataError("coe: scheme '" + scheme + "' not found in " + path.string());
}

int cmd_coe(const std::string& baseline_path, const std::string& candidate_path,
            const std::string& baseline_scheme, const std::string& candidate_scheme,
            const std::string& out_dir) {
  const auto baseline = row_from_results_file(baseline_path, baseline_scheme);
  const auto candidate = row_from_results_file(candidate_path, candidate_scheme);
  const auto report = eval::cost_of_explainability(baseline, candidate);
  const std::string csv = eval::coe_csv(report);
  std::cout << csv;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const std::string name = "coe_" + report.baseline + "_vs_" + report.candidate;
    write_if_changed(fs::path(out_dir) / (name + ".csv"), csv);
    write_if_changed(fs::path(out_dir) / (name + ".json"),
                     eval::coe_json(report));
  }
  return 0;
}

// ---- explain / report ---------------------------------------------------------

struct ExplainInputs {
  explain::LinearMap map;
  explain::EffectsTensor effects;
  Mat emotion_annotations;   // aligned with effects.song_ids
  Mat midlevel_annotations;  // aligned with effects.song_ids
  std::vector<std::string> song_ids;
};

ExplainInputs build_explain_inputs(const config::ExperimentConfig& cfg,
                                   models::SchemeModel& model,
                                   const LoadedData& data) {
  if (model.scheme() != models::Scheme::A2Mid2E &&
      model.scheme() != models::Scheme::A2Mid2EJoint)
    throw DataError("scheme '" + models::scheme_name(model.scheme()) +
                    "' has no linear emotion layer to explain; use an "
                    "a2mid2e or a2mid2e-joint checkpoint");
  if (!data.emotion || !data.midlevel)
    throw ConfigError("explain needs both annotation tables in the config");

  ExplainInputs out;
  out.song_ids = data.emotion->song_ids;
  const auto provider = cache_provider(cfg, out.song_ids);

  out.map = model.extract_linear_map();
  Mat features(out.song_ids.size(), kNumMidLevel);
  out.emotion_annotations = Mat(out.song_ids.size(), kNumEmotions);
  out.midlevel_annotations = Mat(out.song_ids.size(), kNumMidLevel);
  for (std::size_t s = 0; s < out.song_ids.size(); ++s) {
    const auto& id = out.song_ids[s];
    const auto pred = model.predict(provider.eval_view(id));
    if (!pred.midlevel)
      throw DataError("checkpoint produces no mid-level output");
    for (std::size_t f = 0; f < kNumMidLevel; ++f)
      features.at(s, f) = (*pred.midlevel)[f];
    const auto emo = data.emotion->row(id);
    for (std::size_t e = 0; e < kNumEmotions; ++e)
      out.emotion_annotations.at(s, e) = emo[e];
    const auto mid = data.midlevel->row(id);
    for (std::size_t f = 0; f < kNumMidLevel; ++f)
      out.midlevel_annotations.at(s, f) = mid[f];
  }
  out.effects = explain::compute_effects(
      out.map, features, out.song_ids,
      "model:" + models::scheme_name(model.scheme()));
  return out;
}

int cmd_explain(const CommonArgs& common, const std::string& checkpoint,
                const std::string& songs_arg, const std::string& pair_mode,
                const std::vector<std::string>& formats, bool reports_only) {
  const auto cfg = load_config(common);
  cfg.validate_paths();
  const auto data = load_tables(cfg);
  auto model = models::SchemeModel::load(checkpoint);
  auto inputs = build_explain_inputs(cfg, model, data);

  const std::vector<std::string> features(kMidLevelNames.begin(),
                                          kMidLevelNames.end());
  const std::vector<std::string> targets(kEmotionNames.begin(),
                                         kEmotionNames.end());
  const fs::path dir = cfg.output_dir / "explain";
  fs::create_directories(dir);

  auto wants = [&](const std::string& kind) {
    return formats.empty() ||
           std::find(formats.begin(), formats.end(), kind) != formats.end();
  };

  // Songs to report: explicit list, or the mined contrast pair.
  std::vector<std::string> report_ids = split_csv_ids(songs_arg);
  std::vector<std::size_t> highlight_rows;
  nlohmann::ordered_json pair_json;
  if (report_ids.empty() && !pair_mode.empty()) {
    explain::PairMode mode;
    if (pair_mode == "paper")
      mode = explain::PairMode::Paper;
    else if (pair_mode == "intent")
      mode = explain::PairMode::Intent;
    else
      throw ConfigError("--pair-mode must be paper or intent");
    const auto pair = explain::select_contrast_pair(
        inputs.emotion_annotations, inputs.midlevel_annotations, mode);
    report_ids = {inputs.song_ids[pair.i], inputs.song_ids[pair.j]};
    highlight_rows = {pair.i, pair.j};
    pair_json["config_hash"] = cfg.hash_hex();
    pair_json["mode"] = pair_mode;
    pair_json["song_i"] = inputs.song_ids[pair.i];
    pair_json["song_j"] = inputs.song_ids[pair.j];
    pair_json["d_e_raw"] = pair.d_e_raw;
    pair_json["d_mid_raw"] = pair.d_mid_raw;
    pair_json["d_e"] = pair.d_e;
    pair_json["d_mid"] = pair.d_mid;
    pair_json["d_comb"] = pair.d_comb;
    pair_json["degenerate"] = pair.degenerate;
  }
  for (const auto& id : report_ids) {
    if (std::find(inputs.song_ids.begin(), inputs.song_ids.end(), id) ==
        inputs.song_ids.end())
      throw DataError("explain: unknown song id '" + id + "'");
  }

  if (!reports_only) {
    const auto dist = explain::effects_distribution(inputs.effects);
    if (wants("csv")) {
      write_if_changed(dir / "effects.csv",
                       stamp(cfg) +
                           explain::effects_csv(inputs.effects, features, targets));
      write_if_changed(dir / "effects_boxstats.csv",
                       stamp(cfg) +
                           explain::distribution_csv(dist, features, targets));
      write_if_changed(dir / "weights.csv",
                       stamp(cfg) +
                           explain::weights_csv(inputs.map, features, targets));
      const auto corr = explain::correlation_matrix(inputs.midlevel_annotations,
                                                    inputs.emotion_annotations);
      write_if_changed(dir / "correlation_matrix.csv",
                       stamp(cfg) +
                           explain::correlation_csv(corr, features, targets));
    }
    if (wants("svg")) {
      write_if_changed(
          dir / "effects_boxplot.svg",
          svg_stamp(cfg) +
              explain::distribution_svg(dist, features, targets,
                                        highlight_rows.empty() ? nullptr
                                                               : &inputs.effects,
                                        highlight_rows));
      write_if_changed(dir / "weights.svg",
                       svg_stamp(cfg) +
                           explain::weights_svg(inputs.map, features, targets));
    }
  }

  if (!pair_json.empty() && wants("json"))
    write_if_changed(dir / "contrast_pair.json", pair_json.dump(2) + "\n");

  for (const auto& id : report_ids) {
    const auto report = explain::song_report(id, inputs.effects, inputs.map,
                                             &inputs.emotion_annotations,
                                             features, targets);
    if (wants("json"))
      write_if_changed(dir / ("song_" + id + ".json"),
                       explain::song_report_json(report));
    const std::string text = explain::song_report_text(report);
    write_if_changed(dir / ("song_" + id + ".txt"), text);
    std::cout << text;
  }
  if (!pair_json.empty())
    std::cout << "contrast pair: " << pair_json["song_i"].get<std::string>()
              << " vs " << pair_json["song_j"].get<std::string>()
              << " (d_comb=" << pair_json["d_comb"].get<double>() << ")\n";
  if (!reports_only)
    std::cout << "explain artifacts written to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mid-level feature based music emotion modeling"};
  app.require_subcommand(1);

  CommonArgs common;
  app.add_option("--config", common.config_path, "TOML experiment config")
      ->envname("MIDEMO_CONFIG");
  app.add_option("--set", common.overrides,
                 "override a config key, e.g. --set training.lr=0.001");

  auto* prepare =
      app.add_subcommand("prepare", "decode audio, build caches and splits");

  auto* train = app.add_subcommand("train", "run the training protocol");
  std::string scheme_arg;
  int runs_arg = -1;
  long long seed_arg = -1;
  std::size_t jobs = 1;
  train->add_option("--scheme", scheme_arg,
                    "a2e | a2mid | a2mid+ | a2mid2e | a2mid2e-joint | mid2e");
  train->add_option("--runs", runs_arg, "number of protocol runs");
  train->add_option("--seed", seed_arg, "base seed");
  train->add_option("--jobs", jobs, "parallel runs");

  auto* evalc = app.add_subcommand("eval", "re-evaluate a checkpoint on a split");
  std::string eval_ckpt;
  std::size_t eval_run = 0;
  evalc->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  evalc->add_option("--run", eval_run, "protocol run index (default 0)");

  auto* coe =
      app.add_subcommand("coe", "cost of explainability between two results");
  std::string coe_baseline, coe_candidate, coe_bscheme, coe_cscheme, coe_out;
  coe->add_option("--baseline", coe_baseline, "baseline results JSON")->required();
  coe->add_option("--candidate", coe_candidate, "candidate results JSON")
      ->required();
  coe->add_option("--baseline-scheme", coe_bscheme,
                  "row to pick from the baseline file");
  coe->add_option("--candidate-scheme", coe_cscheme,
                  "row to pick from the candidate file");
  coe->add_option("--out", coe_out, "directory for coe csv/json artifacts");

  auto* explainc =
      app.add_subcommand("explain", "effects, weights and song reports");
  std::string ex_ckpt, ex_songs, ex_pair;
  std::vector<std::string> ex_formats;
  explainc
      ->add_option("--checkpoint", ex_ckpt, "a2mid2e or a2mid2e-joint checkpoint")
      ->required();
  explainc->add_option("--songs", ex_songs, "comma-separated song ids to report");
  explainc->add_option("--pair-mode", ex_pair,
                       "mine a contrast pair: paper | intent");
  explainc->add_option("--format", ex_formats, "restrict outputs: csv | json | svg");

  auto* reportc = app.add_subcommand("report", "song reports only");
  std::string rep_ckpt, rep_songs, rep_pair;
  reportc->add_option("--checkpoint", rep_ckpt, "model checkpoint")->required();
  reportc->add_option("--songs", rep_songs, "comma-separated song ids");
  reportc->add_option("--pair-mode", rep_pair, "paper | intent");

  try {
    app.parse(argc, argv);
    if (prepare->parsed()) return cmd_prepare(common);
    if (train->parsed())
      return cmd_train(common, scheme_arg, runs_arg, seed_arg, jobs);
    if (evalc->parsed()) return cmd_eval(common, eval_ckpt, eval_run);
    if (coe->parsed())
      return cmd_coe(coe_baseline, coe_candidate, coe_bscheme, coe_cscheme,
                     coe_out);
    if (explainc->parsed())
      return cmd_explain(common, ex_ckpt, ex_songs, ex_pair, ex_formats, false);
    if (reportc->parsed())
      return cmd_explain(common, rep_ckpt, rep_songs, rep_pair, {}, true);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
