#include "midemo/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include "json.hpp"
#include "midemo/nn.hpp"

namespace midemo::trainer {

void TrainingConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("training: lr must be positive");
  if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
  if (patience < 1) throw ConfigError("training: patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("training: max_epochs must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("training: val_fraction must be in (0, 1)");
}

// ---- Providers ---------------------------------------------------------------

WaveformProvider::WaveformProvider(std::map<std::string, ingest::Waveform> waveforms,
                                   dsp::SpectrogramConfig cfg)
    : waveforms_(std::move(waveforms)), cfg_(cfg) {
  cfg_.validate();
}

const ingest::Waveform& WaveformProvider::get(const std::string& id) const {
  auto it = waveforms_.find(id);
  if (it == waveforms_.end())
    throw DataError("provider: no waveform for song '" + id + "'");
  return it->second;
}

dsp::Spectrogram WaveformProvider::train_view(const std::string& id,
                                              Pcg32& rng) const {
  const auto& w = get(id);
  return dsp::compute_spectrogram(w, cfg_, dsp::random_crop_offset(w, cfg_, rng));
}

dsp::Spectrogram WaveformProvider::eval_view(const std::string& id) const {
  const auto& w = get(id);
  const std::int64_t len = static_cast<std::int64_t>(w.samples.size());
  const std::int64_t center =
      std::max<std::int64_t>(0, (len - cfg_.crop_samples()) / 2);
  return dsp::compute_spectrogram(w, cfg_, center);
}

std::vector<std::string> WaveformProvider::ids() const {
  std::vector<std::string> out;
  out.reserve(waveforms_.size());
  for (const auto& [id, _] : waveforms_) out.push_back(id);
  return out;
}

FixedProvider::FixedProvider(std::map<std::string, dsp::Spectrogram> specs)
    : specs_(std::move(specs)) {}

dsp::Spectrogram FixedProvider::train_view(const std::string& id, Pcg32&) const {
  return eval_view(id);
}

dsp::Spectrogram FixedProvider::eval_view(const std::string& id) const {
  auto it = specs_.find(id);
  if (it == specs_.end())
    throw DataError("provider: no spectrogram for song '" + id + "'");
  return it->second;
}

std::vector<std::string> FixedProvider::ids() const {
  std::vector<std::string> out;
  out.reserve(specs_.size());
  for (const auto& [id, _] : specs_) out.push_back(id);
  return out;
}

// ---- Training ------------------------------------------------------------------

namespace {

nn::Tensor<float> target_tensor(const ingest::AnnotationTable& table,
                                const std::vector<std::string>& ids) {
  nn::Tensor<float> t({ids.size(), table.values.cols});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto row = table.row(ids[i]);
    for (std::size_t c = 0; c < row.size(); ++c)
      t.data[i * row.size() + c] = static_cast<float>(row[c]);
  }
  return t;
}

// Forward + loss (+ optional backward/step) for one batch of ids.
double process_batch(models::SchemeModel& model, const SpectrogramProvider& provider,
                     const ingest::AnnotationTable* midlevel,
                     const ingest::AnnotationTable* emotion,
                     const std::vector<std::string>& ids, TargetKind targets,
                     bool train, Pcg32* rng, nn::AdamState<float>* adam) {
  std::vector<dsp::Spectrogram> specs;
  specs.reserve(ids.size());
  for (const auto& id : ids)
    specs.push_back(train ? provider.train_view(id, *rng)
                          : provider.eval_view(id));
  std::vector<const dsp::Spectrogram*> ptrs;
  for (const auto& s : specs) ptrs.push_back(&s);
  const nn::Tensor<float> input = models::spectrogram_batch(ptrs);

  double loss = 0.0;
  if (targets == TargetKind::Both) {
    const nn::Tensor<float> mid_t = target_tensor(*midlevel, ids);
    const nn::Tensor<float> emo_t = target_tensor(*emotion, ids);
    nn::Tensor<float> mid = model.backbone().forward(input, train, rng);
    nn::Tensor<float> emo = model.emotion_head()->forward(mid, train, rng);
    loss = models::joint_loss(mid, mid_t, emo, emo_t);
    if (train) {
      model.zero_grads();
      nn::Tensor<float> d_mid = model.emotion_head()->backward(
          nn::mse_grad(emo, emo_t));
      const nn::Tensor<float> d_mid_direct = nn::mse_grad(mid, mid_t);
      for (std::size_t i = 0; i < d_mid.numel(); ++i)
        d_mid.data[i] += d_mid_direct.data[i];
      model.backbone().backward(d_mid);
    }
  } else {
    const auto* table = targets == TargetKind::MidLevel ? midlevel : emotion;
    const nn::Tensor<float> t = target_tensor(*table, ids);
    nn::Tensor<float> out = model.backbone().forward(input, train, rng);
    loss = nn::mse(out, t);
    if (train) {
      model.zero_grads();
      model.backbone().backward(nn::mse_grad(out, t));
    }
  }
  if (!std::isfinite(loss))
    throw NumericError("train: non-finite loss; aborting run");
  if (train) nn::adam_step(model.trainable_params(), model.trainable_grads(), *adam);
  return loss;
}

double dataset_loss(models::SchemeModel& model, const SpectrogramProvider& provider,
                    const ingest::AnnotationTable* midlevel,
                    const ingest::AnnotationTable* emotion,
                    const std::vector<std::string>& ids, TargetKind targets,
                    std::size_t batch_size) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t at = 0; at < ids.size(); at += batch_size) {
    const std::size_t n = std::min(batch_size, ids.size() - at);
    std::vector<std::string> batch(ids.begin() + static_cast<long>(at),
                                   ids.begin() + static_cast<long>(at + n));
    total += process_batch(model, provider, midlevel, emotion, batch, targets,
                           /*train=*/false, nullptr, nullptr) *
             static_cast<double>(n);
    count += n;
  }
  return total / static_cast<double>(count);
}

void check_tables(const ingest::AnnotationTable* midlevel,
                  const ingest::AnnotationTable* emotion,
                  const std::vector<std::string>& ids, TargetKind targets) {
  std::vector<std::string> missing;
  for (const auto& id : ids) {
    if (targets != TargetKind::Emotion && midlevel && !midlevel->contains(id))
      missing.push_back(id + " (midlevel)");
    if (targets != TargetKind::MidLevel && emotion && !emotion->contains(id))
      missing.push_back(id + " (emotion)");
  }
  if ((targets != TargetKind::Emotion && !midlevel) ||
      (targets != TargetKind::MidLevel && !emotion))
    throw ConfigError("train: required annotation table missing");
  if (!missing.empty()) {
    std::string joined;
    for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 8); ++i)
      joined += (i ? ", " : "") + missing[i];
    if (missing.size() > 8) joined += ", ...";
    throw DataError("train: annotations missing for: " + joined);
  }
}

}  // namespace

TrainOutcome train(models::SchemeModel& model, const SpectrogramProvider& provider,
                   const ingest::AnnotationTable* midlevel,
                   const ingest::AnnotationTable* emotion,
                   const std::vector<std::string>& train_ids, TargetKind targets,
                   const TrainingConfig& cfg) {
  cfg.validate();
  if (train_ids.empty()) throw ConfigError("train: empty train set");
  check_tables(midlevel, emotion, train_ids, targets);

  Pcg32 rng(cfg.seed);

  // Hold out the validation songs for early stopping.
  std::vector<std::string> pool = train_ids;
  std::sort(pool.begin(), pool.end());
  shuffle(pool, rng);
  const std::size_t val_n = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::llround(cfg.val_fraction * static_cast<double>(pool.size()))));
  if (val_n >= pool.size())
    throw ConfigError("train: validation holdout leaves no training songs");
  std::vector<std::string> val_ids(pool.begin(),
                                   pool.begin() + static_cast<long>(val_n));
  std::vector<std::string> fit_ids(pool.begin() + static_cast<long>(val_n),
                                   pool.end());
  std::sort(val_ids.begin(), val_ids.end());
  std::sort(fit_ids.begin(), fit_ids.end());

  nn::AdamState<float> adam;
  adam.lr = cfg.lr;
  adam.init(model.trainable_params());

  TrainOutcome outcome;
  outcome.val_ids = val_ids;
  double best_val = std::numeric_limits<double>::infinity();
  models::SchemeModel best = model.clone();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::string> order = fit_ids;
    shuffle(order, rng);

    double train_loss = 0.0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - at);
      std::vector<std::string> batch(order.begin() + static_cast<long>(at),
                                     order.begin() + static_cast<long>(at + n));
      train_loss += process_batch(model, provider, midlevel, emotion, batch,
                                  targets, /*train=*/true, &rng, &adam) *
                    static_cast<double>(n);
    }
    train_loss /= static_cast<double>(order.size());

    const double val_loss = dataset_loss(model, provider, midlevel, emotion,
                                         val_ids, targets, cfg.batch_size);
    outcome.log.push_back({epoch, train_loss, val_loss, cfg.lr});
    outcome.epochs_trained = epoch;
    outcome.final_train_loss = train_loss;

    if (val_loss < best_val) {
      best_val = val_loss;
      best = model.clone();
      since_best = 0;
    } else {
      ++since_best;
    }
    if (since_best >= cfg.patience) break;
    if (cfg.train_loss_goal > 0.0 && train_loss < cfg.train_loss_goal) break;
  }

  outcome.best_val_loss = best_val;
  model = best.clone();
  return outcome;
}

// ---- Evaluation ------------------------------------------------------------------

EvalResult evaluate_on_test(const PredictFn& predict,
                            const ingest::AnnotationTable& truth,
                            const std::vector<std::string>& test_ids) {
  if (test_ids.size() < 2)
    throw DataError("evaluate_on_test: need at least 2 test songs for correlation");
  const auto& names = ingest::schema_columns(truth.schema);
  EvalResult result;
  result.targets = names;
  result.predictions = Mat(test_ids.size(), names.size());

  Mat actual(test_ids.size(), names.size());
  for (std::size_t i = 0; i < test_ids.size(); ++i) {
    const auto pred = predict(test_ids[i]);
    if (pred.size() != names.size())
      throw DimensionError("evaluate_on_test: prediction has " +
                           std::to_string(pred.size()) + " values, expected " +
                           std::to_string(names.size()));
    const auto truth_row = truth.row(test_ids[i]);
    for (std::size_t c = 0; c < names.size(); ++c) {
      result.predictions.at(i, c) = pred[c];
      actual.at(i, c) = truth_row[c];
    }
  }

  result.r.resize(names.size());
  result.degenerate.assign(names.size(), false);
  std::vector<double> p(test_ids.size()), a(test_ids.size());
  for (std::size_t c = 0; c < names.size(); ++c) {
    for (std::size_t i = 0; i < test_ids.size(); ++i) {
      p[i] = result.predictions.at(i, c);
      a[i] = actual.at(i, c);
    }
    try {
      result.r[c] = eval::pearson(p, a);
    } catch (const eval::DegenerateCorrelation&) {
      result.r[c] = 0.0;
      result.degenerate[c] = true;
    }
  }
  return result;
}

// ---- Two-stage A2Mid2E -------------------------------------------------------------

std::pair<models::SchemeModel, explain::LinearMap> train_a2mid2e(
    const DataBundle& data, const std::vector<std::string>& midlevel_train_ids,
    const std::vector<std::string>& emotion_train_ids,
    const TrainingConfig& cfg, const models::TrunkConfig& trunk,
    TrainOutcome* outcome) {
  if (!data.midlevel || !data.emotion || !data.provider)
    throw ConfigError("train_a2mid2e: midlevel, emotion and provider required");

  // The emotion dataset must be covered by the mid-level annotations.
  std::vector<std::string> missing;
  for (const auto& id : data.emotion->song_ids)
    if (!data.midlevel->contains(id)) missing.push_back(id);
  if (!missing.empty()) {
    std::string joined;
    for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 8); ++i)
      joined += (i ? ", " : "") + missing[i];
    throw DataError("train_a2mid2e: emotion songs missing mid-level annotations: " +
                    joined);
  }

  models::SchemeModel model =
      models::SchemeModel::build(models::Scheme::A2Mid2E, trunk, cfg.seed);
  TrainOutcome out = train(model, *data.provider, data.midlevel, nullptr,
                           midlevel_train_ids, TargetKind::MidLevel, cfg);
  if (outcome) *outcome = out;

  // Stage 2: least squares from stage-1 predictions to emotion annotations,
  // on training songs only.
  Mat x(emotion_train_ids.size(), kNumMidLevel);
  Mat y(emotion_train_ids.size(), kNumEmotions);
  for (std::size_t i = 0; i < emotion_train_ids.size(); ++i) {
    const auto& id = emotion_train_ids[i];
    const auto pred = model.predict(data.provider->eval_view(id));
    if (!pred.midlevel)
      throw NumericError("train_a2mid2e: stage-1 model produced no mid-level output");
    for (std::size_t f = 0; f < kNumMidLevel; ++f)
      x.at(i, f) = (*pred.midlevel)[f];
    const auto emo = data.emotion->row(id);
    for (std::size_t e = 0; e < kNumEmotions; ++e) y.at(i, e) = emo[e];
  }
  explain::LinearMap map = explain::fit_ols(x, y);
  model.set_linear_map(map);
  return {std::move(model), std::move(map)};
}

// ---- Protocol -------------------------------------------------------------------

namespace {

std::vector<std::string> minus_set(const std::vector<std::string>& all,
                                   const std::vector<std::string>& remove) {
  std::set<std::string> rm(remove.begin(), remove.end());
  std::vector<std::string> out;
  for (const auto& id : all)
    if (!rm.count(id)) out.push_back(id);
  return out;
}

RunResult execute_run(models::Scheme scheme, const DataBundle& data,
                      const ProtocolOptions& opts, const ingest::Split& split,
                      std::optional<models::SchemeModel>* model_out) {
  TrainingConfig cfg = opts.training;
  cfg.seed = split.seed;

  RunResult result;
  result.seed = split.seed;

  const bool midlevel_targets =
      scheme == models::Scheme::A2Mid || scheme == models::Scheme::A2MidPlus;
  const ingest::AnnotationTable& truth =
      midlevel_targets ? *data.midlevel : *data.emotion;

  if (scheme == models::Scheme::Mid2E) {
    Mat x(split.train_ids.size(), kNumMidLevel);
    Mat y(split.train_ids.size(), kNumEmotions);
    for (std::size_t i = 0; i < split.train_ids.size(); ++i) {
      const auto mid = data.midlevel->row(split.train_ids[i]);
      const auto emo = data.emotion->row(split.train_ids[i]);
      for (std::size_t f = 0; f < kNumMidLevel; ++f) x.at(i, f) = mid[f];
      for (std::size_t e = 0; e < kNumEmotions; ++e) y.at(i, e) = emo[e];
    }
    const explain::LinearMap map = explain::fit_ols(x, y);
    auto eval_out = evaluate_on_test(
        [&](const std::string& id) { return map.apply(data.midlevel->row(id)); },
        truth, split.test_ids);
    result.targets = eval_out.targets;
    result.test_r = eval_out.r;
    result.degenerate = eval_out.degenerate;
    return result;
  }

  models::SchemeModel model =
      models::SchemeModel::build(scheme, opts.trunk, split.seed);
  TrainOutcome outcome;
  if (scheme == models::Scheme::A2Mid2E) {
    // Stage 1 may use every mid-level song that is not in this run's test set.
    const auto stage1_ids = minus_set(data.midlevel->song_ids, split.test_ids);
    auto [trained, map] = train_a2mid2e(data, stage1_ids, split.train_ids, cfg,
                                        opts.trunk, &outcome);
    model = std::move(trained);
  } else {
    TargetKind kind = midlevel_targets ? TargetKind::MidLevel
                      : scheme == models::Scheme::A2Mid2EJoint
                          ? TargetKind::Both
                          : TargetKind::Emotion;
    outcome = train(model, *data.provider, data.midlevel, data.emotion,
                    split.train_ids, kind, cfg);
  }

  auto eval_out = evaluate_on_test(
      [&](const std::string& id) {
        const auto pred = model.predict(data.provider->eval_view(id));
        if (midlevel_targets) {
          if (!pred.midlevel)
            throw NumericError("protocol: model produced no mid-level output");
          return *pred.midlevel;
        }
        if (!pred.emotion)
          throw NumericError("protocol: model produced no emotion output");
        return *pred.emotion;
      },
      truth, split.test_ids);

  result.targets = eval_out.targets;
  result.test_r = eval_out.r;
  result.degenerate = eval_out.degenerate;
  result.epochs_trained = outcome.epochs_trained;
  result.best_val_loss = outcome.best_val_loss;
  result.log = outcome.log;
  if (model_out) model_out->emplace(std::move(model));
  return result;
}

}  // namespace

ProtocolResult run_protocol(models::Scheme scheme, const DataBundle& data,
                            const ProtocolOptions& opts) {
  if (opts.runs < 1) throw ConfigError("run_protocol: runs must be >= 1");
  const bool needs_mid = scheme != models::Scheme::A2E;
  const bool needs_emo = scheme == models::Scheme::A2E ||
                         scheme == models::Scheme::A2Mid2E ||
                         scheme == models::Scheme::A2Mid2EJoint ||
                         scheme == models::Scheme::Mid2E;
  if (needs_mid && !data.midlevel)
    throw ConfigError("run_protocol: mid-level annotations required for " +
                      models::scheme_name(scheme));
  if (needs_emo && !data.emotion)
    throw ConfigError("run_protocol: emotion annotations required for " +
                      models::scheme_name(scheme));
  if (scheme != models::Scheme::Mid2E && !data.provider)
    throw ConfigError("run_protocol: spectrogram provider required");

  // Emotion schemes split the emotion dataset; a2mid+ splits the full
  // mid-level dataset, a2mid the emotion-dataset songs (mid-level targets).
  const std::vector<std::string>& ids = scheme == models::Scheme::A2MidPlus
                                            ? data.midlevel->song_ids
                                            : data.emotion->song_ids;
  if (needs_emo || scheme == models::Scheme::A2Mid) {
    std::vector<std::string> missing;
    if (needs_mid)
      for (const auto& id : data.emotion->song_ids)
        if (!data.midlevel->contains(id)) missing.push_back(id);
    if (!missing.empty()) {
      std::string joined;
      for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 8); ++i)
        joined += (i ? ", " : "") + missing[i];
      throw DataError("run_protocol: emotion songs without mid-level annotations: " +
                      joined);
    }
  }

  ProtocolResult result;
  result.splits = ingest::make_splits(ids, opts.test_ratio, opts.base_seed,
                                      opts.runs);
  result.runs.resize(opts.runs);

  std::mutex sink_mutex;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= opts.runs) return;
      {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (first_error) return;
      }
      try {
        std::optional<models::SchemeModel> model_slot;
        RunResult run = execute_run(scheme, data, opts, result.splits[k],
                                    &model_slot);
        {
          std::lock_guard<std::mutex> lock(sink_mutex);
          if (opts.run_sink)
            opts.run_sink(k, run, model_slot ? &*model_slot : nullptr);
          result.runs[k] = std::move(run);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(opts.jobs, opts.runs));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t j = 0; j < jobs; ++j) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<std::vector<double>> per_run;
  std::vector<std::vector<bool>> flags;
  for (const auto& run : result.runs) {
    per_run.push_back(run.test_r);
    flags.push_back(run.degenerate);
  }
  result.mean_row = eval::aggregate_results(models::scheme_name(scheme),
                                            result.runs.front().targets, per_run,
                                            flags);
  return result;
}

// ---- Persistence helpers ------------------------------------------------------------

std::string run_result_json(const RunResult& result,
                            const std::string& config_hash) {
  nlohmann::ordered_json j;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  j["seed"] = result.seed;
  j["targets"] = result.targets;
  j["test_r"] = result.test_r;
  j["degenerate"] = result.degenerate;
  j["epochs_trained"] = result.epochs_trained;
  j["best_val_loss"] = result.best_val_loss;
  j["checkpoint"] = result.checkpoint;
  return j.dump(2) + "\n";
}

std::string epoch_log_jsonl(const std::vector<EpochRecord>& log) {
  std::string out;
  for (const auto& rec : log) {
    nlohmann::ordered_json j;
    j["epoch"] = rec.epoch;
    j["train_loss"] = rec.train_loss;
    j["val_loss"] = rec.val_loss;
    j["lr"] = rec.lr;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace midemo::trainer
