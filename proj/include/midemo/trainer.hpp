#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "midemo/core.hpp"
#include "midemo/dsp.hpp"
#include "midemo/eval.hpp"
#include "midemo/explain.hpp"
#include "midemo/ingest.hpp"
#include "midemo/models.hpp"

namespace midemo::trainer {

struct TrainingConfig {
  double lr = 5e-4;
  std::size_t batch_size = 8;
  std::size_t patience = 50;
  std::size_t max_epochs = 1000;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;  // of the train split, held out for early stopping
  double train_loss_goal = 0.0;  // > 0: stop once train loss drops below

  void validate() const;
};

// Source of model inputs. Training draws a fresh random crop per song per
// epoch; evaluation uses a deterministic center crop.
class SpectrogramProvider {
 public:
  virtual ~SpectrogramProvider() = default;
  virtual dsp::Spectrogram train_view(const std::string& id, Pcg32& rng) const = 0;
  virtual dsp::Spectrogram eval_view(const std::string& id) const = 0;
  virtual std::vector<std::string> ids() const = 0;
};

class WaveformProvider final : public SpectrogramProvider {
 public:
  WaveformProvider(std::map<std::string, ingest::Waveform> waveforms,
                   dsp::SpectrogramConfig cfg);
  dsp::Spectrogram train_view(const std::string& id, Pcg32& rng) const override;
  dsp::Spectrogram eval_view(const std::string& id) const override;
  std::vector<std::string> ids() const override;

 private:
  const ingest::Waveform& get(const std::string& id) const;
  std::map<std::string, ingest::Waveform> waveforms_;
  dsp::SpectrogramConfig cfg_;
};

// Fixed spectrogram per song; train and eval views coincide. Used for
// synthetic datasets and cache-backed evaluation.
class FixedProvider final : public SpectrogramProvider {
 public:
  explicit FixedProvider(std::map<std::string, dsp::Spectrogram> specs);
  dsp::Spectrogram train_view(const std::string& id, Pcg32&) const override;
  dsp::Spectrogram eval_view(const std::string& id) const override;
  std::vector<std::string> ids() const override;

 private:
  std::map<std::string, dsp::Spectrogram> specs_;
};

enum class TargetKind { MidLevel, Emotion, Both };

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainOutcome {
  std::size_t epochs_trained = 0;
  double best_val_loss = 0.0;
  double final_train_loss = 0.0;
  std::vector<EpochRecord> log;
  std::vector<std::string> val_ids;  // holdout actually used, for run logs
};

// Adam + early stopping; the parameters achieving the best validation loss
// are restored before returning. Each epoch reshuffles the batch order and
// draws fresh crops. Throws NumericError when a loss turns non-finite.
TrainOutcome train(models::SchemeModel& model, const SpectrogramProvider& provider,
                   const ingest::AnnotationTable* midlevel,
                   const ingest::AnnotationTable* emotion,
                   const std::vector<std::string>& train_ids, TargetKind targets,
                   const TrainingConfig& cfg);

using PredictFn = std::function<std::vector<double>(const std::string& id)>;

struct EvalResult {
  std::vector<std::string> targets;
  std::vector<double> r;
  std::vector<bool> degenerate;  // true where r was forced to 0
  Mat predictions;               // |test_ids| x |targets|
};

// Pearson r per target column between predictions and annotations.
// Zero-variance columns report r = 0 with the degenerate flag set.
EvalResult evaluate_on_test(const PredictFn& predict,
                            const ingest::AnnotationTable& truth,
                            const std::vector<std::string>& test_ids);

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<std::string> targets;
  std::vector<double> test_r;
  std::vector<bool> degenerate;
  std::size_t epochs_trained = 0;
  double best_val_loss = 0.0;
  std::string checkpoint;  // path, filled by the sink when persisted
  std::vector<EpochRecord> log;
};

struct DataBundle {
  const ingest::AnnotationTable* midlevel = nullptr;
  const ingest::AnnotationTable* emotion = nullptr;
  const SpectrogramProvider* provider = nullptr;
};

struct ProtocolOptions {
  std::size_t runs = 10;
  std::uint64_t base_seed = 0;
  double test_ratio = 0.2;  // a2mid+ uses 0.08
  TrainingConfig training;
  models::TrunkConfig trunk;
  std::size_t jobs = 1;
  // Called once per completed run (under a lock when jobs > 1); the model
  // pointer is null for mid2e. Lets callers persist partial results.
  std::function<void(std::size_t run_index, RunResult&, models::SchemeModel*)>
      run_sink;
};

struct ProtocolResult {
  std::vector<RunResult> runs;
  eval::ResultsRow mean_row;
  std::vector<ingest::Split> splits;
};

// The k-th run trains on split k (seed base_seed + k) and evaluates on its
// test side; per-target r values are averaged over runs.
ProtocolResult run_protocol(models::Scheme scheme, const DataBundle& data,
                            const ProtocolOptions& opts);

// Stage 1 trains a mid-level predictor on `midlevel_train_ids`; stage 2 fits
// least squares from its predictions on `emotion_train_ids` to the
// emotion annotations. Test songs must be excluded from both id lists.
std::pair<models::SchemeModel, explain::LinearMap> train_a2mid2e(
    const DataBundle& data, const std::vector<std::string>& midlevel_train_ids,
    const std::vector<std::string>& emotion_train_ids,
    const TrainingConfig& cfg, const models::TrunkConfig& trunk,
    TrainOutcome* outcome = nullptr);

std::string run_result_json(const RunResult& result,
                            const std::string& config_hash = "");
std::string epoch_log_jsonl(const std::vector<EpochRecord>& log);

}  // namespace midemo::trainer
