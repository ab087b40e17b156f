#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "midemo/core.hpp"
#include "midemo/dsp.hpp"
#include "midemo/explain.hpp"
#include "midemo/nn.hpp"

namespace midemo::models {

enum class Scheme {
  A2E,           // trunk -> 8 emotions
  A2Mid,         // trunk -> 7 mid-level features
  A2MidPlus,     // same network as A2Mid, full-dataset protocol
  A2Mid2E,       // A2Mid network + least-squares linear map to emotions
  A2Mid2EJoint,  // trunk -> 7 -> linear 7x8, trained jointly
  Mid2E,         // no network: linear map fit on ground-truth annotations
};

std::string scheme_name(Scheme scheme);
Scheme scheme_from_name(const std::string& name);
bool scheme_has_network(Scheme scheme);

// Shared convolutional stack: five 3x3 conv+BN+ReLU blocks with 2x2 max
// pooling after blocks 2 and 4, a 1x1 conv to embedding_dim, global average
// pooling and dropout. Defaults follow the full-scale setup; tests shrink
// the widths.
struct TrunkConfig {
  std::array<std::size_t, 5> widths = {64, 64, 128, 128, 256};
  std::size_t embedding_dim = 256;
  double dropout = 0.3;
};

std::vector<nn::LayerSpec> trunk_specs(const TrunkConfig& cfg);

// Standardized spectrogram batches in NCHW layout.
nn::Tensor<float> spectrogram_input(const dsp::Spectrogram& spec);
nn::Tensor<float> spectrogram_batch(const std::vector<const dsp::Spectrogram*>& specs);

struct PredictOutput {
  std::optional<std::vector<double>> midlevel;
  std::optional<std::vector<double>> emotion;
};

// One of the three audio schemes (plus the A2Mid variants): a backbone
// network ending in the scheme's first head, an optional linear emotion
// head (joint), and an optional fitted linear map (two-stage composite).
class SchemeModel {
 public:
  static SchemeModel build(Scheme scheme, const TrunkConfig& cfg,
                           std::uint64_t seed);

  Scheme scheme() const { return scheme_; }
  const TrunkConfig& trunk_config() const { return trunk_cfg_; }

  nn::Network<float>& backbone() { return backbone_; }
  nn::Network<float>* emotion_head() {
    return emotion_head_ ? &*emotion_head_ : nullptr;
  }

  const explain::LinearMap* linear_map() const {
    return linear_map_ ? &*linear_map_ : nullptr;
  }
  void set_linear_map(explain::LinearMap map);

  // Eval-mode inference on one spectrogram.
  PredictOutput predict(const dsp::Spectrogram& spec);

  // The final linear layer of a joint model (or the fitted map of a
  // composite) as a LinearMap; throws for schemes without one.
  explain::LinearMap extract_linear_map() const;

  std::vector<nn::Tensor<float>*> trainable_params();
  std::vector<nn::Tensor<float>*> trainable_grads();
  void zero_grads();

  SchemeModel clone() const;

  // context_json, when nonempty, is stored under "context" in the checkpoint
  // meta (the CLI records the config hash and run seed there).
  void save(const std::filesystem::path& path,
            const std::string& context_json = "") const;
  static SchemeModel load(const std::filesystem::path& path);

 private:
  SchemeModel() = default;

  Scheme scheme_ = Scheme::A2E;
  TrunkConfig trunk_cfg_;
  nn::Network<float> backbone_;
  std::optional<nn::Network<float>> emotion_head_;
  std::optional<explain::LinearMap> linear_map_;
};

// Unweighted sum of the two batch MSE losses.
double joint_loss(const nn::Tensor<float>& midlevel_pred,
                  const nn::Tensor<float>& midlevel_target,
                  const nn::Tensor<float>& emotion_pred,
                  const nn::Tensor<float>& emotion_target);

}  // namespace midemo::models
