#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "midemo/core.hpp"
#include "midemo/rng.hpp"

namespace midemo::nn {

template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, T fill = T{0})
      : shape(std::move(s)) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    data.assign(n, fill);
  }

  std::size_t numel() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }
  std::size_t rank() const { return shape.size(); }
};

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return Tensor<T>(t.shape);
}

// ---- Layer specifications ---------------------------------------------------

struct Conv2dSpec {
  std::size_t in_channels = 0, out_channels = 0;
  std::size_t kernel = 3, stride = 1, pad = 1;
};
struct BatchNormSpec {
  std::size_t channels = 0;
  double eps = 1e-5, momentum = 0.1;
};
struct ReluSpec {};
struct MaxPoolSpec {
  std::size_t size = 2;  // window and stride
};
struct AdaptiveAvgPoolSpec {};  // global mean per channel, NCHW -> NC
struct DenseSpec {
  std::size_t in = 0, out = 0;
};
struct DropoutSpec {
  double rate = 0.5;  // inverted scaling at train time
};

using LayerSpec = std::variant<Conv2dSpec, BatchNormSpec, ReluSpec, MaxPoolSpec,
                               AdaptiveAvgPoolSpec, DenseSpec, DropoutSpec>;

std::string layer_specs_json(std::span<const LayerSpec> specs);
std::vector<LayerSpec> layer_specs_from_json(const std::string& json_text);

// ---- Layers and networks ----------------------------------------------------

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  // Forward caches whatever backward needs; rng is required only by dropout
  // in train mode.
  virtual Tensor<T> forward(const Tensor<T>& x, bool train, Pcg32* rng) = 0;
  // Gradients of the most recent forward; accumulates into parameter grads.
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;

  virtual std::vector<Tensor<T>*> params() { return {}; }
  virtual std::vector<Tensor<T>*> grads() { return {}; }
  virtual std::vector<Tensor<T>*> buffers() { return {}; }  // BN running stats
  virtual void init_params(Pcg32&) {}
  virtual LayerSpec spec() const = 0;
  virtual std::string name() const = 0;

  // Distance of the last forward from the nearest non-differentiable point
  // (ReLU zero crossing, max-pool tie). +inf for smooth layers.
  virtual double kink_distance() const {
    return std::numeric_limits<double>::infinity();
  }
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec);

// Fixed sequential stack. The backward tape is the per-layer forward cache;
// backward() must follow a matching forward().
template <typename T>
class Network {
 public:
  Network() = default;
  explicit Network(std::span<const LayerSpec> specs);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  void append(const LayerSpec& spec);

  Tensor<T> forward(const Tensor<T>& x, bool train, Pcg32* rng = nullptr);
  Tensor<T> backward(const Tensor<T>& grad_out);

  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }

  std::vector<Tensor<T>*> params();
  std::vector<Tensor<T>*> grads();
  std::vector<Tensor<T>*> buffers();
  void zero_grads();
  std::size_t param_count();

  // Kaiming-uniform fan-in for conv/dense weights, zero biases, BN scale 1
  // shift 0. Consumes rng in layer order.
  void init_params(Pcg32& rng);

  std::vector<LayerSpec> specs() const;
  double min_kink_distance() const;

  Network clone() const;

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  bool forward_done_ = false;
};

// ---- Loss -------------------------------------------------------------------

template <typename T>
double mse(const Tensor<T>& pred, const Tensor<T>& target);

template <typename T>
Tensor<T> mse_grad(const Tensor<T>& pred, const Tensor<T>& target);

// ---- Adam -------------------------------------------------------------------

template <typename T>
struct AdamState {
  std::size_t t = 0;
  double lr = 5e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<Tensor<T>> m, v;

  void init(const std::vector<Tensor<T>*>& params);
};

// Standard Adam update with bias correction; throws NumericError on
// non-finite gradients.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params,
               const std::vector<Tensor<T>*>& grads, AdamState<T>& state);

// ---- Gradient checking ------------------------------------------------------

struct GradCheckEntry {
  std::string layer;
  std::size_t param = 0;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  double min_kink_distance = 0.0;
  bool passed = false;
  std::vector<GradCheckEntry> entries;
};

// Central finite differences on MSE loss against the analytic backward pass.
// Every loss evaluation reseeds its own pcg32 from dropout_seed, so dropout
// masks are identical across evaluations. Relative error uses
// |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport grad_check(Network<double>& net, const Tensor<double>& input,
                           const Tensor<double>& target, double tolerance,
                           double step = 1e-4, std::uint64_t dropout_seed = 0x5eed);

// ---- Checkpoints ------------------------------------------------------------

struct Checkpoint {
  Network<float> net;
  std::string meta;  // free-form JSON (scheme tag, trunk config, ...)
  std::optional<AdamState<float>> adam;
};

// Binary: magic "MNET", u32 version, meta JSON, architecture JSON, then per
// layer the parameter and buffer tensors as little-endian f32, then the
// optional Adam state.
void save_checkpoint(const std::filesystem::path& path, Network<float>& net,
                     const std::string& meta,
                     const AdamState<float>* adam = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace midemo::nn
