#include "midemo/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace midemo::nn {

namespace {

// ---- Small deterministic GEMM kernels ---------------------------------------
// Accumulation order along the contraction axis is fixed, so results are
// bit-identical regardless of build flags or thread count.

// c(m x n) += a(m x k) * b(k x n)
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b,
             T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t s = 0; s < k; ++s) {
      const T ais = a[i * k + s];
      if (ais == T{0}) continue;
      const T* brow = b + s * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += ais * brow[j];
    }
  }
}

// c(m x n) += a(m x k) * b(n x k)^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b,
             T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc{0};
      for (std::size_t s = 0; s < k; ++s) acc += arow[s] * brow[s];
      c[i * n + j] += acc;
    }
  }
}

// c(m x n) += a(k x m)^T * b(k x n)
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b,
             T* c) {
  for (std::size_t s = 0; s < k; ++s) {
    const T* arow = a + s * m;
    const T* brow = b + s * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T asi = arow[i];
      if (asi == T{0}) continue;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += asi * brow[j];
    }
  }
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i)
    s += (i ? "," : "") + std::to_string(shape[i]);
  return s + ")";
}

// ---- Layers ------------------------------------------------------------------

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  explicit Conv2d(const Conv2dSpec& s) : spec_(s) {
    if (s.in_channels == 0 || s.out_channels == 0 || s.kernel == 0 || s.stride == 0)
      throw ConfigError("conv2d: hyperparameters must be positive");
    weight_ = Tensor<T>({s.out_channels, s.in_channels, s.kernel, s.kernel});
    bias_ = Tensor<T>({s.out_channels});
    dweight_ = zeros_like(weight_);
    dbias_ = zeros_like(bias_);
  }

  Tensor<T> forward(const Tensor<T>& x, bool, Pcg32*) override {
    if (x.rank() != 4 || x.dim(1) != spec_.in_channels)
      throw DimensionError(name() + ": expected (N," +
                           std::to_string(spec_.in_channels) +
                           ",H,W) input, got " + shape_str(x.shape));
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t k = spec_.kernel, p = spec_.pad, st = spec_.stride;
    if (h + 2 * p < k || w + 2 * p < k)
      throw DimensionError(name() + ": input smaller than kernel");
    out_h_ = (h + 2 * p - k) / st + 1;
    out_w_ = (w + 2 * p - k) / st + 1;
    input_ = x;

    Tensor<T> y({n, spec_.out_channels, out_h_, out_w_});
    const std::size_t col_rows = spec_.in_channels * k * k;
    const std::size_t col_cols = out_h_ * out_w_;
    col_.assign(col_rows * col_cols, T{0});
    for (std::size_t s = 0; s < n; ++s) {
      im2col(x, s);
      T* ydat = y.data.data() + s * spec_.out_channels * col_cols;
      gemm_nn(spec_.out_channels, col_rows, col_cols, weight_.data.data(),
              col_.data(), ydat);
      for (std::size_t oc = 0; oc < spec_.out_channels; ++oc) {
        const T b = bias_.data[oc];
        T* row = ydat + oc * col_cols;
        for (std::size_t j = 0; j < col_cols; ++j) row[j] += b;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const std::size_t n = input_.dim(0);
    const std::size_t k = spec_.kernel;
    const std::size_t col_rows = spec_.in_channels * k * k;
    const std::size_t col_cols = out_h_ * out_w_;
    if (dy.rank() != 4 || dy.dim(0) != n || dy.dim(1) != spec_.out_channels ||
        dy.dim(2) != out_h_ || dy.dim(3) != out_w_)
      throw DimensionError(name() + ": gradient shape mismatch " +
                           shape_str(dy.shape));

    Tensor<T> dx(input_.shape);
    std::vector<T> dcol(col_rows * col_cols);
    for (std::size_t s = 0; s < n; ++s) {
      im2col(input_, s);
      const T* dydat = dy.data.data() + s * spec_.out_channels * col_cols;
      // dW += dy_s * col^T
      gemm_nt(spec_.out_channels, col_cols, col_rows, dydat, col_.data(),
              dweight_.data.data());
      // db += row sums of dy_s
      for (std::size_t oc = 0; oc < spec_.out_channels; ++oc) {
        T acc{0};
        const T* row = dydat + oc * col_cols;
        for (std::size_t j = 0; j < col_cols; ++j) acc += row[j];
        dbias_.data[oc] += acc;
      }
      // dcol = W^T * dy_s, scattered back into dx
      std::fill(dcol.begin(), dcol.end(), T{0});
      gemm_tn(col_rows, spec_.out_channels, col_cols, weight_.data.data(), dydat,
              dcol.data());
      col2im(dcol.data(), dx, s);
    }
    return dx;
  }

  std::vector<Tensor<T>*> params() override { return {&weight_, &bias_}; }
  std::vector<Tensor<T>*> grads() override { return {&dweight_, &dbias_}; }

  void init_params(Pcg32& rng) override {
    const double fan_in =
        static_cast<double>(spec_.in_channels * spec_.kernel * spec_.kernel);
    const double bound = std::sqrt(6.0 / fan_in);
    for (T& v : weight_.data) v = static_cast<T>(rng.uniform(-bound, bound));
    std::fill(bias_.data.begin(), bias_.data.end(), T{0});
  }

  LayerSpec spec() const override { return spec_; }
  std::string name() const override { return "conv2d"; }

 private:
  void im2col(const Tensor<T>& x, std::size_t sample) {
    const std::size_t h = x.dim(2), w = x.dim(3);
    const std::size_t k = spec_.kernel, st = spec_.stride;
    const long p = static_cast<long>(spec_.pad);
    const T* xs = x.data.data() + sample * spec_.in_channels * h * w;
    const std::size_t col_cols = out_h_ * out_w_;
    std::size_t row = 0;
    for (std::size_t ic = 0; ic < spec_.in_channels; ++ic) {
      const T* plane = xs + ic * h * w;
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx, ++row) {
          T* dst = col_.data() + row * col_cols;
          for (std::size_t oy = 0; oy < out_h_; ++oy) {
            const long iy = static_cast<long>(oy * st + ky) - p;
            if (iy < 0 || iy >= static_cast<long>(h)) {
              std::fill(dst + oy * out_w_, dst + (oy + 1) * out_w_, T{0});
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(iy) * w;
            for (std::size_t ox = 0; ox < out_w_; ++ox) {
              const long ix = static_cast<long>(ox * st + kx) - p;
              dst[oy * out_w_ + ox] =
                  (ix >= 0 && ix < static_cast<long>(w)) ? src[ix] : T{0};
            }
          }
        }
      }
    }
  }

  void col2im(const T* dcol, Tensor<T>& dx, std::size_t sample) const {
    const std::size_t h = dx.dim(2), w = dx.dim(3);
    const std::size_t k = spec_.kernel, st = spec_.stride;
    const long p = static_cast<long>(spec_.pad);
    T* xs = dx.data.data() + sample * spec_.in_channels * h * w;
    const std::size_t col_cols = out_h_ * out_w_;
    std::size_t row = 0;
    for (std::size_t ic = 0; ic < spec_.in_channels; ++ic) {
      T* plane = xs + ic * h * w;
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx, ++row) {
          const T* src = dcol + row * col_cols;
          for (std::size_t oy = 0; oy < out_h_; ++oy) {
            const long iy = static_cast<long>(oy * st + ky) - p;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            T* dst = plane + static_cast<std::size_t>(iy) * w;
            for (std::size_t ox = 0; ox < out_w_; ++ox) {
              const long ix = static_cast<long>(ox * st + kx) - p;
              if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[oy * out_w_ + ox];
            }
          }
        }
      }
    }
  }

  Conv2dSpec spec_;
  Tensor<T> weight_, bias_, dweight_, dbias_;
  Tensor<T> input_;
  std::vector<T> col_;
  std::size_t out_h_ = 0, out_w_ = 0;
};

template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  explicit BatchNorm(const BatchNormSpec& s) : spec_(s) {
    if (s.channels == 0) throw ConfigError("batchnorm: channels must be positive");
    gamma_ = Tensor<T>({s.channels}, T{1});
    beta_ = Tensor<T>({s.channels});
    dgamma_ = zeros_like(gamma_);
    dbeta_ = zeros_like(beta_);
    running_mean_ = Tensor<T>({s.channels});
    running_var_ = Tensor<T>({s.channels}, T{1});
  }

  Tensor<T> forward(const Tensor<T>& x, bool train, Pcg32*) override {
    if (!((x.rank() == 4 && x.dim(1) == spec_.channels) ||
          (x.rank() == 2 && x.dim(1) == spec_.channels)))
      throw DimensionError(name() + ": expected channel dim " +
                           std::to_string(spec_.channels) + ", got " +
                           shape_str(x.shape));
    shape_ = x.shape;
    const std::size_t c = spec_.channels;
    const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    const std::size_t n = x.dim(0);
    const std::size_t m = n * spatial;  // elements per channel
    train_mode_ = train;

    Tensor<T> y(x.shape);
    xhat_ = Tensor<T>(x.shape);
    invstd_.assign(c, 0.0);

    for (std::size_t ch = 0; ch < c; ++ch) {
      double mean, var;
      if (train) {
        double sum = 0.0;
        for_channel(x, ch, [&](const T& v) { sum += v; });
        mean = sum / static_cast<double>(m);
        double sq = 0.0;
        for_channel(x, ch, [&](const T& v) {
          const double d = v - mean;
          sq += d * d;
        });
        var = sq / static_cast<double>(m);  // biased, used for normalization
        const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
        running_mean_.data[ch] = static_cast<T>(
            (1.0 - spec_.momentum) * running_mean_.data[ch] + spec_.momentum * mean);
        running_var_.data[ch] = static_cast<T>(
            (1.0 - spec_.momentum) * running_var_.data[ch] + spec_.momentum * unbiased);
      } else {
        mean = running_mean_.data[ch];
        var = running_var_.data[ch];
      }
      const double inv = 1.0 / std::sqrt(var + spec_.eps);
      invstd_[ch] = inv;
      const double g = gamma_.data[ch], b = beta_.data[ch];
      transform_channel(x, xhat_, y, ch, mean, inv, g, b);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    if (dy.shape != shape_)
      throw DimensionError(name() + ": gradient shape mismatch");
    const std::size_t c = spec_.channels;
    const std::size_t spatial = shape_.size() == 4 ? shape_[2] * shape_[3] : 1;
    const std::size_t m = shape_[0] * spatial;

    Tensor<T> dx(shape_);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s1 = 0.0, s2 = 0.0;
      {
        auto it_dy = channel_iter(dy, ch);
        auto it_xh = channel_iter(xhat_, ch);
        for (std::size_t i = 0; i < m; ++i) {
          const double d = *it_dy.next();
          const double xh = *it_xh.next();
          s1 += d;
          s2 += d * xh;
        }
      }
      dgamma_.data[ch] += static_cast<T>(s2);
      dbeta_.data[ch] += static_cast<T>(s1);

      const double g = gamma_.data[ch];
      const double inv = invstd_[ch];
      auto it_dy = channel_iter(dy, ch);
      auto it_xh = channel_iter(xhat_, ch);
      auto it_dx = channel_iter(dx, ch);
      if (train_mode_) {
        const double scale = g * inv / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
          const double d = *it_dy.next();
          const double xh = *it_xh.next();
          *it_dx.next() = static_cast<T>(scale * (static_cast<double>(m) * d - s1 - xh * s2));
        }
      } else {
        const double scale = g * inv;
        for (std::size_t i = 0; i < m; ++i) {
          const double d = *it_dy.next();
          it_xh.next();
          *it_dx.next() = static_cast<T>(scale * d);
        }
      }
    }
    return dx;
  }

  std::vector<Tensor<T>*> params() override { return {&gamma_, &beta_}; }
  std::vector<Tensor<T>*> grads() override { return {&dgamma_, &dbeta_}; }
  std::vector<Tensor<T>*> buffers() override {
    return {&running_mean_, &running_var_};
  }

  LayerSpec spec() const override { return spec_; }
  std::string name() const override { return "batchnorm"; }

 private:
  template <typename F>
  void for_channel(const Tensor<T>& t, std::size_t ch, F&& f) const {
    const std::size_t c = spec_.channels;
    const std::size_t spatial = t.rank() == 4 ? t.dim(2) * t.dim(3) : 1;
    for (std::size_t s = 0; s < t.dim(0); ++s) {
      const T* base = t.data.data() + (s * c + ch) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) f(base[i]);
    }
  }

  struct ChannelIter {
    T* base;
    std::size_t spatial, stride, i = 0, s = 0;
    T* next() {
      T* p = base + s * stride + i;
      if (++i == spatial) {
        i = 0;
        ++s;
      }
      return p;
    }
  };
  ChannelIter channel_iter(const Tensor<T>& t, std::size_t ch) const {
    const std::size_t spatial = t.rank() == 4 ? t.dim(2) * t.dim(3) : 1;
    return ChannelIter{const_cast<T*>(t.data.data()) + ch * spatial, spatial,
                       spec_.channels * spatial};
  }

  void transform_channel(const Tensor<T>& x, Tensor<T>& xhat, Tensor<T>& y,
                         std::size_t ch, double mean, double inv, double g,
                         double b) const {
    const std::size_t c = spec_.channels;
    const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    for (std::size_t s = 0; s < x.dim(0); ++s) {
      const std::size_t off = (s * c + ch) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const double xh = (x.data[off + i] - mean) * inv;
        xhat.data[off + i] = static_cast<T>(xh);
        y.data[off + i] = static_cast<T>(g * xh + b);
      }
    }
  }

  BatchNormSpec spec_;
  Tensor<T> gamma_, beta_, dgamma_, dbeta_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<double> invstd_;
  std::vector<std::size_t> shape_;
  bool train_mode_ = false;
};

template <typename T>
class Relu final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool, Pcg32*) override {
    input_ = x;
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i)
      y.data[i] = x.data[i] > T{0} ? x.data[i] : T{0};
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    if (dy.shape != input_.shape)
      throw DimensionError(name() + ": gradient shape mismatch");
    Tensor<T> dx(input_.shape);
    for (std::size_t i = 0; i < dy.numel(); ++i)
      dx.data[i] = input_.data[i] > T{0} ? dy.data[i] : T{0};
    return dx;
  }

  double kink_distance() const override {
    double d = std::numeric_limits<double>::infinity();
    for (const T& v : input_.data) d = std::min(d, std::abs(static_cast<double>(v)));
    return d;
  }

  LayerSpec spec() const override { return ReluSpec{}; }
  std::string name() const override { return "relu"; }

 private:
  Tensor<T> input_;
};

template <typename T>
class MaxPool final : public Layer<T> {
 public:
  explicit MaxPool(const MaxPoolSpec& s) : spec_(s) {
    if (s.size == 0) throw ConfigError("maxpool: size must be positive");
  }

  Tensor<T> forward(const Tensor<T>& x, bool, Pcg32*) override {
    if (x.rank() != 4)
      throw DimensionError(name() + ": expected 4-d input, got " +
                           shape_str(x.shape));
    const std::size_t p = spec_.size;
    const std::size_t oh = x.dim(2) / p, ow = x.dim(3) / p;
    if (oh == 0 || ow == 0)
      throw DimensionError(name() + ": input " + shape_str(x.shape) +
                           " too small for pool size " + std::to_string(p));
    in_shape_ = x.shape;
    Tensor<T> y({x.dim(0), x.dim(1), oh, ow});
    argmax_.assign(y.numel(), 0);
    margin_ = std::numeric_limits<double>::infinity();

    const std::size_t h = x.dim(2), w = x.dim(3);
    std::size_t oidx = 0;
    for (std::size_t s = 0; s < x.dim(0); ++s) {
      for (std::size_t c = 0; c < x.dim(1); ++c) {
        const T* plane = x.data.data() + (s * x.dim(1) + c) * h * w;
        const std::size_t plane_off = (s * x.dim(1) + c) * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox, ++oidx) {
            T best = plane[(oy * p) * w + ox * p];
            T second = -std::numeric_limits<T>::infinity();
            std::size_t best_at = (oy * p) * w + ox * p;
            for (std::size_t dy = 0; dy < p; ++dy) {
              for (std::size_t dx = 0; dx < p; ++dx) {
                const std::size_t at = (oy * p + dy) * w + ox * p + dx;
                const T v = plane[at];
                if (v > best) {
                  second = best;
                  best = v;
                  best_at = at;
                } else if (at != best_at && v > second) {
                  second = v;
                }
              }
            }
            y.data[oidx] = best;
            argmax_[oidx] = plane_off + best_at;
            if (p > 1) {
              // Exact ties at zero come from upstream ReLU clamping and are
              // locally insensitive (the ReLU margin guards them); only a
              // tie between nonzero values is a genuine kink.
              if (best != second)
                margin_ = std::min(margin_, static_cast<double>(best - second));
              else if (best != T{0})
                margin_ = 0.0;
            }
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    if (dy.numel() != argmax_.size())
      throw DimensionError(name() + ": gradient shape mismatch");
    Tensor<T> dx(in_shape_);
    for (std::size_t i = 0; i < dy.numel(); ++i) dx.data[argmax_[i]] += dy.data[i];
    return dx;
  }

  double kink_distance() const override { return margin_; }
  LayerSpec spec() const override { return spec_; }
  std::string name() const override { return "maxpool"; }

 private:
  MaxPoolSpec spec_;
  std::vector<std::size_t> argmax_;
  std::vector<std::size_t> in_shape_;
  double margin_ = std::numeric_limits<double>::infinity();
};

template <typename T>
class AdaptiveAvgPool final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool, Pcg32*) override {
    if (x.rank() != 4)
      throw DimensionError(name() + ": expected 4-d input, got " +
                           shape_str(x.shape));
    in_shape_ = x.shape;
    const std::size_t spatial = x.dim(2) * x.dim(3);
    Tensor<T> y({x.dim(0), x.dim(1)});
    for (std::size_t s = 0; s < x.dim(0); ++s) {
      for (std::size_t c = 0; c < x.dim(1); ++c) {
        const T* plane = x.data.data() + (s * x.dim(1) + c) * spatial;
        double acc = 0.0;
        for (std::size_t i = 0; i < spatial; ++i) acc += plane[i];
        y.data[s * x.dim(1) + c] = static_cast<T>(acc / static_cast<double>(spatial));
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    if (dy.rank() != 2 || dy.dim(0) != in_shape_[0] || dy.dim(1) != in_shape_[1])
      throw DimensionError(name() + ": gradient shape mismatch");
    const std::size_t spatial = in_shape_[2] * in_shape_[3];
    Tensor<T> dx(in_shape_);
    for (std::size_t s = 0; s < in_shape_[0]; ++s) {
      for (std::size_t c = 0; c < in_shape_[1]; ++c) {
        const T g = static_cast<T>(dy.data[s * in_shape_[1] + c] /
                                   static_cast<T>(spatial));
        T* plane = dx.data.data() + (s * in_shape_[1] + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) plane[i] = g;
      }
    }
    return dx;
  }

  LayerSpec spec() const override { return AdaptiveAvgPoolSpec{}; }
  std::string name() const override { return "adaptive_avg_pool"; }

 private:
  std::vector<std::size_t> in_shape_;
};

template <typename T>
class Dense final : public Layer<T> {
 public:
  explicit Dense(const DenseSpec& s) : spec_(s) {
    if (s.in == 0 || s.out == 0)
      throw ConfigError("dense: dimensions must be positive");
    weight_ = Tensor<T>({s.out, s.in});
    bias_ = Tensor<T>({s.out});
    dweight_ = zeros_like(weight_);
    dbias_ = zeros_like(bias_);
  }

  Tensor<T> forward(const Tensor<T>& x, bool, Pcg32*) override {
    if (x.rank() != 2 || x.dim(1) != spec_.in)
      throw DimensionError(name() + ": expected (N," + std::to_string(spec_.in) +
                           ") input, got " + shape_str(x.shape));
    input_ = x;
    const std::size_t n = x.dim(0);
    Tensor<T> y({n, spec_.out});
    gemm_nt(n, spec_.in, spec_.out, x.data.data(), weight_.data.data(),
            y.data.data());
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t o = 0; o < spec_.out; ++o)
        y.data[s * spec_.out + o] += bias_.data[o];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const std::size_t n = input_.dim(0);
    if (dy.rank() != 2 || dy.dim(0) != n || dy.dim(1) != spec_.out)
      throw DimensionError(name() + ": gradient shape mismatch " +
                           shape_str(dy.shape));
    // dW(out x in) += dy^T(out x n) * x(n x in)
    gemm_tn(spec_.out, n, spec_.in, dy.data.data(), input_.data.data(),
            dweight_.data.data());
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t o = 0; o < spec_.out; ++o)
        dbias_.data[o] += dy.data[s * spec_.out + o];
    Tensor<T> dx({n, spec_.in});
    gemm_nn(n, spec_.out, spec_.in, dy.data.data(), weight_.data.data(),
            dx.data.data());
    return dx;
  }

  std::vector<Tensor<T>*> params() override { return {&weight_, &bias_}; }
  std::vector<Tensor<T>*> grads() override { return {&dweight_, &dbias_}; }

  void init_params(Pcg32& rng) override {
    const double bound = std::sqrt(6.0 / static_cast<double>(spec_.in));
    for (T& v : weight_.data) v = static_cast<T>(rng.uniform(-bound, bound));
    std::fill(bias_.data.begin(), bias_.data.end(), T{0});
  }

  LayerSpec spec() const override { return spec_; }
  std::string name() const override { return "dense"; }

 private:
  DenseSpec spec_;
  Tensor<T> weight_, bias_, dweight_, dbias_;
  Tensor<T> input_;
};

template <typename T>
class Dropout final : public Layer<T> {
 public:
  explicit Dropout(const DropoutSpec& s) : spec_(s) {
    if (!(s.rate >= 0.0 && s.rate < 1.0))
      throw ConfigError("dropout: rate must be in [0, 1)");
  }

  Tensor<T> forward(const Tensor<T>& x, bool train, Pcg32* rng) override {
    if (!train || spec_.rate == 0.0) {
      active_ = false;
      return x;
    }
    if (!rng)
      throw ConfigError("dropout: train-mode forward requires an rng state");
    active_ = true;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - spec_.rate));
    mask_.resize(x.numel());
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      mask_[i] = rng->next_double() >= spec_.rate ? keep_scale : T{0};
      y.data[i] = x.data[i] * mask_[i];
    }
    shape_ = x.shape;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    if (!active_) return dy;
    if (dy.shape != shape_)
      throw DimensionError(name() + ": gradient shape mismatch");
    Tensor<T> dx(dy.shape);
    for (std::size_t i = 0; i < dy.numel(); ++i) dx.data[i] = dy.data[i] * mask_[i];
    return dx;
  }

  LayerSpec spec() const override { return spec_; }
  std::string name() const override { return "dropout"; }

 private:
  DropoutSpec spec_;
  std::vector<T> mask_;
  std::vector<std::size_t> shape_;
  bool active_ = false;
};

}  // namespace

// ---- Factory / network -------------------------------------------------------

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::unique_ptr<Layer<T>> {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Conv2dSpec>)
          return std::make_unique<Conv2d<T>>(s);
        else if constexpr (std::is_same_v<S, BatchNormSpec>)
          return std::make_unique<BatchNorm<T>>(s);
        else if constexpr (std::is_same_v<S, ReluSpec>)
          return std::make_unique<Relu<T>>();
        else if constexpr (std::is_same_v<S, MaxPoolSpec>)
          return std::make_unique<MaxPool<T>>(s);
        else if constexpr (std::is_same_v<S, AdaptiveAvgPoolSpec>)
          return std::make_unique<AdaptiveAvgPool<T>>();
        else if constexpr (std::is_same_v<S, DenseSpec>)
          return std::make_unique<Dense<T>>(s);
        else
          return std::make_unique<Dropout<T>>(s);
      },
      spec);
}

template <typename T>
Network<T>::Network(std::span<const LayerSpec> specs) {
  for (const auto& s : specs) append(s);
}

template <typename T>
void Network<T>::append(const LayerSpec& spec) {
  // Adjacent dense layers are the one statically checkable pairing.
  if (!layers_.empty()) {
    if (const auto* next = std::get_if<DenseSpec>(&spec)) {
      const LayerSpec prev = layers_.back()->spec();
      if (const auto* prev_dense = std::get_if<DenseSpec>(&prev)) {
        if (prev_dense->out != next->in)
          throw ConfigError("dense layer expects " + std::to_string(next->in) +
                            " inputs but follows a dense layer with " +
                            std::to_string(prev_dense->out) + " outputs");
      }
    }
  }
  layers_.push_back(make_layer<T>(spec));
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& x, bool train, Pcg32* rng) {
  Tensor<T> cur = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      cur = layers_[i]->forward(cur, train, rng);
    } catch (const DimensionError& e) {
      throw DimensionError("layer " + std::to_string(i) + " " + e.what());
    }
    for (const T& v : cur.data)
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError("non-finite activation after layer " +
                           std::to_string(i) + " (" + layers_[i]->name() + ")");
  }
  forward_done_ = true;
  return cur;
}

template <typename T>
Tensor<T> Network<T>::backward(const Tensor<T>& grad_out) {
  if (!forward_done_)
    throw ConfigError("Network::backward called without a matching forward");
  Tensor<T> cur = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    try {
      cur = layers_[i]->backward(cur);
    } catch (const DimensionError& e) {
      throw DimensionError("layer " + std::to_string(i) + " " + e.what());
    }
  }
  return cur;
}

template <typename T>
std::vector<Tensor<T>*> Network<T>::params() {
  std::vector<Tensor<T>*> out;
  for (auto& l : layers_)
    for (auto* p : l->params()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<Tensor<T>*> Network<T>::grads() {
  std::vector<Tensor<T>*> out;
  for (auto& l : layers_)
    for (auto* g : l->grads()) out.push_back(g);
  return out;
}

template <typename T>
std::vector<Tensor<T>*> Network<T>::buffers() {
  std::vector<Tensor<T>*> out;
  for (auto& l : layers_)
    for (auto* b : l->buffers()) out.push_back(b);
  return out;
}

template <typename T>
void Network<T>::zero_grads() {
  for (auto* g : grads()) std::fill(g->data.begin(), g->data.end(), T{0});
}

template <typename T>
std::size_t Network<T>::param_count() {
  std::size_t n = 0;
  for (auto* p : params()) n += p->numel();
  return n;
}

template <typename T>
void Network<T>::init_params(Pcg32& rng) {
  for (auto& l : layers_) l->init_params(rng);
}

template <typename T>
std::vector<LayerSpec> Network<T>::specs() const {
  std::vector<LayerSpec> out;
  out.reserve(layers_.size());
  for (const auto& l : layers_) out.push_back(l->spec());
  return out;
}

template <typename T>
double Network<T>::min_kink_distance() const {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& l : layers_) d = std::min(d, l->kink_distance());
  return d;
}

template <typename T>
Network<T> Network<T>::clone() const {
  Network<T> copy;
  for (const auto& l : layers_) copy.append(l->spec());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto src_p = const_cast<Layer<T>&>(*layers_[i]).params();
    auto dst_p = copy.layers_[i]->params();
    for (std::size_t k = 0; k < src_p.size(); ++k) dst_p[k]->data = src_p[k]->data;
    auto src_b = const_cast<Layer<T>&>(*layers_[i]).buffers();
    auto dst_b = copy.layers_[i]->buffers();
    for (std::size_t k = 0; k < src_b.size(); ++k) dst_b[k]->data = src_b[k]->data;
  }
  return copy;
}

// ---- Loss ---------------------------------------------------------------------

template <typename T>
double mse(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape != target.shape)
    throw DimensionError("mse: shape mismatch " + shape_str(pred.shape) + " vs " +
                         shape_str(target.shape));
  if (pred.numel() == 0) throw DataError("mse: empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - target.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.numel());
}

template <typename T>
Tensor<T> mse_grad(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape != target.shape)
    throw DimensionError("mse_grad: shape mismatch");
  Tensor<T> g(pred.shape);
  const double scale = 2.0 / static_cast<double>(pred.numel());
  for (std::size_t i = 0; i < pred.numel(); ++i)
    g.data[i] = static_cast<T>(scale * (static_cast<double>(pred.data[i]) -
                                        target.data[i]));
  return g;
}

// ---- Adam ---------------------------------------------------------------------

template <typename T>
void AdamState<T>::init(const std::vector<Tensor<T>*>& params) {
  t = 0;
  m.clear();
  v.clear();
  for (const auto* p : params) {
    m.push_back(zeros_like(*p));
    v.push_back(zeros_like(*p));
  }
}

template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params,
               const std::vector<Tensor<T>*>& grads, AdamState<T>& state) {
  if (params.size() != grads.size())
    throw DimensionError("adam_step: params/grads count mismatch");
  if (state.m.empty()) state.init(params);
  if (state.m.size() != params.size())
    throw DimensionError("adam_step: state does not mirror params");
  if (!(state.lr > 0)) throw ConfigError("adam_step: lr must be positive");

  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    const Tensor<T>& g = *grads[k];
    if (p.shape != g.shape || p.shape != state.m[k].shape)
      throw DimensionError("adam_step: shape mismatch at tensor " +
                           std::to_string(k));
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g.data[i];
      if (!std::isfinite(gi))
        throw NumericError("adam_step: non-finite gradient at tensor " +
                           std::to_string(k) + ", element " + std::to_string(i));
      const double mi = state.beta1 * state.m[k].data[i] + (1.0 - state.beta1) * gi;
      const double vi =
          state.beta2 * state.v[k].data[i] + (1.0 - state.beta2) * gi * gi;
      state.m[k].data[i] = static_cast<T>(mi);
      state.v[k].data[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      p.data[i] = static_cast<T>(p.data[i] - state.lr * mhat /
                                                 (std::sqrt(vhat) + state.eps));
    }
  }
}

// ---- Gradient check -------------------------------------------------------------

GradCheckReport grad_check(Network<double>& net, const Tensor<double>& input,
                           const Tensor<double>& target, double tolerance,
                           double step, std::uint64_t dropout_seed) {
  if (net.param_count() > 10000)
    throw ConfigError("grad_check: network too large for finite differences (" +
                      std::to_string(net.param_count()) + " parameters)");

  auto loss_at = [&]() {
    Pcg32 rng(dropout_seed);
    Tensor<double> out = net.forward(input, /*train=*/true, &rng);
    return mse(out, target);
  };

  // analytic pass
  net.zero_grads();
  {
    Pcg32 rng(dropout_seed);
    Tensor<double> out = net.forward(input, /*train=*/true, &rng);
    net.backward(mse_grad(out, target));
  }
  GradCheckReport report;
  report.min_kink_distance = net.min_kink_distance();

  std::vector<Tensor<double>> analytic;
  for (auto* g : net.grads()) analytic.push_back(*g);

  std::size_t tensor_idx = 0;
  for (std::size_t li = 0; li < net.size(); ++li) {
    auto layer_params = net.layer(li).params();
    for (std::size_t pi = 0; pi < layer_params.size(); ++pi, ++tensor_idx) {
      Tensor<double>& p = *layer_params[pi];
      GradCheckEntry entry{net.layer(li).name() + "[" + std::to_string(li) + "]",
                           pi, 0.0};
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double saved = p.data[i];
        p.data[i] = saved + step;
        const double hi = loss_at();
        p.data[i] = saved - step;
        const double lo = loss_at();
        p.data[i] = saved;
        const double numeric = (hi - lo) / (2.0 * step);
        const double a = analytic[tensor_idx].data[i];
        const double rel = std::abs(a - numeric) /
                           std::max({std::abs(a), std::abs(numeric), 1e-6});
        entry.max_rel_err = std::max(entry.max_rel_err, rel);
      }
      report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
      report.entries.push_back(std::move(entry));
    }
  }
  report.passed = report.max_rel_err < tolerance;
  return report;
}

// ---- LayerSpec JSON --------------------------------------------------------------

std::string layer_specs_json(std::span<const LayerSpec> specs) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& spec : specs) {
    nlohmann::ordered_json j;
    std::visit(
        [&](const auto& s) {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, Conv2dSpec>) {
            j["kind"] = "conv2d";
            j["in"] = s.in_channels;
            j["out"] = s.out_channels;
            j["kernel"] = s.kernel;
            j["stride"] = s.stride;
            j["pad"] = s.pad;
          } else if constexpr (std::is_same_v<S, BatchNormSpec>) {
            j["kind"] = "batchnorm";
            j["channels"] = s.channels;
            j["eps"] = s.eps;
            j["momentum"] = s.momentum;
          } else if constexpr (std::is_same_v<S, ReluSpec>) {
            j["kind"] = "relu";
          } else if constexpr (std::is_same_v<S, MaxPoolSpec>) {
            j["kind"] = "maxpool";
            j["size"] = s.size;
          } else if constexpr (std::is_same_v<S, AdaptiveAvgPoolSpec>) {
            j["kind"] = "adaptive_avg_pool";
          } else if constexpr (std::is_same_v<S, DenseSpec>) {
            j["kind"] = "dense";
            j["in"] = s.in;
            j["out"] = s.out;
          } else {
            j["kind"] = "dropout";
            j["rate"] = s.rate;
          }
        },
        spec);
    arr.push_back(j);
  }
  return arr.dump();
}

std::vector<LayerSpec> layer_specs_from_json(const std::string& json_text) {
  nlohmann::json arr;
  try {
    arr = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("layer_specs_from_json: " + std::string(e.what()));
  }
  std::vector<LayerSpec> specs;
  for (const auto& j : arr) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "conv2d") {
      Conv2dSpec s;
      s.in_channels = j.at("in").get<std::size_t>();
      s.out_channels = j.at("out").get<std::size_t>();
      s.kernel = j.at("kernel").get<std::size_t>();
      s.stride = j.at("stride").get<std::size_t>();
      s.pad = j.at("pad").get<std::size_t>();
      specs.emplace_back(s);
    } else if (kind == "batchnorm") {
      BatchNormSpec s;
      s.channels = j.at("channels").get<std::size_t>();
      s.eps = j.value("eps", 1e-5);
      s.momentum = j.value("momentum", 0.1);
      specs.emplace_back(s);
    } else if (kind == "relu") {
      specs.emplace_back(ReluSpec{});
    } else if (kind == "maxpool") {
      specs.emplace_back(MaxPoolSpec{j.at("size").get<std::size_t>()});
    } else if (kind == "adaptive_avg_pool") {
      specs.emplace_back(AdaptiveAvgPoolSpec{});
    } else if (kind == "dense") {
      DenseSpec s;
      s.in = j.at("in").get<std::size_t>();
      s.out = j.at("out").get<std::size_t>();
      specs.emplace_back(s);
    } else if (kind == "dropout") {
      specs.emplace_back(DropoutSpec{j.at("rate").get<double>()});
    } else {
      throw DataError("layer_specs_from_json: unknown layer kind '" + kind + "'");
    }
  }
  return specs;
}

// ---- Checkpoints ------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'M', 'N', 'E', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

void put_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename V>
void put_pod(std::ofstream& out, V v) {
  put_bytes(out, &v, sizeof(v));
}

void put_string(std::ofstream& out, const std::string& s) {
  put_pod<std::uint64_t>(out, s.size());
  put_bytes(out, s.data(), s.size());
}

void put_tensor(std::ofstream& out, const Tensor<float>& t) {
  put_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape) put_pod<std::uint64_t>(out, d);
  put_bytes(out, t.data.data(), t.data.size() * sizeof(float));
}

void get_bytes(std::ifstream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!in) throw DataError("load_checkpoint: truncated file");
}

template <typename V>
V get_pod(std::ifstream& in) {
  V v{};
  get_bytes(in, &v, sizeof(v));
  return v;
}

std::string get_string(std::ifstream& in) {
  const auto n = get_pod<std::uint64_t>(in);
  if (n > (1ull << 30)) throw DataError("load_checkpoint: implausible string size");
  std::string s(n, '\0');
  get_bytes(in, s.data(), n);
  return s;
}

void get_tensor(std::ifstream& in, Tensor<float>& t) {
  const auto rank = get_pod<std::uint32_t>(in);
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(get_pod<std::uint64_t>(in));
  if (shape != t.shape)
    throw DataError("load_checkpoint: tensor shape mismatch");
  get_bytes(in, t.data.data(), t.data.size() * sizeof(float));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Network<float>& net,
                     const std::string& meta, const AdamState<float>* adam) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_checkpoint: cannot open " + path.string());
  put_bytes(out, kCkptMagic, 4);
  put_pod<std::uint32_t>(out, kCkptVersion);
  put_string(out, meta);
  const auto specs = net.specs();
  put_string(out, layer_specs_json(specs));
  for (auto* p : net.params()) put_tensor(out, *p);
  for (auto* b : net.buffers()) put_tensor(out, *b);
  put_pod<std::uint8_t>(out, adam ? 1 : 0);
  if (adam) {
    put_pod<std::uint64_t>(out, adam->t);
    put_pod<double>(out, adam->lr);
    put_pod<double>(out, adam->beta1);
    put_pod<double>(out, adam->beta2);
    put_pod<double>(out, adam->eps);
    for (const auto& t : adam->m) put_tensor(out, t);
    for (const auto& t : adam->v) put_tensor(out, t);
  }
  if (!out) throw DataError("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_checkpoint: cannot open " + path.string());
  char magic[4];
  get_bytes(in, magic, 4);
  if (std::memcmp(magic, kCkptMagic, 4) != 0)
    throw DataError("load_checkpoint: bad magic in " + path.string());
  const auto version = get_pod<std::uint32_t>(in);
  if (version != kCkptVersion)
    throw DataError("load_checkpoint: unsupported version " +
                    std::to_string(version));
  Checkpoint ckpt;
  ckpt.meta = get_string(in);
  const auto specs = layer_specs_from_json(get_string(in));
  ckpt.net = Network<float>(specs);
  for (auto* p : ckpt.net.params()) get_tensor(in, *p);
  for (auto* b : ckpt.net.buffers()) get_tensor(in, *b);
  const auto has_adam = get_pod<std::uint8_t>(in);
  if (has_adam) {
    AdamState<float> adam;
    const auto t_saved = static_cast<std::size_t>(get_pod<std::uint64_t>(in));
    adam.lr = get_pod<double>(in);
    adam.beta1 = get_pod<double>(in);
    adam.beta2 = get_pod<double>(in);
    adam.eps = get_pod<double>(in);
    adam.init(ckpt.net.params());
    adam.t = t_saved;
    for (auto& t : adam.m) get_tensor(in, t);
    for (auto& t : adam.v) get_tensor(in, t);
    ckpt.adam = std::move(adam);
  }
  return ckpt;
}

// ---- Explicit instantiations --------------------------------------------------

template class Network<float>;
template class Network<double>;
template std::unique_ptr<Layer<float>> make_layer<float>(const LayerSpec&);
template std::unique_ptr<Layer<double>> make_layer<double>(const LayerSpec&);
template double mse<float>(const Tensor<float>&, const Tensor<float>&);
template double mse<double>(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> mse_grad<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> mse_grad<double>(const Tensor<double>&,
                                         const Tensor<double>&);
template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(const std::vector<Tensor<float>*>&,
                               const std::vector<Tensor<float>*>&,
                               AdamState<float>&);
template void adam_step<double>(const std::vector<Tensor<double>*>&,
                                const std::vector<Tensor<double>*>&,
                                AdamState<double>&);

}  // namespace midemo::nn
