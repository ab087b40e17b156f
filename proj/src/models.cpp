#include "midemo/models.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace midemo::models {

std::string scheme_name(Scheme scheme) {
  switch (scheme) {
    case Scheme::A2E: return "a2e";
    case Scheme::A2Mid: return "a2mid";
    case Scheme::A2MidPlus: return "a2mid+";
    case Scheme::A2Mid2E: return "a2mid2e";
    case Scheme::A2Mid2EJoint: return "a2mid2e-joint";
    case Scheme::Mid2E: return "mid2e";
  }
  throw ConfigError("scheme_name: unknown scheme");
}

Scheme scheme_from_name(const std::string& name) {
  for (Scheme s : {Scheme::A2E, Scheme::A2Mid, Scheme::A2MidPlus, Scheme::A2Mid2E,
                   Scheme::A2Mid2EJoint, Scheme::Mid2E})
    if (scheme_name(s) == name) return s;
  throw ConfigError("unknown scheme '" + name +
                    "'; valid: a2e, a2mid, a2mid+, a2mid2e, a2mid2e-joint, mid2e");
}

bool scheme_has_network(Scheme scheme) { return scheme != Scheme::Mid2E; }

std::vector<nn::LayerSpec> trunk_specs(const TrunkConfig& cfg) {
  for (std::size_t w : cfg.widths)
    if (w == 0) throw ConfigError("trunk: widths must be positive");
  if (cfg.embedding_dim == 0)
    throw ConfigError("trunk: embedding_dim must be positive");

  std::vector<nn::LayerSpec> specs;
  auto conv_block = [&](std::size_t in, std::size_t out, std::size_t kernel) {
    nn::Conv2dSpec c;
    c.in_channels = in;
    c.out_channels = out;
    c.kernel = kernel;
    c.stride = 1;
    c.pad = kernel / 2;
    specs.emplace_back(c);
    specs.emplace_back(nn::BatchNormSpec{out});
    specs.emplace_back(nn::ReluSpec{});
  };
  conv_block(1, cfg.widths[0], 3);
  conv_block(cfg.widths[0], cfg.widths[1], 3);
  specs.emplace_back(nn::MaxPoolSpec{2});
  conv_block(cfg.widths[1], cfg.widths[2], 3);
  conv_block(cfg.widths[2], cfg.widths[3], 3);
  specs.emplace_back(nn::MaxPoolSpec{2});
  conv_block(cfg.widths[3], cfg.widths[4], 3);
  conv_block(cfg.widths[4], cfg.embedding_dim, 1);
  specs.emplace_back(nn::AdaptiveAvgPoolSpec{});
  specs.emplace_back(nn::DropoutSpec{cfg.dropout});
  return specs;
}

nn::Tensor<float> spectrogram_input(const dsp::Spectrogram& spec) {
  return spectrogram_batch({&spec});
}

nn::Tensor<float> spectrogram_batch(
    const std::vector<const dsp::Spectrogram*>& specs) {
  if (specs.empty()) throw DataError("spectrogram_batch: empty batch");
  const int rows = specs.front()->rows, cols = specs.front()->cols;
  nn::Tensor<float> batch({specs.size(), 1, static_cast<std::size_t>(rows),
                           static_cast<std::size_t>(cols)});
  const std::size_t plane = static_cast<std::size_t>(rows) * cols;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i]->rows != rows || specs[i]->cols != cols)
      throw DimensionError("spectrogram_batch: inconsistent shapes");
    const auto z = dsp::standardize(*specs[i]);
    std::copy(z.begin(), z.end(), batch.data.begin() + static_cast<long>(i * plane));
  }
  return batch;
}

SchemeModel SchemeModel::build(Scheme scheme, const TrunkConfig& cfg,
                               std::uint64_t seed) {
  if (!scheme_has_network(scheme))
    throw ConfigError("SchemeModel::build: scheme '" + scheme_name(scheme) +
                      "' has no network");
  SchemeModel m;
  m.scheme_ = scheme;
  m.trunk_cfg_ = cfg;

  auto specs = trunk_specs(cfg);
  const std::size_t head_out = (scheme == Scheme::A2E) ? kNumEmotions : kNumMidLevel;
  specs.emplace_back(nn::DenseSpec{cfg.embedding_dim, head_out});
  m.backbone_ = nn::Network<float>(specs);

  // Trunk parameters are drawn first, so equal seeds give identical trunks
  // across schemes.
  Pcg32 rng(seed);
  m.backbone_.init_params(rng);

  if (scheme == Scheme::A2Mid2EJoint) {
    std::vector<nn::LayerSpec> head{nn::DenseSpec{kNumMidLevel, kNumEmotions}};
    m.emotion_head_.emplace(head);
    m.emotion_head_->init_params(rng);
  }
  return m;
}

void SchemeModel::set_linear_map(explain::LinearMap map) {
  if (map.in_dim() != kNumMidLevel || map.out_dim() != kNumEmotions)
    throw DimensionError("set_linear_map: expected a 7x8 map");
  linear_map_ = std::move(map);
}

PredictOutput SchemeModel::predict(const dsp::Spectrogram& spec) {
  PredictOutput out;
  nn::Tensor<float> x = spectrogram_input(spec);
  nn::Tensor<float> first = backbone_.forward(x, /*train=*/false);

  if (scheme_ == Scheme::A2E) {
    out.emotion.emplace(first.data.begin(), first.data.end());
    return out;
  }
  out.midlevel.emplace(first.data.begin(), first.data.end());
  if (scheme_ == Scheme::A2Mid2EJoint) {
    nn::Tensor<float> emo = emotion_head_->forward(first, /*train=*/false);
    out.emotion.emplace(emo.data.begin(), emo.data.end());
  } else if (scheme_ == Scheme::A2Mid2E && linear_map_) {
    out.emotion = linear_map_->apply(*out.midlevel);
  }
  return out;
}

explain::LinearMap SchemeModel::extract_linear_map() const {
  if (scheme_ == Scheme::A2Mid2E) {
    if (!linear_map_)
      throw ConfigError("extract_linear_map: composite model has no fitted map yet");
    return *linear_map_;
  }
  if (scheme_ != Scheme::A2Mid2EJoint)
    throw ConfigError("extract_linear_map: scheme '" + scheme_name(scheme_) +
                      "' has no linear emotion layer");
  // Dense stores weight as (out x in); LinearMap wants (in x out).
  auto& head = const_cast<nn::Network<float>&>(*emotion_head_);
  auto params = head.params();
  const nn::Tensor<float>& w = *params[0];
  const nn::Tensor<float>& b = *params[1];
  explain::LinearMap map;
  map.weights = Mat(kNumMidLevel, kNumEmotions);
  map.intercepts.resize(kNumEmotions);
  for (std::size_t e = 0; e < kNumEmotions; ++e) {
    for (std::size_t f = 0; f < kNumMidLevel; ++f)
      map.weights.at(f, e) = w.data[e * kNumMidLevel + f];
    map.intercepts[e] = b.data[e];
  }
  return map;
}

std::vector<nn::Tensor<float>*> SchemeModel::trainable_params() {
  auto out = backbone_.params();
  if (emotion_head_)
    for (auto* p : emotion_head_->params()) out.push_back(p);
  return out;
}

std::vector<nn::Tensor<float>*> SchemeModel::trainable_grads() {
  auto out = backbone_.grads();
  if (emotion_head_)
    for (auto* g : emotion_head_->grads()) out.push_back(g);
  return out;
}

void SchemeModel::zero_grads() {
  backbone_.zero_grads();
  if (emotion_head_) emotion_head_->zero_grads();
}

SchemeModel SchemeModel::clone() const {
  SchemeModel copy;
  copy.scheme_ = scheme_;
  copy.trunk_cfg_ = trunk_cfg_;
  copy.backbone_ = backbone_.clone();
  if (emotion_head_) copy.emotion_head_ = emotion_head_->clone();
  copy.linear_map_ = linear_map_;
  return copy;
}

void SchemeModel::save(const std::filesystem::path& path,
                       const std::string& context_json) const {
  nlohmann::ordered_json meta;
  meta["scheme"] = scheme_name(scheme_);
  if (!context_json.empty()) {
    try {
      meta["context"] = nlohmann::json::parse(context_json);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("SchemeModel::save: bad context json: " +
                      std::string(e.what()));
    }
  }
  meta["trunk"] = {{"widths", trunk_cfg_.widths},
                   {"embedding_dim", trunk_cfg_.embedding_dim},
                   {"dropout", trunk_cfg_.dropout}};
  meta["backbone_layers"] = backbone_.size();
  if (linear_map_) {
    nlohmann::ordered_json lm;
    lm["intercepts"] = linear_map_->intercepts;
    lm["weights"] = nlohmann::ordered_json::array();
    for (std::size_t f = 0; f < linear_map_->in_dim(); ++f) {
      std::vector<double> row(linear_map_->out_dim());
      for (std::size_t e = 0; e < row.size(); ++e)
        row[e] = linear_map_->weights.at(f, e);
      lm["weights"].push_back(row);
    }
    meta["linear_map"] = lm;
  }

  // Persist as one sequential stack; backbone_layers marks the split.
  auto specs = backbone_.specs();
  if (emotion_head_)
    for (const auto& s : emotion_head_->specs()) specs.push_back(s);
  nn::Network<float> combined{std::span<const nn::LayerSpec>(specs)};
  auto& self = const_cast<SchemeModel&>(*this);
  auto src_params = self.trainable_params();
  auto dst_params = combined.params();
  for (std::size_t i = 0; i < src_params.size(); ++i)
    dst_params[i]->data = src_params[i]->data;
  auto src_buf = self.backbone_.buffers();
  if (self.emotion_head_)
    for (auto* b : self.emotion_head_->buffers()) src_buf.push_back(b);
  auto dst_buf = combined.buffers();
  for (std::size_t i = 0; i < src_buf.size(); ++i)
    dst_buf[i]->data = src_buf[i]->data;

  nn::save_checkpoint(path, combined, meta.dump());
}

SchemeModel SchemeModel::load(const std::filesystem::path& path) {
  nn::Checkpoint ckpt = nn::load_checkpoint(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.meta);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("SchemeModel::load: bad meta in " + path.string() + ": " +
                    e.what());
  }

  SchemeModel m;
  m.scheme_ = scheme_from_name(meta.at("scheme").get<std::string>());
  const auto& trunk = meta.at("trunk");
  const auto widths = trunk.at("widths").get<std::vector<std::size_t>>();
  if (widths.size() != m.trunk_cfg_.widths.size())
    throw DataError("SchemeModel::load: unexpected trunk width count");
  std::copy(widths.begin(), widths.end(), m.trunk_cfg_.widths.begin());
  m.trunk_cfg_.embedding_dim = trunk.at("embedding_dim").get<std::size_t>();
  m.trunk_cfg_.dropout = trunk.at("dropout").get<double>();

  const auto backbone_layers = meta.at("backbone_layers").get<std::size_t>();
  const auto specs = ckpt.net.specs();
  if (backbone_layers > specs.size())
    throw DataError("SchemeModel::load: backbone_layers out of range");

  m.backbone_ = nn::Network<float>(
      std::span<const nn::LayerSpec>(specs.data(), backbone_layers));
  if (backbone_layers < specs.size())
    m.emotion_head_.emplace(std::span<const nn::LayerSpec>(
        specs.data() + backbone_layers, specs.size() - backbone_layers));

  auto src_params = ckpt.net.params();
  auto dst_params = m.trainable_params();
  if (src_params.size() != dst_params.size())
    throw DataError("SchemeModel::load: parameter count mismatch");
  for (std::size_t i = 0; i < src_params.size(); ++i)
    dst_params[i]->data = src_params[i]->data;
  auto src_buf = ckpt.net.buffers();
  auto dst_buf = m.backbone_.buffers();
  if (m.emotion_head_)
    for (auto* b : m.emotion_head_->buffers()) dst_buf.push_back(b);
  for (std::size_t i = 0; i < src_buf.size(); ++i)
    dst_buf[i]->data = src_buf[i]->data;

  if (meta.contains("linear_map")) {
    const auto& lm = meta.at("linear_map");
    explain::LinearMap map;
    map.intercepts = lm.at("intercepts").get<std::vector<double>>();
    const auto rows = lm.at("weights").get<std::vector<std::vector<double>>>();
    map.weights = Mat(rows.size(), map.intercepts.size());
    for (std::size_t f = 0; f < rows.size(); ++f)
      for (std::size_t e = 0; e < rows[f].size(); ++e)
        map.weights.at(f, e) = rows[f][e];
    m.linear_map_ = std::move(map);
  }
  return m;
}

double joint_loss(const nn::Tensor<float>& midlevel_pred,
                  const nn::Tensor<float>& midlevel_target,
                  const nn::Tensor<float>& emotion_pred,
                  const nn::Tensor<float>& emotion_target) {
  return nn::mse(midlevel_pred, midlevel_target) +
         nn::mse(emotion_pred, emotion_target);
}

}  // namespace midemo::models
