#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "modgen/autograd.hpp"
#include "modgen/conv.hpp"
#include "modgen/errors.hpp"
#include "modgen/nn.hpp"
#include "modgen/ops.hpp"

namespace modgen {

enum class ModelKind { kDC, kDG, kAC };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::kDC: return "DC";
    case ModelKind::kDG: return "DG";
    default: return "AC";
  }
}

struct NetConfig {
  std::array<int, 4> dc_widths{16, 32, 64, 64};
  std::array<int, 2> dg_channels{16, 32};
  int dg_res_blocks = 2;
  std::array<int, 4> ac_widths{16, 32, 64, 64};
  int embedding_dim = 64;
  int num_actions = 10;
  int input_channels = 3;  // AC input: 3 * |combo|
  int frame_size = 32;
  int sequence_length = 16;

  void validate() const {
    for (int w : dc_widths) require(w > 0, "dc widths must be positive");
    for (int w : ac_widths) require(w > 0, "ac widths must be positive");
    require(dg_channels[0] > 0 && dg_channels[1] > 0, "dg channels must be positive");
    require(dg_res_blocks >= 0, "dg_res_blocks must be >= 0");
    require(embedding_dim == dc_widths[3],
            "embedding_dim must equal the last DC width (the embedding is the pooled last stage)");
    require(num_actions >= 2, "num_actions must be >= 2");
    require(input_channels > 0 && input_channels % 3 == 0 && input_channels <= 12,
            "input_channels must be 3 * m with m in 1..4");
    require(frame_size > 0 && frame_size % 4 == 0, "frame_size must be a positive multiple of 4");
    require(sequence_length >= 1, "sequence_length must be >= 1");
  }

  bool operator==(const NetConfig&) const = default;
};

namespace layers {

// Layers hold indices into their model's ParamStore, so copying a model
// (which deep-copies the store) never aliases parameters.
template <typename T>
struct Conv {
  Index w = -1, b = -1, stride = 1, pad = 1;

  static Conv make(ParamStore<T>& ps, std::mt19937_64& rng, const std::string& name, Index in,
                   Index out, Index k, Index stride, double gain = 1.0) {
    Conv c;
    c.w = ps.add(name + ".w", he_normal<T>(rng, Shape{out, in, k, k}, in * k * k, gain), true);
    c.b = ps.add(name + ".b", Tensor<T>(Shape{out}), false);
    c.stride = stride;
    c.pad = k / 2;
    return c;
  }
  Var<T> operator()(const ParamStore<T>& ps, const Var<T>& x) const {
    return conv2d(x, ps.var(w), ps.var(b), stride, pad);
  }
};

// Stride-2 transposed 3x3 convolution that exactly doubles spatial size.
template <typename T>
struct UpConv {
  Index w = -1, b = -1;

  static UpConv make(ParamStore<T>& ps, std::mt19937_64& rng, const std::string& name, Index in,
                     Index out, double gain = 1.0) {
    UpConv c;
    // Each output pixel of a stride-2 transpose sees about k*k/4 taps per input channel.
    c.w = ps.add(name + ".w",
                 he_normal<T>(rng, Shape{in, out, 3, 3}, std::max<Index>(1, in * 9 / 4), gain), true);
    c.b = ps.add(name + ".b", Tensor<T>(Shape{out}), false);
    return c;
  }
  Var<T> operator()(const ParamStore<T>& ps, const Var<T>& x) const {
    return conv_transpose2d(x, ps.var(w), ps.var(b), 2, 1, 1);
  }
};

template <typename T>
struct TemporalConv {
  Index w = -1, b = -1, kt = 3;

  static TemporalConv make(ParamStore<T>& ps, std::mt19937_64& rng, const std::string& name,
                           Index in, Index out, Index kt) {
    TemporalConv c;
    c.w = ps.add(name + ".w", he_normal<T>(rng, Shape{out, in, kt}, in * kt), true);
    c.b = ps.add(name + ".b", Tensor<T>(Shape{out}), false);
    c.kt = kt;
    return c;
  }
  Var<T> operator()(const ParamStore<T>& ps, const Var<T>& x) const {
    return temporal_conv(x, ps.var(w), ps.var(b), 1, kt / 2);
  }
};

template <typename T>
struct InstanceNorm {
  Index gamma = -1, beta = -1;

  static InstanceNorm make(ParamStore<T>& ps, const std::string& name, Index ch) {
    InstanceNorm n;
    n.gamma = ps.add(name + ".gamma", Tensor<T>(Shape{ch}, T(1)), false);
    n.beta = ps.add(name + ".beta", Tensor<T>(Shape{ch}), false);
    return n;
  }
  Var<T> operator()(const ParamStore<T>& ps, const Var<T>& x) const {
    return instance_norm(x, ps.var(gamma), ps.var(beta));
  }
};

template <typename T>
struct Linear {
  Index w = -1, b = -1;

  static Linear make(ParamStore<T>& ps, std::mt19937_64& rng, const std::string& name, Index in,
                     Index out, double gain = 1.0) {
    Linear l;
    l.w = ps.add(name + ".w", he_normal<T>(rng, Shape{out, in}, in, gain), true);
    l.b = ps.add(name + ".b", Tensor<T>(Shape{out}), false);
    return l;
  }
  Var<T> operator()(const ParamStore<T>& ps, const Var<T>& x) const {
    return linear(x, ps.var(w), ps.var(b));
  }
};

// Spatial mean of [N, C, H, W] -> [N, C].
template <typename T>
Var<T> global_pool(const Var<T>& x) {
  return mean_pool(reshape(x, Shape{x.dim(0), 1, x.dim(1), x.dim(2) * x.dim(3)}));
}

}  // namespace layers

// Shared handle behaviour: named parameters, freezing, deep copies.
template <typename T>
class ModelBase {
 public:
  const NetConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  bool frozen() const { return params_.frozen(); }
  Index parameter_count() const { return params_.count(); }
  std::uint64_t hash() const { return parameter_hash(params_); }

 protected:
  NetConfig cfg_;
  ParamStore<T> params_;
};

// Deep copy with frozen parameters; gradients still pass through to inputs.
template <typename Model>
Model freeze_copy(const Model& m) {
  Model out = m;
  out.params().set_frozen(true);
  return out;
}

// Image-based modality classifier: stem + four residual stages; the pooled
// last stage is the embedding.
template <typename T>
class DomainClassifier : public ModelBase<T> {
 public:
  static constexpr ModelKind kind = ModelKind::kDC;
  struct Output {
    Var<T> logits;     // [N, 4]
    Var<T> embedding;  // [N, E]
  };

  DomainClassifier() = default;
  DomainClassifier(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    this->cfg_ = cfg;
    std::mt19937_64 rng(seed);
    auto& ps = this->params_;
    const auto& w = cfg.dc_widths;
    stem_ = layers::Conv<T>::make(ps, rng, "stem", 3, w[0], 3, 1);
    Index in = w[0];
    for (int s = 0; s < 4; ++s) {
      const Index stride = s == 0 ? 1 : 2;
      const std::string name = "stage" + std::to_string(s + 1);
      Block b;
      b.conv1 = layers::Conv<T>::make(ps, rng, name + ".conv1", in, w[s], 3, stride);
      b.conv2 = layers::Conv<T>::make(ps, rng, name + ".conv2", w[s], w[s], 3, 1, 0.5);
      b.projected = stride != 1 || in != w[s];
      if (b.projected)
        b.shortcut = layers::Conv<T>::make(ps, rng, name + ".proj", in, w[s], 1, stride);
      blocks_.push_back(b);
      in = w[s];
    }
    head_ = layers::Linear<T>::make(ps, rng, "head", in, 4, 0.1);
  }

  // x: [N, 3, H, W]
  Output forward(const Var<T>& x) const {
    require(x.value().rank() == 4 && x.dim(1) == 3,
            "DC expects [N, 3, H, W] single frames, got " + shape_string(x.shape()));
    const auto& ps = this->params_;
    Var<T> h = relu(stem_(ps, x));
    for (const auto& b : blocks_) {
      Var<T> y = b.conv2(ps, relu(b.conv1(ps, h)));
      h = relu(add(y, b.projected ? b.shortcut(ps, h) : h));
    }
    Var<T> emb = layers::global_pool(h);
    return {head_(ps, emb), emb};
  }

 private:
  struct Block {
    layers::Conv<T> conv1, conv2, shortcut;
    bool projected = false;
  };
  layers::Conv<T> stem_;
  std::vector<Block> blocks_;
  layers::Linear<T> head_;
};

// Image-to-image generator: two stride-2 convolutions, residual blocks with
// instance normalization, two transposed convolutions, sigmoid output.
template <typename T>
class DomainGenerator : public ModelBase<T> {
 public:
  static constexpr ModelKind kind = ModelKind::kDG;

  DomainGenerator() = default;
  DomainGenerator(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    this->cfg_ = cfg;
    std::mt19937_64 rng(seed);
    auto& ps = this->params_;
    const Index c1 = cfg.dg_channels[0], c2 = cfg.dg_channels[1];
    down1_ = layers::Conv<T>::make(ps, rng, "down1", 3, c1, 3, 2);
    down2_ = layers::Conv<T>::make(ps, rng, "down2", c1, c2, 3, 2);
    for (int r = 0; r < cfg.dg_res_blocks; ++r) {
      const std::string name = "res" + std::to_string(r + 1);
      Res b;
      b.conv1 = layers::Conv<T>::make(ps, rng, name + ".conv1", c2, c2, 3, 1);
      b.norm1 = layers::InstanceNorm<T>::make(ps, name + ".norm1", c2);
      b.conv2 = layers::Conv<T>::make(ps, rng, name + ".conv2", c2, c2, 3, 1);
      b.norm2 = layers::InstanceNorm<T>::make(ps, name + ".norm2", c2);
      res_.push_back(b);
    }
    up1_ = layers::UpConv<T>::make(ps, rng, "up1", c2, c1);
    up2_ = layers::UpConv<T>::make(ps, rng, "up2", c1, 3, 0.5);
  }

  // Bottleneck feature map [N, c2, H/4, W/4].
  Var<T> encode(const Var<T>& x) const {
    require(x.value().rank() == 4 && x.dim(1) == 3,
            "DG expects [N, 3, H, W] single frames, got " + shape_string(x.shape()));
    require(x.dim(2) % 4 == 0 && x.dim(3) % 4 == 0,
            "DG input height and width must be divisible by 4, got " + shape_string(x.shape()));
    const auto& ps = this->params_;
    Var<T> h = relu(down2_(ps, relu(down1_(ps, x))));
    for (const auto& b : res_) {
      Var<T> y = b.norm2(ps, b.conv2(ps, relu(b.norm1(ps, b.conv1(ps, h)))));
      h = add(h, y);
    }
    return h;
  }

  Var<T> decode(const Var<T>& h) const {
    const auto& ps = this->params_;
    return sigmoid(up2_(ps, relu(up1_(ps, h))));
  }

  Var<T> forward(const Var<T>& x) const { return decode(encode(x)); }

  // Pooled bottleneck, [N, c2].
  Var<T> embed(const Var<T>& x) const { return layers::global_pool(encode(x)); }

 private:
  struct Res {
    layers::Conv<T> conv1, conv2;
    layers::InstanceNorm<T> norm1, norm2;
  };
  layers::Conv<T> down1_, down2_;
  std::vector<Res> res_;
  layers::UpConv<T> up1_, up2_;
};

// Separable 3D action classifier: each block is a 3x3 spatial convolution on
// every frame followed by a kernel-3 temporal convolution; then global
// spatio-temporal pooling and a linear head.
template <typename T>
class ActionClassifier : public ModelBase<T> {
 public:
  static constexpr ModelKind kind = ModelKind::kAC;
  static constexpr std::array<int, 4> kStrides{2, 2, 2, 1};

  ActionClassifier() = default;
  ActionClassifier(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    this->cfg_ = cfg;
    std::mt19937_64 rng(seed);
    auto& ps = this->params_;
    Index in = cfg.input_channels;
    for (int b = 0; b < 4; ++b) {
      const std::string name = "block" + std::to_string(b + 1);
      const Index out = cfg.ac_widths[b];
      Block blk;
      blk.spatial = layers::Conv<T>::make(ps, rng, name + ".spatial", in, out, 3, kStrides[b]);
      blk.temporal = layers::TemporalConv<T>::make(ps, rng, name + ".temporal", out, out, 3);
      blocks_.push_back(blk);
      in = out;
    }
    head_ = layers::Linear<T>::make(ps, rng, "head", in, cfg.num_actions, 0.1);
  }

  // x: [N, S, C, H, W] -> logits [N, num_actions]
  Var<T> forward(const Var<T>& x) const {
    const auto& cfg = this->cfg_;
    require(x.value().rank() == 5,
            "AC expects [N, S, C, H, W] clips, got " + shape_string(x.shape()));
    require(x.dim(1) == cfg.sequence_length, "AC expects S=" + std::to_string(cfg.sequence_length) +
                                                 " frames, got " + std::to_string(x.dim(1)));
    require(x.dim(2) == cfg.input_channels, "AC expects " + std::to_string(cfg.input_channels) +
                                                " channels, got " + std::to_string(x.dim(2)));
    const auto& ps = this->params_;
    const Index n = x.dim(0), s = x.dim(1);
    Var<T> h = reshape(x, Shape{n * s, x.dim(2), x.dim(3), x.dim(4)});
    for (const auto& blk : blocks_) {
      Var<T> sp = relu(blk.spatial(ps, h));
      const Index c = sp.dim(1), hh = sp.dim(2), ww = sp.dim(3);
      Var<T> tm = relu(blk.temporal(ps, reshape(sp, Shape{n, s, c, hh * ww})));
      h = reshape(tm, Shape{n * s, c, hh, ww});
    }
    Var<T> pooled = mean_pool(reshape(h, Shape{n, s, h.dim(1), h.dim(2) * h.dim(3)}));
    return head_(ps, pooled);
  }

 private:
  struct Block {
    layers::Conv<T> spatial;
    layers::TemporalConv<T> temporal;
  };
  std::vector<Block> blocks_;
  layers::Linear<T> head_;
};

}  // namespace modgen
