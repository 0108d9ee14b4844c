#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "modgen/autograd.hpp"
#include "modgen/errors.hpp"
#include "modgen/tensor.hpp"

namespace modgen {

template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  bool decay = true;  // false for biases and normalization gains
};

// Ordered, named parameter list. Order is the registration order and is part
// of the checkpoint contract. Copies are deep: a copied store owns fresh
// tensors, so no two models ever alias parameters.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other) : frozen_(other.frozen_) {
    for (const auto& p : other.params_)
      params_.push_back({p.name, Var<T>(p.var.value(), !frozen_), p.decay});
  }
  ParamStore& operator=(const ParamStore& other) {
    if (this != &other) *this = ParamStore(other);
    return *this;
  }
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  // Registers a parameter and returns its index.
  Index add(const std::string& name, Tensor<T> value, bool decay) {
    for (const auto& p : params_)
      require(p.name != name, "duplicate parameter name '" + name + "'");
    params_.push_back({name, Var<T>(std::move(value), !frozen_), decay});
    return static_cast<Index>(params_.size()) - 1;
  }

  const Var<T>& var(Index i) const { return params_[static_cast<std::size_t>(i)].var; }
  Var<T>& var(Index i) { return params_[static_cast<std::size_t>(i)].var; }

  const std::vector<Parameter<T>>& params() const { return params_; }
  std::vector<Parameter<T>>& params() { return params_; }
  std::size_t size() const { return params_.size(); }

  Index count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.var.numel();
    return n;
  }

  bool frozen() const { return frozen_; }
  // Frozen parameters are tape leaves without requires_grad: gradients still
  // flow through ops that use them, but never accumulate on them.
  void set_frozen(bool frozen) {
    frozen_ = frozen;
    for (auto& p : params_) p.var.set_requires_grad(!frozen);
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  Index index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return static_cast<Index>(i);
    throw std::invalid_argument("no parameter named '" + name + "'");
  }

 private:
  std::vector<Parameter<T>> params_;
  bool frozen_ = false;
};

// FNV-1a over the raw bytes of every parameter in order.
template <typename T>
std::uint64_t parameter_hash(const ParamStore<T>& store) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : store.params()) {
    mix(p.name.data(), p.name.size());
    mix(p.var.value().data(), sizeof(T) * static_cast<std::size_t>(p.var.numel()));
  }
  return h;
}

// He-normal initialisation scaled by `gain`, std = gain * sqrt(2 / fan_in).
template <typename T>
Tensor<T> he_normal(std::mt19937_64& rng, Shape shape, Index fan_in, double gain = 1.0) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
  return t;
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-5;

  void validate() const {
    require(lr > 0.0, "adam lr must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
            "adam betas must lie in [0,1)");
    require(eps > 0.0 && weight_decay >= 0.0, "adam eps must be positive, weight_decay >= 0");
  }
};

// Adam with L2 weight decay folded into the gradient (g + wd * theta) for
// parameters flagged `decay`. Moments are kept in double; the store is passed
// per step so the optimizer never holds a pointer into a movable model.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(const ParamStore<T>& store, AdamConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    for (const auto& p : store.params()) {
      m_.emplace_back(static_cast<std::size_t>(p.var.numel()), 0.0);
      v_.emplace_back(static_cast<std::size_t>(p.var.numel()), 0.0);
    }
  }

  void step(ParamStore<T>& store) {
    require(!store.frozen(), "Adam::step on a frozen parameter store");
    require(store.params().size() == m_.size(), "Adam::step: parameter list changed");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& params = store.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (!p.var.has_grad()) continue;
      const Tensor<T> g = p.var.grad();
      Tensor<T>& w = p.var.mutable_value();
      const double wd = p.decay ? cfg_.weight_decay : 0.0;
      auto& m = m_[i];
      auto& v = v_[i];
      for (Index j = 0; j < w.numel(); ++j) {
        const double gj = static_cast<double>(g[j]) + wd * static_cast<double>(w[j]);
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        const double mh = m[j] / c1, vh = v[j] / c2;
        w[j] = static_cast<T>(static_cast<double>(w[j]) - cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

  void restore(std::int64_t t, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v) {
    require(m.size() == m_.size() && v.size() == v_.size(), "optimizer state size mismatch");
    for (std::size_t i = 0; i < m.size(); ++i)
      require(m[i].size() == m_[i].size() && v[i].size() == v_[i].size(),
              "optimizer state shape mismatch at parameter index " + std::to_string(i));
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace modgen
