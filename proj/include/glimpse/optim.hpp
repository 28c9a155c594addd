#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "glimpse/errors.hpp"
#include "glimpse/tensor.hpp"

namespace glimpse {

struct AdamWConfig {
  double lr = 5e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named trainable parameters plus their AdamW state. Iteration follows
// insertion order so optimizer sweeps are deterministic.
class ParameterSet {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (params_.count(name))
      throw contract_error("parameter '" + name + "' already registered");
    t.set_requires_grad(true);
    names_.push_back(name);
    auto [it, ok] = params_.emplace(name, std::move(t));
    (void)ok;
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  Tensor& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end())
      throw contract_error("unknown parameter '" + name + "'");
    return it->second;
  }

  const Tensor& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end())
      throw contract_error("unknown parameter '" + name + "'");
    return it->second;
  }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t count() const { return names_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& name : names_) n += get(name).size();
    return n;
  }

  void zero_grads() {
    for (const auto& name : names_) get(name).zero_grad();
  }

  long step_count() const { return step_; }

  // Deep copy of values only (fresh leaves, no optimizer state).
  ParameterSet clone_values() const {
    ParameterSet out;
    for (const auto& name : names_) {
      const Tensor& t = get(name);
      out.add(name, Tensor::leaf(t.rows(), t.cols(), t.values()));
    }
    return out;
  }

  void load_values(const ParameterSet& src) {
    for (const auto& name : names_) {
      const Tensor& s = src.get(name);
      Tensor& dst = get(name);
      if (!dst.same_shape(s))
        throw contract_error("parameter '" + name + "' shape mismatch on load");
      dst.mut_values() = s.values();
    }
  }

 private:
  struct AdamState {
    std::vector<double> m, v;
  };

  std::vector<std::string> names_;
  std::unordered_map<std::string, Tensor> params_;
  std::unordered_map<std::string, AdamState> state_;
  long step_ = 0;

  friend void adamw_step(ParameterSet&, const AdamWConfig&);
};

// One AdamW update: decoupled weight decay applied directly to the weights,
// bias-corrected moment estimates, a single shared step counter.
inline void adamw_step(ParameterSet& params, const AdamWConfig& cfg) {
  params.step_ += 1;
  const double t = static_cast<double>(params.step_);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  for (const auto& name : params.names_) {
    Tensor& p = params.get(name);
    if (!p.has_grad())
      throw contract_error("adamw_step: parameter '" + name +
                           "' has no gradient");
    auto& st = params.state_[name];
    if (st.m.size() != p.size()) {
      st.m.assign(p.size(), 0.0);
      st.v.assign(p.size(), 0.0);
    }
    const auto& g = p.grad();
    auto& w = p.mut_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= cfg.lr * cfg.weight_decay * w[i];
      st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g[i];
      st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// Glorot-uniform initialization.
inline Tensor glorot(int rows, int cols, RngStream& rng) {
  const double bound = std::sqrt(6.0 / (rows + cols));
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::leaf(rows, cols, std::move(v));
}

}  // namespace glimpse
