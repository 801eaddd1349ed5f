#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "bscg/autodiff.hpp"
#include "bscg/rng.hpp"
#include "bscg/tensor.hpp"

namespace bscg {

// A learned tensor plus its accumulated gradient and Adam state. Gradient and
// moments are allocated lazily so that models built only for parameter
// counting or FLOP estimation stay cheap.
template <class T>
struct Parameter {
  std::string name;
  Tensor4<T> value;
  Tensor4<T> grad;
  Tensor4<T> m, v;
  long long step = 0;

  void ensure_grad() {
    if (grad.empty()) grad = Tensor4<T>::zeros_like(value);
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.data.begin(), grad.data.end(), T(0));
  }
};

// Owns every Parameter of a model in creation order. Creation order is the
// serialization order, so it must be deterministic for a given config.
template <class T>
class ParameterStore {
 public:
  Parameter<T>& create(const std::string& name, int n, int c, int h, int w) {
    if (by_name_.count(name))
      throw ShapeError("ParameterStore: duplicate parameter name '" + name + "'");
    items_.push_back(std::make_unique<Parameter<T>>());
    Parameter<T>& p = *items_.back();
    p.name = name;
    p.value = Tensor4<T>(n, c, h, w);
    by_name_[name] = items_.size() - 1;
    return p;
  }

  Parameter<T>* find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : items_[it->second].get();
  }

  const std::vector<std::unique_ptr<Parameter<T>>>& items() const { return items_; }

  size_t tensor_count() const { return items_.size(); }

  size_t scalar_count() const {
    size_t total = 0;
    for (const auto& p : items_) total += p->value.size();
    return total;
  }

  void zero_grads() {
    for (auto& p : items_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> items_;
  std::unordered_map<std::string, size_t> by_name_;
};

// Parameter leaf: copies the current value into the graph and routes the
// gradient back into Parameter::grad (accumulating).
template <class T>
Var<T> param_leaf(Parameter<T>& p) {
  auto node = std::make_shared<Node<T>>();
  node->value = p.value;
  node->needs_grad = true;
  node->param = &p;
  Parameter<T>* pp = &p;
  node->backprop = [pp](Node<T>& self) {
    pp->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) pp->grad.data[i] += self.grad.data[i];
  };
  return Var<T>(node);
}

// Kaiming (fan-in) normal init for convolution weights; biases stay zero.
template <class T>
void kaiming_init(Parameter<T>& p, int fan_in, RandomSource& rng) {
  double stddev = std::sqrt(2.0 / double(fan_in));
  for (T& v : p.value.data) v = T(rng.normal(0.0, stddev));
}

// Bias-corrected Adam over every parameter in the store. Parameters whose
// gradient was never touched this step are treated as zero-gradient: their
// moments decay but the value stays put when the moments are zero too.
template <class T>
void adam_step(ParameterStore<T>& store, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8) {
  for (auto& up : store.items()) {
    Parameter<T>& p = *up;
    p.step += 1;
    if (p.grad.empty() && p.m.empty()) continue;  // never trained: exact no-op
    if (p.m.empty()) {
      p.m = Tensor4<T>::zeros_like(p.value);
      p.v = Tensor4<T>::zeros_like(p.value);
    }
    p.ensure_grad();
    double bc1 = 1.0 - std::pow(beta1, double(p.step));
    double bc2 = 1.0 - std::pow(beta2, double(p.step));
    for (size_t i = 0; i < p.value.size(); ++i) {
      double g = double(p.grad.data[i]);
      double m = beta1 * double(p.m.data[i]) + (1.0 - beta1) * g;
      double v = beta2 * double(p.v.data[i]) + (1.0 - beta2) * g * g;
      p.m.data[i] = T(m);
      p.v.data[i] = T(v);
      double mhat = m / bc1;
      double vhat = v / bc2;
      p.value.data[i] = T(double(p.value.data[i]) - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

}  // namespace bscg
