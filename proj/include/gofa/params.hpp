#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gofa/tensor.hpp"

namespace gofa {

/// A named trainable tensor. Name prefixes partition the model
/// ("compressor.", "decoder.", "gnn.").
template <typename T>
struct BasicParameter {
  std::string name;
  BasicTensor<T> tensor;
  bool trainable = true;
};

/// Ordered, name-unique table of parameters owned by a model.
template <typename T>
class BasicParameterStore {
 public:
  BasicTensor<T> add(const std::string& name, Shape shape, T fill = T(0)) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    BasicTensor<T> t(std::move(shape), fill);
    t.set_requires_grad(true);
    index_.emplace(name, params_.size());
    params_.push_back({name, t, true});
    return t;
  }

  /// Normal(0, stddev) initialisation drawn from `rng`.
  BasicTensor<T> add_normal(const std::string& name, Shape shape, T stddev, std::mt19937_64& rng) {
    auto t = add(name, std::move(shape));
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
  }

  std::vector<BasicParameter<T>>& all() { return params_; }
  const std::vector<BasicParameter<T>>& all() const { return params_; }

  BasicParameter<T>* find(std::string_view name) {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  const BasicParameter<T>* find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  /// Marks every parameter whose name starts with one of `prefixes` as frozen.
  void freeze(const std::vector<std::string>& prefixes) {
    for (auto& p : params_) {
      for (const auto& pre : prefixes) {
        if (!pre.empty() && p.name.rfind(pre, 0) == 0) {
          p.trainable = false;
        }
      }
      p.tensor.set_requires_grad(p.trainable);
    }
  }

  void unfreeze_all() {
    for (auto& p : params_) {
      p.trainable = true;
      p.tensor.set_requires_grad(true);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  /// Overwrites values from `other` by name; shapes must match.
  void copy_values_from(const BasicParameterStore& other) {
    for (auto& p : params_) {
      const auto* src = other.find(p.name);
      if (!src) throw std::invalid_argument("parameter missing in source: " + p.name);
      if (src->tensor.shape() != p.tensor.shape()) {
        throw ShapeError("parameter " + p.name + " shape " + shape_str(p.tensor.shape()) + " vs " +
                         shape_str(src->tensor.shape()));
      }
      p.tensor.data() = src->tensor.data();
    }
  }

 private:
  std::vector<BasicParameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

using Parameter = BasicParameter<double>;
using ParameterStore = BasicParameterStore<double>;

}  // namespace gofa
