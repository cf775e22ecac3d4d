#pragma once

#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fanet/tensor.hpp"

namespace fanet {

// Named trainable tensor. Names are path-like ("fsam3.w1s") and unique
// within a model's registry.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
class ParamRegistry {
 public:
  void add(std::string name, Tensor<T> tensor) {
    if (!names_.insert(name).second)
      throw ConfigError("parameter registered twice: " + name);
    items_.push_back(Parameter<T>{std::move(name), std::move(tensor)});
  }

  const std::vector<Parameter<T>>& items() const { return items_; }

  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : items_)
      if (p.name == name) return &p;
    return nullptr;
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& p : items_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() const {
    for (const auto& p : items_) p.tensor.zero_grad();
  }

 private:
  std::vector<Parameter<T>> items_;
  std::unordered_set<std::string> names_;
};

}  // namespace fanet
