#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "hsd/denoiser/architecture.hpp"

namespace hsd::denoiser {

template <class Scalar>
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<Scalar> data;
};

/// Named, ordered parameter (or gradient) tensors.
template <class Scalar>
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(const std::vector<ParamShape>& shapes) {
    for (const auto& s : shapes) add(s.name, s.shape);
  }

  Tensor<Scalar>& add(const std::string& name, std::vector<int> shape) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    index_[name] = tensors_.size();
    tensors_.push_back({name, std::move(shape), std::vector<Scalar>(n, Scalar(0))});
    return tensors_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
  }
  Tensor<Scalar>& at(const std::string& name) { return tensors_[index_of(name)]; }
  const Tensor<Scalar>& at(const std::string& name) const { return tensors_[index_of(name)]; }
  Tensor<Scalar>& at(std::size_t i) { return tensors_[i]; }
  const Tensor<Scalar>& at(std::size_t i) const { return tensors_[i]; }

  std::size_t size() const { return tensors_.size(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.data.size();
    return n;
  }

  ParamStore zeros_like() const {
    ParamStore out;
    for (const auto& t : tensors_) out.add(t.name, t.shape);
    return out;
  }

  void set_zero() {
    for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), Scalar(0));
  }

  template <class Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const auto& t : tensors_) {
      auto& o = out.add(t.name, t.shape);
      for (std::size_t i = 0; i < t.data.size(); ++i) o.data[i] = static_cast<Other>(t.data[i]);
    }
    return out;
  }

  bool operator==(const ParamStore& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      const auto& a = tensors_[i];
      const auto& b = other.tensors_[i];
      if (a.name != b.name || a.shape != b.shape || a.data != b.data) return false;
    }
    return true;
  }

 private:
  std::vector<Tensor<Scalar>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace hsd::denoiser
