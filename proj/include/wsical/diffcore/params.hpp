#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "wsical/diffcore/tensor.hpp"

namespace wsical::ad {

/// Named trainable tensors with one gradient accumulator each.
/// Insertion order is preserved; checkpoints and optimizers rely on it.
template <typename T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
  };

  Tensor<T>& add(std::string name, Tensor<T> value) {
    if (index_.contains(name)) {
      throw std::invalid_argument("param set: duplicate parameter '" + name + "'");
    }
    index_.emplace(name, entries_.size());
    Tensor<T> grad(value.shape);
    entries_.push_back(Entry{std::move(name), std::move(value), std::move(grad)});
    return entries_.back().value;
  }

  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
      throw std::out_of_range("param set: unknown parameter '" + std::string(name) + "'");
    }
    return it->second;
  }

  Tensor<T>& value(std::string_view name) { return entries_[index_of(name)].value; }
  const Tensor<T>& value(std::string_view name) const { return entries_[index_of(name)].value; }
  Tensor<T>& grad(std::string_view name) { return entries_[index_of(name)].grad; }
  const Tensor<T>& grad(std::string_view name) const { return entries_[index_of(name)].grad; }

  Entry& entry(std::size_t i) { return entries_[i]; }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(T{0});
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

  /// Values equal by name and order; gradients ignored.
  bool same_values(const ParamSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (entries_[i].name != other.entries_[i].name ||
          !(entries_[i].value == other.entries_[i].value)) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace wsical::ad
