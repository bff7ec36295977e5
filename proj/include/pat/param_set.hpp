#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pat/tensor.hpp"

namespace pat::nn {

struct ParamEntry {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Names and shapes of a ParamSet, in iteration order.
using ParamLayout = std::vector<std::pair<std::string, Shape>>;

std::size_t layout_size(const ParamLayout& layout);

// Ordered name -> (value, grad) map. Insertion order is the iteration,
// flattening and serialization order.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(const ParamLayout& layout);

  // Throws UsageError on a duplicate name.
  ParamEntry& add(const std::string& name, Tensor value);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool contains(const std::string& name) const;

  ParamEntry& at(std::size_t i) { return entries_.at(i); }
  const ParamEntry& at(std::size_t i) const { return entries_.at(i); }
  ParamEntry& at(const std::string& name);
  const ParamEntry& at(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  ParamLayout layout() const;
  std::size_t total_size() const;
  bool all_finite() const;

  // Values only; grads of *this are untouched. Layouts must match.
  void copy_values_from(const ParamSet& other);

  // Values and order; grads are not compared.
  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Polyak averaging: target <- tau * online + (1 - tau) * target.
void soft_update(ParamSet& target, const ParamSet& online, double tau);

// Stable 64-bit FNV-1a digest over names and value bits.
std::uint64_t param_hash(const ParamSet& params);

}  // namespace pat::nn
