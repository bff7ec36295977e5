#include "pat/param_set.hpp"

#include <cstdint>
#include <cstring>

#include "pat/errors.hpp"

namespace pat::nn {

std::size_t layout_size(const ParamLayout& layout) {
  std::size_t n = 0;
  for (const auto& [name, shape] : layout) n += shape_size(shape);
  return n;
}

ParamSet::ParamSet(const ParamLayout& layout) {
  for (const auto& [name, shape] : layout) add(name, Tensor(shape));
}

ParamEntry& ParamSet::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw UsageError("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  Tensor grad(value.shape());
  entries_.push_back(ParamEntry{name, std::move(value), std::move(grad)});
  return entries_.back();
}

bool ParamSet::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

std::size_t ParamSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second;
}

ParamEntry& ParamSet::at(const std::string& name) { return entries_[index_of(name)]; }

const ParamEntry& ParamSet::at(const std::string& name) const {
  return entries_[index_of(name)];
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

ParamLayout ParamSet::layout() const {
  ParamLayout out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.emplace_back(e.name, e.value.shape());
  return out;
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

bool ParamSet::all_finite() const {
  for (const auto& e : entries_) {
    if (!e.value.all_finite()) return false;
  }
  return true;
}

void ParamSet::copy_values_from(const ParamSet& other) {
  if (layout() != other.layout()) {
    throw DimensionError("parameter layouts differ in copy");
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    entries_[i].value = other.entries_[i].value;
  }
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].name != b.entries_[i].name) return false;
    const auto& va = a.entries_[i].value;
    const auto& vb = b.entries_[i].value;
    if (va.shape() != vb.shape()) return false;
    // Bitwise so that -0.0 / NaN payloads are compared exactly.
    if (std::memcmp(va.data(), vb.data(), va.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

void soft_update(ParamSet& target, const ParamSet& online, double tau) {
  if (target.size() != online.size()) throw DimensionError("soft update: layouts differ");
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto& t = target.at(i).value;
    const auto& o = online.at(i).value;
    if (t.shape() != o.shape()) throw DimensionError("soft update: shape mismatch at " + target.at(i).name);
    if (tau == 1.0) {
      t = o;
      continue;
    }
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = tau * o[k] + (1.0 - tau) * t[k];
  }
}

std::uint64_t param_hash(const ParamSet& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& e : params) {
    mix(e.name.data(), e.name.size());
    mix(e.value.data(), e.value.size() * sizeof(double));
  }
  return h;
}

}  // namespace pat::nn
