#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "pat/errors.hpp"

namespace pat::agent {

struct Transition {
  std::vector<double> m;
  int action = 0;
  double reward = 0.0;
  std::vector<double> m_next;
  bool done = false;
};

// w is the student actor's continuous output, not the thresholded mode.
struct StudentTransition {
  std::vector<double> m;
  double w = 0.0;
  double reward = 0.0;
  std::vector<double> m_next;
};

// Fixed-capacity FIFO ring with uniform sampling (with replacement).
template <class T>
class ReplayRing {
 public:
  explicit ReplayRing(std::size_t capacity = 1) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay capacity must be at least 1");
    items_.reserve(std::min<std::size_t>(capacity, 4096));
  }

  void push(T item) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[head_] = std::move(item);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  void clear() {
    items_.clear();
    head_ = 0;
  }

  // Oldest first.
  const T& operator[](std::size_t i) const { return items_[(head_ + i) % items_.size()]; }

  std::vector<const T*> sample(std::size_t n, std::mt19937_64& rng) const {
    std::vector<const T*> out;
    if (items_.empty()) return out;
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(&items_[pick(rng)]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<T> items_;
};

}  // namespace pat::agent
