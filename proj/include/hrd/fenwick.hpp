#pragma once

#include <cstddef>
#include <span>
#include <type_traits>
#include <vector>

namespace hrd {

/// Binary indexed tree over nonnegative weights, sized to a power of two so
/// the grand total sits at the root. Leaves are kept separately so the tree
/// can be rebuilt exactly (floating-point trees drift under many deltas).
template <typename T>
class FenwickTree {
  static_assert(std::is_arithmetic_v<T>);

 public:
  FenwickTree() = default;
  explicit FenwickTree(std::size_t n) { resize(n); }

  void resize(std::size_t n) {
    n_ = n;
    cap_ = 1;
    while (cap_ < n) cap_ <<= 1;
    leaves_.assign(cap_, T{});
    tree_.assign(cap_ + 1, T{});
  }

  std::size_t size() const { return n_; }

  void assign(std::span<const T> values) {
    resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) leaves_[i] = values[i];
    rebuild();
  }

  /// O(n) rebuild from the stored leaves.
  void rebuild() {
    for (std::size_t i = 1; i <= cap_; ++i) tree_[i] = leaves_[i - 1];
    for (std::size_t i = 1; i <= cap_; ++i) {
      const std::size_t parent = i + (i & (~i + 1));
      if (parent <= cap_) tree_[parent] += tree_[i];
    }
  }

  T leaf(std::size_t i) const { return leaves_[i]; }
  std::span<const T> leaves() const { return {leaves_.data(), n_}; }

  void add(std::size_t i, T delta) {
    leaves_[i] += delta;
    for (std::size_t k = i + 1; k <= cap_; k += k & (~k + 1)) tree_[k] += delta;
  }

  void set(std::size_t i, T value) {
    const T delta = value - leaves_[i];
    if (delta == T{}) return;
    leaves_[i] = value;
    for (std::size_t k = i + 1; k <= cap_; k += k & (~k + 1)) tree_[k] += delta;
  }

  T total() const { return cap_ == 0 ? T{} : tree_[cap_]; }

  /// Sum of leaves [0, i).
  T prefix(std::size_t i) const {
    T s{};
    for (std::size_t k = i; k > 0; k -= k & (~k + 1)) s += tree_[k];
    return s;
  }

  /// Index i with prefix(i) <= target < prefix(i + 1), for target in
  /// [0, total). Never returns a zero-weight leaf while any leaf is positive.
  std::size_t find(T target) const {
    std::size_t pos = 0;
    for (std::size_t step = cap_; step > 0; step >>= 1) {
      const std::size_t next = pos + step;
      if (next <= cap_ && tree_[next] <= target) {
        pos = next;
        target -= tree_[next];
      }
    }
    if (pos < n_ && leaves_[pos] > T{}) return pos;
    return nearest_positive(pos);
  }

 private:
  std::size_t nearest_positive(std::size_t pos) const {
    // Rounding can land the descent on an empty leaf or past the end.
    std::size_t i = pos < n_ ? pos : n_;
    while (i > 0) {
      --i;
      if (leaves_[i] > T{}) return i;
    }
    for (std::size_t j = pos; j < n_; ++j)
      if (leaves_[j] > T{}) return j;
    return n_ == 0 ? 0 : n_ - 1;
  }

  std::size_t n_ = 0;
  std::size_t cap_ = 0;
  std::vector<T> leaves_;
  std::vector<T> tree_;  // 1-based
};

}  // namespace hrd
