#pragma once

#include "fedseg/common.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace fedseg {

/// Ordered collection of named parameter arrays plus the fingerprint of the
/// architecture that produced it. This is what sites and the center exchange.
///
/// Entries flagged non-trainable are buffers (batch-norm running statistics):
/// they are exchanged, averaged and EMA-tracked like parameters, but never
/// touched by the optimizer.
template <typename Scalar>
class WeightVector {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  struct Entry {
    std::string name;
    std::vector<int> shape;
    bool trainable = true;
    Array values;

    [[nodiscard]] std::size_t size() const {
      return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                             [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
    }
  };

  WeightVector() = default;
  explicit WeightVector(std::string fingerprint) : fingerprint_(std::move(fingerprint)) {}

  const std::string& fingerprint() const { return fingerprint_; }

  /// Appends a zero-filled entry and returns its index.
  std::size_t add(std::string name, std::vector<int> shape, bool trainable = true) {
    if (index_.count(name)) throw std::invalid_argument("duplicate weight name '" + name + "'");
    Entry e{std::move(name), std::move(shape), trainable, {}};
    e.values = Array::Zero(static_cast<Eigen::Index>(e.size()));
    index_.emplace(e.name, entries_.size());
    entries_.push_back(std::move(e));
    return entries_.size() - 1;
  }

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  Entry& entry(std::size_t i) { return entries_[i]; }
  const std::vector<Entry>& entries() const { return entries_; }

  Array& operator[](std::size_t i) { return entries_[i].values; }
  const Array& operator[](std::size_t i) const { return entries_[i].values; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no weight named '" + name + "'");
    return it->second;
  }
  Array& at(const std::string& name) { return entries_[index_of(name)].values; }
  const Array& at(const std::string& name) const { return entries_[index_of(name)].values; }

  /// Number of trainable scalars.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.size();
    return n;
  }

  /// Combinable iff fingerprints match and every entry agrees in name and shape.
  bool combinable_with(const WeightVector& other) const {
    if (fingerprint_ != other.fingerprint_ || entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name != other.entries_[i].name || entries_[i].shape != other.entries_[i].shape)
        return false;
    return true;
  }

  /// Same layout, every value zero.
  WeightVector zeros_like() const {
    WeightVector out = *this;
    for (auto& e : out.entries_) e.values.setZero();
    return out;
  }

  template <typename Other>
  WeightVector<Other> cast() const {
    WeightVector<Other> out(fingerprint_);
    for (const auto& e : entries_) {
      const auto i = out.add(e.name, e.shape, e.trainable);
      out[i] = e.values.template cast<Other>();
    }
    return out;
  }

  friend bool operator==(const WeightVector& a, const WeightVector& b) {
    if (!a.combinable_with(b)) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i)
      if (a.entries_[i].trainable != b.entries_[i].trainable ||
          !(a.entries_[i].values == b.entries_[i].values).all())
        return false;
    return true;
  }

 private:
  std::string fingerprint_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename Scalar>
void require_combinable(const WeightVector<Scalar>& a, const WeightVector<Scalar>& b,
                        const char* what) {
  if (!a.combinable_with(b))
    throw std::invalid_argument(std::string(what) + ": weight vectors are not combinable (fingerprint '" +
                                a.fingerprint() + "' vs '" + b.fingerprint() + "')");
}

/// Unweighted elementwise mean. Per element the site values are summed in
/// sorted order, so the result does not depend on the order of `sites`.
template <typename Scalar>
WeightVector<Scalar> aggregate(std::span<const WeightVector<Scalar>> sites) {
  if (sites.empty()) throw std::invalid_argument("aggregate: no site weights");
  for (const auto& w : sites) require_combinable(sites.front(), w, "aggregate");
  WeightVector<Scalar> out = sites.front();
  const auto n = static_cast<Scalar>(sites.size());
  std::vector<Scalar> column(sites.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& dst = out[i];
    for (Eigen::Index k = 0; k < dst.size(); ++k) {
      for (std::size_t s = 0; s < sites.size(); ++s) column[s] = sites[s][i][k];
      std::sort(column.begin(), column.end());
      if (column.front() == column.back()) {
        dst[k] = column.front();
        continue;
      }
      Scalar sum = 0;
      for (const Scalar v : column) sum += v;
      dst[k] = sum / n;
    }
  }
  return out;
}

template <typename Scalar>
WeightVector<Scalar> aggregate(const std::vector<WeightVector<Scalar>>& sites) {
  return aggregate(std::span<const WeightVector<Scalar>>(sites));
}

}  // namespace fedseg
