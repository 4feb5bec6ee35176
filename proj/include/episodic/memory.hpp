#pragma once

// Episodic stores: the per-action MFEC return table and the differentiable
// neural dictionary (DND), both built on a fixed-capacity key store with LRU
// eviction and exact brute-force nearest-neighbour search.

#include "episodic/serialize.hpp"
#include "episodic/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace episodic {

/// Lookup key produced by an encoder.
using EmbeddingKey = Vector;

/// Inverse-distance kernel 1 / (||h - h_i||^2 + delta).
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar kernel(const Eigen::MatrixBase<DerivedA>& h,
                                 const Eigen::MatrixBase<DerivedB>& h_i,
                                 typename DerivedA::Scalar delta) {
  if (h.size() != h_i.size()) throw DomainError("kernel: key dimensions differ");
  if (!(delta > 0)) throw DomainError("kernel: delta must be positive");
  return typename DerivedA::Scalar(1) / ((h - h_i).squaredNorm() + delta);
}

/// Fixed-capacity slots of (key, value, recency). Slots are stable until
/// evicted; every insert or touch stamps the slot with the next tick of a
/// store-wide clock that is never reset.
class KeyStore {
 public:
  KeyStore() = default;
  KeyStore(Index dim, Index capacity);

  Index dim() const { return keys_.rows(); }
  Index capacity() const { return keys_.cols(); }
  Index size() const { return size_; }
  bool empty() const { return size_ == 0; }
  bool full() const { return size_ == capacity(); }

  /// Occupied keys, one per column.
  auto keys() const { return keys_.leftCols(size_); }
  auto values() const { return values_.head(size_); }
  auto key(Index slot) const { return keys_.col(slot); }
  double value(Index slot) const { return values_(slot); }
  std::uint64_t recency(Index slot) const { return recency_[static_cast<std::size_t>(slot)]; }
  std::uint64_t clock() const { return clock_; }

  void set_value(Index slot, double v) { values_(slot) = v; }
  void set_key(Index slot, const Eigen::Ref<const Vector>& k) { keys_.col(slot) = k; }
  void touch(Index slot);

  struct Insertion {
    Index slot;
    bool evicted;
  };
  /// Appends, or overwrites the least-recently-used slot when full.
  Insertion insert(const Eigen::Ref<const Vector>& key, double value);
  Index lru_slot() const;

  Vector squared_distances(const Eigen::Ref<const Vector>& h) const;

  void save(BinaryWriter& out) const;
  static KeyStore load(BinaryReader& in);

 private:
  Matrix keys_;
  Vector values_;
  std::vector<std::uint64_t> recency_;
  Index size_ = 0;
  std::uint64_t clock_ = 0;
  std::set<std::pair<std::uint64_t, Index>> lru_;
};

/// Slots of the min(k, size) keys closest to h, nearest first; equal
/// distances go to the older entry.
std::vector<Index> knn_search(const KeyStore& store, const Eigen::Ref<const Vector>& h, Index k);

/// Posterior variance of a kernel-covariance Gaussian process at h given
/// the neighbour keys (columns): k(h,h) - k_v^T (K + jitter I)^{-1} k_v,
/// clamped at zero.
double kernel_posterior_variance(const Eigen::Ref<const Matrix>& neighbour_keys,
                                 const Eigen::Ref<const Vector>& h, double delta, double jitter);

struct DndConfig {
  Index key_dim = 64;
  Index capacity = 10000;
  Index k = 11;
  double delta = 1e-3;
  double match_tol = 1e-9;
  double jitter = 1e-6;
};

struct LookupResult {
  double q_estimate = 0.0;
  std::vector<Index> neighbor_indices;
  Vector weights;
  double variance = 0.0;

  // Cached for gradient evaluation.
  Vector kernels;
  EmbeddingKey query;
  std::uint64_t version = 0;
};

/// Per-action differentiable neural dictionary.
class DifferentiableDictionary {
 public:
  DifferentiableDictionary() = default;
  explicit DifferentiableDictionary(const DndConfig& config);

  const DndConfig& config() const { return config_; }
  const KeyStore& store() const { return store_; }
  Index size() const { return store_.size(); }
  bool empty() const { return store_.empty(); }

  /// Bumped by every change to keys or values; recency touches do not count.
  std::uint64_t version() const { return version_; }

  void touch(const LookupResult& result);
  void set_value(Index slot, double v);
  void set_key(Index slot, const Eigen::Ref<const Vector>& key);

  /// Returns true when an existing entry was updated in place.
  bool write(const Eigen::Ref<const Vector>& h, double target, double alpha);
  bool write(const Eigen::Ref<const Vector>& h, double target, double alpha, double match_tol);

  void save(BinaryWriter& out) const;
  static DifferentiableDictionary load(BinaryReader& in);

 private:
  DndConfig config_;
  KeyStore store_;
  std::uint64_t version_ = 0;
};

using Dnd = DifferentiableDictionary;

std::vector<Index> knn_search(const Dnd& store, const Eigen::Ref<const Vector>& h, Index k);

LookupResult dnd_lookup(const Dnd& store, const Eigen::Ref<const Vector>& h);

/// Q-learning-style update of a matching entry (squared distance within
/// match_tol), otherwise insertion with LRU eviction.
void dnd_write(Dnd& store, const Eigen::Ref<const Vector>& h, double target, double alpha,
               double match_tol);

/// Kernel-GP standard deviation at h over its nearest neighbours.
double estimate_uncertainty(const Dnd& store, const Eigen::Ref<const Vector>& h);

struct DndGradients {
  Vector d_query;             // dL/dh
  Vector d_values;            // dL/dQ_i, aligned with neighbor_indices
  Matrix d_keys;              // dL/dh_i, one column per neighbour
  std::vector<Index> slots;   // neighbour slots
};

/// Analytic partials of the lookup estimate scaled by the upstream loss
/// gradient. The lookup must be current for the store.
DndGradients dnd_gradients(const Dnd& store, const LookupResult& lookup, double upstream);

/// Per-action table of best observed returns, keyed by exact key bytes.
class MfecTable {
 public:
  MfecTable() = default;
  MfecTable(Index actions, Index key_dim, Index capacity, Index k);

  Index actions() const { return static_cast<Index>(stores_.size()); }
  Index k() const { return k_; }
  const KeyStore& store(Index action) const { return stores_.at(static_cast<std::size_t>(action)); }
  Index size(Index action) const { return store(action).size(); }

  std::optional<Index> find(const Eigen::Ref<const Vector>& h, Index action) const;

  void save(BinaryWriter& out) const;
  static MfecTable load(BinaryReader& in);

  friend void mfec_update(MfecTable& table, const Eigen::Ref<const Vector>& h, Index action,
                          double episodic_return);

 private:
  static std::string bytes_of(const Eigen::Ref<const Vector>& h);

  Index k_ = 11;
  std::vector<KeyStore> stores_;
  std::vector<std::unordered_map<std::string, Index>> index_;
};

/// Stored return on an exact hit, otherwise the mean over the k nearest keys.
double mfec_estimate(const MfecTable& table, const Eigen::Ref<const Vector>& h, Index action);

/// Max-update of an existing entry, or insertion with LRU eviction.
void mfec_update(MfecTable& table, const Eigen::Ref<const Vector>& h, Index action,
                 double episodic_return);

/// Kernel-GP standard deviation over an MFEC action table.
double estimate_uncertainty(const MfecTable& table, const Eigen::Ref<const Vector>& h, Index action,
                            double delta, double jitter = 1e-6);

}  // namespace episodic
