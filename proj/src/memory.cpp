#include "episodic/memory.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cstring>
#include <numeric>

namespace episodic {

namespace {

constexpr std::uint32_t kKeyStoreVersion = 1;
constexpr std::uint32_t kDndVersion = 1;
constexpr std::uint32_t kMfecVersion = 1;

void check_query(const KeyStore& store, const Eigen::Ref<const Vector>& h) {
  if (h.size() != store.dim()) throw DomainError("query dimension does not match the store");
  if (!h.allFinite()) throw DomainError("query key has non-finite entries");
}

}  // namespace

// ---------------------------------------------------------------------------
// KeyStore

KeyStore::KeyStore(Index dim, Index capacity)
    : keys_(dim, capacity), values_(capacity), recency_(static_cast<std::size_t>(capacity), 0) {
  if (dim < 1 || capacity < 1) throw DomainError("key store needs positive dimension and capacity");
  keys_.setZero();
  values_.setZero();
}

void KeyStore::touch(Index slot) {
  auto& stamp = recency_[static_cast<std::size_t>(slot)];
  lru_.erase({stamp, slot});
  stamp = ++clock_;
  lru_.emplace(stamp, slot);
}

KeyStore::Insertion KeyStore::insert(const Eigen::Ref<const Vector>& key, double value) {
  if (key.size() != dim()) throw DomainError("key dimension does not match the store");
  Insertion result{size_, false};
  if (full()) {
    result = {lru_slot(), true};
  } else {
    ++size_;
  }
  keys_.col(result.slot) = key;
  values_(result.slot) = value;
  if (result.evicted) {
    touch(result.slot);
  } else {
    recency_[static_cast<std::size_t>(result.slot)] = ++clock_;
    lru_.emplace(clock_, result.slot);
  }
  return result;
}

Index KeyStore::lru_slot() const {
  if (lru_.empty()) throw EmptyStoreError();
  return lru_.begin()->second;
}

Vector KeyStore::squared_distances(const Eigen::Ref<const Vector>& h) const {
  return (keys().colwise() - h).colwise().squaredNorm().transpose();
}

void KeyStore::save(BinaryWriter& out) const {
  out.header("EPKS", kKeyStoreVersion);
  out.pod<std::int64_t>(dim());
  out.pod<std::int64_t>(capacity());
  out.pod<std::uint64_t>(clock_);
  out.pod<std::int64_t>(size_);
  for (const auto& [stamp, slot] : lru_) {
    out.pod<std::uint64_t>(stamp);
    out.pod<double>(values_(slot));
    out.dense(keys_.col(slot));
  }
}

KeyStore KeyStore::load(BinaryReader& in) {
  in.expect_header("EPKS", kKeyStoreVersion);
  const auto dim = in.pod<std::int64_t>();
  const auto capacity = in.pod<std::int64_t>();
  KeyStore store(dim, capacity);
  const auto clock = in.pod<std::uint64_t>();
  const auto size = in.pod<std::int64_t>();
  if (size < 0 || size > capacity) throw ValidationError("key store snapshot size out of range");
  for (Index slot = 0; slot < size; ++slot) {
    const auto stamp = in.pod<std::uint64_t>();
    const double value = in.pod<double>();
    const Matrix key = in.matrix();
    if (key.rows() != dim || key.cols() != 1) throw ValidationError("key store snapshot key shape");
    store.keys_.col(slot) = key.col(0);
    store.values_(slot) = value;
    store.recency_[static_cast<std::size_t>(slot)] = stamp;
    store.lru_.emplace(stamp, slot);
  }
  store.size_ = size;
  store.clock_ = clock;
  return store;
}

std::vector<Index> knn_search(const KeyStore& store, const Eigen::Ref<const Vector>& h, Index k) {
  if (store.empty()) throw EmptyStoreError();
  check_query(store, h);
  if (k < 1) throw DomainError("k must be at least 1");
  const Vector dist = store.squared_distances(h);
  std::vector<Index> order(static_cast<std::size_t>(store.size()));
  std::iota(order.begin(), order.end(), Index{0});
  auto closer = [&](Index a, Index b) {
    if (dist(a) != dist(b)) return dist(a) < dist(b);
    return store.recency(a) < store.recency(b);
  };
  const auto m = static_cast<std::size_t>(std::min(k, store.size()));
  if (m < order.size()) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(), closer);
    order.resize(m);
  }
  std::sort(order.begin(), order.end(), closer);
  return order;
}

double kernel_posterior_variance(const Eigen::Ref<const Matrix>& neighbour_keys,
                                 const Eigen::Ref<const Vector>& h, double delta, double jitter) {
  const Index m = neighbour_keys.cols();
  if (m == 0) throw EmptyStoreError();
  Matrix gram(m, m);
  Vector cross(m);
  for (Index i = 0; i < m; ++i) {
    cross(i) = kernel(h, neighbour_keys.col(i), delta);
    for (Index j = 0; j <= i; ++j) {
      gram(i, j) = kernel(neighbour_keys.col(i), neighbour_keys.col(j), delta);
      gram(j, i) = gram(i, j);
    }
  }
  gram.diagonal().array() += jitter;
  const Eigen::LDLT<Matrix> ldlt(gram);
  const double explained = cross.dot(ldlt.solve(cross));
  return std::max(0.0, 1.0 / delta - explained);
}

// ---------------------------------------------------------------------------
// DifferentiableDictionary

DifferentiableDictionary::DifferentiableDictionary(const DndConfig& config)
    : config_(config), store_(config.key_dim, config.capacity) {
  if (!(config.delta > 0.0)) throw DomainError("dnd delta must be positive");
  if (config.k < 1) throw DomainError("dnd k must be at least 1");
}

void DifferentiableDictionary::touch(const LookupResult& result) {
  for (const Index slot : result.neighbor_indices) store_.touch(slot);
}

void DifferentiableDictionary::set_value(Index slot, double v) {
  store_.set_value(slot, v);
  ++version_;
}

void DifferentiableDictionary::set_key(Index slot, const Eigen::Ref<const Vector>& key) {
  store_.set_key(slot, key);
  ++version_;
}

bool DifferentiableDictionary::write(const Eigen::Ref<const Vector>& h, double target, double alpha) {
  return write(h, target, alpha, config_.match_tol);
}

bool DifferentiableDictionary::write(const Eigen::Ref<const Vector>& h, double target, double alpha,
                                     double match_tol) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("dnd write: alpha must lie in (0, 1]");
  check_query(store_, h);
  ++version_;
  if (!store_.empty()) {
    Index nearest = 0;
    const double d = store_.squared_distances(h).minCoeff(&nearest);
    if (d <= match_tol) {
      const double q = store_.value(nearest);
      store_.set_value(nearest, q + alpha * (target - q));
      store_.touch(nearest);
      return true;
    }
  }
  store_.insert(h, target);
  return false;
}

void DifferentiableDictionary::save(BinaryWriter& out) const {
  out.header("EPDN", kDndVersion);
  out.pod<std::int64_t>(config_.key_dim);
  out.pod<std::int64_t>(config_.capacity);
  out.pod<std::int64_t>(config_.k);
  out.pod<double>(config_.delta);
  out.pod<double>(config_.match_tol);
  out.pod<double>(config_.jitter);
  out.pod<std::uint64_t>(version_);
  store_.save(out);
}

DifferentiableDictionary DifferentiableDictionary::load(BinaryReader& in) {
  in.expect_header("EPDN", kDndVersion);
  DndConfig config;
  config.key_dim = in.pod<std::int64_t>();
  config.capacity = in.pod<std::int64_t>();
  config.k = in.pod<std::int64_t>();
  config.delta = in.pod<double>();
  config.match_tol = in.pod<double>();
  config.jitter = in.pod<double>();
  DifferentiableDictionary dnd(config);
  dnd.version_ = in.pod<std::uint64_t>();
  dnd.store_ = KeyStore::load(in);
  if (dnd.store_.dim() != config.key_dim || dnd.store_.capacity() != config.capacity) {
    throw ValidationError("dnd snapshot store shape disagrees with its config");
  }
  return dnd;
}

std::vector<Index> knn_search(const Dnd& store, const Eigen::Ref<const Vector>& h, Index k) {
  return knn_search(store.store(), h, k);
}

LookupResult dnd_lookup(const Dnd& store, const Eigen::Ref<const Vector>& h) {
  const KeyStore& keys = store.store();
  const DndConfig& cfg = store.config();
  LookupResult result;
  result.neighbor_indices = knn_search(keys, h, cfg.k);
  const auto m = static_cast<Index>(result.neighbor_indices.size());
  result.kernels.resize(m);
  Vector values(m);
  Matrix neighbours(keys.dim(), m);
  for (Index i = 0; i < m; ++i) {
    const Index slot = result.neighbor_indices[static_cast<std::size_t>(i)];
    result.kernels(i) = kernel(h, keys.key(slot), cfg.delta);
    values(i) = keys.value(slot);
    neighbours.col(i) = keys.key(slot);
  }
  result.weights = result.kernels / result.kernels.sum();
  result.q_estimate = result.weights.dot(values);
  result.variance = kernel_posterior_variance(neighbours, h, cfg.delta, cfg.jitter);
  result.query = h;
  result.version = store.version();
  return result;
}

void dnd_write(Dnd& store, const Eigen::Ref<const Vector>& h, double target, double alpha,
               double match_tol) {
  store.write(h, target, alpha, match_tol);
}

double estimate_uncertainty(const Dnd& store, const Eigen::Ref<const Vector>& h) {
  return std::sqrt(dnd_lookup(store, h).variance);
}

DndGradients dnd_gradients(const Dnd& store, const LookupResult& lookup, double upstream) {
  if (lookup.neighbor_indices.empty() || lookup.version != store.version()) {
    throw UsageError("dnd_gradients: lookup is stale or missing");
  }
  const KeyStore& keys = store.store();
  const auto m = static_cast<Index>(lookup.neighbor_indices.size());
  const double total = lookup.kernels.sum();
  DndGradients g;
  g.slots = lookup.neighbor_indices;
  g.d_query = Vector::Zero(keys.dim());
  g.d_values = upstream * lookup.weights;
  g.d_keys.resize(keys.dim(), m);
  for (Index i = 0; i < m; ++i) {
    const Index slot = g.slots[static_cast<std::size_t>(i)];
    const double k_i = lookup.kernels(i);
    // dq/dk_i = (Q_i - q) / S, dk_i/dd_i = -k_i^2, dd_i/dh = 2 (h - h_i)
    const double coeff = 2.0 * upstream * (keys.value(slot) - lookup.q_estimate) * k_i * k_i / total;
    const Vector diff = lookup.query - keys.key(slot);
    g.d_query.noalias() -= coeff * diff;
    g.d_keys.col(i) = coeff * diff;
  }
  return g;
}

// ---------------------------------------------------------------------------
// MfecTable

MfecTable::MfecTable(Index actions, Index key_dim, Index capacity, Index k)
    : k_(k), index_(static_cast<std::size_t>(actions)) {
  if (actions < 1) throw DomainError("mfec table needs at least one action");
  if (k < 1) throw DomainError("mfec k must be at least 1");
  stores_.reserve(static_cast<std::size_t>(actions));
  for (Index a = 0; a < actions; ++a) stores_.emplace_back(key_dim, capacity);
}

std::string MfecTable::bytes_of(const Eigen::Ref<const Vector>& h) {
  std::string bytes(sizeof(double) * static_cast<std::size_t>(h.size()), '\0');
  for (Index i = 0; i < h.size(); ++i) {
    const double x = h(i);
    std::memcpy(bytes.data() + sizeof(double) * static_cast<std::size_t>(i), &x, sizeof(double));
  }
  return bytes;
}

std::optional<Index> MfecTable::find(const Eigen::Ref<const Vector>& h, Index action) const {
  const auto& index = index_.at(static_cast<std::size_t>(action));
  const auto it = index.find(bytes_of(h));
  if (it == index.end()) return std::nullopt;
  return it->second;
}

void MfecTable::save(BinaryWriter& out) const {
  out.header("EPMF", kMfecVersion);
  out.pod<std::int64_t>(k_);
  out.pod<std::int64_t>(actions());
  for (const auto& s : stores_) s.save(out);
}

MfecTable MfecTable::load(BinaryReader& in) {
  in.expect_header("EPMF", kMfecVersion);
  MfecTable table;
  table.k_ = in.pod<std::int64_t>();
  const auto actions = in.pod<std::int64_t>();
  if (actions < 1) throw ValidationError("mfec snapshot has no actions");
  table.index_.resize(static_cast<std::size_t>(actions));
  for (Index a = 0; a < actions; ++a) {
    table.stores_.push_back(KeyStore::load(in));
    const KeyStore& s = table.stores_.back();
    auto& index = table.index_[static_cast<std::size_t>(a)];
    for (Index slot = 0; slot < s.size(); ++slot) index.emplace(bytes_of(s.key(slot)), slot);
  }
  return table;
}

double mfec_estimate(const MfecTable& table, const Eigen::Ref<const Vector>& h, Index action) {
  const KeyStore& store = table.store(action);
  if (store.empty()) throw EmptyStoreError();
  if (const auto hit = table.find(h, action)) return store.value(*hit);
  const std::vector<Index> nearest = knn_search(store, h, table.k());
  double sum = 0.0;
  for (const Index slot : nearest) sum += store.value(slot);
  return sum / static_cast<double>(nearest.size());
}

void mfec_update(MfecTable& table, const Eigen::Ref<const Vector>& h, Index action,
                 double episodic_return) {
  KeyStore& store = table.stores_.at(static_cast<std::size_t>(action));
  auto& index = table.index_[static_cast<std::size_t>(action)];
  std::string bytes = MfecTable::bytes_of(h);
  if (const auto it = index.find(bytes); it != index.end()) {
    const Index slot = it->second;
    store.set_value(slot, std::max(store.value(slot), episodic_return));
    store.touch(slot);
    return;
  }
  if (store.full()) index.erase(MfecTable::bytes_of(store.key(store.lru_slot())));
  const KeyStore::Insertion ins = store.insert(h, episodic_return);
  index.emplace(std::move(bytes), ins.slot);
}

double estimate_uncertainty(const MfecTable& table, const Eigen::Ref<const Vector>& h, Index action,
                            double delta, double jitter) {
  const KeyStore& store = table.store(action);
  const std::vector<Index> nearest = knn_search(store, h, table.k());
  Matrix neighbours(store.dim(), static_cast<Index>(nearest.size()));
  for (std::size_t i = 0; i < nearest.size(); ++i) {
    neighbours.col(static_cast<Index>(i)) = store.key(nearest[i]);
  }
  return std::sqrt(kernel_posterior_variance(neighbours, h, delta, jitter));
}

}  // namespace episodic
