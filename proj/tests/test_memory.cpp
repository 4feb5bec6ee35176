#include "episodic/memory.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <map>
#include <random>
#include <sstream>

using namespace episodic;

namespace {

Vector random_vector(std::mt19937_64& rng, Index n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

DndConfig small_config(Index dim, Index capacity, Index k) {
  DndConfig c;
  c.key_dim = dim;
  c.capacity = capacity;
  c.k = k;
  return c;
}

std::vector<std::uint64_t> recencies(const KeyStore& s) {
  std::vector<std::uint64_t> r;
  for (Index i = 0; i < s.size(); ++i) r.push_back(s.recency(i));
  return r;
}

}  // namespace

TEST_CASE("kernel") {
  const Vector h = Vector::Constant(3, 0.25);
  CHECK(kernel(h, h, 1e-3) == doctest::Approx(1000.0).epsilon(1e-14));
  Vector a = Vector::Zero(2), b = Vector::Zero(2);
  b(0) = std::sqrt(0.999);
  CHECK(kernel(a, b, 1e-3) == doctest::Approx(1.0).epsilon(1e-12));
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const Vector x = random_vector(rng, 7), y = random_vector(rng, 7);
    CHECK(std::abs(kernel(x, y, 1e-3) - oracle::kernel_loop(x, y, 1e-3)) <= 1e-12 * oracle::kernel_loop(x, y, 1e-3));
  }
  CHECK_THROWS_AS(kernel(Vector::Zero(2), Vector::Zero(3), 1e-3), DomainError);
  CHECK_THROWS_AS(kernel(a, b, 0.0), DomainError);
}

TEST_CASE("key store insertion and LRU eviction") {
  KeyStore s(2, 3);
  CHECK(s.empty());
  for (int i = 0; i < 3; ++i) s.insert(Vector::Constant(2, i), i);
  CHECK(s.full());
  s.touch(0);  // slot 1 is now least recently used
  CHECK(s.lru_slot() == 1);
  const auto ins = s.insert(Vector::Constant(2, 9.0), 9.0);
  CHECK(ins.evicted);
  CHECK(ins.slot == 1);
  CHECK(s.size() == 3);
  CHECK(s.value(1) == 9.0);
  CHECK(s.clock() == 5);
}

TEST_CASE("knn search") {
  Dnd one(small_config(2, 10, 11));
  one.write(Vector::Constant(2, 3.0), 1.0, 0.1);
  CHECK(knn_search(one, Vector::Zero(2), 11) == std::vector<Index>{0});

  std::mt19937_64 rng(5);
  KeyStore s(4, 100);
  for (int i = 0; i < 50; ++i) s.insert(random_vector(rng, 4), i);
  const Vector probe = Vector(s.key(17));
  CHECK(knn_search(s, probe, 11).front() == 17);
  for (int t = 0; t < 20; ++t) {
    const Vector h = random_vector(rng, 4);
    CHECK(knn_search(s, h, 11) == oracle::brute_knn(Matrix(s.keys()), recencies(s), h, 11));
  }
  CHECK_THROWS_AS(knn_search(KeyStore(2, 4), Vector::Zero(2), 3), EmptyStoreError);
}

TEST_CASE("knn ties go to the older entry") {
  KeyStore s(1, 8);
  Vector k(1);
  k << 1.0;
  s.insert(k, 0.0);  // slot 0, recency 1
  k << -1.0;
  s.insert(k, 0.0);  // slot 1, recency 2
  s.touch(0);        // slot 0 now newer
  CHECK(knn_search(s, Vector::Zero(1), 1) == std::vector<Index>{1});
}

TEST_CASE("knn exactness on randomized stores") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size(1, 500), dim(1, 8), kk(1, 20), coarse(0, 3);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index d = dim(rng), n = size(rng), k = kk(rng);
    KeyStore s(d, n);
    // Coarse integer keys force plenty of exact distance ties.
    for (Index i = 0; i < n; ++i) {
      Vector key(d);
      for (Index j = 0; j < d; ++j) key(j) = coarse(rng);
      s.insert(key, 0.0);
      if (i % 7 == 3) s.touch(i / 2);
    }
    Vector h(d);
    for (Index j = 0; j < d; ++j) h(j) = coarse(rng);
    REQUIRE(knn_search(s, h, k) == oracle::brute_knn(Matrix(s.keys()), recencies(s), h, k));
  }
}

TEST_CASE("dnd lookup") {
  Dnd single(small_config(3, 10, 11));
  single.write(Vector::Constant(3, 4.0), 7.5, 0.1);
  CHECK(dnd_lookup(single, Vector::Zero(3)).q_estimate == doctest::Approx(7.5));

  Dnd pair(small_config(1, 10, 11));
  Vector k(1);
  k << 1.0;
  pair.write(k, 2.0, 0.1);
  k << -1.0;
  pair.write(k, 6.0, 0.1);
  CHECK(dnd_lookup(pair, Vector::Zero(1)).q_estimate == doctest::Approx(4.0));

  std::mt19937_64 rng(8);
  Dnd d(small_config(5, 100, 11));
  for (int i = 0; i < 20; ++i) d.write(random_vector(rng, 5), static_cast<double>(i), 0.1);
  for (int t = 0; t < 10; ++t) {
    const Vector h = random_vector(rng, 5);
    const LookupResult r = dnd_lookup(d, h);
    const std::vector<Index> nn = oracle::brute_knn(Matrix(d.store().keys()), recencies(d.store()), h, 11);
    Matrix keys(5, 11);
    Vector vals(11);
    for (std::size_t i = 0; i < nn.size(); ++i) {
      keys.col(static_cast<Index>(i)) = d.store().key(nn[i]);
      vals(static_cast<Index>(i)) = d.store().value(nn[i]);
    }
    CHECK(r.neighbor_indices.size() == 11);
    CHECK(std::abs(r.q_estimate - oracle::weighted_estimate(keys, vals, h, 1e-3)) <= 1e-10);
    CHECK(std::abs(r.weights.sum() - 1.0) <= 1e-10);
    CHECK((r.weights.array() > 0.0).all());
    CHECK(r.q_estimate >= vals.minCoeff());
    CHECK(r.q_estimate <= vals.maxCoeff());
  }
  CHECK_THROWS_AS(dnd_lookup(Dnd(small_config(2, 4, 3)), Vector::Zero(2)), EmptyStoreError);
}

TEST_CASE("dnd write") {
  Dnd d(small_config(2, 150, 11));
  const Vector h = Vector::Constant(2, 0.5);
  d.write(h, 0.0, 0.1);
  dnd_write(d, h, 10.0, 0.1, 1e-9);
  CHECK(d.size() == 1);
  CHECK(d.store().value(0) == doctest::Approx(1.0).epsilon(1e-15));
  dnd_write(d, h, -3.0, 1.0, 1e-9);
  CHECK(d.store().value(0) == -3.0);

  // Capacity 150: inserting a novel key evicts the oldest-recency entry.
  Dnd full(small_config(1, 150, 11));
  Vector k(1);
  for (int i = 0; i < 150; ++i) {
    k << i;
    full.write(k, i, 0.1);
  }
  std::uint64_t oldest = full.store().recency(0);
  Index victim = 0;
  for (Index i = 1; i < 150; ++i) {
    if (full.store().recency(i) < oldest) {
      oldest = full.store().recency(i);
      victim = i;
    }
  }
  const Vector victim_key = full.store().key(victim);
  k << 1000.0;
  full.write(k, 1.0, 0.1);
  CHECK(full.size() == 150);
  bool gone = true;
  for (Index i = 0; i < 150; ++i) gone = gone && full.store().key(i)(0) != victim_key(0);
  CHECK(gone);
}

TEST_CASE("capacity and eviction follow a shadow reference") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> pick(0, 29), op(0, 2);
  KeyStore s(1, 10);
  std::map<int, std::uint64_t> shadow;  // key -> recency
  std::map<int, Index> slot_of;
  std::uint64_t clock = 0;
  for (int step = 0; step < 2000; ++step) {
    const int key = pick(rng);
    if (op(rng) == 0 && slot_of.count(key)) {
      s.touch(slot_of[key]);
      shadow[key] = ++clock;
      continue;
    }
    if (slot_of.count(key)) continue;
    if (static_cast<Index>(shadow.size()) == s.capacity()) {
      auto victim = std::min_element(shadow.begin(), shadow.end(),
                                     [](const auto& a, const auto& b) { return a.second < b.second; });
      const Index expected_slot = slot_of[victim->first];
      CHECK(s.lru_slot() == expected_slot);
      slot_of.erase(victim->first);
      shadow.erase(victim);
    }
    Vector v(1);
    v << key;
    slot_of[key] = s.insert(v, 0.0).slot;
    shadow[key] = ++clock;
    CHECK(s.size() <= s.capacity());
    CHECK(s.size() == static_cast<Index>(shadow.size()));
  }
}

TEST_CASE("mfec estimate and update") {
  MfecTable t(2, 1, 150, 11);
  Vector k(1);
  k << 0.25;
  mfec_update(t, k, 0, 7.0);
  CHECK(mfec_estimate(t, k, 0) == 7.0);
  mfec_update(t, k, 0, 3.0);
  CHECK(mfec_estimate(t, k, 0) == 7.0);
  mfec_update(t, k, 0, 9.0);
  CHECK(mfec_estimate(t, k, 0) == 9.0);
  CHECK(t.size(1) == 0);
  CHECK_THROWS_AS(mfec_estimate(t, k, 1), EmptyStoreError);

  MfecTable same(1, 1, 150, 11);
  for (int i = 0; i < 11; ++i) {
    k << i;
    mfec_update(same, k, 0, 3.0);
  }
  k << 100.0;
  CHECK(mfec_estimate(same, k, 0) == 3.0);

  MfecTable ramp(1, 1, 150, 11);
  for (int i = 1; i <= 20; ++i) {
    k << i;
    mfec_update(ramp, k, 0, i <= 11 ? i : 100.0 + i);
  }
  k << -5.0;  // nearest 11 keys are 1..11
  CHECK(mfec_estimate(ramp, k, 0) == doctest::Approx(6.0).epsilon(1e-15));

  MfecTable cap(1, 1, 150, 11);
  for (int i = 0; i < 151; ++i) {
    k << i;
    mfec_update(cap, k, 0, 1.0);
  }
  CHECK(cap.size(0) == 150);
  k << 0.0;
  CHECK_FALSE(cap.find(k, 0).has_value());
  k << 150.0;
  CHECK(cap.find(k, 0).has_value());
}

TEST_CASE("mfec stored returns never decrease") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> key(0, 9);
  std::normal_distribution<double> ret(0.0, 10.0);
  MfecTable t(1, 1, 100, 3);
  std::map<int, double> best;
  for (int i = 0; i < 500; ++i) {
    const int kx = key(rng);
    const double r = ret(rng);
    Vector k(1);
    k << kx;
    mfec_update(t, k, 0, r);
    best[kx] = best.count(kx) ? std::max(best[kx], r) : r;
    CHECK(mfec_estimate(t, k, 0) == best[kx]);
  }
}

TEST_CASE("mfec estimate matches brute force on random tables") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    MfecTable t(1, 3, 200, 11);
    for (int i = 0; i < 60; ++i) mfec_update(t, random_vector(rng, 3), 0, random_vector(rng, 1)(0));
    const Vector h = random_vector(rng, 3);
    const KeyStore& s = t.store(0);
    const std::vector<Index> nn = oracle::brute_knn(Matrix(s.keys()), recencies(s), h, 11);
    double mean = 0.0;
    for (Index i : nn) mean += s.value(i);
    mean /= static_cast<double>(nn.size());
    CHECK(std::abs(mfec_estimate(t, h, 0) - mean) <= 1e-10);
  }
}

TEST_CASE("uncertainty estimate") {
  Dnd d(small_config(2, 10, 11));
  const Vector h = Vector::Constant(2, 1.0);
  d.write(h, 0.0, 0.1);
  CHECK(estimate_uncertainty(d, h) <= 1e-3);
  CHECK(dnd_lookup(d, h).variance <= 1e-3);

  Dnd far(small_config(1, 10, 11));
  Vector k(1);
  k << 1.0;
  far.write(k, 0.0, 0.1);
  const double delta = 1e-3;
  const double kv = 1.0 / (1.0 + delta);
  const double expected = 1.0 / delta - kv * kv / (1.0 / delta + 1e-6);
  CHECK(dnd_lookup(far, Vector::Zero(1)).variance == doctest::Approx(expected).epsilon(1e-10));

  std::mt19937_64 rng(6);
  for (int i = 0; i < 1000; ++i) {
    Dnd r(small_config(3, 30, 5));
    const int n = 1 + i % 12;
    for (int j = 0; j < n; ++j) r.write(random_vector(rng, 3, 0.1), 0.0, 0.1);
    CHECK(estimate_uncertainty(r, random_vector(rng, 3, 0.1)) >= 0.0);
  }

  MfecTable t(1, 1, 10, 11);
  mfec_update(t, k, 0, 1.0);
  CHECK(estimate_uncertainty(t, Vector::Zero(1), 0, delta) == doctest::Approx(std::sqrt(expected)).epsilon(1e-10));
}

TEST_CASE("dnd gradients") {
  Dnd one(small_config(2, 10, 11));
  one.write(Vector::Constant(2, 1.0), 4.0, 0.1);
  const LookupResult r1 = dnd_lookup(one, Vector::Zero(2));
  const DndGradients g1 = dnd_gradients(one, r1, 0.7);
  CHECK(g1.d_values(0) == doctest::Approx(0.7));
  CHECK(g1.d_query.norm() <= 1e-12);

  std::mt19937_64 rng(12);
  Dnd flat(small_config(3, 10, 11));
  for (int i = 0; i < 5; ++i) flat.write(random_vector(rng, 3), 2.0, 0.1);
  const DndGradients gf = dnd_gradients(flat, dnd_lookup(flat, random_vector(rng, 3)), 1.0);
  CHECK(gf.d_query.norm() <= 1e-9);

  for (int trial = 0; trial < 100; ++trial) {
    Dnd d(small_config(4, 10, 5));
    for (int i = 0; i < 5; ++i) d.write(random_vector(rng, 4, 0.5), random_vector(rng, 1)(0), 0.1);
    const Vector h = random_vector(rng, 4, 0.5);
    const double up = 1.3;
    const LookupResult r = dnd_lookup(d, h);
    const DndGradients g = dnd_gradients(d, r, up);
    const double eps = 1e-5;
    auto rel_ok = [](double a, double b) {
      return std::abs(a - b) <= 1e-4 * std::max(std::abs(a), std::abs(b)) || std::abs(a - b) <= 1e-8;
    };
    // Finite differences with the neighbour set held fixed.
    Matrix keys(4, 5);
    Vector vals(5);
    for (Index i = 0; i < 5; ++i) {
      keys.col(i) = d.store().key(g.slots[static_cast<std::size_t>(i)]);
      vals(i) = d.store().value(g.slots[static_cast<std::size_t>(i)]);
    }
    for (Index j = 0; j < 4; ++j) {
      Vector hp = h, hm = h;
      hp(j) += eps;
      hm(j) -= eps;
      const double fd = up * (oracle::weighted_estimate(keys, vals, hp, 1e-3) -
                              oracle::weighted_estimate(keys, vals, hm, 1e-3)) / (2 * eps);
      CHECK(rel_ok(g.d_query(j), fd));
    }
    for (Index i = 0; i < 5; ++i) {
      Vector vp = vals, vm = vals;
      vp(i) += eps;
      vm(i) -= eps;
      const double fdv = up * (oracle::weighted_estimate(keys, vp, h, 1e-3) -
                               oracle::weighted_estimate(keys, vm, h, 1e-3)) / (2 * eps);
      CHECK(rel_ok(g.d_values(i), fdv));
      for (Index j = 0; j < 4; ++j) {
        Matrix kp = keys, km = keys;
        kp(j, i) += eps;
        km(j, i) -= eps;
        const double fdk = up * (oracle::weighted_estimate(kp, vals, h, 1e-3) -
                                 oracle::weighted_estimate(km, vals, h, 1e-3)) / (2 * eps);
        CHECK(rel_ok(g.d_keys(j, i), fdk));
      }
    }
  }
}

TEST_CASE("stale lookups are rejected") {
  Dnd d(small_config(2, 10, 11));
  d.write(Vector::Zero(2), 1.0, 0.1);
  const LookupResult r = dnd_lookup(d, Vector::Ones(2));
  d.write(Vector::Ones(2), 2.0, 0.1);
  CHECK_THROWS_AS(dnd_gradients(d, r, 1.0), UsageError);
}

TEST_CASE("store snapshots round-trip") {
  std::mt19937_64 rng(2);
  Dnd d(small_config(3, 8, 4));
  for (int i = 0; i < 12; ++i) d.write(random_vector(rng, 3), i, 0.1);
  std::stringstream buf;
  BinaryWriter w(buf);
  d.save(w);
  BinaryReader r(buf);
  const Dnd back = Dnd::load(r);
  for (int t = 0; t < 10; ++t) {
    const Vector h = random_vector(rng, 3);
    CHECK(dnd_lookup(back, h).q_estimate == dnd_lookup(d, h).q_estimate);
  }
  CHECK(back.store().clock() == d.store().clock());

  MfecTable t(2, 2, 5, 3);
  for (int i = 0; i < 9; ++i) mfec_update(t, random_vector(rng, 2), i % 2, i);
  std::stringstream tb;
  BinaryWriter tw(tb);
  t.save(tw);
  const std::string bytes = tb.str();
  BinaryReader tr(tb);
  const MfecTable t2 = MfecTable::load(tr);
  std::stringstream again;
  BinaryWriter aw(again);
  t2.save(aw);
  CHECK(again.str() == bytes);

  std::stringstream junk("XXXX");
  BinaryReader jr(junk);
  CHECK_THROWS_AS(Dnd::load(jr), ValidationError);
}
