#pragma once

// Observation-to-key mappings and the pieces NEC needs to train its encoder:
// a fixed Gaussian random projection, a small fully connected network with
// analytic backpropagation, RMSprop, and a cyclic replay buffer.

#include "episodic/serialize.hpp"
#include "episodic/types.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace episodic {

using EmbeddingKey = Vector;

/// Fixed linear map with i.i.d. N(0, 1/out_dim) entries.
class GaussianProjection {
 public:
  GaussianProjection(Index in_dim, Index out_dim, std::uint64_t seed);

  Index in_dim() const { return matrix_.cols(); }
  Index out_dim() const { return matrix_.rows(); }
  std::uint64_t seed() const { return seed_; }
  const Matrix& matrix() const { return matrix_; }

 private:
  Matrix matrix_;
  std::uint64_t seed_;
};

EmbeddingKey project(const GaussianProjection& p, const Eigen::Ref<const Vector>& obs);

enum class Activation { kRelu, kIdentity };

/// Fully connected network; hidden layers share one activation and the
/// output layer is linear. All weights and biases live in one flat vector so
/// optimizers and gradient checks can treat them uniformly.
class FeedforwardEncoder {
 public:
  FeedforwardEncoder() = default;

  /// widths = {input, hidden..., output}. Weights are drawn uniformly from
  /// +-sqrt(6 / (fan_in + fan_out)); biases start at zero.
  FeedforwardEncoder(std::vector<Index> widths, Activation hidden, std::uint64_t seed);

  static FeedforwardEncoder zeros(std::vector<Index> widths, Activation hidden);

  Index input_dim() const { return widths_.front(); }
  Index output_dim() const { return widths_.back(); }
  Index layer_count() const { return static_cast<Index>(widths_.size()) - 1; }
  Index parameter_count() const { return params_.size(); }
  const std::vector<Index>& widths() const { return widths_; }
  Activation activation() const { return hidden_; }

  const Vector& parameters() const { return params_; }
  /// Mutable access drops any cached forward pass.
  Vector& parameters() {
    cache_.reset();
    return params_;
  }

  Eigen::Map<const Matrix> weight(Index layer) const;
  Eigen::Map<const Vector> bias(Index layer) const;

  /// Forward pass without caching.
  EmbeddingKey forward(const Eigen::Ref<const Vector>& obs) const;

  /// Forward pass that records activations for the next backward().
  EmbeddingKey encode(const Eigen::Ref<const Vector>& obs);

  /// Gradient of the loss with respect to every parameter, given dL/dkey
  /// for the most recent encode(). Consumes the cached pass.
  Vector backward(const Eigen::Ref<const Vector>& d_key);

  void save(BinaryWriter& out) const;
  static FeedforwardEncoder load(BinaryReader& in);

 private:
  struct Cache {
    std::vector<Vector> inputs;  // input to each layer
    std::vector<Vector> pre;     // pre-activation of each layer
  };

  void layout();
  Index weight_offset(Index layer) const { return offsets_[static_cast<std::size_t>(layer)]; }
  Vector run(const Eigen::Ref<const Vector>& obs, Cache* cache) const;

  std::vector<Index> widths_;
  std::vector<Index> offsets_;
  Activation hidden_ = Activation::kRelu;
  Vector params_;
  std::optional<Cache> cache_;
};

EmbeddingKey encode(FeedforwardEncoder& enc, const Eigen::Ref<const Vector>& obs);
Vector backward(FeedforwardEncoder& enc, const Eigen::Ref<const Vector>& d_key);

struct RmspropConfig {
  double learning_rate = 7.92e-6;
  double decay = 0.95;  // squared-gradient decay
  double epsilon = 1e-2;
  double momentum = 0.0;  // heavy-ball term; 0 disables the buffer
};

struct RmspropState {
  RmspropState() = default;
  RmspropState(Index size, const RmspropConfig& config)
      : config(config), accumulator(Vector::Zero(size)), momentum_buffer(Vector::Zero(size)) {}

  RmspropConfig config;
  Vector accumulator;
  Vector momentum_buffer;
};

/// acc <- decay acc + (1 - decay) g^2; step = lr g / sqrt(acc + eps).
void rmsprop_step(RmspropState& state, Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& grads);

void save(BinaryWriter& out, const RmspropState& state);
RmspropState load_rmsprop(BinaryReader& in);

/// Scales the gradients in place so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_global_norm(const std::vector<Eigen::Ref<Vector>>& grads, double max_norm);

struct ReplayItem {
  Vector observation;
  Index action = 0;
  double target = 0.0;
};

/// Cyclic buffer of (observation, action, n-step return) tuples.
class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  explicit ReplayBuffer(Index capacity);

  Index capacity() const { return capacity_; }
  Index size() const { return static_cast<Index>(items_.size()); }
  bool empty() const { return items_.empty(); }

  void push(ReplayItem item);

  /// i = 0 is the oldest surviving entry.
  const ReplayItem& at(Index i) const;

  void save(BinaryWriter& out) const;
  static ReplayBuffer load(BinaryReader& in);

 private:
  Index capacity_ = 0;
  Index cursor_ = 0;  // next slot to overwrite once full
  std::vector<ReplayItem> items_;
};

/// Uniform sampling with replacement.
std::vector<ReplayItem> replay_sample(const ReplayBuffer& buf, Index batch, std::mt19937_64& rng);

}  // namespace episodic
