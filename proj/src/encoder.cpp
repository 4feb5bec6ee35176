#include "episodic/encoder.hpp"

#include <cmath>
#include <utility>

namespace episodic {

namespace {

constexpr std::uint32_t kEncoderVersion = 1;
constexpr std::uint32_t kRmspropVersion = 1;
constexpr std::uint32_t kReplayVersion = 1;

}  // namespace

GaussianProjection::GaussianProjection(Index in_dim, Index out_dim, std::uint64_t seed)
    : matrix_(out_dim, in_dim), seed_(seed) {
  if (in_dim < 1 || out_dim < 1) throw DomainError("projection needs positive dimensions");
  std::mt19937_64 rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(out_dim));
  std::normal_distribution<double> normal(0.0, stddev);
  for (Index j = 0; j < in_dim; ++j) {
    for (Index i = 0; i < out_dim; ++i) matrix_(i, j) = normal(rng);
  }
}

EmbeddingKey project(const GaussianProjection& p, const Eigen::Ref<const Vector>& obs) {
  if (obs.size() != p.in_dim()) throw DomainError("projection input dimension mismatch");
  return p.matrix() * obs;
}

// ---------------------------------------------------------------------------
// FeedforwardEncoder

FeedforwardEncoder::FeedforwardEncoder(std::vector<Index> widths, Activation hidden, std::uint64_t seed)
    : widths_(std::move(widths)), hidden_(hidden) {
  layout();
  std::mt19937_64 rng(seed);
  params_.setZero();
  for (Index l = 0; l < layer_count(); ++l) {
    const Index fan_in = widths_[static_cast<std::size_t>(l)];
    const Index fan_out = widths_[static_cast<std::size_t>(l + 1)];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    for (Index i = 0; i < fan_in * fan_out; ++i) params_(weight_offset(l) + i) = uniform(rng);
  }
}

FeedforwardEncoder FeedforwardEncoder::zeros(std::vector<Index> widths, Activation hidden) {
  FeedforwardEncoder enc;
  enc.widths_ = std::move(widths);
  enc.hidden_ = hidden;
  enc.layout();
  enc.params_.setZero();
  return enc;
}

void FeedforwardEncoder::layout() {
  if (widths_.size() < 2) throw DomainError("encoder needs at least input and output widths");
  for (const Index w : widths_) {
    if (w < 1) throw DomainError("encoder layer widths must be positive");
  }
  offsets_.clear();
  Index offset = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    offsets_.push_back(offset);
    offset += widths_[l] * widths_[l + 1] + widths_[l + 1];
  }
  params_.resize(offset);
}

Eigen::Map<const Matrix> FeedforwardEncoder::weight(Index layer) const {
  const Index rows = widths_[static_cast<std::size_t>(layer + 1)];
  const Index cols = widths_[static_cast<std::size_t>(layer)];
  return {params_.data() + weight_offset(layer), rows, cols};
}

Eigen::Map<const Vector> FeedforwardEncoder::bias(Index layer) const {
  const Index rows = widths_[static_cast<std::size_t>(layer + 1)];
  const Index cols = widths_[static_cast<std::size_t>(layer)];
  return {params_.data() + weight_offset(layer) + rows * cols, rows};
}

Vector FeedforwardEncoder::run(const Eigen::Ref<const Vector>& obs, Cache* cache) const {
  if (obs.size() != input_dim()) throw DomainError("encoder input dimension mismatch");
  Vector x = obs;
  for (Index l = 0; l < layer_count(); ++l) {
    Vector z = weight(l) * x + bias(l);
    if (cache != nullptr) {
      cache->inputs.push_back(std::move(x));
      cache->pre.push_back(z);
    }
    if (l + 1 < layer_count() && hidden_ == Activation::kRelu) z = z.cwiseMax(0.0);
    x = std::move(z);
  }
  return x;
}

EmbeddingKey FeedforwardEncoder::forward(const Eigen::Ref<const Vector>& obs) const {
  return run(obs, nullptr);
}

EmbeddingKey FeedforwardEncoder::encode(const Eigen::Ref<const Vector>& obs) {
  Cache cache;
  Vector out = run(obs, &cache);
  cache_ = std::move(cache);
  return out;
}

Vector FeedforwardEncoder::backward(const Eigen::Ref<const Vector>& d_key) {
  if (!cache_) throw UsageError("encoder backward called without a cached forward pass");
  if (d_key.size() != output_dim()) throw DomainError("encoder output gradient dimension mismatch");
  const Cache cache = std::move(*cache_);
  cache_.reset();

  Vector grad = Vector::Zero(parameter_count());
  Vector delta = d_key;
  for (Index l = layer_count() - 1; l >= 0; --l) {
    const Index rows = widths_[static_cast<std::size_t>(l + 1)];
    const Index cols = widths_[static_cast<std::size_t>(l)];
    const Vector& input = cache.inputs[static_cast<std::size_t>(l)];
    Eigen::Map<Matrix>(grad.data() + weight_offset(l), rows, cols).noalias() = delta * input.transpose();
    Eigen::Map<Vector>(grad.data() + weight_offset(l) + rows * cols, rows) = delta;
    if (l == 0) break;
    Vector upstream = weight(l).transpose() * delta;
    if (hidden_ == Activation::kRelu) {
      const Vector& pre = cache.pre[static_cast<std::size_t>(l - 1)];
      upstream = (pre.array() > 0.0).select(upstream, 0.0);
    }
    delta = std::move(upstream);
  }
  return grad;
}

void FeedforwardEncoder::save(BinaryWriter& out) const {
  out.header("EPFF", kEncoderVersion);
  std::vector<std::int64_t> widths(widths_.begin(), widths_.end());
  out.pods(widths);
  out.pod<std::int32_t>(hidden_ == Activation::kRelu ? 0 : 1);
  out.dense(params_);
}

FeedforwardEncoder FeedforwardEncoder::load(BinaryReader& in) {
  in.expect_header("EPFF", kEncoderVersion);
  const auto widths = in.pods<std::int64_t>();
  const auto act = in.pod<std::int32_t>();
  FeedforwardEncoder enc = zeros(std::vector<Index>(widths.begin(), widths.end()),
                                 act == 0 ? Activation::kRelu : Activation::kIdentity);
  Vector params = in.vector();
  if (params.size() != enc.parameter_count()) throw ValidationError("encoder snapshot parameter count");
  enc.params_ = std::move(params);
  return enc;
}

EmbeddingKey encode(FeedforwardEncoder& enc, const Eigen::Ref<const Vector>& obs) {
  return enc.encode(obs);
}

Vector backward(FeedforwardEncoder& enc, const Eigen::Ref<const Vector>& d_key) {
  return enc.backward(d_key);
}

// ---------------------------------------------------------------------------
// RMSprop

void rmsprop_step(RmspropState& state, Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& grads) {
  if (params.size() != grads.size() || state.accumulator.size() != params.size()) {
    throw DomainError("rmsprop: parameter, gradient and state sizes differ");
  }
  const RmspropConfig& c = state.config;
  state.accumulator = c.decay * state.accumulator + (1.0 - c.decay) * grads.cwiseAbs2();
  const Vector step =
      (c.learning_rate * grads.array() / (state.accumulator.array() + c.epsilon).sqrt()).matrix();
  if (c.momentum > 0.0) {
    state.momentum_buffer = c.momentum * state.momentum_buffer + step;
    params -= state.momentum_buffer;
  } else {
    params -= step;
  }
}

void save(BinaryWriter& out, const RmspropState& state) {
  out.header("EPRM", kRmspropVersion);
  out.pod(state.config.learning_rate);
  out.pod(state.config.decay);
  out.pod(state.config.epsilon);
  out.pod(state.config.momentum);
  out.dense(state.accumulator);
  out.dense(state.momentum_buffer);
}

RmspropState load_rmsprop(BinaryReader& in) {
  in.expect_header("EPRM", kRmspropVersion);
  RmspropState state;
  state.config.learning_rate = in.pod<double>();
  state.config.decay = in.pod<double>();
  state.config.epsilon = in.pod<double>();
  state.config.momentum = in.pod<double>();
  state.accumulator = in.vector();
  state.momentum_buffer = in.vector();
  return state;
}

double clip_global_norm(const std::vector<Eigen::Ref<Vector>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto g : grads) g *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// ReplayBuffer

ReplayBuffer::ReplayBuffer(Index capacity) : capacity_(capacity) {
  if (capacity < 1) throw DomainError("replay capacity must be positive");
  items_.reserve(static_cast<std::size_t>(std::min<Index>(capacity, 1 << 16)));
}

void ReplayBuffer::push(ReplayItem item) {
  if (size() < capacity_) {
    items_.push_back(std::move(item));
    return;
  }
  items_[static_cast<std::size_t>(cursor_)] = std::move(item);
  cursor_ = (cursor_ + 1) % capacity_;
}

const ReplayItem& ReplayBuffer::at(Index i) const {
  if (i < 0 || i >= size()) throw DomainError("replay index out of range");
  const Index physical = size() < capacity_ ? i : (cursor_ + i) % capacity_;
  return items_[static_cast<std::size_t>(physical)];
}

void ReplayBuffer::save(BinaryWriter& out) const {
  out.header("EPRB", kReplayVersion);
  out.pod<std::int64_t>(capacity_);
  out.pod<std::int64_t>(size());
  for (Index i = 0; i < size(); ++i) {
    const ReplayItem& item = at(i);
    out.dense(item.observation);
    out.pod<std::int64_t>(item.action);
    out.pod<double>(item.target);
  }
}

ReplayBuffer ReplayBuffer::load(BinaryReader& in) {
  in.expect_header("EPRB", kReplayVersion);
  ReplayBuffer buf(in.pod<std::int64_t>());
  const auto n = in.pod<std::int64_t>();
  for (Index i = 0; i < n; ++i) {
    ReplayItem item;
    item.observation = in.vector();
    item.action = in.pod<std::int64_t>();
    item.target = in.pod<double>();
    buf.push(std::move(item));
  }
  return buf;
}

std::vector<ReplayItem> replay_sample(const ReplayBuffer& buf, Index batch, std::mt19937_64& rng) {
  if (buf.empty()) throw EmptyStoreError();
  std::uniform_int_distribution<Index> pick(0, buf.size() - 1);
  std::vector<ReplayItem> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (Index i = 0; i < batch; ++i) out.push_back(buf.at(pick(rng)));
  return out;
}

}  // namespace episodic
