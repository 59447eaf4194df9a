#pragma once

#include <deque>

#include "seer/layers.hpp"

namespace seer {

// Bounded FIFO of the most recent cell states, newest last.
template <typename T>
class StateQueue {
 public:
  explicit StateQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("StateQueue capacity must be positive");
  }

  void push(BasicTensor<T> state) {
    if (entries_.size() == capacity_) entries_.pop_front();
    entries_.push_back(std::move(state));
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  const BasicTensor<T>& entry(std::size_t i) const { return entries_[i]; }

 private:
  std::size_t capacity_;
  std::deque<BasicTensor<T>> entries_;
};

template <typename T>
struct SpatialFilterParams {
  BasicTensor<T> kernel;  // [1, 2, k, k]
  BasicTensor<T> bias;    // [1]

  SpatialFilterParams() = default;

  SpatialFilterParams(std::size_t k, Rng& rng) {
    if (k % 2 == 0) throw ConfigError("spatial filter kernel size must be odd");
    const double bound = std::sqrt(6.0 / static_cast<double>(2 * k * k + k * k));
    std::vector<T> w(2 * k * k);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    kernel = BasicTensor<T>({1, 2, k, k}, std::move(w));
    bias = BasicTensor<T>({1});
    kernel.set_tracked();
    bias.set_tracked();
  }

  std::size_t kernel_size() const { return kernel.extent(2); }
  int padding() const { return static_cast<int>((kernel_size() - 1) / 2); }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".kernel", kernel);
    fn(prefix + ".bias", bias);
  }
};

// sigmoid(theta * [max-pool, mean-pool] + bias); a (0,1) relevance map.
template <typename T>
BasicTensor<T> spatial_filter(const BasicTensor<T>& x, const SpatialFilterParams<T>& p) {
  auto pooled = concat0<T>({max_pool_channels(x), mean_pool_channels(x)});
  return sigmoid(conv2d(pooled, p.kernel, p.bias, p.padding()));
}

template <typename T>
struct HorstCellParams {
  std::size_t order = 4;  // queue capacity
  std::size_t dim = 32;   // state channels
  Conv2dLayer<T> proj_q, proj_k, proj_v, proj_out;  // 1x1 convs, dim -> dim
  SpatialFilterParams<T> filter;

  HorstCellParams() = default;

  HorstCellParams(std::size_t order, std::size_t dim, std::size_t filter_k, Rng& rng)
      : order(order),
        dim(dim),
        proj_q(dim, dim, 1, 0, 1, rng),
        proj_k(dim, dim, 1, 0, 1, rng),
        proj_v(dim, dim, 1, 0, 1, rng),
        proj_out(dim, dim, 1, 0, 1, rng),
        filter(filter_k, rng) {}

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    proj_q.visit(prefix + ".q", fn);
    proj_k.visit(prefix + ".k", fn);
    proj_v.visit(prefix + ".v", fn);
    proj_out.visit(prefix + ".out", fn);
    filter.visit(prefix + ".filter", fn);
  }
};

// Space-time decomposition attention: scalar temporal weights over the queued
// states (softmax of pooled query/key similarities) combined with per-state
// spatial masks from the shared filter.
template <typename T>
BasicTensor<T> st_attention(const BasicTensor<T>& query, const StateQueue<T>& queue,
                            const HorstCellParams<T>& p) {
  if (queue.empty()) throw ContractError("st_attention: state queue is empty");
  if (query.rank() != 3 || query.extent(0) != p.dim)
    throw DimensionError("st_attention: query " + shape_str(query.shape()) + " for dim " + std::to_string(p.dim));

  auto q_pooled = global_avg_pool(p.proj_q.apply(query));
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(p.dim));

  std::vector<BasicTensor<T>> keys, vals, logits;
  for (std::size_t i = 0; i < queue.size(); ++i) {
    auto k = p.proj_k.apply(queue.entry(i));
    auto v = p.proj_v.apply(queue.entry(i));
    logits.push_back(affine(dot(q_pooled, global_avg_pool(k)), inv_sqrt_d, T(0)));
    keys.push_back(std::move(k));
    vals.push_back(std::move(v));
  }
  auto weights = softmax(stack_scalars(logits), 0);

  BasicTensor<T> mix;
  for (std::size_t i = 0; i < queue.size(); ++i) {
    auto gated = mul_mask(vals[i], spatial_filter(keys[i], p.filter));
    auto term = mul_scalar(gated, index1d(weights, i));
    mix = (i == 0) ? term : add(mix, term);
  }
  return p.proj_out.apply(mix);
}

// One recurrent step. An empty queue is seeded with the input; the new state
// (residual over the input) is pushed, evicting the oldest at capacity.
template <typename T>
BasicTensor<T> horst_step(const BasicTensor<T>& x, StateQueue<T>& queue, const HorstCellParams<T>& p) {
  if (x.rank() != 3 || x.extent(0) != p.dim)
    throw DimensionError("horst_step: input " + shape_str(x.shape()) + " for dim " + std::to_string(p.dim));
  if (queue.empty()) queue.push(x);
  auto h = add(x, st_attention(x, queue, p));
  queue.push(h);
  return h;
}

// 1-D cell variant: dense projections instead of convolutions and no spatial
// branch, for modalities that arrive as frame vectors.
template <typename T>
struct Horst1dParams {
  std::size_t order = 4;
  std::size_t dim = 0;
  Dense<T> proj_q, proj_k, proj_v, proj_out;

  Horst1dParams() = default;

  Horst1dParams(std::size_t order, std::size_t dim, Rng& rng)
      : order(order),
        dim(dim),
        proj_q(dim, dim, rng),
        proj_k(dim, dim, rng),
        proj_v(dim, dim, rng),
        proj_out(dim, dim, rng) {}

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    proj_q.visit(prefix + ".q", fn);
    proj_k.visit(prefix + ".k", fn);
    proj_v.visit(prefix + ".v", fn);
    proj_out.visit(prefix + ".out", fn);
  }
};

template <typename T>
BasicTensor<T> st_attention_1d(const BasicTensor<T>& query, const StateQueue<T>& queue,
                               const Horst1dParams<T>& p) {
  if (queue.empty()) throw ContractError("st_attention_1d: state queue is empty");
  auto q = p.proj_q.apply(query);
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(p.dim));

  std::vector<BasicTensor<T>> vals, logits;
  for (std::size_t i = 0; i < queue.size(); ++i) {
    logits.push_back(affine(dot(q, p.proj_k.apply(queue.entry(i))), inv_sqrt_d, T(0)));
    vals.push_back(p.proj_v.apply(queue.entry(i)));
  }
  auto weights = softmax(stack_scalars(logits), 0);

  BasicTensor<T> mix;
  for (std::size_t i = 0; i < queue.size(); ++i) {
    auto term = mul_scalar(vals[i], index1d(weights, i));
    mix = (i == 0) ? term : add(mix, term);
  }
  return p.proj_out.apply(mix);
}

template <typename T>
BasicTensor<T> horst_step_1d(const BasicTensor<T>& x, StateQueue<T>& queue, const Horst1dParams<T>& p) {
  if (x.rank() != 1 || x.extent(0) != p.dim)
    throw DimensionError("horst_step_1d: input " + shape_str(x.shape()) + " for dim " + std::to_string(p.dim));
  if (queue.empty()) queue.push(x);
  auto h = add(x, st_attention_1d(x, queue, p));
  queue.push(h);
  return h;
}

}  // namespace seer
