#pragma once

// Small differentiable video classifiers. All three architectures map a
// batch [B,T,H,W,C] to logits [B,classes]:
//
//   conv3d-micro      2 x (3D conv -> relu -> 2x spatial mean-pool),
//                     global mean over T,H,W, linear head
//   conv2d-mean       same blocks with 1xkxk kernels (per-frame); the
//                     per-frame embedding is the flattened (H/4)x(W/4)xC2
//                     map, averaged over time, linear head
//   conv2d-recurrent  per-frame embedding e_t as above, then
//                     h_0 = e_0 V + b, h_t = (h_{t-1} U + e_t V + b) / 2,
//                     head on the last state

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prism/autograd.hpp"
#include "prism/tensor.hpp"

namespace prism {

enum class Architecture { kConv3dMicro, kConv2dMean, kConv2dRecurrent };

std::string_view to_string(Architecture arch);
Architecture parse_architecture(std::string_view name);

struct Geometry {
  Index frames = 8;
  Index height = 16;
  Index width = 16;
  Index channels = 3;

  Shape video_shape() const { return {frames, height, width, channels}; }
  Shape frame_shape() const { return {height, width, channels}; }
  Index frame_size() const { return height * width * channels; }
  Index video_size() const { return frames * frame_size(); }
  friend bool operator==(const Geometry&, const Geometry&) = default;
};

std::string to_string(const Geometry& g);

struct ModelSpec {
  Architecture arch = Architecture::kConv3dMicro;
  std::array<Index, 2> widths{8, 16};
  Index kernel = 3;
  int classes = 6;
  Geometry geometry;

  // Throws ConfigError on an unusable combination.
  void validate() const;
  kernels::Kernel3 kernel_extents() const;
  // Width of the pre-head embedding: widths[1] for conv3d-micro,
  // (H/4)*(W/4)*widths[1] for the per-frame architectures.
  Index embedding_size() const;
};

struct ParamInfo {
  std::string name;
  Shape shape;
  Index fan_in = 0;  // 0 marks a bias
};

std::vector<ParamInfo> param_layout(const ModelSpec& spec);

template <typename S>
struct BasicParams {
  std::vector<std::string> names;
  std::vector<BasicTensor<S>> tensors;

  std::size_t count() const { return tensors.size(); }
  Index total_size() const {
    Index n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }
  template <typename Other>
  BasicParams<Other> cast() const {
    BasicParams<Other> out{names, {}};
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<Other>());
    return out;
  }
  friend bool operator==(const BasicParams&, const BasicParams&) = default;
};

using Params = BasicParams<float>;

/// Weights ~ U(-sqrt(3/fan_in), sqrt(3/fan_in)) (unit variance scaled by
/// 1/fan_in), biases zero. Deterministic per (spec, seed).
Params init_params(const ModelSpec& spec, std::uint64_t seed);

template <typename S>
std::vector<Node<S>> bind_params(Graph<S>& graph, const BasicParams<S>& params,
                                 LeafKind kind = LeafKind::kParameter) {
  std::vector<Node<S>> nodes;
  for (const auto& t : params.tensors) nodes.push_back(graph.leaf(t, kind));
  return nodes;
}

namespace detail {

template <typename S>
Node<S> conv_block(Node<S> x, Node<S> w, Node<S> b) {
  return avg_pool2(relu(bias_add(conv3d(x, w), b)));
}

// [B,T,h,w,C] -> [B,T,C], spatial mean per frame.
template <typename S>
Node<S> spatial_mean(Node<S> x) {
  const Shape& s = x.shape();
  const Index cells = s[2] * s[3];
  return scale(sum_axis(reshape(x, Shape{s[0], s[1], cells, s[4]}), 2), 1.0 / static_cast<double>(cells));
}

}  // namespace detail

/// Pre-head embedding [B, embedding_size(spec)].
template <typename S>
Node<S> features(const ModelSpec& spec, std::span<const Node<S>> p, Node<S> batch) {
  const Geometry& g = spec.geometry;
  const Shape& s = batch.shape();
  if (s.size() != 5 || s[1] != g.frames || s[2] != g.height || s[3] != g.width || s[4] != g.channels) {
    throw ShapeError("model input " + to_string(s) + " does not match geometry " + to_string(g));
  }
  const std::size_t expected = spec.arch == Architecture::kConv2dRecurrent ? 9 : 6;
  if (p.size() != expected) throw Error("model expects " + std::to_string(expected) + " parameter tensors");

  Node<S> h = detail::conv_block(batch, p[0], p[1]);
  h = detail::conv_block(h, p[2], p[3]);
  if (spec.arch == Architecture::kConv3dMicro) {
    const Node<S> per_frame = detail::spatial_mean(h);  // [B,T,C2]
    return scale(sum_axis(per_frame, 1), 1.0 / static_cast<double>(per_frame.shape()[1]));
  }
  const Shape& hs = h.shape();
  const Index b = hs[0], frames = hs[1], c = hs[2] * hs[3] * hs[4];
  const Node<S> per_frame = reshape(h, Shape{b, frames, c});
  if (spec.arch == Architecture::kConv2dMean) {
    return scale(sum_axis(per_frame, 1), 1.0 / static_cast<double>(frames));
  }
  auto frame = [&](Index t) { return reshape(slice(per_frame, 1, t, 1), Shape{b, c}); };
  Node<S> state = bias_add(matmul(frame(0), p[5]), p[6]);
  for (Index t = 1; t < frames; ++t) {
    state = scale(add(matmul(state, p[4]), bias_add(matmul(frame(t), p[5]), p[6])), 0.5);
  }
  return state;
}

template <typename S>
Node<S> forward(const ModelSpec& spec, std::span<const Node<S>> p, Node<S> batch) {
  const std::size_t head = p.size() - 2;
  return bias_add(matmul(features(spec, p, batch), p[head]), p[head + 1]);
}

template <typename S>
Node<S> forward(const ModelSpec& spec, const std::vector<Node<S>>& p, Node<S> batch) {
  return forward(spec, std::span<const Node<S>>(p), batch);
}

// Inference helpers on a throwaway graph.
Tensor predict_logits(const ModelSpec& spec, const Params& params, const Tensor& batch);
Tensor embed(const ModelSpec& spec, const Params& params, const Tensor& batch);

// Flat "PVPM" parameter container.
std::string serialize_params(const Params& params);
Params deserialize_params(std::string_view bytes);

}  // namespace prism
