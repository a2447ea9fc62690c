#pragma once

// Sparse key-frame video condensation by per-class gradient matching with
// gradient-guided key-frame insertion.
//
// Each synthetic video stores a few key frames at explicit time indices;
// the frames between two keys are linear blends of them. Key frames are
// trained so that the parameter gradient a freshly initialized matching
// network sees on the synthetic batch of each class matches the one it sees
// on real videos of that class. Periodically, every interpolated position
// is probed: if its gradient points against the gradients of both flanking
// keys, no update of those keys can lower the loss there, and the position
// becomes a key itself.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prism/autograd.hpp"
#include "prism/model_zoo.hpp"
#include "prism/random.hpp"
#include "prism/videogen.hpp"

namespace prism {

struct KeyFrame {
  Index index = 0;
  Tensor frame;  // [H,W,C]
  friend bool operator==(const KeyFrame&, const KeyFrame&) = default;
};

/// Key frames sorted by strictly increasing time index. Indices 0 and
/// horizon-1 are always present.
struct SparseVideo {
  std::vector<KeyFrame> keys;
  int label = 0;
  Index horizon = 0;

  std::vector<Index> key_indices() const;
  Index key_count() const { return static_cast<Index>(keys.size()); }
  bool has_key(Index t) const;
  // Inserts a new key at a non-key position, keeping the order.
  void insert(Index t, Tensor frame);
  // Throws Error if the key-set invariants do not hold.
  void validate() const;
  friend bool operator==(const SparseVideo&, const SparseVideo&) = default;
};

// Flanking keys of position t and the weight of the left one:
// alpha = (right - t) / (right - left). At a key, left == right == t.
struct InterpolationWeight {
  Index left = 0;
  Index right = 0;
  double alpha = 1.0;
};

InterpolationWeight interpolation_weight(std::span<const Index> keys, Index t);

/// Dense [T,H,W,C] reconstruction; key positions are copied verbatim.
Tensor interpolate(const SparseVideo& video);

/// Same reconstruction as a graph expression over key-frame nodes ([H,W,C]
/// each), so gradients reach the keys through every interpolated position.
template <typename S>
Node<S> interpolate(std::span<const Node<S>> keys, std::span<const Index> indices, Index horizon) {
  if (keys.size() != indices.size() || keys.empty()) throw Error("interpolate: keys and indices disagree");
  Shape one = keys.front().shape();
  one.insert(one.begin(), 1);
  std::vector<Node<S>> frames;
  std::size_t seg = 0;
  for (Index t = 0; t < horizon; ++t) {
    while (seg + 1 < indices.size() && indices[seg + 1] <= t) ++seg;
    if (indices[seg] == t) {
      frames.push_back(reshape(keys[seg], one));
      continue;
    }
    const InterpolationWeight w = interpolation_weight(indices, t);
    const Node<S> blend = add(scale(keys[seg], w.alpha), scale(keys[seg + 1], 1.0 - w.alpha));
    frames.push_back(reshape(blend, one));
  }
  return concat(frames, 0);
}

/// Chain-rule gradient of each key frame given the gradient with respect to
/// every reconstructed position ([T,H,W,C]): the position gradient at the
/// key plus alpha-weighted gradients of the interpolated neighbours.
std::vector<Tensor> interpolate_adjoint(const SparseVideo& video, const Tensor& position_grads);

// ---------------------------------------------------------------------------
// Configuration

enum class InsertionMode { kGradientGuided, kRandomPosition, kDisabled };
enum class Criterion { kCosine, kL2 };
// Which gradient stands for a key frame in the insertion test: the total
// chain-rule gradient that drives its update, or the probe gradient at its
// position (the same reading used for candidates).
enum class KeyGradient { kChainRule, kProbe };

std::string_view to_string(InsertionMode mode);
std::string_view to_string(Criterion criterion);
std::string_view to_string(KeyGradient kind);
InsertionMode parse_insertion_mode(std::string_view s);
Criterion parse_criterion(std::string_view s);
KeyGradient parse_key_gradient(std::string_view s);

struct PhaseSchedule {
  int total = 100;
  double warmup_fraction = 0.2;
  double cooldown_fraction = 0.2;
  int check_period = 10;

  int warmup_end() const;      // first insertion-phase iteration, floor(w * total)
  int cooldown_begin() const;  // first cool-down iteration, ceil((1 - c) * total)
  void validate() const;
};

enum class Phase { kWarmUp, kInsertion, kCoolDown };
std::string_view to_string(Phase phase);
Phase phase_of(int iteration, const PhaseSchedule& schedule);

struct CondenseConfig {
  int videos_per_class = 1;
  double epsilon = 0.0;
  double learning_rate = 1.0;
  double momentum = 0.95;
  Index real_batch = 8;
  int iterations = 300;
  double warmup_fraction = 0.2;
  double cooldown_fraction = 0.2;
  int check_period = 10;
  InsertionMode insertion = InsertionMode::kGradientGuided;
  Criterion criterion = Criterion::kCosine;
  double l2_threshold = 0.141;
  Index max_keys = 0;  // 0 means the horizon T
  KeyGradient key_gradient = KeyGradient::kChainRule;
  int matcher_reset_period = 1;  // 1: fresh matching network every iteration
  double matcher_learning_rate = 0.01;
  bool flip = false;
  std::uint64_t seed = 0;
  bool record_gradients = false;  // keep the vectors behind each insertion

  PhaseSchedule schedule() const;
  Index key_cap(Index horizon) const;
  void validate() const;
  friend bool operator==(const CondenseConfig&, const CondenseConfig&) = default;
};

// Matching-network parameters plus one momentum buffer per key frame,
// indexed [video][key] like the synthetic set.
struct MatcherState {
  Params theta;
  std::vector<std::vector<Tensor>> momentum;
};

// ---------------------------------------------------------------------------
// Synthetic set

/// VPC sparse videos per class, each with keys {0, T-1} drawn from
/// N(0.5, 0.25^2) clamped to [0,1]. Ordered by (class, video).
std::vector<SparseVideo> init_synthetic(int classes, int videos_per_class, const Geometry& geometry,
                                        std::uint64_t seed);

// ---------------------------------------------------------------------------
// Gradient matching

template <typename S>
BasicTensor<S> flatten_gradients(const std::vector<BasicTensor<S>>& grads) {
  Index n = 0;
  for (const auto& g : grads) n += g.size();
  BasicTensor<S> out(Shape{n});
  Index offset = 0;
  for (const auto& g : grads) {
    std::copy_n(g.data(), g.size(), out.data() + offset);
    offset += g.size();
  }
  return out;
}

/// Flattened parameter gradient of the mean cross-entropy of `batch`
/// (every video labelled `label`).
template <typename S>
BasicTensor<S> task_gradient(const ModelSpec& spec, const BasicParams<S>& params, const BasicTensor<S>& batch,
                             int label) {
  Graph<S> g;
  const auto p = bind_params(g, params);
  const Node<S> logits = forward(spec, p, g.constant(batch));
  const Node<S> loss = softmax_cross_entropy(logits, std::vector<int>(static_cast<std::size_t>(batch.dim(0)), label));
  return flatten_gradients(backward(loss, p));
}

/// Sum over classes of || grad_theta CE(f(syn_c), c) - real_grads[c] ||^2.
/// The synthetic-branch gradient is a graph node, so the result can be
/// differentiated with respect to the synthetic batches; real gradients
/// enter as constants.
template <typename S>
Node<S> matching_loss(const ModelSpec& spec, std::span<const Node<S>> params, std::span<const Node<S>> syn,
                      std::span<const BasicTensor<S>> real_grads, std::span<const int> labels,
                      std::vector<S>* per_class = nullptr) {
  if (syn.size() != real_grads.size() || syn.size() != labels.size() || syn.empty()) {
    throw Error("matching_loss: synthetic and real batches are not class-aligned");
  }
  Graph<S>& g = params.front().graph();
  std::optional<Node<S>> total;
  for (std::size_t c = 0; c < syn.size(); ++c) {
    const Node<S> logits = forward(spec, params, syn[c]);
    const Node<S> loss =
        softmax_cross_entropy(logits, std::vector<int>(static_cast<std::size_t>(syn[c].shape()[0]), labels[c]));
    const Node<S> syn_grad = grad_as_node(loss, params);
    if (syn_grad.shape() != real_grads[c].shape()) {
      detail::shape_mismatch("matching_loss", syn_grad.shape(), real_grads[c].shape());
    }
    const Node<S> term = squared_norm(sub(syn_grad, g.constant(real_grads[c])));
    if (per_class) per_class->push_back(term.value()[0]);
    total = total ? add(*total, term) : term;
  }
  return *total;
}

// Convenience form taking real batches instead of their gradients.
template <typename S>
Node<S> matching_loss(const ModelSpec& spec, std::span<const Node<S>> params, const BasicParams<S>& param_values,
                      std::span<const Node<S>> syn, std::span<const BasicTensor<S>> real_batches,
                      std::span<const int> labels) {
  std::vector<BasicTensor<S>> real_grads;
  for (std::size_t c = 0; c < real_batches.size(); ++c) {
    real_grads.push_back(task_gradient(spec, param_values, real_batches[c], labels[c]));
  }
  return matching_loss(spec, params, syn, std::span<const BasicTensor<S>>(real_grads), labels);
}

// ---------------------------------------------------------------------------
// Insertion

/// Gradient per time index, flattened to H*W*C. Non-key positions carry the
/// probe gradient (the interpolated frame treated as an independent leaf);
/// key positions carry the chain-rule or probe gradient per `kind`.
std::vector<std::vector<float>> frame_gradients(const SparseVideo& video, const Tensor& position_grads,
                                                KeyGradient kind);

struct InsertionEvent {
  int iteration = 0;
  int class_id = 0;
  int video = 0;  // index within its class
  Index time_index = 0;
  Index left_key = 0;
  Index right_key = 0;
  // Cosine similarities (cosine criterion) or unit-vector L2 distances
  // (l2 criterion) between the candidate and each flanking key.
  double left_score = 0.0;
  double right_score = 0.0;
  bool random_position = false;
  std::vector<float> candidate_grad, left_grad, right_grad;  // only with record_gradients
};

// Cosine of two vectors in double; nullopt if either has zero norm.
std::optional<double> cosine(std::span<const float> a, std::span<const float> b);

struct ScanStats {
  int candidates = 0;
  int eligible = 0;
  int skipped_zero_norm = 0;
};

/// One insertion decision for one video. `rng` is used only in
/// random-position mode. Returns the event; does not modify the video.
std::optional<InsertionEvent> insertion_scan(const SparseVideo& video, const std::vector<std::vector<float>>& gradients,
                                             const CondenseConfig& config, CounterRng* rng = nullptr,
                                             ScanStats* stats = nullptr);

/// Executable form of the descent-blockage property: given
/// <g_t, g_i> < 0 and <g_t, g_j> < 0, checks that <g_t, v> > 0 for
/// v = lambda (-g_i) + (1 - lambda)(-g_j) at every sampled lambda.
/// Throws if the precondition does not hold.
bool verify_blockage(std::span<const double> g_t, std::span<const double> g_i, std::span<const double> g_j,
                     std::span<const double> lambdas);

// ---------------------------------------------------------------------------
// Outer loop

struct CondenseResult {
  std::vector<SparseVideo> videos;
  std::vector<InsertionEvent> events;
  std::vector<double> loss_trace;
};

/// Runs the full condensation. Throws NumericError if the matching loss
/// becomes non-finite.
CondenseResult condense(const CondenseConfig& config, const VideoDataset& dataset, const ModelSpec& spec);

// "PVSC" container:
//   magic "PVSC" | version u32 | T,H,W,C u32 | video count u32 |
//   per video: class id u32 | key count u32 | key indices u32[] |
//              float32 frames (key count x H x W x C)
std::string serialize_sparse(const std::vector<SparseVideo>& videos, const Geometry& geometry);
std::vector<SparseVideo> deserialize_sparse(std::string_view bytes, Geometry* geometry = nullptr);

}  // namespace prism
