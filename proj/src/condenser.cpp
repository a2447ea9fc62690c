#include "prism/condenser.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prism/binary_io.hpp"
#include "prism/log.hpp"

namespace prism {

// ---------------------------------------------------------------------------
// SparseVideo

std::vector<Index> SparseVideo::key_indices() const {
  std::vector<Index> out;
  out.reserve(keys.size());
  for (const auto& k : keys) out.push_back(k.index);
  return out;
}

bool SparseVideo::has_key(Index t) const {
  return std::any_of(keys.begin(), keys.end(), [t](const KeyFrame& k) { return k.index == t; });
}

void SparseVideo::insert(Index t, Tensor frame) {
  if (t <= 0 || t >= horizon - 1) throw Error("insert: time index " + std::to_string(t) + " is not interior");
  if (has_key(t)) throw Error("insert: time index " + std::to_string(t) + " is already a key");
  if (!keys.empty() && frame.shape() != keys.front().frame.shape()) {
    detail::shape_mismatch("insert", frame.shape(), keys.front().frame.shape());
  }
  const auto pos = std::upper_bound(keys.begin(), keys.end(), t,
                                    [](Index v, const KeyFrame& k) { return v < k.index; });
  keys.insert(pos, KeyFrame{t, std::move(frame)});
}

void SparseVideo::validate() const {
  if (horizon < 2) throw Error("sparse video horizon must be at least 2");
  if (keys.size() < 2) throw Error("sparse video needs at least 2 keys");
  if (keys.front().index != 0 || keys.back().index != horizon - 1) {
    throw Error("sparse video keys must include 0 and T-1");
  }
  for (std::size_t i = 1; i < keys.size(); ++i) {
    if (keys[i].index <= keys[i - 1].index) throw Error("sparse video key indices must strictly increase");
    if (keys[i].frame.shape() != keys.front().frame.shape()) throw Error("sparse video key frames differ in shape");
  }
}

// ---------------------------------------------------------------------------
// Interpolation

InterpolationWeight interpolation_weight(std::span<const Index> keys, Index t) {
  if (keys.empty() || t < keys.front() || t > keys.back()) {
    throw Error("interpolation_weight: time index " + std::to_string(t) + " outside the key range");
  }
  const auto hi = std::lower_bound(keys.begin(), keys.end(), t);
  if (*hi == t) return {t, t, 1.0};
  const Index right = *hi;
  const Index left = *(hi - 1);
  return {left, right, static_cast<double>(right - t) / static_cast<double>(right - left)};
}

Tensor interpolate(const SparseVideo& video) {
  video.validate();
  const Shape& fs = video.keys.front().frame.shape();
  const Index frame_size = numel(fs);
  Shape out_shape = fs;
  out_shape.insert(out_shape.begin(), video.horizon);
  Tensor out(out_shape);
  for (std::size_t seg = 0; seg + 1 < video.keys.size(); ++seg) {
    const KeyFrame& a = video.keys[seg];
    const KeyFrame& b = video.keys[seg + 1];
    std::copy_n(a.frame.data(), frame_size, out.data() + a.index * frame_size);
    for (Index t = a.index + 1; t < b.index; ++t) {
      const double alpha = static_cast<double>(b.index - t) / static_cast<double>(b.index - a.index);
      const float wa = static_cast<float>(alpha);
      const float wb = static_cast<float>(1.0 - alpha);
      float* dst = out.data() + t * frame_size;
      for (Index i = 0; i < frame_size; ++i) {
        const float pa = wa * a.frame[i];
        const float pb = wb * b.frame[i];
        dst[i] = pa + pb;
      }
    }
  }
  const KeyFrame& last = video.keys.back();
  std::copy_n(last.frame.data(), frame_size, out.data() + last.index * frame_size);
  return out;
}

std::vector<Tensor> interpolate_adjoint(const SparseVideo& video, const Tensor& position_grads) {
  video.validate();
  const Shape& fs = video.keys.front().frame.shape();
  const Index frame_size = numel(fs);
  if (position_grads.size() != video.horizon * frame_size) {
    Shape expected = fs;
    expected.insert(expected.begin(), video.horizon);
    detail::shape_mismatch("interpolate_adjoint", position_grads.shape(), expected);
  }
  std::vector<Tensor> out;
  for (const auto& k : video.keys) {
    Tensor g(fs);
    std::copy_n(position_grads.data() + k.index * frame_size, frame_size, g.data());
    out.push_back(std::move(g));
  }
  for (std::size_t seg = 0; seg + 1 < video.keys.size(); ++seg) {
    const Index a = video.keys[seg].index, b = video.keys[seg + 1].index;
    for (Index t = a + 1; t < b; ++t) {
      const double alpha = static_cast<double>(b - t) / static_cast<double>(b - a);
      const float wa = static_cast<float>(alpha);
      const float wb = static_cast<float>(1.0 - alpha);
      const float* src = position_grads.data() + t * frame_size;
      float* ga = out[seg].data();
      float* gb = out[seg + 1].data();
      for (Index i = 0; i < frame_size; ++i) {
        ga[i] += wa * src[i];
        gb[i] += wb * src[i];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

std::string_view to_string(InsertionMode mode) {
  switch (mode) {
    case InsertionMode::kGradientGuided: return "gradient-guided";
    case InsertionMode::kRandomPosition: return "random-position";
    case InsertionMode::kDisabled: return "disabled";
  }
  return "unknown";
}

std::string_view to_string(Criterion criterion) {
  return criterion == Criterion::kCosine ? "cosine" : "l2";
}

std::string_view to_string(KeyGradient kind) {
  return kind == KeyGradient::kChainRule ? "chain-rule" : "probe";
}

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::kWarmUp: return "warm-up";
    case Phase::kInsertion: return "insertion";
    case Phase::kCoolDown: return "cool-down";
  }
  return "unknown";
}

InsertionMode parse_insertion_mode(std::string_view s) {
  for (auto m : {InsertionMode::kGradientGuided, InsertionMode::kRandomPosition, InsertionMode::kDisabled}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown insertion mode '" + std::string(s) + "'");
}

Criterion parse_criterion(std::string_view s) {
  for (auto c : {Criterion::kCosine, Criterion::kL2}) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError("unknown insertion criterion '" + std::string(s) + "'");
}

KeyGradient parse_key_gradient(std::string_view s) {
  for (auto k : {KeyGradient::kChainRule, KeyGradient::kProbe}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown key gradient '" + std::string(s) + "'");
}

int PhaseSchedule::warmup_end() const {
  return static_cast<int>(std::floor(warmup_fraction * total + 1e-9));
}

int PhaseSchedule::cooldown_begin() const {
  return static_cast<int>(std::ceil((1.0 - cooldown_fraction) * total - 1e-9));
}

void PhaseSchedule::validate() const {
  if (total < 1) throw ConfigError("iterations must be positive");
  if (warmup_fraction < 0 || warmup_fraction >= 1) throw ConfigError("warmup_fraction must lie in [0,1)");
  if (cooldown_fraction < 0 || cooldown_fraction >= 1) throw ConfigError("cooldown_fraction must lie in [0,1)");
  if (warmup_fraction + cooldown_fraction >= 1) throw ConfigError("warmup_fraction + cooldown_fraction must be < 1");
  if (check_period < 1) throw ConfigError("check_period must be positive");
}

Phase phase_of(int iteration, const PhaseSchedule& schedule) {
  if (iteration < 0 || iteration >= schedule.total) {
    throw Error("phase_of: iteration " + std::to_string(iteration) + " outside [0, " +
                std::to_string(schedule.total) + ")");
  }
  if (iteration < schedule.warmup_end()) return Phase::kWarmUp;
  if (iteration >= schedule.cooldown_begin()) return Phase::kCoolDown;
  return Phase::kInsertion;
}

PhaseSchedule CondenseConfig::schedule() const {
  return {iterations, warmup_fraction, cooldown_fraction, check_period};
}

Index CondenseConfig::key_cap(Index horizon) const {
  return max_keys == 0 ? horizon : std::min(max_keys, horizon);
}

void CondenseConfig::validate() const {
  if (videos_per_class < 1) throw ConfigError("videos_per_class must be at least 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0,1)");
  if (real_batch < 1) throw ConfigError("real_batch must be positive");
  if (!(l2_threshold > 0)) throw ConfigError("l2_threshold must be positive");
  if (max_keys != 0 && max_keys < 2) throw ConfigError("max_keys must be 0 (no cap) or at least 2");
  if (matcher_reset_period < 1) throw ConfigError("matcher_reset_period must be positive");
  if (!(matcher_learning_rate >= 0)) throw ConfigError("matcher_learning_rate must be non-negative");
  schedule().validate();
}

// ---------------------------------------------------------------------------
// Synthetic set

std::vector<SparseVideo> init_synthetic(int classes, int videos_per_class, const Geometry& geometry,
                                        std::uint64_t seed) {
  if (classes < 1) throw ConfigError("init_synthetic: classes must be positive");
  if (videos_per_class < 1) throw ConfigError("init_synthetic: videos_per_class must be at least 1");
  if (geometry.frames < 2) throw ConfigError("init_synthetic: need at least 2 frames");
  const CounterRng root = seed_stream(seed).derive("init-synthetic");
  std::vector<SparseVideo> out;
  for (int c = 0; c < classes; ++c) {
    for (int j = 0; j < videos_per_class; ++j) {
      CounterRng rng = root.derive("video", static_cast<std::uint64_t>(c) * videos_per_class + j);
      SparseVideo v;
      v.label = c;
      v.horizon = geometry.frames;
      for (Index t : {Index{0}, geometry.frames - 1}) {
        Tensor frame(geometry.frame_shape());
        for (Index i = 0; i < frame.size(); ++i) {
          frame[i] = static_cast<float>(std::clamp(rng.normal(0.5, 0.25), 0.0, 1.0));
        }
        v.keys.push_back({t, std::move(frame)});
      }
      out.push_back(std::move(v));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Insertion

std::vector<std::vector<float>> frame_gradients(const SparseVideo& video, const Tensor& position_grads,
                                                KeyGradient kind) {
  const Index frame_size = video.keys.front().frame.size();
  if (position_grads.size() != video.horizon * frame_size) {
    throw ShapeError("frame_gradients: position gradients hold " + std::to_string(position_grads.size()) +
                     " values, expected " + std::to_string(video.horizon * frame_size));
  }
  std::vector<std::vector<float>> out(static_cast<std::size_t>(video.horizon));
  for (Index t = 0; t < video.horizon; ++t) {
    const float* src = position_grads.data() + t * frame_size;
    out[static_cast<std::size_t>(t)].assign(src, src + frame_size);
  }
  if (kind == KeyGradient::kChainRule) {
    const auto chain = interpolate_adjoint(video, position_grads);
    for (std::size_t k = 0; k < video.keys.size(); ++k) {
      out[static_cast<std::size_t>(video.keys[k].index)] = chain[k].vector();
    }
  }
  return out;
}

std::optional<double> cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: vectors differ in length");
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  return dot(a, b) / (na * nb);
}

namespace {

std::optional<double> unit_distance(std::span<const float> a, std::span<const float> b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) / na - static_cast<double>(b[i]) / nb;
    acc += d * d;
  }
  return std::sqrt(acc);
}

struct Scores {
  double left = 0.0;
  double right = 0.0;
};

std::optional<Scores> score(std::span<const float> g, std::span<const float> gl, std::span<const float> gr,
                            Criterion criterion) {
  const auto f = criterion == Criterion::kCosine ? cosine : unit_distance;
  const auto l = f(g, gl);
  const auto r = f(g, gr);
  if (!l || !r) return std::nullopt;
  return Scores{*l, *r};
}

}  // namespace

std::optional<InsertionEvent> insertion_scan(const SparseVideo& video, const std::vector<std::vector<float>>& gradients,
                                             const CondenseConfig& config, CounterRng* rng, ScanStats* stats) {
  if (config.insertion == InsertionMode::kDisabled) return std::nullopt;
  if (video.key_count() >= config.key_cap(video.horizon)) return std::nullopt;
  if (static_cast<Index>(gradients.size()) != video.horizon) {
    throw ShapeError("insertion_scan: need one gradient per time index");
  }
  ScanStats local;
  ScanStats& st = stats ? *stats : local;

  struct Candidate {
    Index t, left, right;
  };
  std::vector<Candidate> candidates;
  std::optional<InsertionEvent> best;
  double best_score = std::numeric_limits<double>::infinity();
  const auto keys = video.key_indices();
  for (std::size_t seg = 0; seg + 1 < keys.size(); ++seg) {
    const auto& gl = gradients[static_cast<std::size_t>(keys[seg])];
    const auto& gr = gradients[static_cast<std::size_t>(keys[seg + 1])];
    for (Index t = keys[seg] + 1; t < keys[seg + 1]; ++t) {
      ++st.candidates;
      candidates.push_back({t, keys[seg], keys[seg + 1]});
      const auto s = score(gradients[static_cast<std::size_t>(t)], gl, gr, config.criterion);
      if (!s) {
        ++st.skipped_zero_norm;
        log().debug("insertion scan: zero-norm gradient at t={} (class {}), candidate skipped", t, video.label);
        continue;
      }
      bool eligible = false;
      double rank = 0.0;
      if (config.criterion == Criterion::kCosine) {
        eligible = s->left < config.epsilon && s->right < config.epsilon;
        rank = std::max(s->left, s->right);
      } else {
        eligible = s->left > config.l2_threshold && s->right > config.l2_threshold;
        rank = -std::min(s->left, s->right);
      }
      if (!eligible) continue;
      ++st.eligible;
      if (rank < best_score) {
        best_score = rank;
        InsertionEvent e;
        e.time_index = t;
        e.left_key = keys[seg];
        e.right_key = keys[seg + 1];
        e.left_score = s->left;
        e.right_score = s->right;
        best = e;
      }
    }
  }
  if (!best) return std::nullopt;
  best->class_id = video.label;

  if (config.insertion == InsertionMode::kRandomPosition) {
    if (!rng) throw Error("insertion_scan: random-position mode needs a random stream");
    const Candidate c = candidates[static_cast<std::size_t>(rng->below(candidates.size()))];
    const auto s = score(gradients[static_cast<std::size_t>(c.t)], gradients[static_cast<std::size_t>(c.left)],
                         gradients[static_cast<std::size_t>(c.right)], config.criterion);
    best->time_index = c.t;
    best->left_key = c.left;
    best->right_key = c.right;
    best->left_score = s ? s->left : std::numeric_limits<double>::quiet_NaN();
    best->right_score = s ? s->right : std::numeric_limits<double>::quiet_NaN();
    best->random_position = true;
  }
  if (config.record_gradients) {
    best->candidate_grad = gradients[static_cast<std::size_t>(best->time_index)];
    best->left_grad = gradients[static_cast<std::size_t>(best->left_key)];
    best->right_grad = gradients[static_cast<std::size_t>(best->right_key)];
  }
  return best;
}

bool verify_blockage(std::span<const double> g_t, std::span<const double> g_i, std::span<const double> g_j,
                     std::span<const double> lambdas) {
  if (g_t.size() != g_i.size() || g_t.size() != g_j.size()) throw ShapeError("verify_blockage: dimension mismatch");
  auto inner = [](std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
    return acc;
  };
  if (!(inner(g_t, g_i) < 0.0) || !(inner(g_t, g_j) < 0.0)) {
    throw Error("verify_blockage: precondition <g_t,g_i> < 0 and <g_t,g_j> < 0 violated");
  }
  std::vector<double> v(g_t.size());
  for (double lambda : lambdas) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("verify_blockage: lambda outside [0,1]");
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = lambda * -g_i[k] + (1.0 - lambda) * -g_j[k];
    if (!(inner(g_t, v) > 0.0)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Outer loop

namespace {

Tensor stack_class(const std::vector<SparseVideo>& videos, std::size_t first, int count) {
  std::vector<Tensor> dense;
  dense.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) dense.push_back(interpolate(videos[first + static_cast<std::size_t>(j)]));
  std::vector<const Tensor*> ptrs;
  for (const auto& d : dense) ptrs.push_back(&d);
  return stack_videos(ptrs);
}

void sgd_step(Params& theta, const Tensor& flat_grad, double lr) {
  Index offset = 0;
  for (auto& t : theta.tensors) {
    for (Index i = 0; i < t.size(); ++i) t[i] -= static_cast<float>(lr) * flat_grad[offset + i];
    offset += t.size();
  }
}

}  // namespace

CondenseResult condense(const CondenseConfig& config, const VideoDataset& dataset, const ModelSpec& spec) {
  config.validate();
  spec.validate();
  if (dataset.geometry != spec.geometry) {
    throw ConfigError("dataset geometry " + to_string(dataset.geometry) + " does not match model geometry " +
                      to_string(spec.geometry));
  }
  if (dataset.classes() != spec.classes) {
    throw ConfigError("dataset has " + std::to_string(dataset.classes()) + " classes, model expects " +
                      std::to_string(spec.classes));
  }
  if (config.real_batch > dataset.train_per_class) {
    throw ConfigError("real_batch " + std::to_string(config.real_batch) + " exceeds train videos per class " +
                      std::to_string(dataset.train_per_class));
  }
  const int classes = dataset.classes();
  const int vpc = config.videos_per_class;
  const Index frame_size = spec.geometry.frame_size();
  const Index horizon = spec.geometry.frames;
  const PhaseSchedule schedule = config.schedule();
  const CounterRng root = seed_stream(config.seed);

  CondenseResult result;
  result.videos = init_synthetic(classes, vpc, spec.geometry, root.derive("synthetic").next_u64());
  MatcherState state;
  for (const auto& v : result.videos) {
    std::vector<Tensor> m;
    for (const auto& k : v.keys) m.emplace_back(k.frame.shape());
    state.momentum.push_back(std::move(m));
  }
  std::vector<int> labels(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) labels[static_cast<std::size_t>(c)] = c;

  for (int it = 0; it < config.iterations; ++it) {
    if (it % config.matcher_reset_period == 0) {
      state.theta = init_params(spec, root.derive("matcher", static_cast<std::uint64_t>(it)).next_u64());
    }

    std::vector<Tensor> real_grads;
    Tensor real_sum;
    for (int c = 0; c < classes; ++c) {
      const std::uint64_t batch_seed =
          root.derive("real-batch", (static_cast<std::uint64_t>(it) << 16) | static_cast<std::uint64_t>(c)).next_u64();
      const RealBatch real = sample_real_batch(dataset, c, config.real_batch, batch_seed, config.flip);
      real_grads.push_back(task_gradient(spec, state.theta, real.batch, c));
    }

    Graph<float> g;
    const auto params = bind_params(g, state.theta);
    std::vector<Node<float>> syn;
    for (int c = 0; c < classes; ++c) {
      syn.push_back(g.data(stack_class(result.videos, static_cast<std::size_t>(c) * vpc, vpc)));
    }
    std::vector<float> per_class;
    const Node<float> loss = matching_loss(spec, std::span<const Node<float>>(params), std::span<const Node<float>>(syn),
                                           std::span<const Tensor>(real_grads), std::span<const int>(labels), &per_class);
    for (int c = 0; c < classes; ++c) {
      if (!std::isfinite(per_class[static_cast<std::size_t>(c)])) {
        throw NumericError("non-finite matching loss at iteration " + std::to_string(it) + ", class " +
                           std::to_string(c));
      }
    }
    result.loss_trace.push_back(static_cast<double>(loss.value()[0]));
    const auto syn_grads = backward(loss, syn);

    const bool scan = config.insertion != InsertionMode::kDisabled && phase_of(it, schedule) == Phase::kInsertion &&
                      it % config.check_period == 0;
    std::vector<std::optional<InsertionEvent>> pending(result.videos.size());
    for (std::size_t v = 0; v < result.videos.size(); ++v) {
      SparseVideo& video = result.videos[v];
      const int c = video.label;
      const int j = static_cast<int>(v) - c * vpc;
      Tensor position_grads(spec.geometry.video_shape());
      std::copy_n(syn_grads[static_cast<std::size_t>(c)].data() + static_cast<Index>(j) * horizon * frame_size,
                  horizon * frame_size, position_grads.data());
      for (Index i = 0; i < position_grads.size(); ++i) {
        if (!std::isfinite(position_grads[i])) {
          throw NumericError("non-finite frame gradient at iteration " + std::to_string(it) + ", class " +
                             std::to_string(c));
        }
      }
      if (scan) {
        CounterRng rng = root.derive("random-position", (static_cast<std::uint64_t>(it) << 32) | v);
        pending[v] = insertion_scan(video, frame_gradients(video, position_grads, config.key_gradient), config, &rng);
        if (pending[v]) {
          pending[v]->iteration = it;
          pending[v]->video = j;
        }
      }
      const auto key_grads = interpolate_adjoint(video, position_grads);
      auto& momentum = state.momentum[v];
      const float mu = static_cast<float>(config.momentum);
      const float lr = static_cast<float>(config.learning_rate);
      for (std::size_t k = 0; k < video.keys.size(); ++k) {
        float* m = momentum[k].data();
        float* x = video.keys[k].frame.data();
        const float* gk = key_grads[k].data();
        for (Index i = 0; i < frame_size; ++i) {
          m[i] = mu * m[i] + gk[i];
          x[i] -= lr * m[i];
        }
      }
    }

    for (std::size_t v = 0; v < result.videos.size(); ++v) {
      if (!pending[v]) continue;
      SparseVideo& video = result.videos[v];
      const Index t = pending[v]->time_index;
      const Tensor dense = interpolate(video);
      Tensor frame(spec.geometry.frame_shape());
      std::copy_n(dense.data() + t * frame_size, frame_size, frame.data());
      video.insert(t, std::move(frame));
      const auto pos = static_cast<std::ptrdiff_t>(std::find_if(video.keys.begin(), video.keys.end(),
                                                                [t](const KeyFrame& k) { return k.index == t; }) -
                                                   video.keys.begin());
      state.momentum[v].insert(state.momentum[v].begin() + pos, Tensor(spec.geometry.frame_shape()));
      log().debug("iteration {}: class {} video {} inserts t={} between {} and {} (scores {:.4f}, {:.4f})", it,
                  pending[v]->class_id, pending[v]->video, t, pending[v]->left_key, pending[v]->right_key,
                  pending[v]->left_score, pending[v]->right_score);
      result.events.push_back(std::move(*pending[v]));
    }

    if (config.matcher_reset_period > 1 && config.matcher_learning_rate > 0) {
      for (const auto& rg : real_grads) {
        sgd_step(state.theta, rg, config.matcher_learning_rate / classes);
      }
    }
    if (it % 50 == 0 || it + 1 == config.iterations) {
      log().info("iteration {}/{}: matching loss {:.6g}", it, config.iterations, result.loss_trace.back());
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// PVSC container

namespace {
constexpr std::string_view kSparseMagic = "PVSC";
constexpr std::uint32_t kSparseVersion = 1;
}  // namespace

std::string serialize_sparse(const std::vector<SparseVideo>& videos, const Geometry& geometry) {
  io::ByteWriter w;
  w.bytes(kSparseMagic);
  w.u32(kSparseVersion);
  for (Index e : geometry.video_shape()) w.u32(static_cast<std::uint32_t>(e));
  w.u32(static_cast<std::uint32_t>(videos.size()));
  for (const auto& v : videos) {
    v.validate();
    if (v.horizon != geometry.frames || v.keys.front().frame.shape() != geometry.frame_shape()) {
      throw ShapeError("PVSC: video does not match geometry " + to_string(geometry));
    }
    w.u32(static_cast<std::uint32_t>(v.label));
    w.u32(static_cast<std::uint32_t>(v.keys.size()));
    for (const auto& k : v.keys) w.u32(static_cast<std::uint32_t>(k.index));
    for (const auto& k : v.keys) w.floats(k.frame.span());
  }
  return w.buffer();
}

std::vector<SparseVideo> deserialize_sparse(std::string_view bytes, Geometry* geometry) {
  io::ByteReader r(bytes, "PVSC");
  if (r.bytes(4, "magic") != kSparseMagic) throw FormatError("PVSC: bad magic, expected \"PVSC\"");
  if (const auto v = r.u32(); v != kSparseVersion) throw FormatError("PVSC: unsupported version " + std::to_string(v));
  Geometry geo;
  geo.frames = r.u32();
  geo.height = r.u32();
  geo.width = r.u32();
  geo.channels = r.u32();
  if (geo.frames < 2 || geo.height < 1 || geo.width < 1 || geo.channels < 1) {
    throw FormatError("PVSC: invalid geometry " + to_string(geo));
  }
  const std::uint32_t count = r.u32();
  std::vector<SparseVideo> out;
  for (std::uint32_t n = 0; n < count; ++n) {
    SparseVideo v;
    v.label = static_cast<int>(r.u32());
    v.horizon = geo.frames;
    const std::uint32_t keys = r.u32();
    if (keys < 2 || keys > geo.frames) throw FormatError("PVSC: video " + std::to_string(n) + " has bad key count");
    std::vector<Index> indices(keys);
    for (auto& i : indices) i = r.u32();
    for (Index i : indices) {
      Tensor frame(geo.frame_shape());
      r.floats(frame.span(), "key frames");
      v.keys.push_back({i, std::move(frame)});
    }
    try {
      v.validate();
    } catch (const Error& e) {
      throw FormatError("PVSC: video " + std::to_string(n) + ": " + e.what());
    }
    out.push_back(std::move(v));
  }
  if (r.remaining() != 0) throw FormatError("PVSC: trailing bytes");
  if (geometry) *geometry = geo;
  return out;
}

}  // namespace prism
