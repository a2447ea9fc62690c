#include "prism/videogen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "prism/binary_io.hpp"

namespace prism {

std::string_view to_string(SpriteKind kind) { return kind == SpriteKind::kSquare ? "square" : "disk"; }

std::string_view to_string(MotionLaw law) {
  switch (law) {
    case MotionLaw::kLinearTranslate: return "linear-translate";
    case MotionLaw::kBounce: return "bounce";
    case MotionLaw::kZigzag: return "zigzag";
    case MotionLaw::kCircularOrbit: return "circular-orbit";
    case MotionLaw::kGrowShrink: return "grow-shrink";
    case MotionLaw::kHoldThenJump: return "hold-then-jump";
  }
  return "unknown";
}

SpriteKind parse_sprite(std::string_view name) {
  if (name == "square") return SpriteKind::kSquare;
  if (name == "disk") return SpriteKind::kDisk;
  throw ConfigError("unknown sprite kind '" + std::string(name) + "'");
}

MotionLaw parse_motion_law(std::string_view name) {
  for (int i = 0; i <= 5; ++i) {
    const auto law = static_cast<MotionLaw>(i);
    if (to_string(law) == name) return law;
  }
  throw ConfigError("unknown motion law '" + std::string(name) + "'");
}

int nonlinearity_rank(MotionLaw law) {
  switch (law) {
    case MotionLaw::kLinearTranslate: return 0;
    case MotionLaw::kGrowShrink:
    case MotionLaw::kCircularOrbit:
    case MotionLaw::kBounce: return 1;
    case MotionLaw::kZigzag:
    case MotionLaw::kHoldThenJump: return 2;
  }
  return 0;
}

MotionProgram default_program(int class_id, MotionLaw law, int axis) {
  MotionProgram p{class_id, law, SpriteKind::kSquare, axis, 1.0, 0.0};
  switch (law) {
    case MotionLaw::kLinearTranslate: p.speed = 1.0; break;
    case MotionLaw::kBounce: p.speed = 3.0; break;
    case MotionLaw::kZigzag: p.speed = 1.0; p.amplitude = 2.5; break;
    case MotionLaw::kCircularOrbit: p.speed = 1.0; p.amplitude = 4.0; break;
    case MotionLaw::kGrowShrink: p.speed = 0.0; p.amplitude = 2.0; break;
    case MotionLaw::kHoldThenJump: p.speed = 0.0; p.amplitude = 6.0; break;
  }
  return p;
}

std::vector<MotionProgram> default_programs() {
  return {
      default_program(0, MotionLaw::kLinearTranslate, 0), default_program(1, MotionLaw::kLinearTranslate, 1),
      default_program(2, MotionLaw::kBounce, 0),          default_program(3, MotionLaw::kZigzag, 0),
      default_program(4, MotionLaw::kCircularOrbit, 0),   default_program(5, MotionLaw::kHoldThenJump, 1),
  };
}

double reflect(double position, double lo, double hi) {
  const double range = hi - lo;
  if (range <= 0.0) return lo;
  const double period = 2.0 * range;
  double u = std::fmod(position - lo, period);
  if (u < 0.0) u += period;
  if (u > range) u = period - u;
  return lo + u;
}

namespace {

[[noreturn]] void cannot_fit(const MotionProgram& p, const Geometry& g) {
  throw ConfigError("sprite for class " + std::to_string(p.class_id) + " (" + std::string(to_string(p.law)) +
                    ") cannot fit geometry " + to_string(g));
}

}  // namespace

std::vector<SpriteState> trajectory(const MotionProgram& program, const Geometry& geometry, CounterRng& rng) {
  const Index frames = geometry.frames;
  const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
  const double radius = rng.uniform(1.5, 2.5);
  // Primary axis extent and cross axis extent.
  const double primary_extent = static_cast<double>(program.axis == 0 ? geometry.width : geometry.height) - 1.0;
  const double cross_extent = static_cast<double>(program.axis == 0 ? geometry.height : geometry.width) - 1.0;
  const double lo = radius, hi_p = primary_extent - radius, hi_c = cross_extent - radius;
  if (hi_p < lo || hi_c < lo) cannot_fit(program, geometry);

  std::vector<SpriteState> states(static_cast<std::size_t>(frames));
  std::vector<double> p(states.size()), q(states.size()), r(states.size(), radius);
  const double last = static_cast<double>(frames - 1);

  auto straight_start = [&](double travel) {
    const double slack = hi_p - lo - travel;
    if (slack < 0.0) cannot_fit(program, geometry);
    const double u = rng.uniform() * slack;
    return sign > 0 ? lo + u : hi_p - u;
  };

  switch (program.law) {
    case MotionLaw::kLinearTranslate: {
      const double p0 = straight_start(program.speed * last);
      const double q0 = rng.uniform(lo, hi_c);
      for (std::size_t t = 0; t < p.size(); ++t) {
        p[t] = p0 + sign * program.speed * static_cast<double>(t);
        q[t] = q0;
      }
      break;
    }
    case MotionLaw::kBounce: {
      const double p0 = rng.uniform(lo, hi_p);
      const double q0 = rng.uniform(lo, hi_c);
      for (std::size_t t = 0; t < p.size(); ++t) {
        p[t] = reflect(p0 + sign * program.speed * static_cast<double>(t), lo, hi_p);
        q[t] = q0;
      }
      break;
    }
    case MotionLaw::kZigzag: {
      static constexpr std::array<double, 4> kPattern{0.0, 1.0, 0.0, -1.0};
      if (hi_c - lo < 2.0 * program.amplitude) cannot_fit(program, geometry);
      const double p0 = straight_start(program.speed * last);
      const double q0 = rng.uniform(lo + program.amplitude, hi_c - program.amplitude);
      for (std::size_t t = 0; t < p.size(); ++t) {
        p[t] = p0 + sign * program.speed * static_cast<double>(t);
        q[t] = q0 + program.amplitude * kPattern[t % 4];
      }
      break;
    }
    case MotionLaw::kCircularOrbit: {
      const double rad = program.amplitude;
      if (hi_p - lo < 2.0 * rad || hi_c - lo < 2.0 * rad) cannot_fit(program, geometry);
      const double cp = rng.uniform(lo + rad, hi_p - rad);
      const double cq = rng.uniform(lo + rad, hi_c - rad);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double omega = sign * program.speed * 2.0 * std::numbers::pi / static_cast<double>(frames);
      for (std::size_t t = 0; t < p.size(); ++t) {
        const double a = phase + omega * static_cast<double>(t);
        p[t] = cp + rad * std::cos(a);
        q[t] = cq + rad * std::sin(a);
      }
      break;
    }
    case MotionLaw::kGrowShrink: {
      const double big = radius + program.amplitude;
      if (hi_p + radius - big < big || hi_c + radius - big < big) cannot_fit(program, geometry);
      const double p0 = rng.uniform(big, primary_extent - big);
      const double q0 = rng.uniform(big, cross_extent - big);
      for (std::size_t t = 0; t < p.size(); ++t) {
        p[t] = p0;
        q[t] = q0;
        r[t] = radius + program.amplitude * std::sin(std::numbers::pi * static_cast<double>(t) / std::max(last, 1.0));
      }
      break;
    }
    case MotionLaw::kHoldThenJump: {
      const double p0 = straight_start(program.amplitude);
      const double q0 = rng.uniform(lo, hi_c);
      const auto jump_at = static_cast<std::size_t>(frames / 2);
      for (std::size_t t = 0; t < p.size(); ++t) {
        p[t] = t < jump_at ? p0 : p0 + sign * program.amplitude;
        q[t] = q0;
      }
      break;
    }
  }

  for (std::size_t t = 0; t < states.size(); ++t) {
    states[t] = program.axis == 0 ? SpriteState{p[t], q[t], r[t]} : SpriteState{q[t], p[t], r[t]};
  }
  return states;
}

void render_frame(SpriteKind sprite, const SpriteState& s, double intensity, const Geometry& g, float* frame) {
  for (Index row = 0; row < g.height; ++row) {
    for (Index col = 0; col < g.width; ++col) {
      const double dx = static_cast<double>(col) - s.x;
      const double dy = static_cast<double>(row) - s.y;
      double coverage = 0.0;
      if (sprite == SpriteKind::kSquare) {
        coverage = std::clamp(s.radius + 0.5 - std::abs(dx), 0.0, 1.0) * std::clamp(s.radius + 0.5 - std::abs(dy), 0.0, 1.0);
      } else {
        coverage = std::clamp(s.radius + 0.5 - std::hypot(dx, dy), 0.0, 1.0);
      }
      const auto v = static_cast<float>(std::clamp(intensity * coverage, 0.0, 1.0));
      float* px = frame + (row * g.width + col) * g.channels;
      std::fill(px, px + g.channels, v);
    }
  }
}

Tensor render_video(const MotionProgram& program, const Geometry& geometry, CounterRng& rng) {
  const std::vector<SpriteState> states = trajectory(program, geometry, rng);
  const double intensity = rng.uniform(0.6, 1.0);
  Tensor video(geometry.video_shape());
  for (std::size_t t = 0; t < states.size(); ++t) {
    render_frame(program.sprite, states[t], intensity, geometry,
                 video.data() + static_cast<Index>(t) * geometry.frame_size());
  }
  return video;
}

VideoDataset generate(std::vector<MotionProgram> programs, Index train_per_class, Index test_per_class,
                      const Geometry& geometry, std::uint64_t seed) {
  if (programs.empty()) throw ConfigError("program list is empty");
  if (train_per_class < 1 || test_per_class < 1) throw ConfigError("per-class split counts must be positive");
  if (geometry.frames < 2 || geometry.height < 1 || geometry.width < 1 || geometry.channels < 1) {
    throw ConfigError("invalid geometry " + to_string(geometry));
  }
  std::sort(programs.begin(), programs.end(), [](const auto& a, const auto& b) { return a.class_id < b.class_id; });
  for (std::size_t i = 0; i < programs.size(); ++i) {
    if (programs[i].class_id != static_cast<int>(i)) {
      throw ConfigError("program class ids must be distinct and cover 0.." + std::to_string(programs.size() - 1));
    }
  }

  VideoDataset ds;
  ds.geometry = geometry;
  ds.programs = std::move(programs);
  ds.seed = seed;
  ds.train_per_class = train_per_class;
  ds.test_per_class = test_per_class;
  const CounterRng root = seed_stream(seed).derive("videogen");
  auto render_split = [&](std::string_view split, Index count) {
    std::vector<std::vector<Tensor>> out(ds.programs.size());
    for (std::size_t c = 0; c < ds.programs.size(); ++c) {
      for (Index i = 0; i < count; ++i) {
        CounterRng rng = root.derive(split, (static_cast<std::uint64_t>(c) << 32) | static_cast<std::uint64_t>(i));
        out[c].push_back(render_video(ds.programs[c], geometry, rng));
      }
    }
    return out;
  };
  ds.train = render_split("train", train_per_class);
  ds.test = render_split("test", test_per_class);
  return ds;
}

namespace {
constexpr std::string_view kDatasetMagic = "PVDC";
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

std::string serialize_dataset(const VideoDataset& ds) {
  io::ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(kDatasetVersion);
  for (Index e : {ds.geometry.frames, ds.geometry.height, ds.geometry.width, ds.geometry.channels}) {
    w.u32(static_cast<std::uint32_t>(e));
  }
  w.u32(static_cast<std::uint32_t>(ds.classes()));
  w.u32(static_cast<std::uint32_t>(ds.train_per_class));
  w.u32(static_cast<std::uint32_t>(ds.test_per_class));
  w.u64(ds.seed);
  for (const MotionProgram& p : ds.programs) {
    w.u32(static_cast<std::uint32_t>(p.class_id));
    w.u32(static_cast<std::uint32_t>(p.law));
    w.u32(static_cast<std::uint32_t>(p.sprite));
    w.u32(static_cast<std::uint32_t>(p.axis));
    w.u32(static_cast<std::uint32_t>(p.nonlinearity_rank()));
    w.f64(p.speed);
    w.f64(p.amplitude);
  }
  for (const auto* split : {&ds.train, &ds.test}) {
    for (const auto& videos : *split) {
      for (const Tensor& v : videos) w.floats(v.span());
    }
  }
  return w.buffer();
}

VideoDataset deserialize_dataset(std::string_view bytes) {
  io::ByteReader r(bytes, "PVDC");
  const std::string_view magic = r.bytes(4, "magic");
  if (magic != kDatasetMagic) {
    throw FormatError("PVDC: bad magic \"" + std::string(magic) + "\", expected \"PVDC\"");
  }
  if (const auto v = r.u32(); v != kDatasetVersion) throw FormatError("PVDC: unsupported version " + std::to_string(v));
  VideoDataset ds;
  ds.geometry.frames = r.u32();
  ds.geometry.height = r.u32();
  ds.geometry.width = r.u32();
  ds.geometry.channels = r.u32();
  const std::uint32_t classes = r.u32();
  ds.train_per_class = r.u32();
  ds.test_per_class = r.u32();
  ds.seed = r.u64();
  const Geometry& g = ds.geometry;
  if (g.frames == 0 || g.height == 0 || g.width == 0 || g.channels == 0 || classes == 0) {
    throw FormatError("PVDC: geometry mismatch, zero extent in header");
  }
  for (std::uint32_t c = 0; c < classes; ++c) {
    MotionProgram p;
    p.class_id = static_cast<int>(r.u32());
    const std::uint32_t law = r.u32();
    const std::uint32_t sprite = r.u32();
    if (law > 5 || sprite > 1) throw FormatError("PVDC: label table entry " + std::to_string(c) + " is invalid");
    p.law = static_cast<MotionLaw>(law);
    p.sprite = static_cast<SpriteKind>(sprite);
    p.axis = static_cast<int>(r.u32());
    if (const auto rank = r.u32(); static_cast<int>(rank) != p.nonlinearity_rank()) {
      throw FormatError("PVDC: label table rank disagrees with motion law for class " + std::to_string(c));
    }
    p.speed = r.f64();
    p.amplitude = r.f64();
    if (p.class_id != static_cast<int>(c)) throw FormatError("PVDC: label table out of class order");
    ds.programs.push_back(p);
  }
  const auto payload = static_cast<std::size_t>(g.video_size()) * sizeof(float) * classes *
                       static_cast<std::size_t>(ds.train_per_class + ds.test_per_class);
  if (r.remaining() != payload) {
    throw FormatError("PVDC: payload is " + std::to_string(r.remaining()) + " bytes, geometry requires " +
                      std::to_string(payload));
  }
  for (auto [split, count] : {std::pair{&ds.train, ds.train_per_class}, std::pair{&ds.test, ds.test_per_class}}) {
    split->resize(classes);
    for (auto& videos : *split) {
      for (Index i = 0; i < count; ++i) {
        Tensor v(g.video_shape());
        r.floats(v.span(), "frame payload");
        videos.push_back(std::move(v));
      }
    }
  }
  return ds;
}

void save(const VideoDataset& dataset, const std::string& path) { io::write_file(path, serialize_dataset(dataset)); }

VideoDataset load_dataset(const std::string& path) { return deserialize_dataset(io::read_file(path)); }

Tensor stack_videos(const std::vector<const Tensor*>& videos) {
  if (videos.empty()) throw Error("stack_videos: empty batch");
  Shape shape = videos.front()->shape();
  shape.insert(shape.begin(), static_cast<Index>(videos.size()));
  Tensor out(shape);
  const Index n = videos.front()->size();
  for (std::size_t i = 0; i < videos.size(); ++i) {
    if (videos[i]->shape() != videos.front()->shape()) throw ShapeError("stack_videos: mixed video shapes");
    std::copy_n(videos[i]->data(), n, out.data() + static_cast<Index>(i) * n);
  }
  return out;
}

Tensor flip_horizontal(const Tensor& video) {
  const Index T = video.dim(0), H = video.dim(1), W = video.dim(2), C = video.dim(3);
  Tensor out(video.shape());
  for (Index th = 0; th < T * H; ++th)
    for (Index w = 0; w < W; ++w)
      std::copy_n(video.data() + (th * W + w) * C, C, out.data() + (th * W + (W - 1 - w)) * C);
  return out;
}

RealBatch sample_real_batch(const VideoDataset& dataset, int class_id, Index batch_size, std::uint64_t seed,
                            bool flip) {
  if (class_id < 0 || class_id >= dataset.classes()) throw Error("unknown class " + std::to_string(class_id));
  const auto& videos = dataset.train[static_cast<std::size_t>(class_id)];
  const auto n = static_cast<Index>(videos.size());
  if (batch_size < 1 || batch_size > n) {
    throw Error("batch of " + std::to_string(batch_size) + " exceeds class " + std::to_string(class_id) + " size " +
                std::to_string(n));
  }
  CounterRng rng = seed_stream(seed).derive("real-batch", static_cast<std::uint64_t>(class_id));
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  for (Index i = 0; i < batch_size; ++i) {
    const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  RealBatch out;
  out.indices.assign(order.begin(), order.begin() + batch_size);
  std::vector<Tensor> flipped;
  flipped.reserve(static_cast<std::size_t>(batch_size));
  std::vector<const Tensor*> members;
  for (Index idx : out.indices) {
    const Tensor& v = videos[static_cast<std::size_t>(idx)];
    const bool f = flip && rng.bernoulli(0.5);
    out.flipped.push_back(f);
    if (f) {
      flipped.push_back(flip_horizontal(v));
      members.push_back(&flipped.back());
    } else {
      members.push_back(&v);
    }
  }
  out.batch = stack_videos(members);
  return out;
}

}  // namespace prism
