#pragma once

// MovingShapes: procedural grayscale sprite videos whose class is defined by
// a motion law. Frames are [T,H,W,C] in [0,1] with the gray value replicated
// across channels.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "prism/model_zoo.hpp"
#include "prism/random.hpp"
#include "prism/tensor.hpp"

namespace prism {

enum class SpriteKind : std::uint32_t { kSquare = 0, kDisk = 1 };

enum class MotionLaw : std::uint32_t {
  kLinearTranslate = 0,
  kBounce = 1,
  kZigzag = 2,
  kCircularOrbit = 3,
  kGrowShrink = 4,
  kHoldThenJump = 5,
};

std::string_view to_string(SpriteKind kind);
std::string_view to_string(MotionLaw law);
SpriteKind parse_sprite(std::string_view name);
MotionLaw parse_motion_law(std::string_view name);

// 0 for straight-line motion; higher for laws that break linear
// interpolation between the first and last frame.
int nonlinearity_rank(MotionLaw law);

struct MotionProgram {
  int class_id = 0;
  MotionLaw law = MotionLaw::kLinearTranslate;
  SpriteKind sprite = SpriteKind::kSquare;
  int axis = 0;           // primary motion axis: 0 = x (horizontal), 1 = y
  double speed = 1.0;     // px/frame along the primary axis (orbit: turns per clip)
  double amplitude = 0.0; // zigzag offset, orbit radius, jump length, or radius swing

  int nonlinearity_rank() const { return prism::nonlinearity_rank(law); }
  friend bool operator==(const MotionProgram&, const MotionProgram&) = default;
};

// Defaults per law (speed/amplitude) used when a config names only the law.
MotionProgram default_program(int class_id, MotionLaw law, int axis = 0);

// The 6-class benchmark: 2 straight-line classes (horizontal, vertical) and
// bounce, zigzag, circular orbit, hold-then-jump.
std::vector<MotionProgram> default_programs();

// Sprite state for one frame.
struct SpriteState {
  double x = 0.0;
  double y = 0.0;
  double radius = 0.0;
};

// Position of a point moving at constant velocity between walls at lo and hi.
double reflect(double position, double lo, double hi);

/// Per-frame sprite states for one video; consumes jitter (direction sign,
/// start position, size) from `rng`. Throws ConfigError if the motion cannot
/// stay inside the frame.
std::vector<SpriteState> trajectory(const MotionProgram& program, const Geometry& geometry, CounterRng& rng);

// Soft-edged sprite raster, values intensity * coverage.
void render_frame(SpriteKind sprite, const SpriteState& state, double intensity, const Geometry& geometry,
                  float* frame);

Tensor render_video(const MotionProgram& program, const Geometry& geometry, CounterRng& rng);

struct Video {
  Tensor frames;  // [T,H,W,C]
  int label = 0;
};

struct VideoDataset {
  Geometry geometry;
  std::vector<MotionProgram> programs;  // indexed by class id
  std::uint64_t seed = 0;
  Index train_per_class = 0;
  Index test_per_class = 0;
  std::vector<std::vector<Tensor>> train;  // [class][index]
  std::vector<std::vector<Tensor>> test;

  int classes() const { return static_cast<int>(programs.size()); }
  const MotionProgram& program(int class_id) const { return programs.at(static_cast<std::size_t>(class_id)); }
  friend bool operator==(const VideoDataset&, const VideoDataset&) = default;
};

/// Programs need distinct class ids covering 0..n-1. Train and test videos
/// come from disjoint seed streams.
VideoDataset generate(std::vector<MotionProgram> programs, Index train_per_class, Index test_per_class,
                      const Geometry& geometry, std::uint64_t seed);

// "PVDC" container.
//   magic "PVDC" | version u32 | T,H,W,C u32 | class count u32 |
//   train-per-class u32 | test-per-class u32 | seed u64 |
//   label table: class count x (class id u32, law u32, sprite u32, axis u32,
//                               rank u32, speed f64, amplitude f64) |
//   float32 payload, videos ordered by (split, class, index)
std::string serialize_dataset(const VideoDataset& dataset);
VideoDataset deserialize_dataset(std::string_view bytes);
void save(const VideoDataset& dataset, const std::string& path);
VideoDataset load_dataset(const std::string& path);

// Packs videos into a batch [B,T,H,W,C].
Tensor stack_videos(const std::vector<const Tensor*>& videos);

// Mirrors a [T,H,W,C] video along W.
Tensor flip_horizontal(const Tensor& video);

struct RealBatch {
  Tensor batch;  // [B,T,H,W,C]
  std::vector<Index> indices;
  std::vector<bool> flipped;
};

/// Uniform sample without replacement from one class's train split; each
/// video is mirrored with probability 0.5 when `flip` is set.
RealBatch sample_real_batch(const VideoDataset& dataset, int class_id, Index batch_size, std::uint64_t seed,
                            bool flip = false);

}  // namespace prism
