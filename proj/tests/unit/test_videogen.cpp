#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "prism/binary_io.hpp"
#include "prism/videogen.hpp"

using namespace prism;

namespace {

const Geometry kGeometry{};

VideoDataset small_dataset(std::uint64_t seed = 7) {
  return generate(default_programs(), 4, 2, kGeometry, seed);
}

// Step-by-step walk between two walls, flipping velocity on each contact.
// `reflections` receives the step index of every wall contact.
std::vector<double> simulate_bounce(double start, double velocity, double lo, double hi, int steps,
                                    std::vector<int>* reflections) {
  std::vector<double> xs{start};
  double x = start;
  reflections->clear();
  for (int i = 1; i < steps; ++i) {
    x += velocity;
    while (x > hi || x < lo) {
      x = x > hi ? 2 * hi - x : 2 * lo - x;
      velocity = -velocity;
      reflections->push_back(i);
    }
    xs.push_back(x);
  }
  return xs;
}

int slope_sign_changes(const std::vector<double>& xs) {
  int changes = 0;
  double prev = 0.0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const double d = xs[i] - xs[i - 1];
    if (prev != 0.0 && d != 0.0 && (d > 0) != (prev > 0)) ++changes;
    if (d != 0.0) prev = d;
  }
  return changes;
}

}  // namespace

TEST_CASE("linear translation has an arithmetic x sequence") {
  const MotionProgram p = default_program(0, MotionLaw::kLinearTranslate, 0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CounterRng rng = seed_stream(seed);
    const auto states = trajectory(p, kGeometry, rng);
    const double step = states[1].x - states[0].x;
    CHECK(std::abs(step) == doctest::Approx(1.0));
    for (std::size_t t = 1; t < states.size(); ++t) {
      CHECK(states[t].x - states[t - 1].x == doctest::Approx(step));
      CHECK(states[t].y == states[0].y);
    }
  }
}

TEST_CASE("bounce matches a step-by-step wall simulation") {
  MotionProgram p = default_program(0, MotionLaw::kBounce, 0);
  p.speed = 1.0;
  int single_reflection_runs = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    CounterRng rng = seed_stream(seed).derive("bounce");
    const auto states = trajectory(p, kGeometry, rng);
    std::vector<double> xs;
    for (const auto& s : states) xs.push_back(s.x);
    const double lo = states[0].radius, hi = static_cast<double>(kGeometry.width - 1) - states[0].radius;
    bool matched = false;
    const int steps = static_cast<int>(xs.size());
    for (double v : {1.0, -1.0}) {
      std::vector<int> reflections;
      const auto sim = simulate_bounce(xs[0], v, lo, hi, steps, &reflections);
      bool same = true;
      for (std::size_t t = 0; t < xs.size(); ++t) same = same && std::abs(sim[t] - xs[t]) < 1e-9;
      if (!same) continue;
      matched = true;
      // A contact in the first or last step leaves no full chord on one side.
      if (reflections.size() == 1 && reflections[0] >= 2 && reflections[0] <= steps - 2) {
        ++single_reflection_runs;
        CHECK(slope_sign_changes(xs) == 1);
      }
    }
    CHECK(matched);
  }
  CHECK(single_reflection_runs > 10);
}

TEST_CASE("sprites stay inside the frame for every law") {
  for (int law = 0; law <= 5; ++law) {
    for (int axis : {0, 1}) {
      const MotionProgram p = default_program(0, static_cast<MotionLaw>(law), axis);
      for (std::uint64_t seed = 0; seed < 50; ++seed) {
        CounterRng rng = seed_stream(seed);
        for (const auto& s : trajectory(p, kGeometry, rng)) {
          CHECK(s.x - s.radius >= -1e-9);
          CHECK(s.y - s.radius >= -1e-9);
          CHECK(s.x + s.radius <= kGeometry.width - 1 + 1e-9);
          CHECK(s.y + s.radius <= kGeometry.height - 1 + 1e-9);
        }
      }
    }
  }
}

TEST_CASE("nonlinearity rank grades motion complexity") {
  CHECK(nonlinearity_rank(MotionLaw::kLinearTranslate) == 0);
  for (MotionLaw law : {MotionLaw::kBounce, MotionLaw::kZigzag, MotionLaw::kHoldThenJump, MotionLaw::kCircularOrbit,
                        MotionLaw::kGrowShrink}) {
    CHECK(nonlinearity_rank(law) > 0);
  }
  const auto programs = default_programs();
  CHECK(programs.size() == 6);
  CHECK(std::count_if(programs.begin(), programs.end(), [](const auto& p) { return p.nonlinearity_rank() == 0; }) ==
        2);
}

TEST_CASE("generation is deterministic and in range") {
  const VideoDataset a = small_dataset();
  const VideoDataset b = small_dataset();
  CHECK(a == b);
  CHECK_FALSE(a == small_dataset(8));
  for (const auto* split : {&a.train, &a.test}) {
    CHECK(split->size() == 6);
    for (const auto& cls : *split) {
      for (const auto& v : cls) {
        CHECK(v.shape() == kGeometry.video_shape());
        CHECK(v.array().minCoeff() >= 0.0f);
        CHECK(v.array().maxCoeff() <= 1.0f);
        CHECK(v.array().maxCoeff() > 0.0f);
      }
    }
  }
}

TEST_CASE("train and test splits are disjoint") {
  const VideoDataset d = small_dataset();
  for (std::size_t c = 0; c < d.train.size(); ++c)
    for (const auto& tr : d.train[c])
      for (const auto& te : d.test[c]) CHECK_FALSE(tr == te);
}

TEST_CASE("channels replicate the gray value") {
  const VideoDataset d = small_dataset();
  const Tensor& v = d.train[2][0];
  for (Index i = 0; i < v.size(); i += 3) {
    CHECK(v[i] == v[i + 1]);
    CHECK(v[i] == v[i + 2]);
  }
}

TEST_CASE("generation errors") {
  Geometry tiny{8, 4, 4, 3};
  CHECK_THROWS_WITH_AS(generate(default_programs(), 1, 1, tiny, 0), doctest::Contains("cannot fit"), ConfigError);
  CHECK_THROWS_AS(generate({}, 1, 1, kGeometry, 0), ConfigError);
  auto dup = default_programs();
  dup[1].class_id = 0;
  CHECK_THROWS_AS(generate(dup, 1, 1, kGeometry, 0), ConfigError);
}

TEST_CASE("container round trip and layout") {
  const VideoDataset d = small_dataset();
  const std::string bytes = serialize_dataset(d);
  CHECK(bytes.substr(0, 4) == "PVDC");
  const VideoDataset back = deserialize_dataset(bytes);
  CHECK(back == d);
  CHECK(serialize_dataset(back) == bytes);

  const auto path = (std::filesystem::temp_directory_path() / "prism_test_roundtrip.pvdc").string();
  save(d, path);
  CHECK(load_dataset(path) == d);
  std::filesystem::remove(path);
}

TEST_CASE("payload size of a ten-video dataset") {
  auto programs = default_programs();
  programs.resize(2);
  const VideoDataset d = generate(programs, 3, 2, kGeometry, 1);
  const std::size_t header = 4 + 4 + 4 * 4 + 4 + 4 + 4 + 8;
  const std::size_t labels = 2 * (5 * 4 + 2 * 8);
  CHECK(serialize_dataset(d).size() - header - labels == std::size_t{10} * 8 * 16 * 16 * 3 * 4);
}

TEST_CASE("container errors") {
  const std::string bytes = serialize_dataset(small_dataset());
  std::string bad = bytes;
  bad[1] = 'X';
  CHECK_THROWS_WITH_AS(deserialize_dataset(bad), doctest::Contains("PVDC"), FormatError);
  CHECK_THROWS_AS(deserialize_dataset(bytes.substr(0, bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS(deserialize_dataset(bytes + "x"), FormatError);
  CHECK_THROWS_AS(load_dataset("/nonexistent/prism.pvdc"), MissingArtifact);
}

TEST_CASE("real batch sampling") {
  const VideoDataset d = small_dataset();
  SUBCASE("full class is a permutation") {
    const RealBatch b = sample_real_batch(d, 3, 4, 11);
    auto idx = b.indices;
    std::sort(idx.begin(), idx.end());
    CHECK(idx == std::vector<Index>{0, 1, 2, 3});
    CHECK(b.batch.shape() == Shape{4, 8, 16, 16, 3});
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(std::equal(d.train[3][static_cast<std::size_t>(b.indices[i])].vector().begin(),
                       d.train[3][static_cast<std::size_t>(b.indices[i])].vector().end(),
                       b.batch.data() + static_cast<Index>(i) * kGeometry.video_size()));
    }
  }
  SUBCASE("deterministic without flips") {
    CHECK(sample_real_batch(d, 1, 3, 5).batch == sample_real_batch(d, 1, 3, 5).batch);
  }
  SUBCASE("flip frequency") {
    int flips = 0;
    for (std::uint64_t s = 0; s < 1000; ++s) flips += sample_real_batch(d, 0, 1, s, true).flipped[0];
    CHECK(flips >= 450);
    CHECK(flips <= 550);
  }
  SUBCASE("flipped videos are mirrored") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const RealBatch b = sample_real_batch(d, 2, 1, s, true);
      const Tensor& src = d.train[2][static_cast<std::size_t>(b.indices[0])];
      const Tensor expect = b.flipped[0] ? flip_horizontal(src) : src;
      CHECK(b.batch.reshaped(src.shape()) == expect);
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(sample_real_batch(d, 6, 1, 0), Error);
    CHECK_THROWS_AS(sample_real_batch(d, 0, 5, 0), Error);
  }
}

TEST_CASE("horizontal flip mirrors columns") {
  Tensor v({1, 1, 3, 1}, std::vector<float>{1, 2, 3});
  CHECK(flip_horizontal(v) == Tensor({1, 1, 3, 1}, std::vector<float>{3, 2, 1}));
  CHECK(flip_horizontal(flip_horizontal(v)) == v);
}

TEST_CASE("counter generator is platform independent") {
  CounterRng rng(0);
  CHECK(rng.next_u64() == mix64(0x9E3779B97F4A7C15ull));
  CounterRng a = seed_stream(1).derive("x", 2), b = seed_stream(1).derive("x", 2);
  CHECK(a.next_u64() == b.next_u64());
  CHECK(seed_stream(1).derive("x", 2).next_u64() != seed_stream(1).derive("x", 3).next_u64());
}
