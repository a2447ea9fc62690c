#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "prism/baselines.hpp"
#include "coreset_oracle.hpp"
#include "support.hpp"

using namespace prism;
using namespace prism::test;

namespace {

const VideoDataset& dataset() {
  static const VideoDataset d = generate(default_programs(), 6, 1, Geometry{}, 12);
  return d;
}

Eigen::MatrixXd line(std::initializer_list<double> xs) {
  Eigen::MatrixXd m(static_cast<Index>(xs.size()), 1);
  Index i = 0;
  for (double x : xs) m(i++, 0) = x;
  return m;
}

Eigen::MatrixXd random_points(CounterRng& rng, Index n, Index dim) {
  Eigen::MatrixXd m(n, dim);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < dim; ++j) m(i, j) = rng.normal(0, 1);
  return m;
}

double min_pairwise(const Eigen::MatrixXd& f, const std::vector<Index>& rows) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = a + 1; b < rows.size(); ++b) m = std::min(m, (f.row(rows[a]) - f.row(rows[b])).norm());
  return m;
}

}  // namespace

TEST_CASE("random coreset") {
  const VideoDataset& d = dataset();
  const CoresetSelection one = random_coreset(d, 1, 3);
  CHECK(one.total() == 6);
  CHECK(one.feature_space == "none");

  const CoresetSelection all = random_coreset(d, 6, 3);
  for (const auto& cls : all.indices) {
    const std::set<Index> s(cls.begin(), cls.end());
    CHECK(s == std::set<Index>{0, 1, 2, 3, 4, 5});
  }

  int differ = 0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    const auto a = random_coreset(d, 2, 100 + 2 * t), b = random_coreset(d, 2, 101 + 2 * t);
    differ += a.indices != b.indices;
    CHECK(a.indices == random_coreset(d, 2, 100 + 2 * t).indices);
    for (const auto& cls : a.indices) CHECK(cls[0] != cls[1]);
  }
  CHECK(differ >= 1);
  CHECK_THROWS_AS(random_coreset(d, 7, 0), ConfigError);
  CHECK_THROWS_AS(random_coreset(d, 0, 0), ConfigError);
}

TEST_CASE("herding line example") {
  std::vector<double> scores;
  const auto pick = herding_select(line({0, 1, 2, 3}), 2, &scores);
  CHECK(std::set<Index>(pick.begin(), pick.end()) == std::set<Index>{1, 2});
  CHECK(scores[1] == doctest::Approx(0.0));
  CHECK(herding_select(line({0, 1, 2, 3}), 2) == brute_force(line({0, 1, 2, 3}), 2, herding_objectives));
}

TEST_CASE("k-center line example") {
  // Mean 1.68 puts the first center at the point 2.
  const Eigen::MatrixXd f = line({0, 1, 2, 3, 2.4});
  const auto pick = kcenter_select(f, 2);
  CHECK(pick == std::vector<Index>{2, 0});
}

TEST_CASE("greedy selectors match exhaustive oracles") {
  for (std::uint64_t s = 0; s < 300; ++s) {
    CounterRng rng = seed_stream(s).derive("coreset-oracle");
    const Index n = random_extent(rng, 1, 6);
    const int count = static_cast<int>(random_extent(rng, 1, std::min<Index>(3, n)));
    const Eigen::MatrixXd f = random_points(rng, n, random_extent(rng, 1, 4));
    CHECK(herding_select(f, count) == brute_force(f, count, herding_objectives));
    CHECK(kcenter_select(f, count) == brute_force(f, count, kcenter_objectives));
  }
}

TEST_CASE("two points tie on the first pick") {
  for (std::uint64_t s = 0; s < 200; ++s) {
    CounterRng rng = seed_stream(s).derive("two-point");
    const Eigen::MatrixXd f = random_points(rng, 2, random_extent(rng, 1, 8));
    CHECK(herding_select(f, 2) == std::vector<Index>{0, 1});
    CHECK(kcenter_select(f, 2) == std::vector<Index>{0, 1});
  }
}

TEST_CASE("greedy prefix property and shared first pick") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    CounterRng rng = seed_stream(s).derive("prefix");
    const Eigen::MatrixXd f = random_points(rng, 10, 3);
    for (int k = 1; k < 10; ++k) {
      const auto a = herding_select(f, k), b = herding_select(f, k + 1);
      CHECK(std::equal(a.begin(), a.end(), b.begin()));
      const auto c = kcenter_select(f, k), e = kcenter_select(f, k + 1);
      CHECK(std::equal(c.begin(), c.end(), e.begin()));
    }
    CHECK(herding_select(f, 1) == kcenter_select(f, 1));
  }
}

TEST_CASE("degenerate features fall back to index order") {
  const Eigen::MatrixXd same = Eigen::MatrixXd::Ones(4, 3);
  CHECK(herding_select(same, 3) == std::vector<Index>{0, 1, 2});
  CHECK(kcenter_select(same, 3) == std::vector<Index>{0, 1, 2});
  CHECK_THROWS_AS(herding_select(same, 5), ConfigError);
}

TEST_CASE("coresets on random embeddings") {
  const VideoDataset& d = dataset();
  const FeatureSpace features = random_features(d, 4);
  REQUIRE(features.per_class.size() == 6);
  CHECK(features.per_class[0].rows() == 6);
  CHECK(features.per_class[0].cols() == 16);
  CHECK(random_features(d, 4).per_class[3] == features.per_class[3]);

  const CoresetSelection herd = herding_coreset(d, 3, features);
  const CoresetSelection kc = kcenter_coreset(d, 3, features);
  CHECK(herd.feature_space == features.id);
  for (const auto* sel : {&herd, &kc}) {
    CHECK(sel->total() == 18);
    for (const auto& cls : sel->indices) CHECK(std::set<Index>(cls.begin(), cls.end()).size() == 3);
  }
  CHECK(herding_coreset(d, 3, features).indices == herd.indices);

  // Max-min spread against random subsets of the same size.
  int not_worse = 0, trials = 0;
  CounterRng rng = seed_stream(31).derive("spread");
  for (std::size_t c = 0; c < 6; ++c) {
    const auto& f = features.per_class[c];
    for (int t = 0; t < 20; ++t) {
      std::vector<Index> pool{0, 1, 2, 3, 4, 5};
      for (std::size_t i = 0; i < 3; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
      pool.resize(3);
      ++trials;
      not_worse += min_pairwise(f, kc.indices[c]) >= min_pairwise(f, pool) - 1e-12;
    }
  }
  MESSAGE("k-center spread not worse than random in " << not_worse << " of " << trials << " trials");
  CHECK(not_worse >= trials * 9 / 10);
}

TEST_CASE("selection csv round trip") {
  const VideoDataset& d = dataset();
  const CoresetSelection herd = herding_coreset(d, 2, random_features(d, 1));
  const std::string csv = selection_csv(herd);
  CHECK(csv.rfind("class,rank,video,score\n", 0) == 0);
  const CoresetSelection back = parse_selection_csv(csv, "herding");
  CHECK(back.indices == herd.indices);
  CHECK(back.scores == herd.scores);
  CHECK(back.videos_per_class == 2);
  CHECK_THROWS_AS(parse_selection_csv("class,video\n", "x"), FormatError);
  CHECK_THROWS_AS(parse_selection_csv("class,rank,video,score\n0,1,3,0.5\n", "x"), FormatError);
  CHECK_THROWS_AS(parse_selection_csv("class,rank,video,score\n0;0;3;0.5\n", "x"), FormatError);
}

TEST_CASE("ablation matrix") {
  CondenseConfig base;
  const auto m = ablation_matrix(base);
  REQUIRE(m.size() == 9);
  CHECK(m[0].tag == "base");
  std::set<std::string> tags;
  for (const auto& v : m) {
    tags.insert(v.tag);
    const auto diff = config_diff(base, v.config);
    if (v.knob == "none") {
      CHECK(diff.empty());
    } else {
      CHECK(diff == std::vector<std::string>{v.knob});
    }
  }
  CHECK(tags.size() == 9);
  auto find = [&](const std::string& tag) {
    return std::find_if(m.begin(), m.end(), [&](const auto& v) { return v.tag == tag; })->config;
  };
  CHECK(find("no-warmup").warmup_fraction == 0.0);
  CHECK(find("no-warmup").cooldown_fraction == 0.2);
  CHECK(find("no-cooldown").cooldown_fraction == 0.0);
  CHECK(find("l2").criterion == Criterion::kL2);
  CHECK(find("l2").l2_threshold == 0.141);
  CHECK(find("no-insertion").insertion == InsertionMode::kDisabled);
  CHECK(find("random-position").insertion == InsertionMode::kRandomPosition);
  base.momentum = 1.5;
  CHECK_THROWS_AS(ablation_matrix(base), ConfigError);
}
