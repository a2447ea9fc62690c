#include "prism/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "prism/log.hpp"
#include "prism/model_zoo.hpp"

namespace prism {

std::size_t CoresetSelection::total() const {
  std::size_t n = 0;
  for (const auto& c : indices) n += c.size();
  return n;
}

namespace {

void check_budget(const VideoDataset& dataset, int videos_per_class) {
  if (videos_per_class < 1) throw ConfigError("videos_per_class must be at least 1");
  if (videos_per_class > dataset.train_per_class) {
    throw ConfigError("videos_per_class " + std::to_string(videos_per_class) + " exceeds the " +
                      std::to_string(dataset.train_per_class) + " train videos per class");
  }
}

// Scores within rounding of each other count as ties, which go to the lower index.
bool clearly_less(double a, double b) { return a < b - 1e-12 * std::max(1.0, std::abs(b)); }

bool degenerate(const Eigen::MatrixXd& features) {
  return features.rows() > 1 && (features.rowwise() - features.row(0)).cwiseAbs().maxCoeff() == 0.0;
}

}  // namespace

CoresetSelection random_coreset(const VideoDataset& dataset, int videos_per_class, std::uint64_t seed) {
  check_budget(dataset, videos_per_class);
  CoresetSelection out{"random", "none", videos_per_class, {}, {}};
  const CounterRng root = seed_stream(seed).derive("random-coreset");
  for (int c = 0; c < dataset.classes(); ++c) {
    CounterRng rng = root.derive("class", static_cast<std::uint64_t>(c));
    std::vector<Index> pool(static_cast<std::size_t>(dataset.train_per_class));
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<Index>(i);
    for (std::size_t i = 0; i < static_cast<std::size_t>(videos_per_class); ++i) {
      const std::size_t j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(static_cast<std::size_t>(videos_per_class));
    out.indices.push_back(pool);
    out.scores.emplace_back(pool.size(), 0.0);
  }
  return out;
}

FeatureSpace random_features(const VideoDataset& dataset, std::uint64_t seed) {
  ModelSpec spec;
  spec.arch = Architecture::kConv3dMicro;
  spec.classes = std::max(2, dataset.classes());
  spec.geometry = dataset.geometry;
  const std::uint64_t init_seed = seed_stream(seed).derive("coreset-features").next_u64();
  const Params params = init_params(spec, init_seed);
  FeatureSpace out;
  out.id = "conv3d-micro-random:" + std::to_string(init_seed);
  for (int c = 0; c < dataset.classes(); ++c) {
    const auto& videos = dataset.train[static_cast<std::size_t>(c)];
    Eigen::MatrixXd m(static_cast<Index>(videos.size()), spec.widths[1]);
    for (std::size_t i = 0; i < videos.size(); ++i) {
      const Tensor batch = videos[i].reshaped([&] {
        Shape s = videos[i].shape();
        s.insert(s.begin(), 1);
        return s;
      }());
      const Tensor e = embed(spec, params, batch);
      for (Index k = 0; k < e.size(); ++k) m(static_cast<Index>(i), k) = e[k];
    }
    out.per_class.push_back(std::move(m));
  }
  return out;
}

std::vector<Index> herding_select(const Eigen::MatrixXd& features, int count, std::vector<double>* scores) {
  const Index n = features.rows();
  if (count < 0 || count > n) throw ConfigError("herding: cannot pick " + std::to_string(count) + " of " + std::to_string(n));
  if (degenerate(features)) log().warn("herding: all features are equal, selection falls back to index order");
  const Eigen::RowVectorXd mean = features.colwise().mean();
  Eigen::RowVectorXd running = Eigen::RowVectorXd::Zero(features.cols());
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  std::vector<Index> out;
  for (int k = 0; k < count; ++k) {
    Index best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      const double d = (mean - (running + features.row(i)) / static_cast<double>(k + 1)).norm();
      if (best < 0 || clearly_less(d, best_d)) {
        best_d = d;
        best = i;
      }
    }
    taken[static_cast<std::size_t>(best)] = true;
    running += features.row(best);
    out.push_back(best);
    if (scores) scores->push_back(best_d);
  }
  return out;
}

std::vector<Index> kcenter_select(const Eigen::MatrixXd& features, int count, std::vector<double>* scores) {
  const Index n = features.rows();
  if (count < 0 || count > n) throw ConfigError("k-center: cannot pick " + std::to_string(count) + " of " + std::to_string(n));
  if (count == 0) return {};
  if (degenerate(features)) log().warn("k-center: all features are equal, selection falls back to index order");
  const Eigen::RowVectorXd mean = features.colwise().mean();
  const Eigen::VectorXd to_mean = (features.rowwise() - mean).rowwise().norm();
  Index first = 0;
  for (Index i = 1; i < n; ++i)
    if (clearly_less(to_mean(i), to_mean(first))) first = i;
  const double first_d = to_mean(first);
  std::vector<Index> out{first};
  if (scores) scores->push_back(first_d);
  Eigen::VectorXd nearest = (features.rowwise() - features.row(first)).rowwise().norm();
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  taken[static_cast<std::size_t>(first)] = true;
  for (int k = 1; k < count; ++k) {
    Index best = -1;
    double best_d = -1.0;
    for (Index i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      if (best < 0 || clearly_less(best_d, nearest(i))) {
        best_d = nearest(i);
        best = i;
      }
    }
    taken[static_cast<std::size_t>(best)] = true;
    out.push_back(best);
    if (scores) scores->push_back(best_d);
    nearest = nearest.cwiseMin((features.rowwise() - features.row(best)).rowwise().norm());
  }
  return out;
}

namespace {

template <typename Select>
CoresetSelection greedy_coreset(const char* method, Select select, const VideoDataset& dataset, int videos_per_class,
                                const FeatureSpace& features) {
  check_budget(dataset, videos_per_class);
  if (static_cast<int>(features.per_class.size()) != dataset.classes()) {
    throw ConfigError(std::string(method) + ": feature space does not cover every class");
  }
  CoresetSelection out{method, features.id, videos_per_class, {}, {}};
  for (const auto& m : features.per_class) {
    std::vector<double> scores;
    out.indices.push_back(select(m, videos_per_class, &scores));
    out.scores.push_back(std::move(scores));
  }
  return out;
}

}  // namespace

CoresetSelection herding_coreset(const VideoDataset& dataset, int videos_per_class, const FeatureSpace& features) {
  return greedy_coreset("herding", herding_select, dataset, videos_per_class, features);
}

CoresetSelection kcenter_coreset(const VideoDataset& dataset, int videos_per_class, const FeatureSpace& features) {
  return greedy_coreset("kcenter", kcenter_select, dataset, videos_per_class, features);
}

std::string selection_csv(const CoresetSelection& selection) {
  std::ostringstream os;
  os.precision(17);
  os << "class,rank,video,score\n";
  for (std::size_t c = 0; c < selection.indices.size(); ++c) {
    for (std::size_t r = 0; r < selection.indices[c].size(); ++r) {
      os << c << ',' << r << ',' << selection.indices[c][r] << ',' << selection.scores[c][r] << '\n';
    }
  }
  return os.str();
}

CoresetSelection parse_selection_csv(std::string_view text, const std::string& method) {
  CoresetSelection out{method, "file", 0, {}, {}};
  std::istringstream is{std::string(text)};
  std::string line;
  if (!std::getline(is, line) || line != "class,rank,video,score") {
    throw FormatError(method + " selection: missing header 'class,rank,video,score'");
  }
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::size_t c = 0, r = 0;
    Index v = 0;
    double score = 0.0;
    char sep1 = 0, sep2 = 0, sep3 = 0;
    if (!(row >> c >> sep1 >> r >> sep2 >> v >> sep3 >> score) || sep1 != ',' || sep2 != ',' || sep3 != ',') {
      throw FormatError(method + " selection: malformed row " + std::to_string(line_no));
    }
    if (c >= out.indices.size()) {
      out.indices.resize(c + 1);
      out.scores.resize(c + 1);
    }
    if (r != out.indices[c].size()) throw FormatError(method + " selection: ranks out of order at row " + std::to_string(line_no));
    out.indices[c].push_back(v);
    out.scores[c].push_back(score);
  }
  if (!out.indices.empty()) out.videos_per_class = static_cast<int>(out.indices.front().size());
  return out;
}

std::vector<AblationVariant> ablation_matrix(const CondenseConfig& base) {
  base.validate();
  std::vector<AblationVariant> out;
  out.push_back({"base", "", "none", base});
  auto variant = [&](std::string tag, std::string group, std::string knob, auto change) {
    CondenseConfig c = base;
    change(c);
    out.push_back({std::move(tag), std::move(group), std::move(knob), c});
  };
  const auto keep = [](CondenseConfig&) {};
  variant("with-insertion", "A", "none", keep);
  variant("no-insertion", "A", "insertion", [](CondenseConfig& c) { c.insertion = InsertionMode::kDisabled; });
  variant("negative-grad", "B", "none", keep);
  variant("random-position", "B", "insertion",
          [](CondenseConfig& c) { c.insertion = InsertionMode::kRandomPosition; });
  variant("cosine", "C", "none", keep);
  variant("l2", "C", "criterion", [](CondenseConfig& c) { c.criterion = Criterion::kL2; });
  variant("no-warmup", "D", "warmup_fraction", [](CondenseConfig& c) { c.warmup_fraction = 0.0; });
  variant("no-cooldown", "D", "cooldown_fraction", [](CondenseConfig& c) { c.cooldown_fraction = 0.0; });
  return out;
}

std::vector<std::string> config_diff(const CondenseConfig& a, const CondenseConfig& b) {
  std::vector<std::string> out;
#define PRISM_DIFF(field) \
  if (a.field != b.field) out.push_back(#field)
  PRISM_DIFF(videos_per_class);
  PRISM_DIFF(epsilon);
  PRISM_DIFF(learning_rate);
  PRISM_DIFF(momentum);
  PRISM_DIFF(real_batch);
  PRISM_DIFF(iterations);
  PRISM_DIFF(warmup_fraction);
  PRISM_DIFF(cooldown_fraction);
  PRISM_DIFF(check_period);
  PRISM_DIFF(insertion);
  PRISM_DIFF(criterion);
  PRISM_DIFF(l2_threshold);
  PRISM_DIFF(max_keys);
  PRISM_DIFF(key_gradient);
  PRISM_DIFF(matcher_reset_period);
  PRISM_DIFF(matcher_learning_rate);
  PRISM_DIFF(flip);
  PRISM_DIFF(seed);
  PRISM_DIFF(record_gradients);
#undef PRISM_DIFF
  return out;
}

}  // namespace prism
