#pragma once

// Coreset baselines (random, herding, k-center) and the ablation matrix
// of condensation configs.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "prism/condenser.hpp"
#include "prism/videogen.hpp"

namespace prism {

struct CoresetSelection {
  std::string method;
  std::string feature_space;  // "none" for random
  int videos_per_class = 0;
  std::vector<std::vector<Index>> indices;  // [class][rank] -> train index
  std::vector<std::vector<double>> scores;  // [class][rank]

  std::size_t total() const;
};

CoresetSelection random_coreset(const VideoDataset& dataset, int videos_per_class, std::uint64_t seed);

// Per-class embedding matrices [videos x features] from a fixed randomly
// initialized conv3d-micro with the dataset geometry.
struct FeatureSpace {
  std::string id;
  std::vector<Eigen::MatrixXd> per_class;
};

FeatureSpace random_features(const VideoDataset& dataset, std::uint64_t seed);

// Greedy selections over the rows of one feature matrix. Ties go to the
// lowest row index. `scores` receives the objective value of each pick.

// Each pick minimizes the distance between the class mean and the mean of
// the selection so far.
std::vector<Index> herding_select(const Eigen::MatrixXd& features, int count, std::vector<double>* scores = nullptr);

// First pick nearest the class mean, then each pick maximizes the distance
// to the nearest chosen center.
std::vector<Index> kcenter_select(const Eigen::MatrixXd& features, int count, std::vector<double>* scores = nullptr);

CoresetSelection herding_coreset(const VideoDataset& dataset, int videos_per_class, const FeatureSpace& features);
CoresetSelection kcenter_coreset(const VideoDataset& dataset, int videos_per_class, const FeatureSpace& features);

// CSV: class,rank,video,score
std::string selection_csv(const CoresetSelection& selection);
CoresetSelection parse_selection_csv(std::string_view text, const std::string& method);

struct AblationVariant {
  std::string tag;
  std::string group;  // A-D, empty for the base
  std::string knob;   // changed field, "none" for reference columns
  CondenseConfig config;
};

/// Base plus the eight table columns: with-insertion / no-insertion,
/// negative-grad / random-position, cosine / l2, no-warmup / no-cooldown.
/// Reference columns (with-insertion, negative-grad, cosine) carry the base
/// config unchanged; every other column changes exactly one field.
std::vector<AblationVariant> ablation_matrix(const CondenseConfig& base);

// Names of the fields in which two configs differ.
std::vector<std::string> config_diff(const CondenseConfig& a, const CondenseConfig& b);

}  // namespace prism
