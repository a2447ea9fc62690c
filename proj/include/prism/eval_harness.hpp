#pragma once

// Evaluation: train fresh classifiers on condensed or coreset data, score
// them on the real test split, account storage, aggregate repeats.

#include <cstdint>
#include <string>
#include <vector>

#include "prism/baselines.hpp"
#include "prism/condenser.hpp"
#include "prism/model_zoo.hpp"
#include "prism/videogen.hpp"

namespace prism {

struct EvalProtocol {
  int epochs = 100;
  double learning_rate = 1e-2;
  double momentum = 0.95;
  double grad_clip = 0;  // max global gradient norm per step, 0 = off
  Index batch_size = 32;
  int repeats = 3;
  bool flip = true;
  std::vector<Architecture> architectures{Architecture::kConv3dMicro};
  std::array<Index, 2> widths{8, 16};
  Index kernel = 3;

  void validate() const;
};

struct LabeledVideos {
  std::vector<Tensor> videos;  // [T,H,W,C] each
  std::vector<int> labels;

  std::size_t size() const { return videos.size(); }
};

/// Interpolates every sparse video to T frames and clamps to [0,1].
LabeledVideos expand_condensed(const std::vector<SparseVideo>& videos);
LabeledVideos coreset_videos(const VideoDataset& dataset, const CoresetSelection& selection);
LabeledVideos train_split(const VideoDataset& dataset);
LabeledVideos test_split(const VideoDataset& dataset);

struct TestScore {
  double accuracy = 0.0;
  std::vector<double> per_class;   // accuracy per class
  std::vector<Index> class_counts; // test videos per class
};

TestScore score(const ModelSpec& spec, const Params& params, const LabeledVideos& test);

/// SGD with momentum on softmax cross-entropy from a fresh init; returns the
/// trained parameters. Throws NumericError on a non-finite loss.
Params train(const ModelSpec& spec, const LabeledVideos& train_set, const EvalProtocol& protocol, std::uint64_t seed);

TestScore train_and_test(const LabeledVideos& train_set, const VideoDataset& dataset, const EvalProtocol& protocol,
                         Architecture arch, std::uint64_t seed);

ModelSpec eval_spec(const EvalProtocol& protocol, Architecture arch, const VideoDataset& dataset);

struct StorageAccount {
  std::int64_t frames = 0;
  std::int64_t bytes = 0;        // frames * H * W * C * 4
  std::int64_t index_bytes = 0;  // 4 per stored key index, excluded from bytes
  friend bool operator==(const StorageAccount&, const StorageAccount&) = default;
};

StorageAccount storage_of(const std::vector<SparseVideo>& videos, const Geometry& geometry);
StorageAccount storage_of(const CoresetSelection& selection, const Geometry& geometry);
StorageAccount dense_storage(std::int64_t videos, const Geometry& geometry);

// Population mean and standard deviation (std 0 for one value).
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
MeanStd mean_std(const std::vector<double>& values);

// 64-bit FNV-1a over a video's bytes.
std::uint64_t fingerprint(const Tensor& video);
// True if any training video is byte-identical to a real train video.
bool shares_real_videos(const LabeledVideos& train_set, const VideoDataset& dataset);

struct Method {
  std::string name;
  LabeledVideos train;
  StorageAccount storage;
  std::vector<std::int64_t> frames_per_class;
  bool real_subset = false;  // coreset methods train on real videos
};

Method condensed_method(std::string name, const std::vector<SparseVideo>& videos, const Geometry& geometry,
                        int classes);
Method coreset_method(const VideoDataset& dataset, const CoresetSelection& selection);
Method whole_dataset_method(const VideoDataset& dataset);

struct RunRecord {
  int repeat = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

struct CellReport {
  std::string method;
  Architecture arch = Architecture::kConv3dMicro;
  std::uint64_t seed_group = 0;
  std::vector<RunRecord> runs;
  MeanStd accuracy;
  std::vector<double> per_class;  // mean over repeats
  StorageAccount storage;
  std::vector<std::int64_t> frames_per_class;
};

/// One cell per (method, architecture), repeats in seed order. Throws if a
/// non-coreset method's training set contains real train videos.
std::vector<CellReport> full_report(const std::vector<Method>& methods, const VideoDataset& dataset,
                                    const EvalProtocol& protocol, std::uint64_t seed);

// method,architecture,seed-group,accuracy-mean,accuracy-std,frames-total,bytes,index-bytes
std::string report_csv(const std::vector<CellReport>& cells);
// method,architecture,repeat,seed,accuracy
std::string runs_csv(const std::vector<CellReport>& cells);
// method,class,frames
std::string histogram_csv(const std::vector<CellReport>& cells);
// method,architecture,class,accuracy
std::string per_class_csv(const std::vector<CellReport>& cells);

// Binary P6 with 8-bit channels; values clamped to [0,1]. One channel is
// replicated to gray, more than three are truncated.
std::string encode_ppm(const Tensor& frame);
/// Writes class_video_index.ppm for every key frame; returns the file count.
int dump_key_frames(const std::vector<SparseVideo>& videos, int videos_per_class, const std::string& directory);

}  // namespace prism
