#include "prism/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "prism/binary_io.hpp"
#include "prism/log.hpp"

namespace prism {

void EvalProtocol::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (!(learning_rate > 0)) throw ConfigError("eval learning_rate must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("eval momentum must lie in [0,1)");
  if (!(grad_clip >= 0)) throw ConfigError("grad_clip must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (repeats < 1) throw ConfigError("repeats must be at least 1");
  if (architectures.empty()) throw ConfigError("architectures must not be empty");
}

LabeledVideos expand_condensed(const std::vector<SparseVideo>& videos) {
  LabeledVideos out;
  for (const auto& v : videos) {
    Tensor dense = interpolate(v);
    dense.array() = dense.array().max(0.0f).min(1.0f);
    out.videos.push_back(std::move(dense));
    out.labels.push_back(v.label);
  }
  return out;
}

LabeledVideos coreset_videos(const VideoDataset& dataset, const CoresetSelection& selection) {
  LabeledVideos out;
  for (std::size_t c = 0; c < selection.indices.size(); ++c) {
    for (Index i : selection.indices[c]) {
      out.videos.push_back(dataset.train.at(c).at(static_cast<std::size_t>(i)));
      out.labels.push_back(static_cast<int>(c));
    }
  }
  return out;
}

namespace {

LabeledVideos split(const std::vector<std::vector<Tensor>>& videos) {
  LabeledVideos out;
  for (std::size_t c = 0; c < videos.size(); ++c) {
    for (const auto& v : videos[c]) {
      out.videos.push_back(v);
      out.labels.push_back(static_cast<int>(c));
    }
  }
  return out;
}

Tensor gather(const LabeledVideos& set, std::span<const std::size_t> order, std::vector<int>& labels) {
  std::vector<const Tensor*> ptrs;
  labels.clear();
  for (std::size_t i : order) {
    ptrs.push_back(&set.videos[i]);
    labels.push_back(set.labels[i]);
  }
  return stack_videos(ptrs);
}

}  // namespace

LabeledVideos train_split(const VideoDataset& dataset) { return split(dataset.train); }
LabeledVideos test_split(const VideoDataset& dataset) { return split(dataset.test); }

ModelSpec eval_spec(const EvalProtocol& protocol, Architecture arch, const VideoDataset& dataset) {
  ModelSpec spec;
  spec.arch = arch;
  spec.widths = protocol.widths;
  spec.kernel = protocol.kernel;
  spec.classes = dataset.classes();
  spec.geometry = dataset.geometry;
  spec.validate();
  return spec;
}

TestScore score(const ModelSpec& spec, const Params& params, const LabeledVideos& test) {
  if (test.size() == 0) throw Error("score: empty test set");
  TestScore out;
  out.per_class.assign(static_cast<std::size_t>(spec.classes), 0.0);
  out.class_counts.assign(static_cast<std::size_t>(spec.classes), 0);
  std::vector<Index> correct(static_cast<std::size_t>(spec.classes), 0);
  constexpr std::size_t kChunk = 64;
  std::vector<int> labels;
  for (std::size_t start = 0; start < test.size(); start += kChunk) {
    std::vector<std::size_t> order(std::min(kChunk, test.size() - start));
    std::iota(order.begin(), order.end(), start);
    const Tensor logits = predict_logits(spec, params, gather(test, order, labels));
    const Index k = logits.dim(1);
    for (std::size_t b = 0; b < order.size(); ++b) {
      const float* row = logits.data() + static_cast<Index>(b) * k;
      const int pred = static_cast<int>(std::max_element(row, row + k) - row);
      const auto y = static_cast<std::size_t>(labels[b]);
      ++out.class_counts.at(y);
      if (pred == labels[b]) ++correct[y];
    }
  }
  Index total_correct = 0;
  for (std::size_t c = 0; c < correct.size(); ++c) {
    total_correct += correct[c];
    out.per_class[c] = out.class_counts[c] ? static_cast<double>(correct[c]) / out.class_counts[c] : 0.0;
  }
  out.accuracy = static_cast<double>(total_correct) / static_cast<double>(test.size());
  return out;
}

Params train(const ModelSpec& spec, const LabeledVideos& train_set, const EvalProtocol& protocol, std::uint64_t seed) {
  protocol.validate();
  if (train_set.size() == 0) throw Error("train: empty training set");
  const CounterRng root = seed_stream(seed);
  Params params = init_params(spec, root.derive("eval-init").next_u64());
  std::vector<Tensor> velocity;
  for (const auto& t : params.tensors) velocity.emplace_back(t.shape());
  const float lr = static_cast<float>(protocol.learning_rate);
  const float mu = static_cast<float>(protocol.momentum);
  std::vector<std::size_t> order(train_set.size());
  std::vector<int> labels;
  for (int epoch = 0; epoch < protocol.epochs; ++epoch) {
    CounterRng rng = root.derive("eval-epoch", static_cast<std::uint64_t>(epoch));
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(protocol.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(protocol.batch_size));
      const std::span<const std::size_t> chunk(order.data() + start, end - start);
      Tensor batch = gather(train_set, chunk, labels);
      if (protocol.flip) {
        const Index video = batch.size() / batch.dim(0);
        for (Index b = 0; b < batch.dim(0); ++b) {
          if (!rng.bernoulli(0.5)) continue;
          Tensor one(spec.geometry.video_shape());
          std::copy_n(batch.data() + b * video, video, one.data());
          const Tensor flipped = flip_horizontal(one);
          std::copy_n(flipped.data(), video, batch.data() + b * video);
        }
      }
      Graph<float> g;
      const auto p = bind_params(g, params);
      const Node<float> loss = softmax_cross_entropy(forward(spec, p, g.data(batch)), labels);
      if (!std::isfinite(loss.value()[0])) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + " (" +
                           std::string(to_string(spec.arch)) + ")");
      }
      const auto grads = backward(loss, p);
      float scale = 1.0f;
      if (protocol.grad_clip > 0) {
        double sq = 0;
        for (const auto& gk : grads) sq += static_cast<double>(gk.array().square().sum());
        const double norm = std::sqrt(sq);
        if (norm > protocol.grad_clip) scale = static_cast<float>(protocol.grad_clip / norm);
      }
      for (std::size_t k = 0; k < params.count(); ++k) {
        velocity[k].array() = mu * velocity[k].array() + scale * grads[k].array();
        params.tensors[k].array() -= lr * velocity[k].array();
      }
    }
  }
  return params;
}

TestScore train_and_test(const LabeledVideos& train_set, const VideoDataset& dataset, const EvalProtocol& protocol,
                         Architecture arch, std::uint64_t seed) {
  const ModelSpec spec = eval_spec(protocol, arch, dataset);
  return score(spec, train(spec, train_set, protocol, seed), test_split(dataset));
}

StorageAccount storage_of(const std::vector<SparseVideo>& videos, const Geometry& geometry) {
  StorageAccount out;
  for (const auto& v : videos) out.frames += v.key_count();
  out.bytes = out.frames * geometry.frame_size() * 4;
  out.index_bytes = out.frames * 4;
  return out;
}

StorageAccount storage_of(const CoresetSelection& selection, const Geometry& geometry) {
  return dense_storage(static_cast<std::int64_t>(selection.total()), geometry);
}

StorageAccount dense_storage(std::int64_t videos, const Geometry& geometry) {
  StorageAccount out;
  out.frames = videos * geometry.frames;
  out.bytes = out.frames * geometry.frame_size() * 4;
  return out;
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) throw Error("mean_std: no values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / n)};
}

std::uint64_t fingerprint(const Tensor& video) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(video.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(video.size()) * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool shares_real_videos(const LabeledVideos& train_set, const VideoDataset& dataset) {
  std::unordered_set<std::uint64_t> real;
  for (const auto& cls : dataset.train) {
    for (const auto& v : cls) real.insert(fingerprint(v));
  }
  return std::any_of(train_set.videos.begin(), train_set.videos.end(),
                     [&](const Tensor& v) { return real.count(fingerprint(v)) > 0; });
}

Method condensed_method(std::string name, const std::vector<SparseVideo>& videos, const Geometry& geometry,
                        int classes) {
  Method m{std::move(name), expand_condensed(videos), storage_of(videos, geometry), {}, false};
  m.frames_per_class.assign(static_cast<std::size_t>(classes), 0);
  for (const auto& v : videos) m.frames_per_class.at(static_cast<std::size_t>(v.label)) += v.key_count();
  return m;
}

Method coreset_method(const VideoDataset& dataset, const CoresetSelection& selection) {
  Method m{selection.method, coreset_videos(dataset, selection), storage_of(selection, dataset.geometry), {}, true};
  for (const auto& c : selection.indices) {
    m.frames_per_class.push_back(static_cast<std::int64_t>(c.size()) * dataset.geometry.frames);
  }
  return m;
}

Method whole_dataset_method(const VideoDataset& dataset) {
  Method m{"whole-dataset", train_split(dataset), {}, {}, true};
  m.storage = dense_storage(static_cast<std::int64_t>(m.train.size()), dataset.geometry);
  m.frames_per_class.assign(static_cast<std::size_t>(dataset.classes()),
                            dataset.train_per_class * dataset.geometry.frames);
  return m;
}

std::vector<CellReport> full_report(const std::vector<Method>& methods, const VideoDataset& dataset,
                                    const EvalProtocol& protocol, std::uint64_t seed) {
  protocol.validate();
  const LabeledVideos test = test_split(dataset);
  const CounterRng root = seed_stream(seed).derive("eval-repeats");
  std::vector<CellReport> out;
  for (const auto& method : methods) {
    if (!method.real_subset && shares_real_videos(method.train, dataset)) {
      throw Error("method '" + method.name + "' trains on real train videos");
    }
    for (Architecture arch : protocol.architectures) {
      const ModelSpec spec = eval_spec(protocol, arch, dataset);
      CellReport cell;
      cell.method = method.name;
      cell.arch = arch;
      cell.seed_group = seed;
      cell.storage = method.storage;
      cell.frames_per_class = method.frames_per_class;
      cell.per_class.assign(static_cast<std::size_t>(dataset.classes()), 0.0);
      std::vector<double> accs;
      for (int r = 0; r < protocol.repeats; ++r) {
        const std::uint64_t run_seed = root.derive("repeat", static_cast<std::uint64_t>(r)).next_u64();
        const TestScore s = score(spec, train(spec, method.train, protocol, run_seed), test);
        cell.runs.push_back({r, run_seed, s.accuracy});
        accs.push_back(s.accuracy);
        for (std::size_t c = 0; c < s.per_class.size(); ++c) cell.per_class[c] += s.per_class[c] / protocol.repeats;
        log().info("{} / {} repeat {}: accuracy {:.4f}", method.name, to_string(arch), r, s.accuracy);
      }
      cell.accuracy = mean_std(accs);
      out.push_back(std::move(cell));
    }
  }
  return out;
}

namespace {

std::ostringstream csv_stream() {
  std::ostringstream os;
  os.precision(10);
  return os;
}

}  // namespace

std::string report_csv(const std::vector<CellReport>& cells) {
  auto os = csv_stream();
  os << "method,architecture,seed-group,accuracy-mean,accuracy-std,frames-total,bytes,index-bytes\n";
  for (const auto& c : cells) {
    os << c.method << ',' << to_string(c.arch) << ',' << c.seed_group << ',' << c.accuracy.mean << ','
       << c.accuracy.std << ',' << c.storage.frames << ',' << c.storage.bytes << ',' << c.storage.index_bytes << '\n';
  }
  return os.str();
}

std::string runs_csv(const std::vector<CellReport>& cells) {
  auto os = csv_stream();
  os << "method,architecture,repeat,seed,accuracy\n";
  for (const auto& c : cells) {
    for (const auto& r : c.runs) {
      os << c.method << ',' << to_string(c.arch) << ',' << r.repeat << ',' << r.seed << ',' << r.accuracy << '\n';
    }
  }
  return os.str();
}

std::string histogram_csv(const std::vector<CellReport>& cells) {
  auto os = csv_stream();
  os << "method,class,frames\n";
  std::vector<std::string> seen;
  for (const auto& c : cells) {
    if (std::find(seen.begin(), seen.end(), c.method) != seen.end()) continue;
    seen.push_back(c.method);
    for (std::size_t k = 0; k < c.frames_per_class.size(); ++k) {
      os << c.method << ',' << k << ',' << c.frames_per_class[k] << '\n';
    }
  }
  return os.str();
}

std::string per_class_csv(const std::vector<CellReport>& cells) {
  auto os = csv_stream();
  os << "method,architecture,class,accuracy\n";
  for (const auto& c : cells) {
    for (std::size_t k = 0; k < c.per_class.size(); ++k) {
      os << c.method << ',' << to_string(c.arch) << ',' << k << ',' << c.per_class[k] << '\n';
    }
  }
  return os.str();
}

std::string encode_ppm(const Tensor& frame) {
  if (frame.rank() != 3) throw ShapeError("encode_ppm: expected [H,W,C], got " + to_string(frame.shape()));
  const Index h = frame.dim(0), w = frame.dim(1), c = frame.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (Index p = 0; p < h * w; ++p) {
    for (Index ch = 0; ch < 3; ++ch) {
      const float v = frame[p * c + std::min(ch, c - 1)];
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
    }
  }
  return out;
}

int dump_key_frames(const std::vector<SparseVideo>& videos, int videos_per_class, const std::string& directory) {
  std::filesystem::create_directories(directory);
  int count = 0;
  std::vector<int> seen;
  for (const auto& v : videos) {
    if (v.label >= static_cast<int>(seen.size())) seen.resize(static_cast<std::size_t>(v.label) + 1, 0);
    const int j = seen[static_cast<std::size_t>(v.label)]++;
    if (j >= videos_per_class) throw Error("dump_key_frames: more videos than videos_per_class in a class");
    for (const auto& k : v.keys) {
      const std::string name = std::to_string(v.label) + "_" + std::to_string(j) + "_" + std::to_string(k.index) + ".ppm";
      io::write_file((std::filesystem::path(directory) / name).string(), encode_ppm(k.frame));
      ++count;
    }
  }
  return count;
}

}  // namespace prism
