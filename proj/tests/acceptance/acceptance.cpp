// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "coreset_oracle.hpp"
#include "prism/baselines.hpp"
#include "prism/binary_io.hpp"
#include "prism/cli.hpp"
#include "prism/condenser.hpp"
#include "prism/config.hpp"
#include "prism/eval_harness.hpp"
#include "prism/model_zoo.hpp"
#include "primitive_cases.hpp"
#include "support.hpp"

using namespace prism;
using namespace prism::test;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  int id;
  bool pass;
  std::string line;
};
std::vector<Verdict> verdicts;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  const std::string line = std::string(pass ? "[PASS] " : "[FAIL] ") + std::to_string(id) + ". " + name + ": " + detail;
  std::cout << "  done: " << line << std::endl;
  verdicts.push_back({id, pass, line});
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

// ---------------------------------------------------------------------------

void lemma_suite() {
  const auto t0 = Clock::now();
  std::vector<double> lambdas;
  for (int k = 0; k <= 10; ++k) lambdas.push_back(k / 10.0);
  CounterRng rng = seed_stream(1).derive("lemma");
  int tested = 0, failed = 0;
  while (tested < 10000) {
    std::vector<double> gt(32), gi(32), gj(32);
    for (auto* v : {&gt, &gi, &gj})
      for (auto& x : *v) x = rng.normal(0, 1);
    for (std::size_t k = 0; k < 32; ++k) {
      gi[k] -= 0.5 * gt[k];
      gj[k] -= 0.5 * gt[k];
    }
    double a = 0, b = 0;
    for (std::size_t k = 0; k < 32; ++k) {
      a += gt[k] * gi[k];
      b += gt[k] * gj[k];
    }
    if (!(a < -1e-9 && b < -1e-9)) continue;
    ++tested;
    failed += !verify_blockage(gt, gi, gj, lambdas);
  }
  const double secs = seconds_since(t0);
  report(1, "descent-blockage theorem suite", failed == 0 && secs < 5,
         std::to_string(tested) + " triples x 11 lambdas, " + std::to_string(failed) + " failures, " + fmt(secs, 3) +
             " s");
}

void autodiff_suite() {
  const auto t0 = Clock::now();
  double worst_primitive = 0.0;
  std::string worst_name;
  CounterRng rng = seed_stream(2).derive("acceptance-fd");
  const auto cases = primitive_cases();
  for (const auto& [name, make] : cases) {
    for (int i = 0; i < 32; ++i) {
      CounterRng local = rng.derive(name, static_cast<std::uint64_t>(i));
      const Case c = make(local);
      const double e = fd_check(c.build, c.values, local).rel_error;
      if (e > worst_primitive) {
        worst_primitive = e;
        worst_name = name;
      }
    }
  }

  ModelSpec net;
  net.widths = {3, 4};
  net.classes = 3;
  net.geometry = {4, 4, 4, 2};
  double worst_net = 0.0;
  for (int c = 0; c < 32; ++c) {
    CounterRng local = rng.derive("conv3d-micro", static_cast<std::uint64_t>(c));
    std::vector<BasicTensor<double>> values{random_tensor({2, 4, 4, 4, 2}, local, 0, 1)};
    for (const auto& t : init_params(net, static_cast<std::uint64_t>(c)).cast<double>().tensors) {
      values.push_back(t.rank() == 1 ? random_tensor(t.shape(), local, -0.1, 0.1) : t);
    }
    const Builder build = [&](Graph<double>&, const std::vector<Node<double>>& x) {
      const std::vector<Node<double>> params(x.begin() + 1, x.end());
      return softmax_cross_entropy(forward(net, params, x[0]), std::vector<int>{0, 2});
    };
    worst_net = std::max(worst_net, fd_check(build, values, local, 1e-3, 12).rel_error);
  }

  ModelSpec toy;
  toy.classes = 2;
  toy.widths = {4, 6};
  toy.geometry = {4, 4, 4, 3};
  const std::vector<Index> key_indices{0, 1, 3};
  double worst_meta = 0.0;
  for (int c = 0; c < 8; ++c) {
    CounterRng local = rng.derive("meta", static_cast<std::uint64_t>(c));
    const BasicParams<double> params = init_params(toy, 40 + static_cast<std::uint64_t>(c)).cast<double>();
    std::vector<BasicTensor<double>> real_grads;
    for (int k = 0; k < 2; ++k) real_grads.push_back(task_gradient(toy, params, random_tensor({3, 4, 4, 4, 3}, local, 0, 1), k));
    std::vector<BasicTensor<double>> keys;
    for (int k = 0; k < 6; ++k) keys.push_back(random_tensor({4, 4, 3}, local, 0, 1));
    const Builder build = [&](Graph<double>& g, const std::vector<Node<double>>& x) {
      const auto p = bind_params(g, params);
      std::vector<Node<double>> syn;
      for (int v = 0; v < 2; ++v) {
        const std::span<const Node<double>> mine(x.data() + v * 3, 3);
        syn.push_back(reshape(interpolate(mine, std::span<const Index>(key_indices), 4), Shape{1, 4, 4, 4, 3}));
      }
      const std::vector<int> labels{0, 1};
      return matching_loss(toy, std::span<const Node<double>>(p), std::span<const Node<double>>(syn),
                           std::span<const BasicTensor<double>>(real_grads), std::span<const int>(labels));
    };
    worst_meta = std::max(worst_meta, fd_check(build, keys, local, 1e-3, 16).rel_error);
  }
  const double secs = seconds_since(t0);
  report(2, "finite-difference suite",
         worst_primitive < 1e-3 && worst_net < 1e-3 && worst_meta < 1e-2 && secs < 60,
         std::to_string(cases.size()) + " primitives x 32 cases worst " + fmt(worst_primitive, 3) + " (" + worst_name +
             "), conv3d-micro worst " + fmt(worst_net, 3) + ", meta-gradient worst " + fmt(worst_meta, 3) + ", " +
             fmt(secs, 3) + " s");
}

void interpolation_suite() {
  int failed = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    CounterRng rng = seed_stream(s).derive("acceptance-interp");
    const Index horizon = random_extent(rng, 2, 16);
    SparseVideo v;
    v.horizon = horizon;
    for (Index t = 0; t < horizon; ++t)
      if (t == 0 || t == horizon - 1 || rng.uniform(0, 1) < 0.3) v.keys.push_back({t, random_tensor<float>({3, 3, 2}, rng, 0, 1)});
    const Tensor dense = interpolate(v);
    bool ok = true;
    for (const auto& k : v.keys) ok = ok && std::equal(k.frame.data(), k.frame.data() + 18, dense.data() + k.index * 18);
    for (std::size_t seg = 0; seg + 1 < v.keys.size(); ++seg) {
      const auto& a = v.keys[seg];
      const auto& b = v.keys[seg + 1];
      for (Index t = a.index + 1; t < b.index; ++t) {
        const double alpha = double(b.index - t) / double(b.index - a.index);
        ok = ok && alpha > 0 && alpha < 1;
        for (Index i = 0; i < 18; ++i) ok = ok && std::abs(dense[t * 18 + i] - (alpha * a.frame[i] + (1 - alpha) * b.frame[i])) <= 1e-6;
      }
    }
    failed += !ok;
  }
  report(3, "interpolation exactness", failed == 0, "1000 random key sets, " + std::to_string(failed) + " failures");
}

void coreset_suite() {
  int instances = 0, mismatches = 0;
  // Class feature sets of the benchmark itself, trimmed to every size up to 6.
  RunConfig rc = load_config(PRISM_SOURCE_DIR "/configs/default.cfg");
  const VideoDataset d = generate(rc.dataset.programs, 6, 1, rc.dataset.geometry, rc.data_seed());
  const FeatureSpace features = random_features(d, rc.coreset_seed());
  std::vector<Eigen::MatrixXd> sets;
  for (const auto& m : features.per_class)
    for (Index n = 1; n <= 6; ++n) sets.push_back(m.topRows(n));
  for (std::uint64_t s = 0; s < 400; ++s) {
    CounterRng rng = seed_stream(s).derive("acceptance-coreset");
    Eigen::MatrixXd m(random_extent(rng, 1, 6), random_extent(rng, 1, 8));
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0, 1);
    sets.push_back(m);
  }
  for (const auto& f : sets) {
    for (int k = 1; k <= std::min<Index>(3, f.rows()); ++k) {
      ++instances;
      mismatches += herding_select(f, k) != brute_force(f, k, herding_objectives);
      mismatches += kcenter_select(f, k) != brute_force(f, k, kcenter_objectives);
    }
  }
  report(5, "coreset oracle equivalence", mismatches == 0,
         std::to_string(instances) + " (set, vpc) instances x 2 selectors, " + std::to_string(mismatches) + " mismatches");
}

// ---------------------------------------------------------------------------
// Benchmark runs

struct VariantRun {
  CondenseResult result;
  std::vector<CellReport> cells;  // one per architecture
};

struct SeedRuns {
  std::uint64_t seed = 0;
  VariantRun prism, none, random;
};

double cell_mean(const VariantRun& r, Architecture arch) {
  for (const auto& c : r.cells)
    if (c.arch == arch) return c.accuracy.mean;
  throw Error("missing architecture");
}

VariantRun run_variant(const RunConfig& rc, const VideoDataset& d, InsertionMode mode, const EvalProtocol& protocol) {
  CondenseConfig c = rc.seeded_condense();
  c.insertion = mode;
  VariantRun out;
  out.result = condense(c, d, rc.matcher_spec());
  const Method m = condensed_method(std::string(to_string(mode)), out.result.videos, d.geometry, d.classes());
  out.cells = full_report({m}, d, protocol, rc.eval_seed());
  return out;
}

int events_outside_window(const CondenseResult& r, const PhaseSchedule& s) {
  int bad = 0;
  for (const auto& e : r.events) bad += phase_of(e.iteration, s) != Phase::kInsertion;
  return bad;
}

double mean_keys(const std::vector<SparseVideo>& videos, const std::vector<MotionProgram>& programs, bool linear) {
  double sum = 0;
  int n = 0;
  for (const auto& v : videos) {
    if ((programs[static_cast<std::size_t>(v.label)].nonlinearity_rank() == 0) != linear) continue;
    sum += static_cast<double>(v.key_count());
    ++n;
  }
  return sum / n;
}

void benchmark_suite() {
  const RunConfig base = load_config(PRISM_SOURCE_DIR "/configs/default.cfg");
  EvalProtocol protocol = base.eval;
  protocol.architectures = {Architecture::kConv3dMicro, Architecture::kConv2dMean, Architecture::kConv2dRecurrent};
  const auto t0 = Clock::now();

  std::vector<SeedRuns> runs;
  for (std::uint64_t seed : {0, 1, 2}) {
    RunConfig rc = base;
    rc.seed = seed;
    const auto& dc = rc.dataset;
    const VideoDataset d = generate(dc.programs, dc.train_per_class, dc.test_per_class, dc.geometry, rc.data_seed());
    SeedRuns s;
    s.seed = seed;
    s.prism = run_variant(rc, d, InsertionMode::kGradientGuided, protocol);
    s.none = run_variant(rc, d, InsertionMode::kDisabled, protocol);
    s.random = run_variant(rc, d, InsertionMode::kRandomPosition, protocol);
    std::cout << "  seed " << seed << ": conv3d-micro prism " << fmt(cell_mean(s.prism, Architecture::kConv3dMicro))
              << ", no-insertion " << fmt(cell_mean(s.none, Architecture::kConv3dMicro)) << ", random-position "
              << fmt(cell_mean(s.random, Architecture::kConv3dMicro)) << "; insertions " << s.prism.result.events.size()
              << " / " << s.none.result.events.size() << " / " << s.random.result.events.size() << " ("
              << fmt(seconds_since(t0), 4) << " s)" << std::endl;
    runs.push_back(std::move(s));
  }

  // Schedule check on a permissive threshold so that insertions do happen.
  RunConfig permissive = base;
  CondenseConfig pc = permissive.seeded_condense();
  pc.epsilon = 1.0;
  const auto& dc = base.dataset;
  const VideoDataset d0 = generate(dc.programs, dc.train_per_class, dc.test_per_class, dc.geometry, base.data_seed());
  const CondenseResult loose = condense(pc, d0, base.matcher_spec());

  // 4. Schedule invariant.
  int outside = events_outside_window(loose, pc.schedule());
  std::size_t total_events = loose.events.size();
  for (const auto& s : runs) {
    for (const auto* v : {&s.prism, &s.none, &s.random}) {
      outside += events_outside_window(v->result, base.condense.schedule());
      total_events += v->result.events.size();
    }
  }
  const PhaseSchedule sched = base.condense.schedule();
  report(4, "schedule invariant", outside == 0,
         std::to_string(total_events) + " insertion events over 10 runs (" + std::to_string(loose.events.size()) +
             " from a permissive-threshold run), " + std::to_string(outside) + " outside iterations [" +
             std::to_string(sched.warmup_end()) + ", " + std::to_string(sched.cooldown_begin()) + ")");

  // 6, 7. Directional ablations on conv3d-micro.
  double prism = 0, none = 0, random = 0;
  std::size_t prism_events = 0, random_events = 0;
  bool same_sets = true;
  for (const auto& s : runs) {
    prism += cell_mean(s.prism, Architecture::kConv3dMicro) / 3;
    none += cell_mean(s.none, Architecture::kConv3dMicro) / 3;
    random += cell_mean(s.random, Architecture::kConv3dMicro) / 3;
    prism_events += s.prism.result.events.size();
    random_events += s.random.result.events.size();
    same_sets = same_sets && s.prism.result.videos == s.none.result.videos && s.prism.result.videos == s.random.result.videos;
  }
  const std::string note = same_sets ? "; no candidate met the insertion criterion, all three condensed sets are identical" : "";
  report(6, "ablation A: insertion beats no insertion", prism - none > 0,
         "mean accuracy " + fmt(prism) + " vs " + fmt(none) + ", margin " + fmt(prism - none) + ", " +
             std::to_string(prism_events) + " insertions" + note);
  report(7, "ablation B: gradient-guided >= random position", prism >= random,
         "mean accuracy " + fmt(prism) + " vs " + fmt(random) + ", " + std::to_string(random_events) +
             " random-position insertions" + note);

  // 8. Adaptive budget.
  double linear = 0, nonlinear = 0;
  for (const auto& s : runs) {
    linear += mean_keys(s.prism.result.videos, dc.programs, true) / 3;
    nonlinear += mean_keys(s.prism.result.videos, dc.programs, false) / 3;
  }
  report(8, "adaptive budget", linear <= nonlinear,
         "mean key count rank-0 classes " + fmt(linear) + " vs rank>=1 classes " + fmt(nonlinear) +
             (prism_events == 0 ? " (no insertions, equal by construction)" : ""));

  // 9. Storage accounting.
  int storage_failures = 0;
  for (std::uint64_t s = 0; s < 500; ++s) {
    CounterRng rng = seed_stream(s).derive("acceptance-storage");
    const Geometry g{random_extent(rng, 2, 16), 4 * random_extent(rng, 1, 8), 4 * random_extent(rng, 1, 8),
                     random_extent(rng, 1, 4)};
    std::vector<SparseVideo> videos;
    std::int64_t keys = 0;
    for (Index n = random_extent(rng, 1, 6); n > 0; --n) {
      SparseVideo v;
      v.horizon = g.frames;
      for (Index t = 0; t < g.frames; ++t)
        if (t == 0 || t == g.frames - 1 || rng.uniform(0, 1) < 0.3) v.keys.push_back({t, Tensor(g.frame_shape())});
      keys += v.key_count();
      videos.push_back(std::move(v));
    }
    const StorageAccount a = storage_of(videos, g);
    storage_failures += a.frames != keys || a.bytes != keys * g.height * g.width * g.channels * 4 ||
                        a.index_bytes != 4 * keys;
  }
  const StorageAccount sparse = storage_of(runs[0].prism.result.videos, dc.geometry);
  const StorageAccount dense = dense_storage(static_cast<std::int64_t>(runs[0].prism.result.videos.size()), dc.geometry);
  report(9, "storage accounting", storage_failures == 0 && sparse.bytes < dense.bytes,
         "500 random geometries, " + std::to_string(storage_failures) + " formula mismatches; seed-0 condensed set " +
             std::to_string(sparse.bytes) + " bytes vs dense " + std::to_string(dense.bytes) + " bytes");

  // 11. Cross-architecture sanity.
  const double p = 1.0 / dc.programs.size();
  const double n_test = static_cast<double>(dc.programs.size() * static_cast<std::size_t>(dc.test_per_class));
  const double threshold = p + 2 * std::sqrt(p * (1 - p) / n_test);
  bool cross_ok = true;
  std::string detail;
  for (Architecture arch : {Architecture::kConv2dMean, Architecture::kConv2dRecurrent}) {
    double mean = 0;
    std::string per_seed;
    for (const auto& s : runs) {
      const double a = cell_mean(s.prism, arch);
      mean += a / 3;
      per_seed += (per_seed.empty() ? "" : "/") + fmt(a, 3);
    }
    cross_ok = cross_ok && mean > threshold;
    detail += std::string(to_string(arch)) + " " + fmt(mean) + " (" + per_seed + "), ";
  }
  report(11, "cross-architecture sanity", cross_ok, detail + "threshold " + fmt(threshold));
}

void determinism_suite() {
  const fs::path root = fs::temp_directory_path() / "prism_acceptance_determinism";
  fs::remove_all(root);
  const std::string config = PRISM_SOURCE_DIR "/configs/default.cfg";
  bool commands_ok = true;
  auto pipeline = [&](const fs::path& dir) {
    for (const char* cmd : {"gen-data", "condense", "baseline", "eval", "report"}) {
      const std::string out = dir.string();
      const char* argv[] = {"prism", cmd, "--config", config.c_str(), "--out", out.c_str()};
      std::ostringstream sink, err;
      const int code = run_cli(6, argv, sink, err);
      if (code != 0) {
        commands_ok = false;
        std::cout << "  " << cmd << " exited " << code << ": " << err.str();
      }
    }
  };
  pipeline(root / "a");
  pipeline(root / "b");
  const char* artifacts[] = {"data.pvdc", "condensed/prism.pvsc", "condensed/prism.insertions.csv",
                             "condensed/prism.loss.csv", "coresets/herding.csv", "eval/prism.runs.csv",
                             "report.csv", "histogram.csv", "per_class.csv"};
  int differing = 0;
  for (const char* a : artifacts) {
    const bool same = commands_ok && io::read_file((root / "a" / a).string()) == io::read_file((root / "b" / a).string());
    if (!same) std::cout << "  differs: " << a << std::endl;
    differing += !same;
  }
  fs::remove_all(root);
  report(10, "determinism", commands_ok && differing == 0,
         "two full CLI pipelines, " + std::to_string(std::size(artifacts)) + " artifacts compared, " +
             std::to_string(differing) + " differ");
}

}  // namespace

int main() {
  std::cout << std::unitbuf;
  lemma_suite();
  autodiff_suite();
  interpolation_suite();
  coreset_suite();
  benchmark_suite();
  determinism_suite();
  std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  int failures = 0;
  std::cout << "\n";
  for (const auto& v : verdicts) {
    std::cout << v.line << "\n";
    failures += !v.pass;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " of " + std::to_string(verdicts.size()) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
