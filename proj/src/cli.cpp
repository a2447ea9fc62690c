#include "prism/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>

#include "prism/baselines.hpp"
#include "prism/binary_io.hpp"
#include "prism/config.hpp"
#include "prism/eval_harness.hpp"
#include "prism/log.hpp"

namespace prism {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config_path;
  std::string out_dir;
  std::string data_path;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::vector<std::string> only;
  std::optional<int> repeats;
};

struct Context {
  RunConfig config;
  fs::path out;
  Options options;
  std::ostream& out_stream;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config_path.empty() ? default_run_config() : load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.repeats) c.eval.repeats = *o.repeats;
  if (!o.out_dir.empty()) c.output_dir = o.out_dir;
  if (o.jobs < 1) throw ConfigError("--jobs must be at least 1");
  c.validate();
  return c;
}

fs::path dataset_path(const Context& ctx) {
  return ctx.options.data_path.empty() ? ctx.out / "data.pvdc" : fs::path(ctx.options.data_path);
}

void check_dataset(const RunConfig& config, const VideoDataset& dataset, const std::string& path) {
  const auto& g = config.dataset.geometry;
  const auto& d = dataset.geometry;
  if (!(g == d)) {
    throw ConfigError(path + ": dataset geometry " + to_string(d.video_shape()) + " does not match the config " +
                      to_string(g.video_shape()));
  }
  if (dataset.classes() != static_cast<int>(config.dataset.programs.size())) {
    throw ConfigError(path + ": dataset has " + std::to_string(dataset.classes()) + " classes, the config " +
                      std::to_string(config.dataset.programs.size()));
  }
}

VideoDataset load_checked(const Context& ctx) {
  const std::string path = dataset_path(ctx).string();
  VideoDataset dataset = load_dataset(path);
  check_dataset(ctx.config, dataset, path);
  return dataset;
}

std::string read_artifact(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifact(path.string());
  return io::read_file(path.string());
}

void write_text(const fs::path& path, std::string_view text) {
  fs::create_directories(path.parent_path());
  io::write_file(path.string(), text);
}

bool selected(const Options& o, const std::string& name) {
  return o.only.empty() || std::find(o.only.begin(), o.only.end(), name) != o.only.end();
}

bool is_coreset(const std::string& method) {
  return method == "random" || method == "herding" || method == "kcenter";
}

std::string insertions_csv(const std::vector<InsertionEvent>& events) {
  std::ostringstream os;
  os.precision(10);
  os << "iteration,class,video,time_index,left_key,right_key,left_score,right_score,random_position\n";
  for (const auto& e : events) {
    os << e.iteration << ',' << e.class_id << ',' << e.video << ',' << e.time_index << ',' << e.left_key << ','
       << e.right_key << ',' << e.left_score << ',' << e.right_score << ',' << (e.random_position ? 1 : 0) << '\n';
  }
  return os.str();
}

std::string loss_csv(const std::vector<double>& trace) {
  std::ostringstream os;
  os.precision(10);
  os << "iteration,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) os << i << ',' << trace[i] << '\n';
  return os.str();
}

// Writes every artifact of one condensation under `name`.
StorageAccount write_condensed(const Context& ctx, const std::string& name, const CondenseResult& result,
                               const Geometry& geometry) {
  const fs::path dir = ctx.out / "condensed";
  write_text(dir / (name + ".pvsc"), serialize_sparse(result.videos, geometry));
  write_text(dir / (name + ".insertions.csv"), insertions_csv(result.events));
  write_text(dir / (name + ".loss.csv"), loss_csv(result.loss_trace));
  const fs::path frames = ctx.out / "frames" / name;
  fs::remove_all(frames);
  dump_key_frames(result.videos, ctx.config.condense.videos_per_class, frames.string());
  return storage_of(result.videos, geometry);
}

void print_storage(std::ostream& out, const std::string& name, std::size_t videos, const StorageAccount& s) {
  out << name << ": " << videos << " videos, " << s.frames << " key frames, " << s.bytes << " bytes (+"
      << s.index_bytes << " index bytes)\n";
}

Method load_method(const Context& ctx, const VideoDataset& dataset, const std::string& name) {
  if (name == "whole-dataset") return whole_dataset_method(dataset);
  if (is_coreset(name)) {
    const fs::path path = ctx.out / "coresets" / (name + ".csv");
    const CoresetSelection sel = parse_selection_csv(read_artifact(path), name);
    if (static_cast<int>(sel.indices.size()) != dataset.classes()) {
      throw FormatError(path.string() + ": selection covers " + std::to_string(sel.indices.size()) + " classes");
    }
    for (const auto& c : sel.indices) {
      for (Index i : c) {
        if (i < 0 || i >= dataset.train_per_class) throw FormatError(path.string() + ": video index out of range");
      }
    }
    return coreset_method(dataset, sel);
  }
  const fs::path path = ctx.out / "condensed" / (name + ".pvsc");
  Geometry geometry;
  const auto videos = deserialize_sparse(read_artifact(path), &geometry);
  if (!(geometry == dataset.geometry)) throw FormatError(path.string() + ": geometry does not match the dataset");
  return condensed_method(name, videos, geometry, dataset.classes());
}

std::vector<std::string> requested_methods(const Context& ctx) {
  std::vector<std::string> out;
  for (const auto& m : ctx.config.methods) {
    if (selected(ctx.options, m)) out.push_back(m);
  }
  for (const auto& m : ctx.options.only) {
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_gen_data(Context& ctx) {
  const auto& d = ctx.config.dataset;
  const VideoDataset dataset =
      generate(d.programs, d.train_per_class, d.test_per_class, d.geometry, ctx.config.data_seed());
  const std::string bytes = serialize_dataset(dataset);
  const fs::path path = dataset_path(ctx);
  write_text(path, bytes);
  ctx.out_stream << path.string() << ": " << dataset.classes() << " classes, geometry "
                 << to_string(d.geometry.video_shape()) << ", " << bytes.size() << " bytes\n";
}

void cmd_condense(Context& ctx) {
  const VideoDataset dataset = load_checked(ctx);
  const CondenseResult result = condense(ctx.config.seeded_condense(), dataset, ctx.config.matcher_spec());
  const StorageAccount s = write_condensed(ctx, "prism", result, dataset.geometry);
  ctx.out_stream << "insertions: " << result.events.size() << "\n";
  print_storage(ctx.out_stream, "prism", result.videos.size(), s);
}

void cmd_ablate(Context& ctx) {
  const VideoDataset dataset = load_checked(ctx);
  const auto matrix = ablation_matrix(ctx.config.seeded_condense());
  for (const auto& name : ctx.options.only) {
    if (std::none_of(matrix.begin(), matrix.end(), [&](const AblationVariant& v) { return v.tag == name; })) {
      throw ConfigError("--only: unknown ablation variant '" + name + "'");
    }
  }
  struct Done {
    CondenseConfig config;
    std::vector<CellReport> cells;
    std::size_t insertions = 0;
  };
  std::vector<Done> done;
  std::ostringstream csv;
  csv.precision(10);
  csv << "variant,group,knob,architecture,accuracy-mean,accuracy-std,frames-total,bytes,index-bytes,insertions\n";
  for (const auto& v : matrix) {
    if (v.tag != "base" && !selected(ctx.options, v.tag)) continue;
    auto it = std::find_if(done.begin(), done.end(), [&](const Done& d) { return d.config == v.config; });
    if (it == done.end()) {
      log().info("ablate: running {}", v.tag);
      const CondenseResult result = condense(v.config, dataset, ctx.config.matcher_spec());
      write_condensed(ctx, v.tag, result, dataset.geometry);
      const Method m = condensed_method(v.tag, result.videos, dataset.geometry, dataset.classes());
      done.push_back({v.config, full_report({m}, dataset, ctx.config.eval, ctx.config.eval_seed()),
                      result.events.size()});
      it = done.end() - 1;
      ctx.out_stream << "ran " << v.tag << "\n";
    } else {
      ctx.out_stream << "reused for " << v.tag << "\n";
    }
    for (const auto& c : it->cells) {
      csv << v.tag << ',' << v.group << ',' << v.knob << ',' << to_string(c.arch) << ',' << c.accuracy.mean << ','
          << c.accuracy.std << ',' << c.storage.frames << ',' << c.storage.bytes << ',' << c.storage.index_bytes
          << ',' << it->insertions << '\n';
    }
  }
  write_text(ctx.out / "ablation.csv", csv.str());
  ctx.out_stream << "configs run: " << done.size() << "\n";
}

void cmd_baseline(Context& ctx) {
  const VideoDataset dataset = load_checked(ctx);
  const int vpc = ctx.config.condense.videos_per_class;
  std::optional<FeatureSpace> features;
  for (const auto& m : requested_methods(ctx)) {
    if (!is_coreset(m)) continue;
    CoresetSelection sel;
    if (m == "random") {
      sel = random_coreset(dataset, vpc, ctx.config.coreset_seed());
    } else {
      if (!features) features = random_features(dataset, ctx.config.coreset_seed());
      sel = m == "herding" ? herding_coreset(dataset, vpc, *features) : kcenter_coreset(dataset, vpc, *features);
    }
    write_text(ctx.out / "coresets" / (m + ".csv"), selection_csv(sel));
    ctx.out_stream << m << ": " << sel.total() << " videos selected\n";
  }
}

void cmd_eval(Context& ctx) {
  const VideoDataset dataset = load_checked(ctx);
  for (const auto& name : requested_methods(ctx)) {
    const Method m = load_method(ctx, dataset, name);
    const auto cells = full_report({m}, dataset, ctx.config.eval, ctx.config.eval_seed());
    for (const auto& c : cells) {
      for (const auto& r : c.runs) {
        ctx.out_stream << name << ' ' << to_string(c.arch) << " repeat " << r.repeat << ": accuracy "
                       << std::setprecision(4) << std::fixed << r.accuracy << std::defaultfloat << "\n";
      }
    }
    const fs::path dir = ctx.out / "eval";
    write_text(dir / (name + ".csv"), report_csv(cells));
    write_text(dir / (name + ".runs.csv"), runs_csv(cells));
    write_text(dir / (name + ".histogram.csv"), histogram_csv(cells));
    write_text(dir / (name + ".per_class.csv"), per_class_csv(cells));
  }
}

// Concatenates per-method CSVs that share one header.
std::string merge_csv(const Context& ctx, const std::vector<std::string>& methods, const std::string& suffix,
                      std::size_t* rows) {
  std::string header, body;
  *rows = 0;
  for (const auto& m : methods) {
    const std::string text = read_artifact(ctx.out / "eval" / (m + suffix));
    const auto nl = text.find('\n');
    const std::string h = text.substr(0, nl);
    if (header.empty()) header = h;
    if (h != header) throw FormatError(m + suffix + ": unexpected header '" + h + "'");
    if (nl == std::string::npos) continue;
    const std::string rest = text.substr(nl + 1);
    *rows += static_cast<std::size_t>(std::count(rest.begin(), rest.end(), '\n'));
    body += rest;
  }
  return header + "\n" + body;
}

void cmd_report(Context& ctx) {
  const auto methods = requested_methods(ctx);
  std::size_t rows = 0, ignored = 0;
  write_text(ctx.out / "report.csv", merge_csv(ctx, methods, ".csv", &rows));
  write_text(ctx.out / "histogram.csv", merge_csv(ctx, methods, ".histogram.csv", &ignored));
  write_text(ctx.out / "per_class.csv", merge_csv(ctx, methods, ".per_class.csv", &ignored));
  ctx.out_stream << (ctx.out / "report.csv").string() << ": " << rows << " rows\n";
}

void append_timing(const fs::path& out, const std::string& command, double seconds) {
  std::error_code ec;
  fs::create_directories(out, ec);
  std::ofstream log_file(out / "timing.log", std::ios::app);
  if (!log_file) return;
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  log_file << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << command << ' ' << std::fixed
           << std::setprecision(3) << seconds << "s\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Video dataset condensation with sparse key frames", "prism"};
  app.require_subcommand(1);
  Options opts;

  using Command = void (*)(Context&);
  std::vector<std::pair<CLI::App*, Command>> commands;
  auto add = [&](const char* name, const char* help, Command fn) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config_path, "run config file (built-in defaults if omitted)");
    sub->add_option("--out", opts.out_dir, "run directory (overrides run.out)");
    sub->add_option("--seed", opts.seed, "global seed (overrides run.seed)");
    sub->add_option("--jobs", opts.jobs, "worker cap")->check(CLI::PositiveNumber);
    commands.emplace_back(sub, fn);
    return sub;
  };
  add("gen-data", "generate the dataset", cmd_gen_data)
      ->add_option("--data", opts.data_path, "dataset path (default <out>/data.pvdc)");
  add("condense", "condense the dataset into sparse key-frame videos", cmd_condense)
      ->add_option("--data", opts.data_path, "dataset path (default <out>/data.pvdc)");
  {
    CLI::App* sub = add("ablate", "run the ablation matrix", cmd_ablate);
    sub->add_option("--data", opts.data_path, "dataset path (default <out>/data.pvdc)");
    sub->add_option("--only", opts.only, "variant tags to run besides the base")->delimiter(',');
    sub->add_option("--repeats", opts.repeats, "evaluation repeats per cell")->check(CLI::PositiveNumber);
  }
  {
    CLI::App* sub = add("baseline", "select coresets", cmd_baseline);
    sub->add_option("--data", opts.data_path, "dataset path (default <out>/data.pvdc)");
    sub->add_option("--only", opts.only, "coreset methods")->delimiter(',');
  }
  {
    CLI::App* sub = add("eval", "train and score evaluation models", cmd_eval);
    sub->add_option("--data", opts.data_path, "dataset path (default <out>/data.pvdc)");
    sub->add_option("--only", opts.only, "methods to evaluate")->delimiter(',');
    sub->add_option("--repeats", opts.repeats, "evaluation repeats per cell")->check(CLI::PositiveNumber);
  }
  {
    CLI::App* sub = add("report", "merge evaluation CSVs", cmd_report);
    sub->add_option("--only", opts.only, "methods to include")->delimiter(',');
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  std::string name;
  Command fn = nullptr;
  for (const auto& [sub, f] : commands) {
    if (sub->parsed()) {
      name = sub->get_name();
      fn = f;
    }
  }
  fs::path run_dir;
  const auto start = std::chrono::steady_clock::now();
  int code = kExitOk;
  try {
    Context ctx{resolve_config(opts), {}, opts, out};
    ctx.out = ctx.config.output_dir;
    run_dir = ctx.out;
    if (opts.jobs > 1) log().info("--jobs {}: commands run on a single worker", opts.jobs);
    fn(ctx);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    code = kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    code = kExitNumeric;
  } catch (const MissingArtifact& e) {
    err << e.what() << "\n";
    code = kExitMissing;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    code = kExitFailure;
  }
  if (!run_dir.empty()) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    append_timing(run_dir, name + " exit " + std::to_string(code), secs);
  }
  return code;
}

}  // namespace prism
