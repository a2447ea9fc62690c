#include "prism/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "prism/binary_io.hpp"

namespace prism {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  while (true) {
    const auto p = s.find(sep);
    const auto item = trim(s.substr(0, p));
    if (!item.empty()) out.emplace_back(item);
    if (p == std::string_view::npos) break;
    s.remove_prefix(p + 1);
  }
  return out;
}

template <typename T>
T parse_number(std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a number, got '" + std::string(v) + "'");
  return out;
}

bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("expected a boolean, got '" + std::string(v) + "'");
}

std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

int parse_axis(std::string_view v) {
  if (v == "x") return 0;
  if (v == "y") return 1;
  throw ConfigError("axis must be x or y, got '" + std::string(v) + "'");
}

struct Override {
  std::optional<double> speed, amplitude;
  std::optional<SpriteKind> sprite;
};

using Setter = std::function<void(RunConfig&, std::string_view)>;

std::map<std::string, Setter> setters() {
  std::map<std::string, Setter> m;
#define PRISM_SET(key, expr) m[key] = [](RunConfig& c, std::string_view v) { expr; }
  PRISM_SET("run.seed", c.seed = parse_number<std::uint64_t>(v));
  PRISM_SET("run.methods", c.methods = split_list(v));
  PRISM_SET("run.out", c.output_dir = std::string(v));
  PRISM_SET("dataset.frames", c.dataset.geometry.frames = parse_number<Index>(v));
  PRISM_SET("dataset.height", c.dataset.geometry.height = parse_number<Index>(v));
  PRISM_SET("dataset.width", c.dataset.geometry.width = parse_number<Index>(v));
  PRISM_SET("dataset.channels", c.dataset.geometry.channels = parse_number<Index>(v));
  PRISM_SET("dataset.train_per_class", c.dataset.train_per_class = parse_number<Index>(v));
  PRISM_SET("dataset.test_per_class", c.dataset.test_per_class = parse_number<Index>(v));
  PRISM_SET("model.arch", c.matcher_arch = parse_architecture(v));
  PRISM_SET("model.width1", c.matcher_widths[0] = parse_number<Index>(v));
  PRISM_SET("model.width2", c.matcher_widths[1] = parse_number<Index>(v));
  PRISM_SET("model.kernel", c.matcher_kernel = parse_number<Index>(v));
  PRISM_SET("condense.vpc", c.condense.videos_per_class = parse_number<int>(v));
  PRISM_SET("condense.epsilon", c.condense.epsilon = parse_number<double>(v));
  PRISM_SET("condense.learning_rate", c.condense.learning_rate = parse_number<double>(v));
  PRISM_SET("condense.momentum", c.condense.momentum = parse_number<double>(v));
  PRISM_SET("condense.real_batch", c.condense.real_batch = parse_number<Index>(v));
  PRISM_SET("condense.iterations", c.condense.iterations = parse_number<int>(v));
  PRISM_SET("condense.warmup_fraction", c.condense.warmup_fraction = parse_number<double>(v));
  PRISM_SET("condense.cooldown_fraction", c.condense.cooldown_fraction = parse_number<double>(v));
  PRISM_SET("condense.check_period", c.condense.check_period = parse_number<int>(v));
  PRISM_SET("condense.insertion", c.condense.insertion = parse_insertion_mode(v));
  PRISM_SET("condense.criterion", c.condense.criterion = parse_criterion(v));
  PRISM_SET("condense.l2_threshold", c.condense.l2_threshold = parse_number<double>(v));
  PRISM_SET("condense.max_keys", c.condense.max_keys = parse_number<Index>(v));
  PRISM_SET("condense.key_gradient", c.condense.key_gradient = parse_key_gradient(v));
  PRISM_SET("condense.matcher_reset_period", c.condense.matcher_reset_period = parse_number<int>(v));
  PRISM_SET("condense.matcher_learning_rate", c.condense.matcher_learning_rate = parse_number<double>(v));
  PRISM_SET("condense.flip", c.condense.flip = parse_bool(v));
  PRISM_SET("eval.epochs", c.eval.epochs = parse_number<int>(v));
  PRISM_SET("eval.learning_rate", c.eval.learning_rate = parse_number<double>(v));
  PRISM_SET("eval.momentum", c.eval.momentum = parse_number<double>(v));
  PRISM_SET("eval.grad_clip", c.eval.grad_clip = parse_number<double>(v));
  PRISM_SET("eval.batch_size", c.eval.batch_size = parse_number<Index>(v));
  PRISM_SET("eval.repeats", c.eval.repeats = parse_number<int>(v));
  PRISM_SET("eval.flip", c.eval.flip = parse_bool(v));
  PRISM_SET("eval.architectures", {
    c.eval.architectures.clear();
    for (const auto& a : split_list(v)) c.eval.architectures.push_back(parse_architecture(a));
  });
#undef PRISM_SET
  return m;
}

}  // namespace

MotionProgram parse_program(std::string_view entry, int class_id) {
  const auto parts = split_list(entry, ':');
  if (parts.empty()) throw ConfigError("empty program entry");
  const MotionLaw law = parse_motion_law(parts[0]);
  int axis = 0;
  std::optional<SpriteKind> sprite;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (parts[i] == "x" || parts[i] == "y") {
      axis = parse_axis(parts[i]);
    } else {
      sprite = parse_sprite(parts[i]);
    }
  }
  MotionProgram p = default_program(class_id, law, axis);
  if (sprite) p.sprite = *sprite;
  return p;
}

std::string program_entry(const MotionProgram& program) {
  return std::string(to_string(program.law)) + ":" + (program.axis == 0 ? "x" : "y") + ":" +
         std::string(to_string(program.sprite));
}

void RunConfig::validate() const {
  if (dataset.programs.empty()) throw ConfigError("dataset.programs: program list is missing");
  if (dataset.train_per_class < 1) throw ConfigError("dataset.train_per_class must be positive");
  if (dataset.test_per_class < 1) throw ConfigError("dataset.test_per_class must be positive");
  if (methods.empty()) throw ConfigError("run.methods must not be empty");
  matcher_spec();
  condense.validate();
  eval.validate();
}

ModelSpec RunConfig::matcher_spec() const {
  ModelSpec spec;
  spec.arch = matcher_arch;
  spec.widths = matcher_widths;
  spec.kernel = matcher_kernel;
  spec.classes = static_cast<int>(dataset.programs.size());
  spec.geometry = dataset.geometry;
  spec.validate();
  return spec;
}

std::uint64_t RunConfig::data_seed() const { return seed_stream(seed).derive("data").next_u64(); }
std::uint64_t RunConfig::condense_seed() const { return seed_stream(seed).derive("condense").next_u64(); }
std::uint64_t RunConfig::coreset_seed() const { return seed_stream(seed).derive("coreset").next_u64(); }
std::uint64_t RunConfig::eval_seed() const { return seed_stream(seed).derive("eval").next_u64(); }

CondenseConfig RunConfig::seeded_condense() const {
  CondenseConfig c = condense;
  c.seed = condense_seed();
  return c;
}

RunConfig default_run_config() {
  RunConfig c;
  c.dataset.programs = default_programs();
  return c;
}

RunConfig parse_config(std::string_view text, const std::string& origin) {
  static const auto table = setters();
  RunConfig config;
  bool have_programs = false;
  std::map<int, Override> overrides;
  std::string section;
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      static const std::vector<std::string> known{"run", "dataset", "model", "condense", "eval"};
      if (std::find(known.begin(), known.end(), section) == known.end()) {
        throw ConfigError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "entry outside of a section");
    const std::string key = section + "." + std::string(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    try {
      if (key == "dataset.programs") {
        config.dataset.programs.clear();
        int id = 0;
        for (const auto& e : split_list(value)) config.dataset.programs.push_back(parse_program(e, id++));
        have_programs = true;
      } else if (key.rfind("dataset.program.", 0) == 0) {
        const auto rest = std::string_view(key).substr(16);
        const auto dot = rest.find('.');
        if (dot == std::string_view::npos) throw ConfigError("expected program.<index>.<field>");
        const int id = parse_number<int>(rest.substr(0, dot));
        const auto field = rest.substr(dot + 1);
        Override& o = overrides[id];
        if (field == "speed") {
          o.speed = parse_number<double>(value);
        } else if (field == "amplitude") {
          o.amplitude = parse_number<double>(value);
        } else if (field == "sprite") {
          o.sprite = parse_sprite(value);
        } else {
          throw ConfigError("unknown program field '" + std::string(field) + "'");
        }
      } else {
        const auto it = table.find(key);
        if (it == table.end()) throw ConfigError("unknown key '" + key + "'");
        it->second(config, value);
      }
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  if (!have_programs) throw ConfigError(origin + ": dataset.programs: program list is missing");
  for (const auto& [id, o] : overrides) {
    if (id < 0 || id >= static_cast<int>(config.dataset.programs.size())) {
      throw ConfigError(origin + ": dataset.program." + std::to_string(id) + ": no such program");
    }
    MotionProgram& p = config.dataset.programs[static_cast<std::size_t>(id)];
    if (o.speed) p.speed = *o.speed;
    if (o.amplitude) p.amplitude = *o.amplitude;
    if (o.sprite) p.sprite = *o.sprite;
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return config;
}

RunConfig load_config(const std::string& path) { return parse_config(io::read_file(path), path); }

std::string to_text(const RunConfig& c) {
  std::ostringstream os;
  auto join = [](const auto& items, auto name) {
    std::string s;
    for (const auto& i : items) s += (s.empty() ? "" : ", ") + std::string(name(i));
    return s;
  };
  const auto& g = c.dataset.geometry;
  os << "[run]\nseed = " << c.seed << "\nmethods = " << join(c.methods, [](const std::string& s) { return s; })
     << "\nout = " << c.output_dir << "\n\n";
  os << "[dataset]\nframes = " << g.frames << "\nheight = " << g.height << "\nwidth = " << g.width
     << "\nchannels = " << g.channels << "\ntrain_per_class = " << c.dataset.train_per_class
     << "\ntest_per_class = " << c.dataset.test_per_class << "\nprograms = "
     << join(c.dataset.programs, [](const MotionProgram& p) { return program_entry(p); }) << "\n";
  for (std::size_t i = 0; i < c.dataset.programs.size(); ++i) {
    const auto& p = c.dataset.programs[i];
    os << "program." << i << ".speed = " << fmt_double(p.speed) << "\nprogram." << i
       << ".amplitude = " << fmt_double(p.amplitude) << "\n";
  }
  os << "\n[model]\narch = " << to_string(c.matcher_arch) << "\nwidth1 = " << c.matcher_widths[0]
     << "\nwidth2 = " << c.matcher_widths[1] << "\nkernel = " << c.matcher_kernel << "\n\n";
  const auto& k = c.condense;
  os << "[condense]\nvpc = " << k.videos_per_class << "\nepsilon = " << fmt_double(k.epsilon)
     << "\nlearning_rate = " << fmt_double(k.learning_rate) << "\nmomentum = " << fmt_double(k.momentum)
     << "\nreal_batch = " << k.real_batch << "\niterations = " << k.iterations
     << "\nwarmup_fraction = " << fmt_double(k.warmup_fraction)
     << "\ncooldown_fraction = " << fmt_double(k.cooldown_fraction) << "\ncheck_period = " << k.check_period
     << "\ninsertion = " << to_string(k.insertion) << "\ncriterion = " << to_string(k.criterion)
     << "\nl2_threshold = " << fmt_double(k.l2_threshold) << "\nmax_keys = " << k.max_keys
     << "\nkey_gradient = " << to_string(k.key_gradient) << "\nmatcher_reset_period = " << k.matcher_reset_period
     << "\nmatcher_learning_rate = " << fmt_double(k.matcher_learning_rate)
     << "\nflip = " << (k.flip ? "true" : "false") << "\n\n";
  const auto& e = c.eval;
  os << "[eval]\nepochs = " << e.epochs << "\nlearning_rate = " << fmt_double(e.learning_rate)
     << "\nmomentum = " << fmt_double(e.momentum) << "\ngrad_clip = " << fmt_double(e.grad_clip) << "\nbatch_size = " << e.batch_size << "\nrepeats = " << e.repeats
     << "\nflip = " << (e.flip ? "true" : "false")
     << "\narchitectures = " << join(e.architectures, [](Architecture a) { return to_string(a); }) << "\n";
  return os.str();
}

}  // namespace prism
