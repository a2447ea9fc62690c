#include "prism/model_zoo.hpp"

#include <cmath>

#include "prism/binary_io.hpp"
#include "prism/random.hpp"

namespace prism {

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::kConv3dMicro: return "conv3d-micro";
    case Architecture::kConv2dMean: return "conv2d-mean";
    case Architecture::kConv2dRecurrent: return "conv2d-recurrent";
  }
  return "unknown";
}

Architecture parse_architecture(std::string_view name) {
  for (auto a : {Architecture::kConv3dMicro, Architecture::kConv2dMean, Architecture::kConv2dRecurrent}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown architecture '" + std::string(name) + "'");
}

std::string to_string(const Geometry& g) {
  return "T=" + std::to_string(g.frames) + " H=" + std::to_string(g.height) + " W=" + std::to_string(g.width) +
         " C=" + std::to_string(g.channels);
}

kernels::Kernel3 ModelSpec::kernel_extents() const {
  const Index kt = arch == Architecture::kConv3dMicro ? kernel : 1;
  return {kt, kernel, kernel};
}

Index ModelSpec::embedding_size() const {
  if (arch == Architecture::kConv3dMicro) return widths[1];
  return (geometry.height / 4) * (geometry.width / 4) * widths[1];
}

void ModelSpec::validate() const {
  if (classes < 2) throw ConfigError("model needs at least 2 classes");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("kernel extent must be odd");
  if (widths[0] < 1 || widths[1] < 1) throw ConfigError("channel widths must be positive");
  const Geometry& g = geometry;
  if (g.frames < 1 || g.channels < 1) throw ConfigError("geometry extents must be positive");
  const auto k = kernel_extents();
  if (g.frames < k[0] || g.height < k[1] || g.width < k[2]) {
    throw ConfigError("geometry " + to_string(g) + " is smaller than the kernel");
  }
  if (g.height % 4 || g.width % 4) throw ConfigError("H and W must be multiples of 4 (two 2x pools)");
}

std::vector<ParamInfo> param_layout(const ModelSpec& spec) {
  spec.validate();
  const auto k = spec.kernel_extents();
  const Index c0 = spec.geometry.channels, c1 = spec.widths[0], c2 = spec.widths[1];
  const Index e = spec.embedding_size();
  const Index taps = k[0] * k[1] * k[2];
  std::vector<ParamInfo> out{
      {"conv1.weight", {k[0], k[1], k[2], c0, c1}, taps * c0},
      {"conv1.bias", {c1}, 0},
      {"conv2.weight", {k[0], k[1], k[2], c1, c2}, taps * c1},
      {"conv2.bias", {c2}, 0},
  };
  if (spec.arch == Architecture::kConv2dRecurrent) {
    out.push_back({"recurrent.state", {e, e}, e});
    out.push_back({"recurrent.input", {e, e}, e});
    out.push_back({"recurrent.bias", {e}, 0});
  }
  out.push_back({"head.weight", {e, spec.classes}, e});
  out.push_back({"head.bias", {spec.classes}, 0});
  return out;
}

Params init_params(const ModelSpec& spec, std::uint64_t seed) {
  CounterRng root = seed_stream(seed).derive("init-params");
  Params params;
  std::uint64_t index = 0;
  for (const ParamInfo& info : param_layout(spec)) {
    Tensor t(info.shape);
    if (info.fan_in > 0) {
      CounterRng rng = root.derive(info.name, index);
      const double bound = std::sqrt(3.0 / static_cast<double>(info.fan_in));
      for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-bound, bound));
    }
    params.names.push_back(info.name);
    params.tensors.push_back(std::move(t));
    ++index;
  }
  return params;
}

Tensor predict_logits(const ModelSpec& spec, const Params& params, const Tensor& batch) {
  Graph<float> g;
  const auto p = bind_params(g, params, LeafKind::kConstant);
  return forward(spec, p, g.constant(batch)).value();
}

Tensor embed(const ModelSpec& spec, const Params& params, const Tensor& batch) {
  Graph<float> g;
  const auto p = bind_params(g, params, LeafKind::kConstant);
  return features(spec, std::span<const Node<float>>(p), g.constant(batch)).value();
}

namespace {
constexpr std::string_view kParamsMagic = "PVPM";
constexpr std::uint32_t kParamsVersion = 1;
}  // namespace

std::string serialize_params(const Params& params) {
  io::ByteWriter w;
  w.bytes(kParamsMagic);
  w.u32(kParamsVersion);
  w.u32(static_cast<std::uint32_t>(params.count()));
  for (std::size_t i = 0; i < params.count(); ++i) {
    w.u32(static_cast<std::uint32_t>(params.names[i].size()));
    w.bytes(params.names[i]);
    const Shape& s = params.tensors[i].shape();
    w.u32(static_cast<std::uint32_t>(s.size()));
    for (Index e : s) w.u32(static_cast<std::uint32_t>(e));
    w.floats(params.tensors[i].span());
  }
  return w.buffer();
}

Params deserialize_params(std::string_view bytes) {
  io::ByteReader r(bytes, "PVPM");
  if (r.bytes(4, "magic") != kParamsMagic) throw FormatError("PVPM: bad magic, expected \"PVPM\"");
  if (const auto v = r.u32(); v != kParamsVersion) throw FormatError("PVPM: unsupported version " + std::to_string(v));
  Params params;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    params.names.emplace_back(r.bytes(len, "name"));
    Shape shape(r.u32());
    for (auto& e : shape) e = r.u32();
    Tensor t(shape);
    r.floats(t.span(), "tensor payload");
    params.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("PVPM: trailing bytes");
  return params;
}

}  // namespace prism
