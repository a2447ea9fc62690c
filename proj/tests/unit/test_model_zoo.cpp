#include <doctest.h>

#include <cmath>

#include "prism/condenser.hpp"
#include "prism/model_zoo.hpp"
#include "support.hpp"

using namespace prism;
using namespace prism::test;

namespace {

ModelSpec small_spec(Architecture arch, int classes = 3) {
  ModelSpec s;
  s.arch = arch;
  s.widths = {3, 4};
  s.classes = classes;
  s.geometry = {4, 4, 4, 2};
  return s;
}

const Architecture kAll[] = {Architecture::kConv3dMicro, Architecture::kConv2dMean, Architecture::kConv2dRecurrent};

Tensor permute_frames(const Tensor& batch, const std::vector<Index>& order) {
  Tensor out(batch.shape());
  const Index frames = batch.dim(1), frame = batch.size() / (batch.dim(0) * frames);
  for (Index b = 0; b < batch.dim(0); ++b)
    for (Index t = 0; t < frames; ++t)
      std::copy_n(batch.data() + (b * frames + order[static_cast<std::size_t>(t)]) * frame, frame,
                  out.data() + (b * frames + t) * frame);
  return out;
}

}  // namespace

TEST_CASE("init_params is deterministic and seed dependent") {
  ModelSpec spec;
  CHECK(init_params(spec, 5) == init_params(spec, 5));
  CHECK_FALSE(init_params(spec, 5) == init_params(spec, 6));
}

TEST_CASE("init_params bounds follow fan-in and biases start at zero") {
  ModelSpec spec;
  spec.widths = {8, 100};  // head fan-in 100
  const Params p = init_params(spec, 1);
  const auto layout = param_layout(spec);
  REQUIRE(layout.size() == p.count());
  const auto& head = p.tensors[4];
  CHECK(layout[4].fan_in == 100);
  const double bound = std::sqrt(3.0) / 10.0;
  CHECK(head.array().abs().maxCoeff() <= bound);
  CHECK(head.array().abs().maxCoeff() > 0.9 * bound);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    CHECK(p.tensors[i].shape() == layout[i].shape);
    if (layout[i].fan_in == 0) CHECK(p.tensors[i] == Tensor::zeros(layout[i].shape));
  }
}

TEST_CASE("parameter count is a pure function of the spec") {
  for (Architecture arch : kAll) {
    ModelSpec spec;
    spec.arch = arch;
    Index expected = 0;
    for (const auto& info : param_layout(spec)) expected += numel(info.shape);
    CHECK(init_params(spec, 1).total_size() == expected);
    CHECK(init_params(spec, 2).total_size() == expected);
  }
}

TEST_CASE("zero batch with zero head bias gives zero logits") {
  for (Architecture arch : kAll) {
    ModelSpec spec;
    spec.arch = arch;
    const Tensor logits = predict_logits(spec, init_params(spec, 3), Tensor::zeros({2, 8, 16, 16, 3}));
    CHECK(logits.shape() == Shape{2, 6});
    CHECK(logits.array().abs().maxCoeff() == 0.0f);
  }
}

TEST_CASE("logits are B x classes for any batch size") {
  CounterRng rng = seed_stream(21);
  for (Architecture arch : kAll) {
    const ModelSpec spec = small_spec(arch);
    const Params p = init_params(spec, 1);
    for (Index b : {1, 2, 5}) {
      const Tensor logits = predict_logits(spec, p, random_tensor<float>({b, 4, 4, 4, 2}, rng, 0, 1));
      CHECK(logits.shape() == Shape{b, 3});
    }
  }
}

TEST_CASE("geometry mismatch is rejected") {
  const ModelSpec spec = small_spec(Architecture::kConv3dMicro);
  CHECK_THROWS_AS(predict_logits(spec, init_params(spec, 1), Tensor({1, 4, 8, 4, 2})), ShapeError);
}

TEST_CASE("invalid specs are rejected") {
  ModelSpec s;
  s.classes = 1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = ModelSpec{};
  s.geometry.frames = 2;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = ModelSpec{};
  s.geometry.height = 6;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK_THROWS_AS(parse_architecture("resnet"), ConfigError);
}

TEST_CASE("frame permutation: conv2d-mean invariant, recurrent and conv3d not") {
  ModelSpec spec;
  std::vector<Index> order{7, 3, 0, 5, 1, 6, 2, 4};
  int recurrent_changed = 0, conv3d_changed = 0;
  for (std::uint64_t trial = 0; trial < 8; ++trial) {
    CounterRng rng = seed_stream(trial).derive("permutation");
    const Tensor batch = random_tensor<float>({2, 8, 16, 16, 3}, rng, 0, 1);
    const Tensor permuted = permute_frames(batch, order);
    auto delta = [&](Architecture arch) {
      spec.arch = arch;
      const Params p = init_params(spec, 100 + trial);
      const Tensor a = predict_logits(spec, p, batch);
      const Tensor b = predict_logits(spec, p, permuted);
      return (a.array() - b.array()).abs().maxCoeff() / std::max(1e-6f, a.array().abs().maxCoeff());
    };
    CHECK(delta(Architecture::kConv2dMean) < 1e-5f);
    recurrent_changed += delta(Architecture::kConv2dRecurrent) > 1e-3f;
    conv3d_changed += delta(Architecture::kConv3dMicro) > 1e-3f;
  }
  CHECK(recurrent_changed == 8);
  CHECK(conv3d_changed == 8);
}

TEST_CASE("input gradient is nonzero for random inputs") {
  for (Architecture arch : kAll) {
    ModelSpec spec;
    spec.arch = arch;
    int nonzero = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      CounterRng rng = seed_stream(seed).derive("gradient-flow");
      Graph<float> g;
      const auto p = bind_params(g, init_params(spec, seed), LeafKind::kConstant);
      const auto x = g.data(random_tensor<float>({1, 8, 16, 16, 3}, rng, 0, 1));
      const auto loss = softmax_cross_entropy(forward(spec, p, x), {static_cast<int>(seed % 6)});
      const Tensor grad = backward(loss, std::vector{x})[0];
      nonzero += norm(grad.span()) > 0;
    }
    INFO(to_string(arch));
    CHECK(nonzero >= 99);
  }
}

TEST_CASE("full networks match finite differences") {
  for (Architecture arch : kAll) {
    const ModelSpec spec = small_spec(arch);
    double worst = 0.0;
    for (int c = 0; c < 32; ++c) {
      CounterRng rng = seed_stream(static_cast<std::uint64_t>(c)).derive("network-fd", static_cast<std::uint64_t>(arch));
      std::vector<BasicTensor<double>> values{random_tensor({2, 4, 4, 4, 2}, rng, 0, 1)};
      for (const auto& t : init_params(spec, static_cast<std::uint64_t>(c)).cast<double>().tensors) {
        values.push_back(t);
      }
      // Nonzero biases so no unit starts exactly at a kink.
      for (std::size_t k = 1; k < values.size(); ++k) {
        if (values[k].rank() == 1) values[k] = random_tensor(values[k].shape(), rng, -0.1, 0.1);
      }
      const std::vector<int> labels{0, 2};
      const Builder build = [&](Graph<double>&, const std::vector<Node<double>>& x) {
        const std::vector<Node<double>> params(x.begin() + 1, x.end());
        return softmax_cross_entropy(forward(spec, params, x[0]), labels);
      };
      const FdReport rep = fd_check(build, values, rng, 1e-3, 12);
      CHECK(rep.checked > 0);
      worst = std::max(worst, rep.rel_error);
    }
    MESSAGE(to_string(arch) << ": worst relative error " << worst);
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("matching-loss meta-gradient matches finite differences over synthetic pixels") {
  ModelSpec spec;
  spec.classes = 2;
  spec.widths = {4, 6};
  spec.geometry = {4, 4, 4, 3};
  const std::vector<Index> key_indices{0, 1, 3};
  double worst = 0.0;
  for (int c = 0; c < 8; ++c) {
    CounterRng rng = seed_stream(static_cast<std::uint64_t>(c)).derive("meta-fd");
    const BasicParams<double> params = init_params(spec, 40 + static_cast<std::uint64_t>(c)).cast<double>();
    std::vector<BasicTensor<double>> real_grads;
    for (int k = 0; k < 2; ++k) {
      real_grads.push_back(task_gradient(spec, params, random_tensor({3, 4, 4, 4, 3}, rng, 0, 1), k));
    }
    std::vector<BasicTensor<double>> keys;
    for (int v = 0; v < 2; ++v)
      for (std::size_t k = 0; k < key_indices.size(); ++k) keys.push_back(random_tensor({4, 4, 3}, rng, 0, 1));
    const Builder build = [&](Graph<double>& g, const std::vector<Node<double>>& x) {
      const auto p = bind_params(g, params);
      std::vector<Node<double>> syn;
      for (int v = 0; v < 2; ++v) {
        const std::span<const Node<double>> mine(x.data() + v * 3, 3);
        syn.push_back(reshape(interpolate(mine, std::span<const Index>(key_indices), 4), Shape{1, 4, 4, 4, 3}));
      }
      const std::vector<int> labels{0, 1};
      return matching_loss(spec, std::span<const Node<double>>(p), std::span<const Node<double>>(syn),
                           std::span<const BasicTensor<double>>(real_grads), std::span<const int>(labels));
    };
    const FdReport rep = fd_check(build, keys, rng, 1e-3, 16);
    CHECK(rep.checked > 0);
    worst = std::max(worst, rep.rel_error);
  }
  MESSAGE("meta-gradient worst relative error " << worst);
  CHECK(worst < 1e-2);
}

TEST_CASE("parameter container round trip") {
  ModelSpec spec;
  spec.arch = Architecture::kConv2dRecurrent;
  const Params p = init_params(spec, 9);
  const std::string bytes = serialize_params(p);
  CHECK(deserialize_params(bytes) == p);
  CHECK(serialize_params(deserialize_params(bytes)) == bytes);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(deserialize_params(bad), doctest::Contains("PVPM"), FormatError);
  CHECK_THROWS_AS(deserialize_params(bytes.substr(0, bytes.size() - 3)), FormatError);
}
