#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "prism/autograd.hpp"
#include "prism/random.hpp"
#include "prism/tensor.hpp"

namespace prism::test {

template <typename S = double>
BasicTensor<S> random_tensor(Shape shape, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  BasicTensor<S> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

inline Index random_extent(CounterRng& rng, Index lo, Index hi) {
  return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

// Branch pattern of every relu and max-pool in a graph.
inline std::vector<char> branch_signature(const Graph<double>& g) {
  std::vector<char> sig;
  for (int i = 0; i < g.size(); ++i) {
    const auto& r = g.record(i);
    if (r.op == Op::kRelu) {
      const auto& in = g.record(r.parents[0]).value;
      for (Index k = 0; k < in.size(); ++k) sig.push_back(in[k] > 0 ? 1 : 0);
    } else if (r.op == Op::kMaxPool2) {
      for (Index a : r.attrs.argmax) sig.push_back(static_cast<char>(a & 0x7f));
    }
  }
  return sig;
}

struct FdReport {
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  int checked = 0;
  int skipped = 0;
};

// Builds a scalar root from parameter leaves holding `values`.
using Builder = std::function<Node<double>(Graph<double>&, const std::vector<Node<double>>&)>;

/// Central differences on up to `max_coords` random coordinates per leaf.
/// Coordinates whose +-h evaluations take different relu / max-pool
/// branches are skipped.
inline FdReport fd_check(const Builder& build, const std::vector<BasicTensor<double>>& values, CounterRng& rng,
                         double h = 1e-3, Index max_coords = 24) {
  auto eval = [&](const std::vector<BasicTensor<double>>& v, std::vector<char>* sig) {
    Graph<double> g;
    std::vector<Node<double>> leaves;
    for (const auto& t : v) leaves.push_back(g.parameter(t));
    const Node<double> root = build(g, leaves);
    if (sig) *sig = branch_signature(g);
    return root.value().item();
  };
  Graph<double> g;
  std::vector<Node<double>> leaves;
  for (const auto& t : values) leaves.push_back(g.parameter(t));
  const auto analytic = backward(build(g, leaves), leaves);

  FdReport report;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t l = 0; l < values.size(); ++l) {
    const Index n = values[l].size();
    std::vector<Index> coords;
    if (n <= max_coords) {
      for (Index i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (Index k = 0; k < max_coords; ++k) coords.push_back(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
    }
    for (Index i : coords) {
      auto plus = values, minus = values;
      plus[l][i] += h;
      minus[l][i] -= h;
      std::vector<char> sp, sm;
      const double fp = eval(plus, &sp);
      const double fm = eval(minus, &sm);
      if (sp != sm) {
        ++report.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2 * h);
      const double a = analytic[l][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      ++report.checked;
    }
  }
  const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
  report.rel_error = std::sqrt(diff2) / scale;
  return report;
}

// sum(x * r): a scalar that sees every element of x.
inline Node<double> project(Node<double> x, const BasicTensor<double>& r) {
  return sum(mul(x, x.graph().constant(r)));
}

}  // namespace prism::test
