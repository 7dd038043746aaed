#include "efuse/numcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace efuse::nc {

namespace {

using Rng = std::mt19937_64;

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Values bounded away from zero, either sign.
Tensor away_from_zero(Rng& rng, Shape shape) {
  std::uniform_real_distribution<double> u(0.5, 2.0);
  std::bernoulli_distribution sign(0.5);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = sign(rng) ? u(rng) : -u(rng);
  return t;
}

std::size_t dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 5) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

struct Case {
  OpBuilder build;
  std::vector<Tensor> inputs;
};

using CaseGen = std::function<Case(Rng&)>;

std::vector<std::pair<std::string, CaseGen>> suite_cases() {
  std::vector<std::pair<std::string, CaseGen>> cases;
  auto unary_case = [&](const std::string& name, std::function<Var(Var)> op, bool positive = false) {
    cases.emplace_back(name, [op, positive](Rng& rng) {
      Shape s{dim(rng), dim(rng)};
      Tensor x = positive ? random_tensor(rng, s, 0.2, 3.0) : random_tensor(rng, s, -2.0, 2.0);
      return Case{[op](Graph&, const std::vector<Var>& in) { return op(in[0]); }, {x}};
    });
  };
  cases.emplace_back("matmul", [](Rng& rng) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    return Case{[](Graph&, const std::vector<Var>& in) { return matmul(in[0], in[1]); },
                {random_tensor(rng, {m, k}), random_tensor(rng, {k, n})}};
  });
  cases.emplace_back("transpose", [](Rng& rng) {
    return Case{[](Graph&, const std::vector<Var>& in) { return transpose(in[0]); },
                {random_tensor(rng, {dim(rng), dim(rng)})}};
  });
  auto binary_case = [&](const std::string& name, std::function<Var(Var, Var)> op, bool nonzero_rhs) {
    cases.emplace_back(name, [op, nonzero_rhs](Rng& rng) {
      const std::size_t m = dim(rng, 2), n = dim(rng, 2);
      Shape rhs;
      switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
        case 0: rhs = {m, n}; break;
        case 1: rhs = {1}; break;
        case 2: rhs = {1, n}; break;
        default: rhs = {m, 1}; break;
      }
      Tensor b = nonzero_rhs ? away_from_zero(rng, rhs) : random_tensor(rng, rhs);
      return Case{[op](Graph&, const std::vector<Var>& in) { return op(in[0], in[1]); },
                  {random_tensor(rng, {m, n}), b}};
    });
  };
  binary_case("add", [](Var a, Var b) { return add(a, b); }, false);
  binary_case("sub", [](Var a, Var b) { return sub(a, b); }, false);
  binary_case("mul", [](Var a, Var b) { return mul(a, b); }, false);
  binary_case("div", [](Var a, Var b) { return div(a, b); }, true);
  unary_case("scale", [](Var a) { return scale(a, -1.7); });
  unary_case("add_scalar", [](Var a) { return add_scalar(a, 0.3); });
  unary_case("neg", [](Var a) { return neg(a); });
  unary_case("exp", [](Var a) { return exp(a); });
  unary_case("log", [](Var a) { return log(a); }, true);
  unary_case("sigmoid", [](Var a) { return sigmoid(a); });
  unary_case("softplus", [](Var a) { return softplus(a); });
  unary_case("gelu", [](Var a) { return gelu(a); });
  unary_case("sum", [](Var a) { return sum(a); });
  unary_case("mean", [](Var a) { return mean(a); });
  unary_case("softmax", [](Var a) { return softmax(a); });
  unary_case("logsumexp", [](Var a) { return logsumexp(a); });
  unary_case("l2_normalize", [](Var a) { return l2_normalize(a); }, true);
  cases.emplace_back("layer_norm", [](Rng& rng) {
    const std::size_t m = dim(rng), n = dim(rng, 2, 6);
    return Case{[](Graph&, const std::vector<Var>& in) { return layer_norm(in[0], in[1], in[2]); },
                {random_tensor(rng, {m, n}, -2.0, 2.0), random_tensor(rng, {n}), random_tensor(rng, {n})}};
  });
  cases.emplace_back("gather", [](Rng& rng) {
    const std::size_t v = dim(rng, 2, 6), d = dim(rng), k = dim(rng, 1, 8);
    std::vector<std::size_t> ids(k);
    for (auto& i : ids) i = std::uniform_int_distribution<std::size_t>(0, v - 1)(rng);
    return Case{[ids](Graph&, const std::vector<Var>& in) { return gather(in[0], ids); },
                {random_tensor(rng, {v, d})}};
  });
  cases.emplace_back("pick", [](Rng& rng) {
    const std::size_t m = dim(rng), n = dim(rng, 2);
    std::vector<std::size_t> idx(m);
    for (auto& i : idx) i = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    return Case{[idx](Graph&, const std::vector<Var>& in) { return pick(in[0], idx); },
                {random_tensor(rng, {m, n})}};
  });
  cases.emplace_back("concat", [](Rng& rng) {
    const int axis = std::uniform_int_distribution<int>(0, 1)(rng);
    const std::size_t m = dim(rng), n = dim(rng);
    Shape s2 = axis == 0 ? Shape{dim(rng), n} : Shape{m, dim(rng)};
    return Case{[axis](Graph&, const std::vector<Var>& in) { return concat({in[0], in[1], in[0]}, axis); },
                {random_tensor(rng, {m, n}), random_tensor(rng, s2)}};
  });
  cases.emplace_back("slice_rows", [](Rng& rng) {
    const std::size_t m = dim(rng, 2, 6), n = dim(rng);
    const std::size_t b = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
    const std::size_t e = std::uniform_int_distribution<std::size_t>(b + 1, m)(rng);
    return Case{[b, e](Graph&, const std::vector<Var>& in) { return slice_rows(in[0], b, e); },
                {random_tensor(rng, {m, n})}};
  });
  cases.emplace_back("slice_cols", [](Rng& rng) {
    const std::size_t m = dim(rng), n = dim(rng, 2, 6);
    const std::size_t b = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    const std::size_t e = std::uniform_int_distribution<std::size_t>(b + 1, n)(rng);
    return Case{[b, e](Graph&, const std::vector<Var>& in) { return slice_cols(in[0], b, e); },
                {random_tensor(rng, {m, n})}};
  });
  cases.emplace_back("reshape", [](Rng& rng) {
    const std::size_t m = dim(rng), n = dim(rng);
    return Case{[m, n](Graph&, const std::vector<Var>& in) { return reshape(in[0], {n, m}); },
                {random_tensor(rng, {m, n})}};
  });
  cases.emplace_back("masked_fill", [](Rng& rng) {
    const std::size_t m = dim(rng), n = dim(rng);
    std::vector<std::uint8_t> mask(m * n);
    std::bernoulli_distribution b(0.3);
    for (auto& x : mask) x = b(rng) ? 1 : 0;
    return Case{[mask](Graph&, const std::vector<Var>& in) { return masked_fill(in[0], mask, -5.0); },
                {random_tensor(rng, {m, n})}};
  });
  cases.emplace_back("linear", [](Rng& rng) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    return Case{[](Graph&, const std::vector<Var>& in) { return linear(in[0], in[1], in[2]); },
                {random_tensor(rng, {m, k}), random_tensor(rng, {k, n}), random_tensor(rng, {n})}};
  });
  cases.emplace_back("attention", [](Rng& rng) {
    const std::size_t n_seq = dim(rng, 1, 3), len = dim(rng, 1, 5), heads = dim(rng, 1, 2);
    const std::size_t d = heads * dim(rng, 1, 3);
    std::vector<std::uint8_t> mask(n_seq * len);
    std::bernoulli_distribution b(0.7);
    for (std::size_t s = 0; s < n_seq; ++s) {
      for (std::size_t j = 0; j < len; ++j) mask[s * len + j] = (j == 0 || b(rng)) ? 1 : 0;
    }
    return Case{[mask, n_seq, len, heads](Graph&, const std::vector<Var>& in) {
                  return attention(in[0], in[1], in[2], mask, n_seq, len, heads);
                },
                {random_tensor(rng, {n_seq * len, d}), random_tensor(rng, {n_seq * len, d}),
                 random_tensor(rng, {n_seq * len, d})}};
  });
  return cases;
}

double eval_projected(const OpBuilder& build, const std::vector<Tensor>& inputs, const Tensor& weights) {
  Graph g;
  std::vector<Var> in;
  for (const auto& t : inputs) in.push_back(g.constant(t));
  const Tensor& out = build(g, in).value();
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
  return s;
}

}  // namespace

std::vector<Tensor> finite_difference_grads(const std::function<double(const std::vector<Tensor>&)>& f,
                                            std::vector<Tensor> inputs, double h) {
  std::vector<Tensor> grads;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor gk(inputs[k].shape());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + h;
      const double fp = f(inputs);
      inputs[k][i] = orig - h;
      const double fm = f(inputs);
      inputs[k][i] = orig;
      gk[i] = (fp - fm) / (2.0 * h);
    }
    grads.push_back(std::move(gk));
  }
  return grads;
}

double relative_error(const std::vector<Tensor>& a, const std::vector<Tensor>& b, double floor) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      diff += (a[k][i] - b[k][i]) * (a[k][i] - b[k][i]);
      na += a[k][i] * a[k][i];
      nb += b[k][i] * b[k][i];
    }
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

double check_op_gradient(const OpBuilder& build, const std::vector<Tensor>& inputs, std::uint64_t weight_seed,
                         double h) {
  Tensor weights;
  {
    Graph probe;
    std::vector<Var> in;
    for (const auto& t : inputs) in.push_back(probe.constant(t));
    Rng rng(weight_seed);
    weights = random_tensor(rng, build(probe, in).value().shape());
  }
  Graph g;
  std::vector<Var> in;
  for (const auto& t : inputs) in.push_back(g.input(t));
  Var out = build(g, in);
  Var loss = sum(mul(out, g.constant(weights)));
  g.backward(loss);
  std::vector<Tensor> analytic;
  for (const Var& v : in) analytic.push_back(g.grad(v).empty() ? Tensor(v.shape(), 0.0) : g.grad(v));
  auto numeric = finite_difference_grads(
      [&](const std::vector<Tensor>& x) { return eval_projected(build, x, weights); }, inputs, h);
  return relative_error(analytic, numeric);
}

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, int instances, double h) {
  std::vector<GradCheckResult> results;
  Rng rng(seed);
  for (const auto& [name, gen] : suite_cases()) {
    GradCheckResult r;
    r.op = name;
    for (int i = 0; i < instances; ++i) {
      Case c = gen(rng);
      r.max_rel_error = std::max(r.max_rel_error, check_op_gradient(c.build, c.inputs, rng(), h));
      ++r.instances;
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace efuse::nc
