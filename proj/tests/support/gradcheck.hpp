#pragma once

// Central finite-difference gradient checks for the ad:: ops, shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gfp/fingerprint_vis.hpp"
#include "gfp/graph.hpp"
#include "gfp/ops.hpp"
#include "gfp/rng.hpp"

namespace gfp::testing {

using Var64 = ad::Var<double>;
using Graph64 = ad::Graph<double>;
using Params64 = ad::ParamSet<double>;

inline Tensor64 random_tensor(Rng& rng, Dims dims, double lo = -1.0, double hi = 1.0) {
  Tensor64 t(std::move(dims));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Magnitudes in [lo, hi] with random sign; keeps samples away from kinks at zero.
inline Tensor64 away_from_zero(Rng& rng, Dims dims, double lo = 0.1, double hi = 1.0) {
  Tensor64 t(std::move(dims));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (rng.coin() ? 1.0 : -1.0) * rng.uniform(lo, hi);
  return t;
}

struct GradCase {
  std::string op;
  std::vector<Tensor64> inputs;  // each bound as a graph variable
  Params64 params;               // bound by `build` through graph.param
  std::function<Var64(Graph64&, std::vector<Var64>&, Params64&)> build;
};

struct GradResult {
  std::string op;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor)
inline double rel_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Projects the op output onto fixed random weights so every output element contributes.
inline GradResult check_gradients(GradCase c, std::uint64_t weight_seed, double h = 1e-3) {
  Tensor64 weights;
  auto loss_of = [&](std::vector<Tensor64>& inputs, Params64& params, Graph64& g, std::vector<Var64>& vars) {
    vars.clear();
    for (auto& t : inputs) vars.push_back(g.variable(t));
    auto out = c.build(g, vars, params);
    if (weights.empty()) {
      Rng wr(weight_seed);
      weights = random_tensor(wr, out.dims());
    }
    return ad::sum(ad::mul(out, g.constant(weights)));
  };
  auto value_at = [&]() {
    Graph64 g;
    std::vector<Var64> vars;
    return loss_of(c.inputs, c.params, g, vars).value()[0];
  };

  std::vector<Tensor64> analytic;
  std::map<std::string, Tensor64> analytic_params;
  {
    Graph64 g;
    std::vector<Var64> vars;
    c.params.zero_grad();
    auto loss = loss_of(c.inputs, c.params, g, vars);
    g.backward(loss);
    for (auto& v : vars) analytic.push_back(g.grad(v));
    for (const auto& [name, p] : c.params) analytic_params[name] = p.grad;
  }

  GradResult r{c.op, 0.0, 0};
  for (std::size_t i = 0; i < c.inputs.size(); ++i)
    for (std::size_t j = 0; j < c.inputs[i].size(); ++j) {
      const double x0 = c.inputs[i][j];
      c.inputs[i][j] = x0 + h;
      const double up = value_at();
      c.inputs[i][j] = x0 - h;
      const double down = value_at();
      c.inputs[i][j] = x0;
      r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[i][j], (up - down) / (2 * h)));
      ++r.checked;
    }
  std::vector<std::string> names;
  for (const auto& [name, p] : c.params) names.push_back(name);
  for (const auto& name : names) {
    auto& value = c.params.at(name).value;
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double x0 = value[j];
      value[j] = x0 + h;
      const double up = value_at();
      value[j] = x0 - h;
      const double down = value_at();
      value[j] = x0;
      r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic_params[name][j], (up - down) / (2 * h)));
      ++r.checked;
    }
  }
  return r;
}

inline const std::vector<std::string>& differentiable_ops() {
  static const std::vector<std::string> ops = {
      "conv2d",       "conv2d_valid", "conv2d_transpose", "add_channel_bias", "leaky_relu",  "leaky_relu_mask",
      "avg_pool2d",   "gaussian_downsample", "upsample_bilinear", "reshape", "linear",      "matmul_nt",
      "tile_rows",    "add",          "sub",              "mul",              "scale",       "add_scalar",
      "square",       "scale_rows",   "sum",              "mean",             "row_norm",    "normalize_rows",
      "softmax_cross_entropy", "l1_mean", "gradient_penalty"};
  return ops;
}

namespace detail {

inline int conv_out(int n, int k, int stride, int pad) { return (n + 2 * pad - k) / stride + 1; }

// Tiny critic whose pre-activations on `x` all stay at least `margin` away from the LeakyReLU
// kink, so the penalty is smooth within the finite-difference step.
inline bool critic_is_smooth(const vis::VisConfig& cfg, const Params64& critic, const Tensor64& x, double margin) {
  Tensor64 h = x;
  for (int i = 0; (cfg.size >> i) > 4; ++i) {
    const std::string name = "d" + std::to_string(i);
    Tensor64 pre = fn::conv2d(h, critic.at(name + ".w").value, 2, 1);
    const auto& b = critic.at(name + ".b").value;
    const int c = pre.dim(-1);
    for (std::size_t k = 0; k < pre.size(); ++k) {
      pre[k] += b[k % c];
      if (std::abs(pre[k]) < margin) return false;
      if (pre[k] < 0) pre[k] *= 0.2;
    }
    h = pre;
  }
  return true;
}

}  // namespace detail

// Random small instance of `op`; shapes and stride/padding are drawn from rng.
inline GradCase make_grad_case(const std::string& op, Rng& rng) {
  GradCase c;
  c.op = op;
  const int n = rng.uniform_int(1, 2);
  if (op == "conv2d" || op == "conv2d_transpose") {
    const int k = rng.coin() ? 3 : 1, stride = rng.uniform_int(1, 2), pad = k == 3 ? rng.uniform_int(0, 1) : 0;
    const int h = rng.uniform_int(k, 6), w = rng.uniform_int(k, 6), cin = rng.uniform_int(1, 3), cout = rng.uniform_int(1, 3);
    const Tensor64 kernel = random_tensor(rng, {k, k, cin, cout});
    if (op == "conv2d") {
      c.inputs = {random_tensor(rng, {n, h, w, cin}), kernel};
      c.build = [=](Graph64&, std::vector<Var64>& v, Params64&) { return ad::conv2d(v[0], v[1], stride, pad); };
    } else {
      const int oh = detail::conv_out(h, k, stride, pad), ow = detail::conv_out(w, k, stride, pad);
      c.inputs = {random_tensor(rng, {n, oh, ow, cout}), kernel};
      c.build = [=](Graph64&, std::vector<Var64>& v, Params64&) {
        return ad::conv2d_transpose(v[0], v[1], stride, pad, h, w);
      };
    }
  } else if (op == "conv2d_valid") {
    const int k = 4, cin = rng.uniform_int(1, 3), cout = rng.uniform_int(1, 3);
    c.inputs = {random_tensor(rng, {n, k, k, cin}), random_tensor(rng, {k, k, cin, cout})};
    c.build = [](Graph64&, std::vector<Var64>& v, Params64&) { return ad::conv2d(v[0], v[1], 1, 0); };
  } else if (op == "add_channel_bias") {
    const int ch = rng.uniform_int(1, 4);
    c.inputs = {random_tensor(rng, {n, rng.uniform_int(1, 4), rng.uniform_int(1, 4), ch}), random_tensor(rng, {ch})};
    c.build = [](Graph64&, std::vector<Var64>& v, Params64&) { return ad::add_channel_bias(v[0], v[1]); };
  } else if (op == "leaky_relu") {
    c.inputs = {away_from_zero(rng, {n, rng.uniform_int(1, 4), rng.uniform_int(1, 4), 2})};
    c.build = [](Graph64&, std::vector<Var64>& v, Params64&) { return ad::leaky_relu(v[0], 0.2); };
  } else if (op == "leaky_relu_mask") {
    const Dims d{n, rng.uniform_int(1, 4), rng.uniform_int(1, 4), 2};
    const Tensor64 pre = away_from_zero(rng, d);
    c.inputs = {random_tensor(rng, d)};
    c.build = [pre](Graph64& g, std::vector<Var64>& v, Params64&) {
      return ad::leaky_relu_mask(g.constant(pre), v[0], 0.2);
    };
  } else if (op == "avg_pool2d") {
    c.inputs = {random_tensor(rng, {n, 2 * rng.uniform_int(1, 3), 2 * rng.uniform_int(1, 3), rng.uniform_int(1, 3)})};
    c.build = [](Graph64&, std::vector<Var64>& v, Params64&) { return ad::avg_pool2d(v[0], 2, 2); };
  } else if (op == "gaussian_downsample") {
    c.inputs = {random_tensor(rng, {n, 2 * rng.uniform_int(1, 4), 2 * rng.uniform_int(1, 4), rng.uniform_int(1, 3)})};
    c.build = [](Graph64&, std::vector<Var64>& v, Params64&) { return ad::gaussian_downsample(v[0]); };
  } else if (op == "upsample_bilinear") {
    c.inputs = {random_tensor(rng, {n, rng.uniform_int(1, 4), rng.uniform_int(1, 4), rng.uniform_int(1, 3)})};
    c.build = [](Graph64&, std::vector<Var64>& v, Params64&) { return ad::upsample_bilinear(v[0]); };
  } else if (op == "reshape") {
    const int a = rng.uniform_int(1, 4), b = rng.uniform_int(1, 4);
    c.inputs = {random_tensor(rng, {n, a, b})};
    c.build = [=](Graph64&, std::vector<Var64>& v, Params64&) { return ad::reshape(v[0], {n * a * b}); };
  } else if (op == "linear") {
    const int d = rng.uniform_int(1, 5), k = rng.uniform_int(1, 4);
    c.inputs = {random_tensor(rng, {n, d}), random_tensor(rng, {k, d}), random_tensor(rng, {k})};
    c.build = [](Graph64&, std::vector<Var64>& v, Params64&) { return ad::linear(v[0], v[1], v[2]); };
  } else if (op == "matmul_nt") {
    const int d = rng.uniform_int(1, 5), k = rng.uniform_int(1, 4);
    c.inputs = {random_tensor(rng, {n, d}), random_tensor(rng, {k, d})};
    c.build = [](Graph64&, std::vector<Var64>& v, Params64&) { return ad::matmul_nt(v[0], v[1]); };
  } else if (op == "tile_rows") {
    const int reps = rng.uniform_int(1, 3);
    c.inputs = {random_tensor(rng, {rng.uniform_int(1, 3), rng.uniform_int(1, 3)})};
    c.build = [=](Graph64&, std::vector<Var64>& v, Params64&) { return ad::tile_rows(v[0], reps); };
  } else if (op == "add" || op == "sub" || op == "mul") {
    const Dims d{n, rng.uniform_int(1, 4), rng.uniform_int(1, 3)};
    c.inputs = {random_tensor(rng, d), random_tensor(rng, d)};
    c.build = [op](Graph64&, std::vector<Var64>& v, Params64&) {
      return op == "add" ? ad::add(v[0], v[1]) : op == "sub" ? ad::sub(v[0], v[1]) : ad::mul(v[0], v[1]);
    };
  } else if (op == "scale" || op == "add_scalar" || op == "square") {
    const double s = rng.uniform(-2.0, 2.0);
    c.inputs = {random_tensor(rng, {n, rng.uniform_int(1, 4), rng.uniform_int(1, 3)})};
    c.build = [op, s](Graph64&, std::vector<Var64>& v, Params64&) {
      return op == "scale" ? ad::scale(v[0], s) : op == "add_scalar" ? ad::add_scalar(v[0], s) : ad::square(v[0]);
    };
  } else if (op == "scale_rows") {
    std::vector<double> coeffs(n);
    for (auto& x : coeffs) x = rng.uniform(-2.0, 2.0);
    c.inputs = {random_tensor(rng, {n, rng.uniform_int(1, 4), 2})};
    c.build = [coeffs](Graph64&, std::vector<Var64>& v, Params64&) { return ad::scale_rows(v[0], coeffs); };
  } else if (op == "sum" || op == "mean") {
    c.inputs = {random_tensor(rng, {n, rng.uniform_int(1, 4), rng.uniform_int(1, 3)})};
    c.build = [op](Graph64&, std::vector<Var64>& v, Params64&) { return op == "sum" ? ad::sum(v[0]) : ad::mean(v[0]); };
  } else if (op == "row_norm" || op == "normalize_rows") {
    c.inputs = {away_from_zero(rng, {n, rng.uniform_int(2, 6)})};
    c.build = [op](Graph64&, std::vector<Var64>& v, Params64&) {
      return op == "row_norm" ? ad::row_norm(v[0]) : ad::normalize_rows(v[0]);
    };
  } else if (op == "softmax_cross_entropy") {
    const int k = rng.uniform_int(2, 5);
    std::vector<int> labels(n);
    for (auto& l : labels) l = rng.uniform_int(0, k - 1);
    c.inputs = {random_tensor(rng, {n, k}, -3.0, 3.0)};
    c.build = [labels](Graph64&, std::vector<Var64>& v, Params64&) { return ad::softmax_cross_entropy(v[0], labels); };
  } else if (op == "l1_mean") {
    const Dims d{n, rng.uniform_int(1, 4), 2};
    const Tensor64 a = random_tensor(rng, d), gap = away_from_zero(rng, d);
    Tensor64 b = a;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += gap[i];
    c.inputs = {a, b};
    c.build = [](Graph64&, std::vector<Var64>& v, Params64&) { return ad::l1_mean(v[0], v[1]); };
  } else if (op == "gradient_penalty") {
    vis::VisConfig cfg;
    cfg.size = 8;
    cfg.channels = rng.coin() ? 1 : 3;
    cfg.width = 2;
    cfg.max_width = 4;
    Tensor64 x;
    for (std::uint64_t attempt = 0;; ++attempt) {
      c.params = vis::init_vis(cfg, rng.next_u64()).critic.cast<double>();
      for (auto& [name, p] : c.params)
        if (name.back() == 'b') p.value = random_tensor(rng, p.value.dims(), -0.1, 0.1);
      x = random_tensor(rng, {n, cfg.size, cfg.size, cfg.channels}, 0.0, 1.0);
      if (detail::critic_is_smooth(cfg, c.params, x, 1e-2)) break;
      if (attempt > 1000) throw std::runtime_error("could not draw a smooth critic instance");
    }
    c.inputs = {};
    c.build = [cfg, x](Graph64& g, std::vector<Var64>&, Params64& p) {
      return vis::gradient_penalty(vis::critic_input_gradient(cfg, p, g, g.constant(x), true), 10.0);
    };
  } else {
    throw std::invalid_argument("unknown op " + op);
  }
  return c;
}

}  // namespace gfp::testing
