#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gcanet/grad_check.hpp"
#include "gcanet/ops.hpp"
#include "support.hpp"

namespace testing {

using gcanet::Conv2dSpec;
using gcanet::Shape;
using gcanet::Var;

struct OpCase {
  std::string name;
  std::vector<Shape> inputs;
  std::function<Var<double>(std::vector<Var<double>>&)> op;
  double lo = -1.0;
  double hi = 1.0;
};

/// Contracts y against fixed random weights so every output entry matters.
inline Var<double> weighted_sum(const Var<double>& y) {
  gcanet::Rng rng(977);
  return gcanet::sum_all(gcanet::mul(y, y.graph().constant(random_tensor(y.shape(), rng))));
}

/// One case per differentiable op; `s` is the base input shape, `k` the inner matmul extent.
inline std::vector<OpCase> op_cases(const Shape& s, std::int64_t k) {
  using namespace gcanet;
  using D = double;
  const Shape s_hw1{s.n, s.c, 1, 1};
  const Shape s_c1{s.n, 1, s.h, s.w};
  return {
      {"add", {s, s}, [](auto& v) { return add(v[0], v[1]); }},
      {"add_broadcast", {s, s_hw1}, [](auto& v) { return add(v[0], v[1]); }},
      {"sub", {s, s_c1}, [](auto& v) { return sub(v[0], v[1]); }},
      {"mul", {s, s}, [](auto& v) { return mul(v[0], v[1]); }},
      {"mul_broadcast", {s_c1, s}, [](auto& v) { return mul(v[0], v[1]); }},
      {"div", {s, s}, [](auto& v) { return div(v[0], add_scalar(mul(v[1], v[1]), 0.5)); }},
      {"scale", {s}, [](auto& v) { return scale(v[0], -1.7); }},
      {"add_scalar", {s}, [](auto& v) { return mul(add_scalar(v[0], 0.3), v[0]); }},
      {"scale_by", {s, Shape{}}, [](auto& v) { return scale_by(v[0], v[1]); }},
      {"div_by", {s, Shape{}}, [](auto& v) { return div_by(v[0], add_scalar(mul(v[1], v[1]), 0.5)); }},
      {"relu", {s}, [](auto& v) { return relu(v[0]); }},
      {"sigmoid", {s}, [](auto& v) { return sigmoid(scale(v[0], 4.0)); }},
      {"log", {s}, [](auto& v) { return log(v[0]); }, 0.2, 2.0},
      {"clamp", {s}, [](auto& v) { return clamp(v[0], -0.5, 0.5); }},
      {"softmax_c", {s}, [](auto& v) { return softmax(scale(v[0], 3.0), 1); }},
      {"softmax_w", {s}, [](auto& v) { return softmax(scale(v[0], 3.0), 3); }},
      {"softmax_h", {s}, [](auto& v) { return softmax(v[0], 2); }},
      // Normalised axes get extent >= 3; over one or two entries the op is a
      // sign function whose true gradient is below finite-difference noise.
      {"l2normalize_w", {Shape{s.n, s.c, s.h, s.w + 2}}, [](auto& v) { return l2normalize(v[0], 3); }},
      {"l2normalize_c", {Shape{s.n, s.c + 2, s.h, s.w}}, [](auto& v) { return l2normalize(v[0], 1); }},
      {"channel_norm", {Shape{s.n, s.c + 2, s.h, s.w}}, [](auto& v) { return channel_norm(v[0]); }},
      {"sum_c", {s}, [](auto& v) { return sum(v[0], 1); }},
      {"sum_w", {s}, [](auto& v) { return sum(v[0], 3); }},
      {"sum_all", {s}, [](auto& v) { return mul(sum_all(v[0]), sum_all(v[0])); }},
      {"mean_all", {s}, [](auto& v) { return mul(mean_all(v[0]), mean_all(v[0])); }},
      {"reshape", {s}, [](auto& v) {
         const Shape t{1, 1, v[0].shape().numel(), 1};
         return mul(reshape(v[0], t), reshape(v[0], t));
       }},
      {"matmul", {Shape{s.n, 2, s.h, k}, Shape{s.n, 2, k, s.w}}, [](auto& v) { return matmul(v[0], v[1]); }},
      {"matmul_ta", {Shape{s.n, 1, k, s.h}, Shape{1, 1, k, s.w}},
       [](auto& v) { return matmul(v[0], v[1], true, false); }},
      {"matmul_tb", {Shape{1, 1, s.h, k}, Shape{s.n, 2, s.w, k}},
       [](auto& v) { return matmul(v[0], v[1], false, true); }},
      {"matmul_tatb", {Shape{1, 2, k, s.h}, Shape{1, 2, s.w, k}},
       [](auto& v) { return matmul(v[0], v[1], true, true); }},
      {"conv3x3", {Shape{s.n, s.c, 5, 6}, Shape{3, s.c, 3, 3}, Shape{1, 3, 1, 1}},
       [](auto& v) { return conv2d(v[0], v[1], &v[2], Conv2dSpec{}); }},
      {"conv_stride2_dil2", {Shape{s.n, 2, 6, 5}, Shape{2, 2, 3, 3}}, [](auto& v) {
         Conv2dSpec sp;
         sp.stride = 2;
         sp.dilation = 2;
         return conv2d(v[0], v[1], static_cast<const Var<D>*>(nullptr), sp);
       }},
      {"conv_depthwise", {Shape{s.n, 4, 6, 6}, Shape{4, 1, 3, 3}}, [](auto& v) {
         Conv2dSpec sp;
         sp.groups = 4;
         return conv2d(v[0], v[1], static_cast<const Var<D>*>(nullptr), sp);
       }},
      {"conv_grouped_valid", {Shape{s.n, 4, 5, 5}, Shape{2, 2, 3, 3}}, [](auto& v) {
         Conv2dSpec sp;
         sp.groups = 2;
         sp.same_padding = false;
         return conv2d(v[0], v[1], static_cast<const Var<D>*>(nullptr), sp);
       }},
      {"conv1x1", {Shape{s.n, s.c, s.h, s.w}, Shape{3, s.c, 1, 1}, Shape{1, 3, 1, 1}},
       [](auto& v) { return conv2d(v[0], v[1], &v[2], Conv2dSpec{}); }},
      {"affine_channel", {s, Shape{1, s.c, 1, 1}, Shape{1, s.c, 1, 1}},
       [](auto& v) { return affine_channel(v[0], v[1], v[2]); }},
      {"global_avg_pool", {s}, [](auto& v) { return global_avg_pool(v[0]); }},
      {"avg_pool", {Shape{s.n, s.c, 4, 6}}, [](auto& v) { return avg_pool(v[0], 2); }},
      {"adaptive_avg_pool", {Shape{s.n, s.c, 5, 6}}, [](auto& v) { return adaptive_avg_pool(v[0], 3, 4); }},
      {"upsample_bilinear", {s}, [](auto& v) { return upsample_bilinear(v[0], 7, 5); }},
      {"concat_channels", {s, Shape{s.n, 2, s.h, s.w}}, [](auto& v) {
         return concat_channels<D>(std::vector<Var<D>>{v[0], v[1]});
       }},
  };
}

inline gcanet::GradCheckResult check_op_case(const OpCase& c, std::uint64_t seed) {
  gcanet::Rng rng(seed);
  ParamSet<double> ps;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    ps.add("x" + std::to_string(i), random_tensor(c.inputs[i], rng, c.lo, c.hi));
  }
  auto f = [&](gcanet::Graph<double>& g) {
    std::vector<Var<double>> vars;
    for (auto* p : ps.all()) vars.push_back(g.param(*p));
    return weighted_sum(c.op(vars));
  };
  return gcanet::grad_check(f, ps.all());
}

}  // namespace testing
