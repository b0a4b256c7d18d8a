#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "gcanet/checkpoint.hpp"
#include "gcanet/grad_check.hpp"
#include "gcanet/ops.hpp"
#include "grad_cases.hpp"
#include "support.hpp"

using namespace gcanet;
using testing::ParamSet;
using testing::random_tensor;

namespace {

using D = double;

Tensor<D> depthwise_loop(const Tensor<D>& x, const Tensor<D>& w, int stride, int dilation) {
  const Shape s = x.shape();
  const std::int64_t k = w.shape().h;
  const std::int64_t pad = dilation * (k - 1) / 2;
  const std::int64_t oh_n = (s.h + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  const std::int64_t ow_n = (s.w + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  Tensor<D> out(Shape{s.n, s.c, oh_n, ow_n});
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t i = 0; i < k; ++i)
        for (std::int64_t j = 0; j < k; ++j)
          for (std::int64_t oh = 0; oh < oh_n; ++oh)
            for (std::int64_t ow = 0; ow < ow_n; ++ow) {
              const std::int64_t ih = oh * stride + i * dilation - pad;
              const std::int64_t iw = ow * stride + j * dilation - pad;
              if (ih < 0 || iw < 0 || ih >= s.h || iw >= s.w) continue;
              out.at(n, c, oh, ow) += w.at(c, 0, i, j) * x.at(n, c, ih, iw);
            }
  return out;
}

}  // namespace

TEST_CASE("matmul examples") {
  Graph<D> g(false);
  auto id = g.constant(Tensor<D>::matrix(2, 2, {1, 0, 0, 1}));
  auto b = g.constant(Tensor<D>::matrix(2, 2, {3, 4, 5, 6}));
  CHECK(matmul(id, b).value().vec() == std::vector<D>{3, 4, 5, 6});

  auto row = g.constant(Tensor<D>::matrix(1, 2, {1, 2}));
  auto col = g.constant(Tensor<D>::matrix(2, 1, {3, 4}));
  CHECK(matmul(row, col).value()[0] == 11.0);

  auto a23 = g.constant(Tensor<D>(Shape{1, 1, 2, 3}));
  auto b42 = g.constant(Tensor<D>(Shape{1, 1, 4, 2}));
  try {
    matmul(a23, b42);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1,1,2,3]") != std::string::npos);
    CHECK(msg.find("[1,1,4,2]") != std::string::npos);
  }
}

TEST_CASE("conv2d examples") {
  Graph<D> g(false);
  Rng rng(3);
  auto x = g.constant(random_tensor(Shape{1, 1, 4, 4}, rng));
  auto zero_w = g.constant(Tensor<D>(Shape{1, 1, 3, 3}));
  auto y = conv2d(x, zero_w, static_cast<const Var<D>*>(nullptr), Conv2dSpec{});
  CHECK(y.shape() == Shape{1, 1, 4, 4});
  for (D v : y.value().vec()) CHECK(v == 0.0);

  auto ones = g.constant(Tensor<D>(Shape{1, 1, 3, 3}, 1.0));
  auto w1 = g.constant(Tensor<D>(Shape{1, 1, 3, 3}, 1.0));
  CHECK(conv2d(ones, w1, static_cast<const Var<D>*>(nullptr), Conv2dSpec{}).value().at(0, 0, 1, 1) == 9.0);

  Conv2dSpec s2;
  s2.stride = 2;
  CHECK(conv2d(x, w1, static_cast<const Var<D>*>(nullptr), s2).shape() == Shape{1, 1, 2, 2});

  Conv2dSpec bad;
  bad.groups = 2;
  auto x3 = g.constant(Tensor<D>(Shape{1, 3, 4, 4}));
  auto w3 = g.constant(Tensor<D>(Shape{3, 1, 3, 3}));
  CHECK_THROWS_AS(conv2d(x3, w3, static_cast<const Var<D>*>(nullptr), bad), ShapeError);
}

TEST_CASE("softmax, l2normalize and relu examples") {
  Graph<D> g(false);
  auto z = softmax(g.constant(Tensor<D>(Shape{1, 3, 1, 1})), 1);
  for (D v : z.value().vec()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  auto n = l2normalize(g.constant(Tensor<D>(Shape{1, 1, 1, 2}, std::vector<D>{3, 4})), 3);
  CHECK(n.value()[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(n.value()[1] == doctest::Approx(0.8).epsilon(1e-12));

  auto zero = l2normalize(g.constant(Tensor<D>(Shape{1, 1, 1, 4})), 3);
  for (D v : zero.value().vec()) CHECK(v == 0.0);

  CHECK(relu(g.constant(Tensor<D>::scalar(-2.0))).value()[0] == 0.0);
}

TEST_CASE("pooling and resampling examples") {
  Graph<D> g(false);
  auto c = g.constant(Tensor<D>(Shape{2, 3, 5, 4}, 2.5));
  const auto pooled = global_avg_pool(c);
  for (D v : pooled.value().vec()) CHECK(v == doctest::Approx(2.5));
  auto up = upsample_bilinear(c, 11, 7);
  CHECK(up.shape() == Shape{2, 3, 11, 7});
  for (D v : up.value().vec()) CHECK(v == doctest::Approx(2.5).epsilon(1e-14));
  auto m = g.constant(Tensor<D>(Shape{1, 1, 2, 2}, std::vector<D>{1, 3, 5, 7}));
  CHECK(global_avg_pool(m).value()[0] == 4.0);
  CHECK(avg_pool(g.constant(Tensor<D>(Shape{1, 1, 4, 4}, 1.0)), 2).shape() == Shape{1, 1, 2, 2});
}

TEST_CASE("bilinear upsampling uses half-pixel centres") {
  Graph<D> g(false);
  auto x = g.constant(Tensor<D>(Shape{1, 1, 1, 2}, std::vector<D>{0, 1}));
  auto y = upsample_bilinear(x, 1, 4).value();
  // Output centres map to -0.25, 0.25, 0.75, 1.25 and clamp at the borders.
  CHECK(y[0] == doctest::Approx(0.0));
  CHECK(y[1] == doctest::Approx(0.25));
  CHECK(y[2] == doctest::Approx(0.75));
  CHECK(y[3] == doctest::Approx(1.0));
}

TEST_CASE("broadcasting rejects incompatible extents") {
  Graph<D> g(false);
  auto a = g.constant(Tensor<D>(Shape{1, 3, 2, 2}));
  auto b = g.constant(Tensor<D>(Shape{1, 2, 2, 2}));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK(add(a, g.constant(Tensor<D>(Shape{1, 3, 1, 1}))).shape() == Shape{1, 3, 2, 2});
}

TEST_CASE("grad_check examples") {
  ParamSet<D> ps;
  auto& x = ps.add("x", Tensor<D>(Shape{1, 1, 1, 2}, std::vector<D>{1, 2}));
  auto r = grad_check([&](Graph<D>& g) { auto v = g.param(x); return sum_all(mul(v, v)); }, ps.all());
  CHECK(r.max_rel_error < 1e-8);
  CHECK(x.grad[0] == doctest::Approx(2.0));
  CHECK(x.grad[1] == doctest::Approx(4.0));

  auto rc = grad_check(
      [&](Graph<D>& g) {
        auto v = g.param(x);
        return add_scalar(scale(sum_all(v), 0.0), 3.0);
      },
      ps.all());
  CHECK(rc.max_rel_error == 0.0);

  ParamSet<D> k;
  auto& z = k.add("z", Tensor<D>(Shape{1, 1, 1, 3}, std::vector<D>{0.0, 0.5, -0.5}));
  auto rk = grad_check([&](Graph<D>& g) { return sum_all(relu(g.param(z))); }, k.all());
  CHECK(rk.skipped_kinks == 1);
  CHECK(rk.probed == 2);
}

TEST_CASE("grad_check reports the non-finite node") {
  ParamSet<D> ps;
  auto& x = ps.add("x", Tensor<D>(Shape{1, 1, 1, 2}, std::vector<D>{-1, 2}));
  try {
    grad_check([&](Graph<D>& g) { return sum_all(log(g.param(x))); }, ps.all());
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
}

TEST_CASE("every differentiable op passes a 64-bit gradient check") {
  Rng shapes(2024);
  for (int trial = 0; trial < 4; ++trial) {
    const Shape s = testing::random_shape(shapes);
    const std::int64_t k = 1 + static_cast<std::int64_t>(shapes.below(3));
    for (const auto& c : testing::op_cases(s, k)) {
      const auto r = testing::check_op_case(c, 100 + trial);
      INFO(c.name << " on " << s.str() << " worst " << r.worst << " probed " << r.probed);
      CHECK(r.probed > 0);
      CHECK(r.max_rel_error < 1e-5);
    }
  }
}

TEST_CASE("softmax rows are distributions") {
  Rng rng(5);
  Graph<D> g(false);
  for (int t = 0; t < 50; ++t) {
    const Shape s = testing::random_shape(rng, 2, 4, 6);
    const int axis = 1 + static_cast<int>(rng.below(3));
    auto y = softmax(g.constant(random_tensor(s, rng, -20.0, 20.0)), axis).value();
    auto totals = sum(g.constant(y), axis).value();
    for (D v : y.vec()) CHECK(v >= 0.0);
    for (D v : totals.vec()) CHECK(std::abs(v - 1.0) < 1e-6);
  }
}

TEST_CASE("depthwise conv2d equals a per-channel loop exactly") {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const std::int64_t c = 1 + static_cast<std::int64_t>(rng.below(5));
    const Shape xs{1 + static_cast<std::int64_t>(rng.below(2)), c, 3 + static_cast<std::int64_t>(rng.below(8)),
                   3 + static_cast<std::int64_t>(rng.below(8))};
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int dilation = 1 + static_cast<int>(rng.below(2));
    auto x = random_tensor(xs, rng);
    auto w = random_tensor(Shape{c, 1, 3, 3}, rng);
    Graph<D> g(false);
    Conv2dSpec sp;
    sp.groups = static_cast<int>(c);
    sp.stride = stride;
    sp.dilation = dilation;
    auto y = conv2d(g.constant(x), g.constant(w), static_cast<const Var<D>*>(nullptr), sp).value();
    CHECK(testing::bitwise_equal(y, depthwise_loop(x, w, stride, dilation)));
  }
}

TEST_CASE("recording does not change forward values") {
  Rng rng(8);
  ParamSet<float> ps;
  auto& x = ps.add("x", random_tensor<float>(Shape{2, 4, 6, 6}, rng));
  auto& w = ps.add("w", random_tensor<float>(Shape{3, 4, 3, 3}, rng));
  auto run = [&](bool recording) {
    Graph<float> g(recording);
    auto y = conv2d(g.param(x), g.param(w), static_cast<const Var<float>*>(nullptr), Conv2dSpec{});
    return softmax(l2normalize(relu(y), 3), 1).value();
  };
  const auto a = run(true);
  CHECK(testing::bitwise_equal(a, run(false)));
  CHECK(testing::bitwise_equal(a, run(true)));
}

TEST_CASE("backward visits nodes in reverse execution order") {
  Graph<D> g(true);
  std::vector<std::string> visits;
  ParamSet<D> ps;
  auto& p = ps.add("p", Tensor<D>::scalar(1.0));
  Var<D> v = g.param(p);
  for (int i = 0; i < 5; ++i) {
    const std::string label = "n" + std::to_string(i);
    v = g.record(label, v.value(), {v}, [&visits, label](Node<D>& node) {
      visits.push_back(label);
      node.inputs[0]->grad_buffer() += node.grad;
    });
  }
  g.backward(v);
  CHECK(visits == std::vector<std::string>{"n4", "n3", "n2", "n1", "n0"});
  CHECK(p.grad[0] == 1.0);
  p.zero_grad();
  CHECK(p.grad[0] == 0.0);
  CHECK(p.grad.shape() == p.value.shape());
}

TEST_CASE("non-recording graphs keep no tape") {
  Graph<D> g(false);
  auto x = g.constant(Tensor<D>(Shape{1, 2, 3, 3}, 1.0));
  auto y = relu(mul(x, x));
  CHECK(g.tape_size() == 0);
  CHECK(y.value()[0] == 1.0);
}

TEST_CASE("tensor construction validates extents") {
  CHECK_THROWS_AS(Tensor<float>(Shape{0, 1, 1, 1}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
  Tensor<float> t(Shape{2, 3, 4, 5});
  CHECK(t.size() == 120);
  CHECK(t.index(1, 2, 3, 4) == 119);
  CHECK(t.index(0, 1, 0, 0) == 20);
}

TEST_CASE("checkpoint round trip and corruption") {
  const auto dir = std::filesystem::temp_directory_path() / "gcanet_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "a.gcnt";
  Rng rng(1);
  ParamSet<float> ps;
  ps.add("conv.w", random_tensor<float>(Shape{3, 2, 3, 3}, rng));
  ps.add("alpha", Tensor<float>::scalar(1.25f));
  save_parameters<float>(path, ps.all());

  std::ifstream in(path, std::ios::binary);
  std::string head(5, '\0');
  in.read(head.data(), 5);
  CHECK(head.substr(0, 4) == "GCNT");
  CHECK(static_cast<int>(head[4]) == 1);
  in.close();

  ParamSet<float> loaded;
  loaded.add("alpha", Tensor<float>::scalar(0.0f));
  loaded.add("conv.w", Tensor<float>(Shape{3, 2, 3, 3}));
  load_parameters<float>(path, loaded.all());
  CHECK(testing::bitwise_equal(loaded.all()[1]->value, ps.all()[0]->value));
  CHECK(loaded.all()[0]->value[0] == 1.25f);

  ParamSet<float> wrong;
  wrong.add("alpha", Tensor<float>(Shape{1, 1, 1, 2}));
  CHECK_THROWS_AS(load_parameters<float>(path, wrong.all()), ShapeError);
  ParamSet<float> missing;
  missing.add("beta", Tensor<float>::scalar(0.0f));
  CHECK_THROWS_AS(load_parameters<float>(path, missing.all()), IoError);

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  CHECK_THROWS_AS(read_checkpoint(path), IoError);
  {
    std::ofstream bad(path, std::ios::binary | std::ios::trunc);
    bad << "NOPE";
  }
  CHECK_THROWS_AS(read_checkpoint(path), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cost counter attributes MACs to layer scopes") {
  MacCounter counter;
  Graph<float> g(false);
  auto x = g.constant(Tensor<float>(Shape{1, 4, 5, 5}));
  auto w = g.constant(Tensor<float>(Shape{2, 4, 3, 3}));
  {
    CountingScope counting(counter);
    LayerScope outer("enc");
    {
      LayerScope inner("conv");
      conv2d(x, w, static_cast<const Var<float>*>(nullptr), Conv2dSpec{});
    }
    scale_by(x, g.constant(Tensor<float>::scalar(2.0f)));
  }
  conv2d(x, w, static_cast<const Var<float>*>(nullptr), Conv2dSpec{});
  CHECK(counter.exact("enc.conv") == 2 * 4 * 9 * 25);
  CHECK(counter.scope_total("enc") == 2 * 4 * 9 * 25);
  CHECK(counter.total(CostKind::kScalar) == 100);
}
