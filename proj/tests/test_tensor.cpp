#include <doctest.h>

#include <cmath>
#include <vector>

#include "croma/gradcheck.hpp"
#include "croma/rng.hpp"
#include "croma/tensor.hpp"

using namespace croma;

TEST_CASE("matmul basics") {
  const Tensor eye = Tensor::constant({2, 2}, {1, 0, 0, 1});
  const Tensor prod = matmul(eye, eye);
  CHECK(prod.value() == std::vector<double>{1, 0, 0, 1});

  const Tensor a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  const Tensor ones = Tensor::constant({2, 1}, {1, 1});
  const Tensor out = matmul(a, ones);
  CHECK(out.value() == std::vector<double>{3, 7});

  CHECK(matmul(Tensor::constant({1, 1}, {2}), Tensor::constant({1, 1}, {3})).item() == 6.0);
  CHECK_THROWS(matmul(a, Tensor::constant({3, 1}, {1, 1, 1})));
}

TEST_CASE("matmul gradient flows to both sides") {
  Tensor a = Tensor::param({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::param({2, 1}, {5, 6});
  Tensor loss = sum_all(matmul(a, b));
  backward(loss);
  // d/da = ones . b', d/db = a' . ones
  CHECK(a.grad() == std::vector<double>{5, 6, 5, 6});
  CHECK(b.grad() == std::vector<double>{4, 6});
}

TEST_CASE("softmax rows") {
  const Tensor sym = softmax_lastdim(Tensor::constant({2}, {0, 0}));
  CHECK(sym.value()[0] == doctest::Approx(0.5).epsilon(1e-15));

  const Tensor big = softmax_lastdim(Tensor::constant({2}, {1000, 0}));
  CHECK(big.value()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(big.value()[1] <= 1e-12);

  const Tensor t = softmax_lastdim(Tensor::constant({3}, {1, 2, 3}));
  // exact exp/sum oracle
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(t.value()[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
  CHECK(t.value()[1] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-12));
  CHECK(t.value()[2] == doctest::Approx(std::exp(3.0) / z).epsilon(1e-12));
  CHECK(t.value()[0] == doctest::Approx(0.09003057).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one across magnitudes") {
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> data(8);
    for (double& v : data) v = rng.uniform(-1e4, 1e4);
    const Tensor y = softmax_lastdim(Tensor::constant({2, 4}, data));
    for (std::size_t r = 0; r < 2; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 4; ++c) sum += y.value()[r * 4 + c];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("layernorm constant row becomes bias") {
  const Tensor gain = Tensor::constant({3}, {2, 2, 2});
  const Tensor bias = Tensor::constant({3}, {0.5, 0.5, 0.5});
  const Tensor y = layernorm(Tensor::constant({3}, {4, 4, 4}), gain, bias);
  for (double v : y.value()) CHECK(v == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("l2_normalize and mean ops") {
  const Tensor z = l2_normalize(Tensor::constant({2}, {3, 4}));
  CHECK(z.value()[0] == doctest::Approx(0.6));
  CHECK(z.value()[1] == doctest::Approx(0.8));

  CHECK(mean_lastaxis(Tensor::constant({1, 2}, {1, 3})).value() == std::vector<double>{2});
  CHECK(mean_rows(Tensor::constant({2, 2}, {1, 3, 3, 5})).value() == std::vector<double>{2, 4});
}

TEST_CASE("backward: square and symmetry") {
  Tensor x = Tensor::param({1}, {3});
  Tensor loss = mul(x, x);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));

  // repeated backward accumulates
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(12.0).epsilon(1e-12));

  // softmax of a constant vector: gradient of the first component sums to zero
  Tensor c = Tensor::param({3}, {1, 1, 1});
  Tensor first = mul(softmax_lastdim(c), Tensor::constant({3}, {1, 0, 0}));
  backward(sum_all(first));
  double total = 0.0;
  for (double g : c.grad()) total += g;
  CHECK(total == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("backward rejects non-scalar roots") {
  Tensor x = Tensor::param({2}, {1, 2});
  CHECK_THROWS(backward(add(x, x)));
}

TEST_CASE("structural ops round trip") {
  Tensor x = Tensor::param({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor left = slice_cols(x, 0, 2);
  const Tensor right = slice_cols(x, 2, 3);
  const std::vector<Tensor> parts{left, right};
  const Tensor joined = concat_cols(parts);
  CHECK(joined.value() == x.value());
  backward(sum_all(joined));
  CHECK(x.grad() == std::vector<double>(6, 1.0));

  const Tensor g = gather_rows(Tensor::constant({3, 1}, {10, 20, 30}), {2, 0});
  CHECK(g.value() == std::vector<double>{30, 10});

  CHECK(diag_part(Tensor::constant({2, 2}, {1, 2, 3, 4})).value() ==
        std::vector<double>{1, 4});
}

TEST_CASE("finite checks catch bad ops") {
  set_finite_checks(true);
  CHECK_THROWS(log_op(Tensor::constant({1}, {0.0})));
  set_finite_checks(false);
  CHECK_NOTHROW(log_op(Tensor::constant({1}, {0.0})));
  set_finite_checks(true);
}

TEST_CASE("no-grad guard produces constants") {
  Tensor x = Tensor::param({2}, {1, 2});
  {
    NoGradGuard guard;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  Tensor y = mul(x, x);
  CHECK(y.requires_grad());
}

TEST_CASE("gradcheck: analytic cases") {
  Tensor x = Tensor::param({1}, {2});
  const auto cube = [&]() { return mul(mul(x, x), x); };
  GradCheckOptions opts;
  opts.tolerance = 1e-6;
  const auto report = check_gradients(cube, {{"x", x}}, opts);
  CHECK(report.pass);

  Tensor z = Tensor::param({3}, {0.3, -0.4, 0.9});
  const auto zero_fn = [&]() { return scale(sum_all(z), 0.0); };
  const auto zreport = check_gradients(zero_fn, {{"z", z}});
  CHECK(zreport.pass);
  CHECK(zreport.max_rel_error == doctest::Approx(0.0));
}

TEST_CASE("gradcheck across randomized small graphs") {
  Rng rng(5);
  for (int rep = 0; rep < 8; ++rep) {
    std::vector<double> wdata(12), vdata(4), xdata(8);
    for (double& v : wdata) v = rng.normal(0.0, 1.0);
    for (double& v : vdata) v = rng.normal(0.0, 1.0);
    for (double& v : xdata) v = rng.normal(0.0, 1.0);
    Tensor w = Tensor::param({4, 3}, wdata);
    Tensor v = Tensor::param({4}, vdata);
    const Tensor x = Tensor::constant({2, 4}, xdata);
    const Tensor gain = Tensor::constant({4}, {1, 1, 1, 1});
    const auto f = [&]() {
      Tensor h = layernorm(x, gain, v);
      h = gelu(matmul(h, w));
      h = softmax_lastdim(h);
      return sum_all(mul(h, h));
    };
    const auto report = check_gradients(f, {{"w", w}, {"v", v}});
    CHECK(report.pass);
    CHECK(report.max_rel_error <= 1e-4);
  }
}

TEST_CASE("gradcheck flags a corrupted backward") {
  Tensor x = Tensor::param({1}, {1.5});
  // Deliberately wrong adjoint: claims d(x^2)/dx = x.
  const auto bad_square = [&]() {
    const double v = x.value()[0];
    return Tensor::make_op(
        "bad_square", {1}, {v * v}, {x},
        [](const TensorNode& self, const std::vector<double>& g, const GradSinks& sinks) {
          if (sinks[0]) (*sinks[0])[0] += g[0] * self.parents[0].value()[0];
        });
  };
  const auto report = check_gradients(bad_square, {{"x", x}});
  CHECK_FALSE(report.pass);
}
