#include "doctest.h"

#include "gatekd/optimizer.hpp"

#include <cmath>

using namespace gatekd;

TEST_CASE("AdamW two-step hand trace") {
  // p0 = 1, grads 0.5 then -0.2, lr 0.1, wd 0.01.
  //  t=1: m = 0.05, v = 2.5e-4, m_hat = 0.5, v_hat = 0.25
  //       p = 1 * 0.999 - 0.1 * 0.5 / (0.5 + 1e-8) = 0.899000002
  //  t=2: m = 0.025, v = 2.8975e-4, m_hat = 0.025 / 0.19, v_hat = 2.8975e-4 / 0.001999
  //       p = 0.899000002 * 0.999 - 0.1 * m_hat / (sqrt(v_hat) + 1e-8) = 0.86354041811451
  Param<double> p{"p", Mat<double>::Constant(1, 1, 1.0), Mat<double>::Zero(1, 1)};
  AdamW<double> opt({&p}, AdamWConfig{0.9, 0.999, 1e-8, 0.01});
  p.grad(0, 0) = 0.5;
  opt.step(0.1);
  CHECK(p.value(0, 0) == doctest::Approx(0.899000002).epsilon(1e-13));
  p.grad(0, 0) = -0.2;
  opt.step(0.1);
  CHECK(p.value(0, 0) == doctest::Approx(0.86354041811451).epsilon(1e-12));
  CHECK(opt.steps_taken() == 2);
}

TEST_CASE("AdamW decays weights with zero gradient") {
  Param<double> p{"p", Mat<double>::Constant(2, 2, 3.0), Mat<double>::Zero(2, 2)};
  AdamW<double> opt({&p}, AdamWConfig{0.9, 0.999, 1e-8, 0.1});
  opt.step(0.5);
  CHECK(p.value(1, 1) == doctest::Approx(3.0 * 0.95).epsilon(1e-14));
}

TEST_CASE("AdamW on float parameters") {
  Param<float> p{"p", Mat<float>::Constant(1, 3, 1.0f), Mat<float>::Constant(1, 3, 0.5f)};
  AdamW<float> opt({&p}, AdamWConfig{0.9, 0.999, 1e-8, 0.01});
  opt.step(0.1);
  CHECK(p.value(0, 2) == doctest::Approx(0.899).epsilon(1e-6));
}

TEST_CASE("linear warm-up then linear decay, pointwise") {
  const LinearWarmupSchedule s{0.01, 200, 0.05};
  const double warm = 0.05 * 200;
  for (std::size_t step = 0; step <= 200; ++step) {
    const double x = static_cast<double>(step);
    const double expected = x < warm ? 0.01 * x / warm : 0.01 * (200 - x) / (200 - warm);
    CHECK(s.at(step) == doctest::Approx(expected).epsilon(1e-14));
  }
  CHECK(s.at(10) == doctest::Approx(0.01));
  CHECK(s.at(200) == 0.0);
  CHECK(s.at(500) == 0.0);
  const LinearWarmupSchedule flat{0.02, 50, 0.0};
  CHECK(flat.at(0) == doctest::Approx(0.02));
  CHECK(flat.at(25) == doctest::Approx(0.01));
}
