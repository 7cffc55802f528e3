#include <cmath>

#include "doctest.h"
#include "kb/activation.hpp"
#include "kb/rng.hpp"

using namespace kb;
using namespace kb::activation;
using linalg::DomainBox;

namespace {

// numeric sup oracle: scan the inverse-slope factor on a dense grid of the
// input interval
double grid_sup_inverse_slope(const ActivationSpec& act, double a, double b,
                              std::size_t n = 100000) {
  double sup = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
    sup = std::max(sup, 1.0 / act.derivative(x));
  }
  return sup;
}

}  // namespace

TEST_CASE("tanh bound: closed form vs numeric sup") {
  DomainBox d1({-1.0}, {1.0});
  KoopmanNormBound b = koopman_norm_tanh(d1);
  CHECK(b.value == doctest::Approx(std::cosh(1.0)).epsilon(1e-12));
  const double oracle = grid_sup_inverse_slope(ActivationSpec::tanh_fn(), -1.0, 1.0);
  CHECK(b.value == doctest::Approx(std::sqrt(oracle)).epsilon(1e-8));

  KoopmanNormBound degen = koopman_norm_tanh(DomainBox({0.0}, {0.0}));
  CHECK(degen.value == doctest::Approx(1.0));

  KoopmanNormBound d2 = koopman_norm_tanh(DomainBox({-1, -1}, {1, 1}));
  CHECK(d2.value == doctest::Approx(std::cosh(1.0) * std::cosh(1.0)).epsilon(1e-12));
}

TEST_CASE("tanh bound on [-b, b]^d equals cosh(b)^d") {
  for (double b : {0.5, 1.0, 2.0}) {
    for (std::size_t d = 1; d <= 3; ++d) {
      DomainBox box(std::vector<double>(d, -b), std::vector<double>(d, b));
      CHECK(koopman_norm_tanh(box).value ==
            doctest::Approx(std::pow(std::cosh(b), static_cast<double>(d)))
                .epsilon(1e-6));
    }
  }
}

TEST_CASE("sigmoid bound: pinned examples") {
  CHECK(koopman_norm_sigmoid(DomainBox({0.0}, {0.0})).value == doctest::Approx(2.0));
  KoopmanNormBound b = koopman_norm_sigmoid(DomainBox({-1.0}, {1.0}));
  const double oracle = grid_sup_inverse_slope(ActivationSpec::sigmoid(), -1.0, 1.0);
  CHECK(b.value == doctest::Approx(std::sqrt(oracle)).epsilon(1e-8));
  CHECK(b.value == doctest::Approx(2.2553).epsilon(1e-4));
  CHECK(koopman_norm_sigmoid(DomainBox({0, 0}, {0, 0})).value == doctest::Approx(4.0));
}

TEST_CASE("leaky relu bound: pinned examples") {
  CHECK(koopman_norm_leaky_relu(1.0, 5).value == doctest::Approx(1.0));
  CHECK(koopman_norm_leaky_relu(0.5, 3).value ==
        doctest::Approx(std::sqrt(8.0)).epsilon(1e-12));
  CHECK(koopman_norm_leaky_relu(2.0, 4).value == doctest::Approx(1.0));
  CHECK_THROWS_AS(koopman_norm_leaky_relu(0.0, 1), std::invalid_argument);
}

TEST_CASE("generic bound agrees with the closed forms") {
  Rng rng(31, fnv1a64("test/generic"));
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 1 + rng.next_u64() % 3;
    std::vector<double> lo(d), hi(d);
    for (std::size_t i = 0; i < d; ++i) {
      const double a = rng.uniform(-3.0, 3.0);
      const double b = rng.uniform(-3.0, 3.0);
      lo[i] = std::min(a, b);
      hi[i] = std::max(a, b);
    }
    DomainBox box(lo, hi);
    const double t = koopman_norm_generic(ActivationSpec::tanh_fn(), box).value;
    CHECK(t == doctest::Approx(koopman_norm_tanh(box).value).epsilon(1e-4));
    const double s = koopman_norm_generic(ActivationSpec::sigmoid(), box).value;
    CHECK(s == doctest::Approx(koopman_norm_sigmoid(box).value).epsilon(1e-4));
  }
}

TEST_CASE("generic bound: identity and smooth leaky relu") {
  DomainBox box({-2.0}, {2.0});
  CHECK(koopman_norm_generic(ActivationSpec::identity(), box).value ==
        doctest::Approx(1.0));
  // slope of the smooth leaky relu lies in (alpha, 1), so the inverse slope
  // lies in (1, 1/alpha)
  const double v =
      koopman_norm_generic(ActivationSpec::smooth_leaky(0.1, 0.5), box).value;
  CHECK(v >= 1.0);
  CHECK(v <= 1.0 / std::sqrt(0.1));
}

TEST_CASE("relu is rejected by every norm bound") {
  DomainBox box({-1.0}, {1.0});
  CHECK_THROWS_AS(koopman_norm_generic(ActivationSpec::relu(), box), std::domain_error);
  CHECK_THROWS_AS(koopman_norm(ActivationSpec::relu(), box), std::domain_error);
}

TEST_CASE("shift operator contributes norm exactly 1") {
  CHECK(shift_koopman_norm() == 1.0);
  const double tanh_bound = koopman_norm_tanh(DomainBox({-1.0}, {1.0})).value;
  CHECK(tanh_bound * shift_koopman_norm() == tanh_bound);
}

TEST_CASE("monotonicity: enlarging the domain never decreases the bound") {
  Rng rng(37, fnv1a64("test/monotone"));
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + rng.next_u64() % 3;
    std::vector<double> lo(d), hi(d), lo2(d), hi2(d);
    for (std::size_t i = 0; i < d; ++i) {
      const double a = rng.uniform(-2.0, 2.0);
      const double b = rng.uniform(-2.0, 2.0);
      lo[i] = std::min(a, b);
      hi[i] = std::max(a, b);
      lo2[i] = lo[i] - rng.uniform(0.0, 1.0);
      hi2[i] = hi[i] + rng.uniform(0.0, 1.0);
    }
    DomainBox inner(lo, hi), outer(lo2, hi2);
    CHECK(koopman_norm_tanh(outer).value >= koopman_norm_tanh(inner).value - 1e-12);
    CHECK(koopman_norm_sigmoid(outer).value >=
          koopman_norm_sigmoid(inner).value - 1e-12);
  }
}

TEST_CASE("smooth leaky relu: inverse and slope range") {
  ActivationSpec s = ActivationSpec::smooth_leaky(0.1, 0.5);
  Rng rng(41, fnv1a64("test/smu"));
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(-20.0, 20.0);
    const double y = s.apply(x);
    CHECK(s.inverse(y) == doctest::Approx(x).epsilon(1e-9));
    const double sl = s.derivative(x);
    CHECK(sl > 0.1);
    CHECK(sl < 1.0);
  }
  CHECK_THROWS_AS(ActivationSpec::smooth_leaky(1.5, 0.5), std::invalid_argument);
}

TEST_CASE("per-dimension sups multiply to the squared bound") {
  DomainBox box({-1.0, 0.5}, {0.5, 2.0});
  KoopmanNormBound b = koopman_norm_tanh(box);
  double prod = 1.0;
  for (double s : b.per_dimension_sup) prod *= s;
  CHECK(b.value == doctest::Approx(std::sqrt(prod)).epsilon(1e-14));
}
