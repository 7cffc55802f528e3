#include <cmath>
#include <complex>

#include "doctest.h"
#include "kb/mc.hpp"
#include "kb/parallel.hpp"

using namespace kb;
using namespace kb::mc;

namespace {

struct ExecModeGuard {
  ExecMode saved = exec_mode();
  ~ExecModeGuard() { set_exec_mode(saved); }
};

}  // namespace

TEST_CASE("mc_integral: uniform box integral of a polynomial") {
  // int_0^1 3x^2 dx = 1
  McConfig cfg;
  cfg.sample_count = 200000;
  cfg.root_seed = 5;
  cfg.proposal = Proposal::uniform(linalg::DomainBox({0.0}, {1.0}));
  McEstimate e = mc_integral(
      [](const std::vector<double>& y) {
        return std::complex<double>(3.0 * y[0] * y[0], 0.0);
      },
      cfg, fnv1a64("test/poly"));
  CHECK(std::abs(e.real() - 1.0) <= 3.0 * e.std_error);
  CHECK(e.std_error < 0.01);
}

TEST_CASE("mc results are bit-identical across exec modes and repeats") {
  ExecModeGuard guard;
  McConfig cfg;
  cfg.sample_count = 50000;
  cfg.root_seed = 99;
  cfg.proposal = Proposal::gaussian({0.0, 0.0}, 1.0);
  auto f = [](const std::vector<double>& y) {
    return std::complex<double>(std::exp(-y[0] * y[0] - 0.3 * y[1] * y[1]), 0.0);
  };
  set_exec_mode(ExecMode::openmp);
  McEstimate a = mc_integral(f, cfg, fnv1a64("test/det"));
  McEstimate b = mc_integral(f, cfg, fnv1a64("test/det"));
  set_exec_mode(ExecMode::serial);
  McEstimate c = mc_integral(f, cfg, fnv1a64("test/det"));
  CHECK(a.value.real() == b.value.real());
  CHECK(a.value.real() == c.value.real());
  CHECK(a.std_error == c.std_error);
}

TEST_CASE("gaussian proposal integrates its own density to 1") {
  McConfig cfg;
  cfg.sample_count = 100000;
  cfg.root_seed = 3;
  cfg.proposal = Proposal::gaussian({0.5, -0.2}, 2.0);
  McEstimate e = mc_integral(
      [&](const std::vector<double>& y) {
        return std::complex<double>(cfg.proposal.density(y), 0.0);
      },
      cfg, fnv1a64("test/selfdensity"));
  CHECK(e.real() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e.std_error <= 1e-12);
}

TEST_CASE("l2_inner: odd times even integrand vanishes") {
  McConfig cfg;
  cfg.sample_count = 200000;
  cfg.root_seed = 17;
  cfg.proposal = Proposal::uniform(linalg::DomainBox({-1.0}, {1.0}));
  McEstimate e = l2_inner(
      [](const std::vector<double>& y) { return std::complex<double>(y[0], 0.0); },
      [](const std::vector<double>& y) {
        return std::complex<double>(y[0] * y[0], 0.0);
      },
      cfg, fnv1a64("test/odd"));
  CHECK(std::abs(e.real()) <= 3.0 * e.std_error);
}

TEST_CASE("gaussian overlap closed form") {
  // int exp(-|y-m1|^2) exp(-|y-m2|^2) dy with |m1-m2|^2 = 2
  const double v = gaussian_overlap(1.0, {0.0, 0.0}, 1.0, {1.0, 1.0});
  const double want = std::exp(-0.5 * 2.0) * std::pow(3.14159265358979 / 2.0, 1.0);
  CHECK(v == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("mixture analytic norm matches MC") {
  GaussianMixture h;
  h.components.push_back(GaussianMixture::isotropic({0.2, -0.1}, 3.0, 0.7));
  h.components.push_back(GaussianMixture::isotropic({-0.4, 0.5}, 5.0, -0.4));
  McConfig cfg;
  cfg.sample_count = 400000;
  cfg.root_seed = 29;
  cfg.proposal = Proposal::uniform(linalg::DomainBox({-4, -4}, {4, 4}));
  McEstimate e = mc_integral(
      [&](const std::vector<double>& y) {
        const double v = h.eval(y);
        return std::complex<double>(v * v, 0.0);
      },
      cfg, fnv1a64("test/mixture"));
  CHECK(std::abs(e.real() - h.l2_norm_sq_analytic()) <= 3.0 * e.std_error);
}

TEST_CASE("config validation") {
  McConfig cfg;
  cfg.sample_count = 50;
  cfg.proposal = Proposal::uniform(linalg::DomainBox({0.0}, {1.0}));
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  McConfig degenerate;
  degenerate.proposal = Proposal::uniform(linalg::DomainBox({0.0}, {0.0}));
  CHECK_THROWS_AS(degenerate.validate(), std::domain_error);
  CHECK_THROWS_AS(Proposal::gaussian({0.0}, 0.0), std::invalid_argument);
}

TEST_CASE("coverage warning fires when the proposal misses the support") {
  McConfig cfg;
  cfg.sample_count = 10000;
  cfg.root_seed = 31;
  // proposal far away from the integrand support
  cfg.proposal = Proposal::gaussian({50.0}, 100.0);
  McEstimate e = l2_inner(
      [](const std::vector<double>& y) {
        return std::complex<double>(std::exp(-y[0] * y[0]), 0.0);
      },
      [](const std::vector<double>& y) {
        return std::complex<double>(std::exp(-2.0 * y[0] * y[0]), 0.0);
      },
      cfg, fnv1a64("test/coverage"));
  CHECK(e.coverage_warning);
}
