#include <cmath>

#include "doctest.h"
#include "kb/parallel.hpp"
#include "kb/verify.hpp"

using namespace kb;
using namespace kb::verify;
using linalg::DomainBox;
using linalg::Matrix;

TEST_CASE("gram: 1x1 is a nonnegative squared norm; duplicates match") {
  const model::NetworkSpec tmpl = affine_template(2, 0.5);
  const std::vector<AffineTuple> tuples = sample_tuples(2, 2, 2, 4.0, 3);
  std::vector<model::NetworkSpec> specs;
  specs.push_back(instantiate(tmpl, tuples[0], model::Flavor::affine_scaled));
  specs.push_back(instantiate(tmpl, tuples[0], model::Flavor::affine_scaled));

  std::vector<mc::CFn> fs;
  for (std::size_t i = 0; i < 2; ++i) {
    fs.push_back([&specs, i](const std::vector<double>& y) {
      return model::forward(specs[i], y);
    });
  }
  mc::McConfig cfg;
  cfg.sample_count = 50000;
  cfg.root_seed = 5;
  cfg.proposal = mc::Proposal::gaussian({0.0, 0.0}, 0.08);
  const GramMatrix g = gram(fs, cfg);
  CHECK(g.at(0, 0).real() >= 0.0);
  // duplicate tuples: equal diagonal entries within noise
  CHECK(std::abs(g.at(0, 0).real() - g.at(1, 1).real()) <=
        3.0 * std::sqrt(g.std_error(0, 0) * g.std_error(0, 0) +
                        g.std_error(1, 1) * g.std_error(1, 1)));
  // near-singular: min eigenvalue close to zero relative to the trace
  const auto eig = g.symmetrized_eigenvalues();
  CHECK(std::abs(eig.front()) <= 0.05 * g.trace_real());
}

TEST_CASE("isometry: scaling the coefficients scales the residual linearly") {
  const model::NetworkSpec tmpl = affine_template(2, 0.5);
  const std::vector<AffineTuple> tuples = sample_tuples(2, 2, 3, 4.0, 11);
  std::vector<model::NetworkSpec> specs(3);
  std::vector<mc::CFn> fs(3);
  for (std::size_t i = 0; i < 3; ++i) {
    specs[i] = instantiate(tmpl, tuples[i], model::Flavor::affine_scaled);
    fs[i] = [&specs, i](const std::vector<double>& y) {
      return model::forward(specs[i], y);
    };
  }
  mc::McConfig cfg;
  cfg.sample_count = 20000;
  cfg.root_seed = 13;
  cfg.proposal = mc::Proposal::gaussian({0.0, 0.0}, 0.08);

  std::vector<mc::CFn> two{fs[0], fs[1]};
  const IsometryResult r1 =
      isometry_check(two, {{0.5, 0.0}, {0.25, 0.0}}, fs[2], cfg, false);
  const IsometryResult r2 =
      isometry_check(two, {{1.0, 0.0}, {0.5, 0.0}}, fs[2], cfg, false);
  CHECK(r2.residual_linear == doctest::Approx(2.0 * r1.residual_linear).epsilon(1e-9));
}

TEST_CASE("koopman lemma check: identity activation gives ratio 1") {
  mc::McConfig cfg;
  cfg.sample_count = 10000;
  cfg.root_seed = 3;
  const DomainBox box({-1.0, -1.0}, {1.0, 1.0});
  const auto bound = activation::koopman_norm(activation::ActivationSpec::identity(), box);
  const LemmaCheckReport rep = koopman_lemma_check(
      activation::ActivationSpec::identity(), box, bound, 20, cfg);
  CHECK(rep.pass);
  CHECK(rep.max_ratio == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("koopman lemma check: tanh stays below cosh(1) on [-1,1]") {
  mc::McConfig cfg;
  cfg.sample_count = 20000;
  cfg.root_seed = 5;
  const DomainBox box({-1.0}, {1.0});
  const auto bound = activation::koopman_norm_tanh(box);
  const LemmaCheckReport rep = koopman_lemma_check(
      activation::ActivationSpec::tanh_fn(), box, bound, 200, cfg);
  CHECK(rep.pass);
  CHECK(rep.max_ratio <= bound.value + 0.05);
}

TEST_CASE("leaky tightness witness approaches a^(-d/2)") {
  mc::McConfig cfg;
  cfg.sample_count = 40000;
  cfg.root_seed = 9;
  for (double a : {0.1, 0.5}) {
    for (std::size_t d = 1; d <= 2; ++d) {
      const double ratio = leaky_tightness_ratio(a, d, cfg);
      const double ideal = std::pow(1.0 / a, 0.5 * static_cast<double>(d));
      CHECK(ratio >= 0.95 * ideal);
      CHECK(ratio <= 1.05 * ideal);
    }
  }
}

TEST_CASE("empirical rademacher: singleton class and linear class") {
  // singleton: exact enumeration averages to exactly zero
  Matrix single(1, 4, {0.3, -0.2, 0.9, 0.1});
  const RademacherEstimate exact =
      empirical_rademacher(single, 0, RademacherMode::exact_enumeration, 1);
  CHECK(exact.value == doctest::Approx(0.0).epsilon(1e-15));

  // {x -> theta x : theta in [-1, 1]} at x = (1, 1): E|e1 + e2| / 2 = 0.5
  const std::size_t grid = 201;
  Matrix values(grid, 2);
  for (std::size_t i = 0; i < grid; ++i) {
    const double theta = -1.0 + 2.0 * static_cast<double>(i) / (grid - 1);
    values(i, 0) = theta;
    values(i, 1) = theta;
  }
  const RademacherEstimate lin =
      empirical_rademacher(values, 0, RademacherMode::exact_enumeration, 1);
  CHECK(lin.value == doctest::Approx(0.5).epsilon(1e-12));

  // mc search agrees with the exact average within noise
  const RademacherEstimate mc_est =
      empirical_rademacher(values, 4000, RademacherMode::mc_search, 17);
  CHECK(std::abs(mc_est.value - lin.value) <= 3.0 * mc_est.std_error);

  CHECK_THROWS_AS(empirical_rademacher(Matrix(1, 0), 10, RademacherMode::mc_search, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      empirical_rademacher(Matrix(1, 17), 0, RademacherMode::exact_enumeration, 1),
      std::invalid_argument);
}

TEST_CASE("empirical rademacher is deterministic across exec modes") {
  Matrix values(50, 8);
  Rng rng(21, fnv1a64("test/radem"));
  for (double& v : values.data) v = rng.uniform(-1.0, 1.0);
  const ExecMode saved = exec_mode();
  set_exec_mode(ExecMode::openmp);
  const RademacherEstimate a =
      empirical_rademacher(values, 1000, RademacherMode::mc_search, 3);
  set_exec_mode(ExecMode::serial);
  const RademacherEstimate b =
      empirical_rademacher(values, 1000, RademacherMode::mc_search, 3);
  set_exec_mode(saved);
  CHECK(a.value == b.value);
  CHECK(a.std_error == b.std_error);
}

TEST_CASE("sampled tuples respect the det cap") {
  const std::vector<AffineTuple> tuples = sample_tuples(2, 2, 20, 2.0, 7);
  for (const AffineTuple& t : tuples) {
    for (const Matrix& w : t.weights) {
      CHECK(1.0 / std::sqrt(std::abs(linalg::lu_det(w))) <= 2.0 + 1e-12);
    }
  }
}
