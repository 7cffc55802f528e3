#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "kb/error.hpp"
#include "kb/model.hpp"
#include "kb/rng.hpp"

using namespace kb;
using namespace kb::model;
using linalg::DomainBox;
using linalg::Matrix;

namespace {

constexpr double kPi = 3.14159265358979323846;

LayerSpec dense_layer(Matrix w, std::vector<double> b,
                      std::optional<activation::ActivationSpec> act = {}) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.weight = std::move(w);
  l.bias = std::move(b);
  l.act = act;
  return l;
}

FinalTransform identity_lookup_1d(double half_width = 10.0) {
  FinalTransform f;
  f.kind = FinalKind::lookup_table;
  f.norm_mode = NormMode::mc_integral;
  f.table.box = DomainBox({-half_width}, {half_width});
  f.table.dims = {2};
  f.table.values = {-half_width, half_width};
  return f;
}

FinalTransform constant_lookup(std::size_t dim, double value, double half_width = 10.0) {
  FinalTransform f;
  f.kind = FinalKind::lookup_table;
  f.norm_mode = NormMode::mc_integral;
  f.table.box = DomainBox(std::vector<double>(dim, -half_width),
                          std::vector<double>(dim, half_width));
  f.table.dims.assign(dim, 1);
  f.table.values = {value};
  return f;
}

FinalTransform gaussian_bump(double w3) {
  FinalTransform f;
  f.kind = FinalKind::gaussian_bump;
  f.w3 = w3;
  f.norm_mode = NormMode::exact;
  return f;
}

}  // namespace

TEST_CASE("propagate: tight and recipe boxes on a diagonal layer") {
  NetworkSpec spec;
  spec.input_domain = DomainBox({0, 0}, {1, 1});
  spec.layers.push_back(dense_layer(Matrix::diag({2, 2}), {0, 0},
                                    activation::ActivationSpec::tanh_fn()));
  spec.final = gaussian_bump(1.0);
  spec.finalize();

  NetworkSpec tight = propagate_domains(spec);
  CHECK(tight.layers[0].domain_tilde->lower[0] == 0.0);
  CHECK(tight.layers[0].domain_tilde->upper[0] == 2.0);
  CHECK(tight.layers[0].domain->upper[0] == doctest::Approx(std::tanh(2.0)));
  CHECK(tight.layers[0].domain->lower[1] == doctest::Approx(0.0));

  spec.domain_mode = DomainMode::paper_recipe;
  NetworkSpec recipe = propagate_domains(spec);
  CHECK(recipe.layers[0].domain_tilde->lower[0] == doctest::Approx(-2.0));
  CHECK(recipe.layers[0].domain_tilde->upper[0] == doctest::Approx(2.0));
  CHECK(recipe.warnings.empty());
}

TEST_CASE("propagate: recipe box inflated when it misses the tight image") {
  // rotated cube: the tight image exceeds the operator-norm radius
  const double c = std::sqrt(0.5);
  NetworkSpec spec;
  spec.domain_mode = DomainMode::paper_recipe;
  spec.input_domain = DomainBox({-1, -1}, {1, 1});
  spec.layers.push_back(dense_layer(Matrix(2, 2, {c, -c, c, c}), {0, 0}));
  spec.final = gaussian_bump(1.0);
  spec.finalize();
  NetworkSpec out = propagate_domains(spec);
  CHECK(out.warnings.size() == 1);
  CHECK(out.layers[0].domain_tilde->upper[0] == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("forward: pinned examples") {
  // zero input through identity weights and tanh gives v(0) = 1
  NetworkSpec spec;
  spec.input_domain = DomainBox({-1, -1}, {1, 1});
  spec.layers.push_back(dense_layer(Matrix::identity(2), {0, 0},
                                    activation::ActivationSpec::tanh_fn()));
  spec.layers.push_back(dense_layer(Matrix::identity(2), {0, 0}));
  spec.final = gaussian_bump(1.0);
  spec.finalize();
  CHECK(forward(spec, {0.0, 0.0}).real() == doctest::Approx(1.0));

  // one scalar layer, identity activation, v(x) = x: 2 * 3 = 6
  NetworkSpec lin;
  lin.input_domain = DomainBox({-5}, {5});
  lin.layers.push_back(dense_layer(Matrix(1, 1, {2.0}), {},
                                   activation::ActivationSpec::identity()));
  lin.final = identity_lookup_1d();
  lin.finalize();
  CHECK(forward(lin, {3.0}).real() == doctest::Approx(6.0));
}

TEST_CASE("forward: heisenberg phase") {
  NetworkSpec spec;
  spec.flavor = Flavor::heisenberg;
  spec.input_domain = DomainBox({-1, -1}, {1, 1});
  LayerSpec l;
  l.kind = LayerKind::heisenberg;
  l.heis_a = {0.0, 0.0};
  l.heis_b = {0.0, 0.0};
  l.heis_c = kPi / 2.0;
  spec.layers.push_back(l);
  spec.final = gaussian_bump(1.0);
  spec.finalize();
  const std::complex<double> out = forward(spec, {0.0, 0.0});
  CHECK(out.real() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(out.imag() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("affine_scaled forward is the plain forward times the det product") {
  Rng rng(51, fnv1a64("test/affine"));
  for (int trial = 0; trial < 4; ++trial) {
    Matrix w1(2, 2), w2(2, 2);
    for (double& x : w1.data) x = rng.uniform(-1.5, 1.5);
    for (double& x : w2.data) x = rng.uniform(-1.5, 1.5);
    NetworkSpec plain;
    plain.input_domain = DomainBox({-1, -1}, {1, 1});
    plain.layers.push_back(dense_layer(w1, {0.1, -0.2},
                                       activation::ActivationSpec::leaky(0.5)));
    plain.layers.push_back(dense_layer(w2, {0.0, 0.3}));
    plain.final = gaussian_bump(1.0);
    plain.finalize();
    NetworkSpec scaled = plain;
    scaled.flavor = Flavor::affine_scaled;
    scaled.finalize();

    const double det_product =
        std::sqrt(std::abs(linalg::lu_det(w1)) * std::abs(linalg::lu_det(w2)));
    for (int i = 0; i < 100; ++i) {
      const std::vector<double> x{rng.uniform(-1, 1), rng.uniform(-1, 1)};
      const double p = forward(plain, x).real();
      const double s = forward(scaled, x).real();
      if (std::abs(p) < 1e-14) continue;
      CHECK(s / p == doctest::Approx(det_product).epsilon(1e-12));
    }
  }
}

TEST_CASE("psi gating: inside equals plain exactly, outside gives zero") {
  NetworkSpec spec;
  spec.flavor = Flavor::cnn;
  spec.input_domain = DomainBox({-1, -1, -1, -1}, {1, 1, 1, 1});
  LayerSpec conv;
  conv.kind = LayerKind::conv;
  conv.conv = linalg::ConvKernel{{4}, {1.0, 0.0, 0.0, 0.0}};
  conv.act = activation::ActivationSpec::tanh_fn();
  spec.layers.push_back(conv);
  LayerSpec pool;
  pool.kind = LayerKind::pool;
  pool.pool_size = 2;
  spec.layers.push_back(pool);
  spec.final = gaussian_bump(1.0);
  spec.finalize();
  NetworkSpec gated = propagate_domains(spec);

  NetworkSpec plain = gated;
  plain.flavor = Flavor::plain;

  Rng rng(61, fnv1a64("test/psi"));
  for (int i = 0; i < 50; ++i) {
    const auto x = rng.uniform_in_box(spec.input_domain.lower, spec.input_domain.upper);
    CHECK(forward(gated, x).real() == forward(plain, x).real());
  }

  // shrink a declared box so every input trips the gate
  NetworkSpec broken = gated;
  broken.layers[0].domain = DomainBox({10, 10, 10, 10}, {11, 11, 11, 11});
  for (int i = 0; i < 10; ++i) {
    const auto x = rng.uniform_in_box(spec.input_domain.lower, spec.input_domain.upper);
    CHECK(forward(broken, x).real() == 0.0);
  }
}

TEST_CASE("domain soundness: tight boxes contain all intermediates") {
  Rng rng(71, fnv1a64("test/soundness"));
  Matrix w1(3, 3), w2(4, 3);
  for (double& x : w1.data) x = rng.uniform(-1.0, 1.0);
  for (double& x : w2.data) x = rng.uniform(-1.0, 1.0);
  std::vector<double> b1{0.1, -0.3, 0.2}, b2{0.0, 0.1, -0.1, 0.4};
  NetworkSpec spec;
  spec.input_domain = DomainBox({-1, -1, -1}, {1, 1, 1});
  spec.layers.push_back(dense_layer(w1, b1, activation::ActivationSpec::tanh_fn()));
  spec.layers.push_back(dense_layer(w2, b2, activation::ActivationSpec::sigmoid()));
  spec.final = gaussian_bump(1.0);
  spec.finalize();
  NetworkSpec prop = propagate_domains(spec);

  const activation::ActivationSpec tanh_a = activation::ActivationSpec::tanh_fn();
  const activation::ActivationSpec sig = activation::ActivationSpec::sigmoid();
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> x =
        rng.uniform_in_box(spec.input_domain.lower, spec.input_domain.upper);
    std::vector<double> z1 = linalg::matvec(w1, x);
    for (std::size_t j = 0; j < 3; ++j) z1[j] += b1[j];
    CHECK(prop.layers[0].domain_tilde->contains(z1));
    tanh_a.apply(z1);
    CHECK(prop.layers[0].domain->contains(z1));
    std::vector<double> z2 = linalg::matvec(w2, z1);
    for (std::size_t j = 0; j < 4; ++j) z2[j] += b2[j];
    CHECK(prop.layers[1].domain_tilde->contains(z2));
    sig.apply(z2);
    CHECK(prop.layers[1].domain->contains(z2));
  }
}

TEST_CASE("regularizer: unit L2 norm by construction") {
  Rng rng(81, fnv1a64("test/pnorm"));
  for (double c : {1.0, 10.0, 100.0}) {
    for (std::size_t d = 1; d <= 3; ++d) {
      std::vector<double> center(d);
      for (double& v : center) v = rng.uniform(-1.0, 1.0);
      Regularizer p(center, c);
      mc::McConfig cfg;
      cfg.sample_count = 200000;
      cfg.root_seed = 7;
      cfg.proposal = mc::Proposal::gaussian(center, c);
      mc::McEstimate e = mc::mc_integral(
          [&](const std::vector<double>& y) {
            const double v = p.eval(y);
            return std::complex<double>(v * v, 0.0);
          },
          cfg, fnv1a64("test/pnorm/mc"));
      CHECK(std::abs(e.real() - 1.0) <= 3.0 * e.std_error + 1e-4);
    }
  }
  CHECK_THROWS_AS(Regularizer({0.0}, 0.0), std::invalid_argument);
}

TEST_CASE("regularized forward: constant model integrates p exactly") {
  const double c = 4.0;
  NetworkSpec spec;
  spec.input_domain = DomainBox({-2, -2}, {2, 2});
  spec.layers.push_back(dense_layer(Matrix::identity(2), {0, 0}));
  spec.final = constant_lookup(2, 1.0, 50.0);
  spec.finalize();
  Regularizer p({0.1, -0.3}, c);
  mc::McConfig cfg;
  cfg.sample_count = 100000;
  cfg.root_seed = 21;
  mc::McEstimate e = regularized_forward(spec, p, cfg);
  // integral of the unit-normalized gaussian: (2 pi / c)^(d/4)
  const double want = std::pow(2.0 * kPi / c, 0.5);
  CHECK(e.real() == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("regularized forward: large c recovers the pointwise value") {
  NetworkSpec spec;
  spec.input_domain = DomainBox({-1, -1}, {1, 1});
  spec.layers.push_back(dense_layer(Matrix(2, 2, {0.8, 0.1, -0.2, 0.9}), {0.05, -0.1},
                                    activation::ActivationSpec::tanh_fn()));
  spec.layers.push_back(dense_layer(Matrix::identity(2), {0, 0}));
  spec.final = gaussian_bump(1.0);
  spec.finalize();
  const std::vector<double> x{0.3, -0.2};
  Regularizer p(x, 1e4);
  mc::McConfig cfg;
  cfg.sample_count = 200000;
  cfg.root_seed = 23;
  mc::McEstimate e = regularized_forward(spec, p, cfg);
  // the estimate carries the (2 pi / c)^(d/4) mass of p
  const double mass = std::pow(2.0 * kPi / 1e4, 0.5);
  CHECK(e.real() / mass == doctest::Approx(forward(spec, x).real()).epsilon(0.02));
}

TEST_CASE("regularized forward: odd model about the center vanishes") {
  NetworkSpec spec;
  spec.input_domain = DomainBox({-5}, {5});
  spec.layers.push_back(dense_layer(Matrix(1, 1, {1.0}), {}));
  spec.final = identity_lookup_1d(50.0);
  spec.finalize();
  Regularizer p({0.0}, 2.0);
  mc::McConfig cfg;
  cfg.sample_count = 200000;
  cfg.root_seed = 29;
  mc::McEstimate e = regularized_forward(spec, p, cfg);
  CHECK(std::abs(e.real()) <= 3.0 * e.std_error);
}

TEST_CASE("v_norm: pinned examples") {
  FinalTransform g6 = gaussian_bump(1.0);
  DomainBox d6(std::vector<double>(6, -1.0), std::vector<double>(6, 1.0));
  CHECK(v_norm(g6, d6) == doctest::Approx(std::pow(kPi / 2.0, 1.5)).epsilon(1e-12));

  FinalTransform soft;
  soft.kind = FinalKind::softmax;
  soft.norm_mode = NormMode::measure_bound;
  DomainBox vol4({0, 0}, {2, 2});
  CHECK(v_norm(soft, vol4) == doctest::Approx(2.0));

  CHECK(v_norm(gaussian_bump(0.0), d6) == 0.0);

  // measure_bound rejects |v| > 1
  FinalTransform big = gaussian_bump(3.0);
  big.norm_mode = NormMode::measure_bound;
  CHECK_THROWS_AS(v_norm(big, d6), std::domain_error);
}

TEST_CASE("heisenberg representation preserves norms") {
  Rng rng(91, fnv1a64("test/unitary"));
  mc::GaussianMixture h;
  h.components.push_back(mc::GaussianMixture::isotropic({0.3, -0.2}, 2.0, 1.0));
  h.components.push_back(mc::GaussianMixture::isotropic({-0.5, 0.4}, 3.0, 0.6));
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> a{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    std::vector<double> b{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double c = rng.uniform(-3, 3);
    // |rho(g) h(x)| = |h(x - b)|
    mc::McConfig cfg;
    cfg.sample_count = 300000;
    cfg.root_seed = 37 + trial;
    cfg.proposal = mc::Proposal::gaussian(b, 0.3);
    mc::McEstimate norm_sq = mc::mc_integral(
        [&](const std::vector<double>& y) {
          std::vector<double> shifted{y[0] - b[0], y[1] - b[1]};
          const double phase_mag = 1.0;  // |exp(i(...))| = 1
          const double v = h.eval(shifted) * phase_mag;
          return std::complex<double>(v * v, 0.0);
        },
        cfg, fnv1a64("test/unitary/mc") + trial);
    CHECK(std::abs(norm_sq.real() - h.l2_norm_sq_analytic()) <=
          3.0 * norm_sq.std_error);
    (void)c;
    (void)a;
  }
}

TEST_CASE("forward reports the layer of a non-finite intermediate") {
  NetworkSpec spec;
  spec.input_domain = DomainBox({-100}, {100});
  spec.layers.push_back(dense_layer(Matrix(1, 1, {1e308}), {}));
  spec.layers.push_back(dense_layer(Matrix(1, 1, {1.0}), {}));
  spec.final = gaussian_bump(1.0);
  spec.finalize();
  try {
    forward(spec, {10.0});
    FAIL("expected a numeric error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
  }
}

TEST_CASE("network spec validation") {
  NetworkSpec bad;
  bad.input_domain = DomainBox({-1, -1}, {1, 1});
  bad.layers.push_back(dense_layer(Matrix(2, 3), {}));
  bad.final = gaussian_bump(1.0);
  CHECK_THROWS_AS(bad.finalize(), ConfigError);

  NetworkSpec nonsquare;
  nonsquare.flavor = Flavor::affine_scaled;
  nonsquare.input_domain = DomainBox({-1, -1}, {1, 1});
  nonsquare.layers.push_back(dense_layer(Matrix(3, 2), {}));
  nonsquare.final = gaussian_bump(1.0);
  CHECK_THROWS_AS(nonsquare.finalize(), ConfigError);
}

TEST_CASE("weight file round trip and json loading") {
  Matrix w(2, 3, {1, 2, 3, 4, 5, 6});
  const std::string wpath = "test_weights.kbw";
  write_weight_file(wpath, w);
  Matrix r = read_weight_file(wpath);
  REQUIRE(r.rows == 2);
  REQUIRE(r.cols == 3);
  for (std::size_t i = 0; i < 6; ++i) CHECK(r.data[i] == w.data[i]);

  const std::string spec_json = R"({
    "model_flavor": "plain",
    "domain_mode": "tight",
    "input_domain": {"lower": [-1, -1, -1], "upper": [1, 1, 1]},
    "layers": [
      {"kind": "dense", "weights_file": "test_weights.kbw",
       "activation": {"kind": "tanh"}}
    ],
    "final": {"kind": "gaussian_bump", "w3": 1.0}
  })";
  NetworkSpec spec = parse_network(spec_json, ".");
  CHECK(spec.layers.size() == 1);
  CHECK(spec.layers[0].weight.rows == 2);
  CHECK(spec.layers[0].domain_tilde.has_value());
  std::remove(wpath.c_str());

  CHECK_THROWS_AS(parse_network(R"({"bogus_key": 1})", "."), ConfigError);
  CHECK_THROWS_AS(parse_network("not json", "."), ConfigError);
  CHECK_THROWS_AS(read_weight_file("missing.kbw"), ConfigError);
}
