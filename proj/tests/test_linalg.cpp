#include <cmath>
#include <complex>

#include "doctest.h"
#include "kb/linalg.hpp"
#include "kb/rng.hpp"

using namespace kb;
using namespace kb::linalg;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& x : m.data) x = rng.uniform(-scale, scale);
  return m;
}

Matrix reconstruct(const SvdResult& s) {
  Matrix us = s.u;
  for (std::size_t j = 0; j < s.singular_values.size(); ++j) {
    for (std::size_t i = 0; i < us.rows; ++i) us(i, j) *= s.singular_values[j];
  }
  return matmul(us, transpose(s.v));
}

}  // namespace

TEST_CASE("svd: diagonal and zero matrices") {
  SvdResult s = svd(Matrix::diag({3.0, 2.0}));
  CHECK(s.singular_values[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(s.singular_values[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(s.numerical_rank == 2);

  SvdResult z = svd(Matrix(2, 2));
  CHECK(z.singular_values[0] == 0.0);
  CHECK(z.singular_values[1] == 0.0);
  CHECK(z.numerical_rank == 0);
}

TEST_CASE("svd: rank-1 ones matrix has values (2, 0)") {
  // [[1,1],[1,1]] = 2 * u u^T with unit u = (1,1)/sqrt(2)
  SvdResult s = svd(Matrix(2, 2, {1, 1, 1, 1}));
  CHECK(s.singular_values[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(s.singular_values[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s.numerical_rank == 1);
}

TEST_CASE("svd: reconstruction and orthonormality on random matrices") {
  Rng rng(7, fnv1a64("test/svd"));
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t r = 1 + rng.next_u64() % 16;
    const std::size_t c = 1 + rng.next_u64() % 16;
    Matrix m = random_matrix(rng, r, c, 2.0);
    SvdResult s = svd(m);
    Matrix rec = reconstruct(s);
    double err = 0.0;
    for (std::size_t i = 0; i < m.data.size(); ++i) {
      err = std::max(err, std::abs(rec.data[i] - m.data[i]));
    }
    CHECK(err <= 1e-10 * std::max(1.0, frobenius_norm(m)));
    for (std::size_t j = 0; j + 1 < s.singular_values.size(); ++j) {
      CHECK(s.singular_values[j] >= s.singular_values[j + 1]);
    }
    // columns of v orthonormal
    Matrix vtv = matmul(transpose(s.v), s.v);
    for (std::size_t i = 0; i < vtv.rows; ++i) {
      for (std::size_t j = 0; j < vtv.cols; ++j) {
        CHECK(vtv(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("det_factor_invertible: pinned examples") {
  CHECK(det_factor_invertible(Matrix::identity(3)) == doctest::Approx(1.0));
  Matrix two = Matrix::diag({2.0, 2.0});
  CHECK(det_factor_invertible(two) == doctest::Approx(0.5).epsilon(1e-12));
  // rotation [[0,1],[-1,0]] has det 1 by cofactor expansion
  CHECK(det_factor_invertible(Matrix(2, 2, {0, 1, -1, 0})) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(det_factor_invertible(Matrix(2, 2, {1, 1, 1, 1})),
                  std::domain_error);
  CHECK_THROWS_AS(det_factor_invertible(Matrix(2, 3)), std::invalid_argument);
}

TEST_CASE("det_factor_invertible squared times |det| is 1 (LU route)") {
  Rng rng(11, fnv1a64("test/detfac"));
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.next_u64() % 6;
    Matrix w = random_matrix(rng, n, n, 1.5);
    const double det = std::abs(lu_det(w));
    if (det < 1e-6) continue;
    const double f = det_factor_invertible(w);
    CHECK(f * f * det == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("det_factor_injective: pinned examples") {
  CHECK(det_factor_injective(Matrix::identity(2)) == doctest::Approx(1.0));
  Matrix tall(3, 2, {1, 0, 0, 1, 0, 0});
  CHECK(det_factor_injective(tall) == doctest::Approx(1.0).epsilon(1e-12));
  Matrix emb(3, 2, {2, 0, 0, 3, 0, 0});
  CHECK(det_factor_injective(emb) == doctest::Approx(1.0 / std::sqrt(6.0)).epsilon(1e-12));
  CHECK_THROWS_AS(det_factor_injective(Matrix(2, 2, {1, 1, 1, 1})), std::domain_error);
}

TEST_CASE("det_factor_restricted: pinned examples and kernel bases") {
  RestrictedDet r = det_factor_restricted(Matrix::diag({2.0, 0.0}));
  CHECK(r.factor == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  REQUIRE(r.kernel_basis.cols == 1);
  CHECK(std::abs(r.kernel_basis(1, 0)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(r.kernel_basis(0, 0)) == doctest::Approx(0.0).epsilon(1e-12));

  RestrictedDet id = det_factor_restricted(Matrix::identity(2));
  CHECK(id.factor == doctest::Approx(1.0));
  CHECK(id.kernel_basis.cols == 0);

  RestrictedDet z = det_factor_restricted(Matrix(2, 2));
  CHECK(z.factor == doctest::Approx(1.0));
  REQUIRE(z.kernel_basis.cols == 2);
  Matrix g = matmul(transpose(z.kernel_basis), z.kernel_basis);
  CHECK(g(0, 0) == doctest::Approx(1.0));
  CHECK(g(1, 1) == doctest::Approx(1.0));
  CHECK(g(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("restricted equals injective on full column rank") {
  Rng rng(13, fnv1a64("test/restricted"));
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t c = 1 + rng.next_u64() % 4;
    const std::size_t r = c + rng.next_u64() % 4;
    Matrix w = random_matrix(rng, r, c, 1.0);
    SvdResult s = svd(w);
    if (s.numerical_rank < c || s.singular_values.back() < 1e-3) continue;
    CHECK(det_factor_restricted(w).factor ==
          doctest::Approx(det_factor_injective(w)).epsilon(1e-10));
  }
}

TEST_CASE("circulant spectrum: pinned examples") {
  // unit tap at j=0: gamma_m = 1 for all m
  ConvKernel delta{{4}, {1, 0, 0, 0}};
  for (const auto& g : circulant_spectrum(delta, paper_scaling(delta.dims))) {
    CHECK(std::abs(g - std::complex<double>(1.0, 0.0)) <= 1e-14);
  }
  // c * delta over |I| = 4: product of modes is c^4
  ConvKernel cdelta{{4}, {1.7, 0, 0, 0}};
  std::complex<double> prod(1.0, 0.0);
  for (const auto& g : circulant_spectrum(cdelta, dft_scaling(cdelta.dims))) prod *= g;
  CHECK(std::abs(prod) == doctest::Approx(std::pow(1.7, 4)).epsilon(1e-12));

  // two taps at the stated scaling: gamma_m = 1 + exp(i m / (4 pi))
  ConvKernel two{{2}, {1, 1}};
  auto gs = circulant_spectrum(two, paper_scaling(two.dims));
  for (int m = 0; m < 2; ++m) {
    const double ang = m / (4.0 * 3.14159265358979323846);
    const std::complex<double> want =
        1.0 + std::complex<double>(std::cos(ang), std::sin(ang));
    CHECK(std::abs(gs[m] - want) <= 1e-14);
  }

  CHECK_THROWS_AS(circulant_spectrum(ConvKernel{{}, {}}, {}), std::invalid_argument);
}

TEST_CASE("circulant spectrum matches the dense convolution matrix") {
  Rng rng(17, fnv1a64("test/circulant"));
  for (std::size_t n = 1; n <= 8; ++n) {
    ConvKernel k;
    k.dims = {n};
    k.theta.resize(n);
    for (double& t : k.theta) t = rng.uniform(-1.0, 1.0);
    Matrix c = conv_matrix(k);
    const auto gamma = circulant_spectrum(k, dft_scaling(k.dims));

    // determinant route
    std::complex<double> prod(1.0, 0.0);
    for (const auto& g : gamma) prod *= g;
    const double det = std::abs(lu_det(c));
    CHECK(std::abs(prod) == doctest::Approx(det).epsilon(1e-8));

    // eigenvector route: C v_m = conj(gamma_m) v_m with v_m the Fourier vector
    for (std::size_t m = 0; m < n; ++m) {
      std::vector<std::complex<double>> v(n), cv(n, {0.0, 0.0});
      for (std::size_t j = 0; j < n; ++j) {
        const double ang = 2.0 * 3.14159265358979323846 * static_cast<double>(j * m) /
                           static_cast<double>(n);
        v[j] = {std::cos(ang), std::sin(ang)};
      }
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) cv[i] += c(i, j) * v[j];
      }
      double err = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        err = std::max(err, std::abs(cv[i] - std::conj(gamma[m]) * v[i]));
      }
      CHECK(err <= 1e-10);
    }
  }
}

TEST_CASE("conv_apply agrees with the dense matrix") {
  Rng rng(19, fnv1a64("test/convapply"));
  ConvKernel k{{2, 3}, {}};
  k.theta.resize(6);
  for (double& t : k.theta) t = rng.uniform(-1.0, 1.0);
  std::vector<double> x(6);
  for (double& v : x) v = rng.uniform(-1.0, 1.0);
  const auto y1 = conv_apply(k, x);
  const auto y2 = matvec(conv_matrix(k), x);
  for (std::size_t i = 0; i < 6; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-12));
}

TEST_CASE("pool matrix: nonzero singular values are 1") {
  for (std::size_t m : {std::size_t{2}, std::size_t{4}}) {
    Matrix p = pool_matrix(8, m);
    SvdResult s = svd(p);
    CHECK(s.numerical_rank == 8 / m);
    for (std::size_t i = 0; i < s.numerical_rank; ++i) {
      CHECK(s.singular_values[i] == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
  CHECK_THROWS_AS(pool_matrix(7, 2), std::invalid_argument);
}

TEST_CASE("interval affine image: pinned examples") {
  DomainBox unit({0, 0}, {1, 1});
  DomainBox a = interval_affine_image(Matrix::identity(2), {0, 0}, unit);
  CHECK(a.lower[0] == 0.0);
  CHECK(a.upper[0] == 1.0);

  DomainBox sym({-1, -1}, {1, 1});
  DomainBox b = interval_affine_image(Matrix::diag({2, 2}), {0, 0}, sym);
  CHECK(b.lower[0] == -2.0);
  CHECK(b.upper[1] == 2.0);

  // [[1,-1]] + 1 over [0,1]^2: corner enumeration gives [0, 2]
  DomainBox c = interval_affine_image(Matrix(1, 2, {1, -1}), {1}, unit);
  CHECK(c.lower[0] == 0.0);
  CHECK(c.upper[0] == 2.0);
}

TEST_CASE("interval affine image contains the true image (1000 samples)") {
  Rng rng(23, fnv1a64("test/interval"));
  Matrix w = random_matrix(rng, 3, 2, 2.0);
  std::vector<double> b{0.3, -0.7, 1.1};
  DomainBox box({-0.5, 1.0}, {2.0, 1.5});
  DomainBox img = interval_affine_image(w, b, box);
  for (int i = 0; i < 1000; ++i) {
    const auto x = rng.uniform_in_box(box.lower, box.upper);
    auto y = matvec(w, x);
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += b[j];
    CHECK(img.contains(y));
  }
}

TEST_CASE("sym_eig: eigenpairs of a known matrix") {
  // [[2,1],[1,2]] has eigenvalues 1 and 3
  SymEig e = sym_eig(Matrix(2, 2, {2, 1, 1, 2}));
  CHECK(e.values[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e.values[1] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(spectral_norm(Matrix(2, 2, {2, 1, 1, 2})) == doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("domain box invariants") {
  CHECK_THROWS_AS(DomainBox({1.0}, {0.0}), std::invalid_argument);
  DomainBox b({-1, -1, -1}, {1, 1, 1});
  CHECK(b.volume() == doctest::Approx(8.0));
  CHECK(b.radius_inf() == 1.0);
  CHECK(b.contains({0.0, 0.5, -1.0}));
  CHECK(!b.contains({0.0, 1.5, 0.0}));
}
