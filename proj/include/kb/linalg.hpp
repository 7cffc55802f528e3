#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace kb::linalg {

// relative rank cutoff: singular values above rank_tol * s_max count
inline constexpr double kRankTol = 1e-10;

struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> entries);

  static Matrix identity(std::size_t n);
  static Matrix diag(const std::vector<double>& d);

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  bool finite() const;
};

Matrix transpose(const Matrix& m);
Matrix matmul(const Matrix& a, const Matrix& b);
std::vector<double> matvec(const Matrix& m, const std::vector<double>& x);
double frobenius_norm(const Matrix& m);

// axis-aligned rectangular domain [lower_1, upper_1] x ... x [lower_d, upper_d]
struct DomainBox {
  std::vector<double> lower, upper;

  DomainBox() = default;
  DomainBox(std::vector<double> lo, std::vector<double> hi);

  // r * [-1, 1]^d
  static DomainBox centered(std::size_t dim, double r);

  std::size_t dim() const { return lower.size(); }
  double width(std::size_t i) const { return upper[i] - lower[i]; }
  double volume() const;
  double radius_inf() const;  // max |corner coordinate|
  bool contains(const std::vector<double>& x) const;
  bool contains(const DomainBox& other) const;
  DomainBox hull(const DomainBox& other) const;
};

struct SvdResult {
  Matrix u;                            // m x k, orthonormal columns
  std::vector<double> singular_values; // descending, k = min(m, n)
  Matrix v;                            // n x k, orthonormal columns
  std::size_t numerical_rank = 0;
};

// one-sided Jacobi; unconditionally convergent at the sizes used here
SvdResult svd(const Matrix& m);

// orthonormal basis of the complement of span(basis columns) in R^n
Matrix orthonormal_complement(std::size_t n, const Matrix& basis);

// |det w|^(-1/2); throws on a numerically singular w
double det_factor_invertible(const Matrix& w);

// |det(w* w)|^(-1/4) = prod s_i^(-1/2); requires full column rank
double det_factor_injective(const Matrix& w);

struct RestrictedDet {
  double factor;        // prod over nonzero singular values of s^(-1/2); 1 if none
  Matrix kernel_basis;  // n x dim(ker w), orthonormal columns
};
RestrictedDet det_factor_restricted(const Matrix& w);

// determinant by partial-pivot LU; independent of the SVD route
double lu_det(const Matrix& m);

struct SymEig {
  std::vector<double> values;  // ascending
  Matrix vectors;              // columns, same order
};
SymEig sym_eig(const Matrix& s);                   // s symmetric
std::vector<double> sym_eigenvalues(const Matrix& s);
double spectral_norm(const Matrix& m);

// kernel array over a finite index set I = J_1 x ... x J_d, J_k = {0..dims_k-1}
struct ConvKernel {
  std::vector<std::size_t> dims;
  std::vector<double> theta;  // row-major over I
  std::size_t size() const;
};

std::vector<double> paper_scaling(const std::vector<std::size_t>& dims); // 1/(2 pi n_k)
std::vector<double> dft_scaling(const std::vector<std::size_t>& dims);   // 2 pi / n_k

// gamma_m = sum_j theta_j exp(i (S j) . m) for every m in I
std::vector<std::complex<double>> circulant_spectrum(const ConvKernel& k,
                                                     const std::vector<double>& scaling);

// dense matrix of x -> theta * x (cyclic convolution over I)
Matrix conv_matrix(const ConvKernel& k);
std::vector<double> conv_apply(const ConvKernel& k, const std::vector<double>& x);

// square upsampled-average pooling: each entry of a pool group is replaced by
// the group mean; nonzero singular values are all 1
Matrix pool_matrix(std::size_t n, std::size_t pool_size);

// tight interval enclosure of {Wx + b : x in box}
DomainBox interval_affine_image(const Matrix& w, const std::vector<double>& b,
                                const DomainBox& box);

// interval of <q, x> for x in box (projection onto one direction)
void interval_dot(const std::vector<double>& q, const DomainBox& box,
                  double& lo, double& hi);

}  // namespace kb::linalg
