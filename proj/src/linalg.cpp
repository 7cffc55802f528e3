#include "kb/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace kb::linalg {

namespace {
constexpr double kPi = 3.14159265358979323846264338327950288;
}

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> entries)
    : rows(r), cols(c), data(std::move(entries)) {
  if (data.size() != rows * cols) {
    throw std::invalid_argument("matrix: entry count does not match rows*cols");
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diag(const std::vector<double>& d) {
  Matrix m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

bool Matrix::finite() const {
  for (double x : data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: dimension mismatch");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

std::vector<double> matvec(const Matrix& m, const std::vector<double>& x) {
  if (m.cols != x.size()) throw std::invalid_argument("matvec: dimension mismatch");
  std::vector<double> y(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    const double* row = &m.data[i * m.cols];
    for (std::size_t j = 0; j < m.cols; ++j) s += row[j] * x[j];
    y[i] = s;
  }
  return y;
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double x : m.data) s += x * x;
  return std::sqrt(s);
}

DomainBox::DomainBox(std::vector<double> lo, std::vector<double> hi)
    : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size()) {
    throw std::invalid_argument("domain box: lower/upper length mismatch");
  }
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (!(lower[i] <= upper[i])) {
      throw std::invalid_argument("domain box: lower > upper");
    }
  }
}

DomainBox DomainBox::centered(std::size_t dim, double r) {
  return DomainBox(std::vector<double>(dim, -r), std::vector<double>(dim, r));
}

double DomainBox::volume() const {
  double v = 1.0;
  for (std::size_t i = 0; i < dim(); ++i) v *= width(i);
  return v;
}

double DomainBox::radius_inf() const {
  double r = 0.0;
  for (std::size_t i = 0; i < dim(); ++i) {
    r = std::max(r, std::max(std::abs(lower[i]), std::abs(upper[i])));
  }
  return r;
}

bool DomainBox::contains(const std::vector<double>& x) const {
  if (x.size() != dim()) return false;
  for (std::size_t i = 0; i < dim(); ++i) {
    if (x[i] < lower[i] || x[i] > upper[i]) return false;
  }
  return true;
}

bool DomainBox::contains(const DomainBox& other) const {
  if (other.dim() != dim()) return false;
  for (std::size_t i = 0; i < dim(); ++i) {
    if (other.lower[i] < lower[i] || other.upper[i] > upper[i]) return false;
  }
  return true;
}

DomainBox DomainBox::hull(const DomainBox& other) const {
  if (other.dim() != dim()) throw std::invalid_argument("hull: dimension mismatch");
  DomainBox h = *this;
  for (std::size_t i = 0; i < dim(); ++i) {
    h.lower[i] = std::min(h.lower[i], other.lower[i]);
    h.upper[i] = std::max(h.upper[i], other.upper[i]);
  }
  return h;
}

namespace {

// one-sided Jacobi on a tall matrix (rows >= cols): orthogonalize columns
void jacobi_columns(Matrix& w, Matrix& v) {
  const std::size_t n = w.cols;
  const std::size_t m = w.rows;
  const double tol = 1e-15;
  const int max_sweeps = 128;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          app += wp * wp;
          aqq += wq * wq;
          apq += wp * wq;
        }
        if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
        rotated = true;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) return;
  }
  throw std::runtime_error("svd: one-sided Jacobi did not converge");
}

SvdResult svd_tall(const Matrix& a) {
  const std::size_t m = a.rows, n = a.cols;
  Matrix w = a;
  Matrix v = Matrix::identity(n);
  jacobi_columns(w, v);

  std::vector<double> s(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < m; ++i) col += w(i, j) * w(i, j);
    s[j] = std::sqrt(col);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return s[i] > s[j]; });

  SvdResult r;
  r.u = Matrix(m, n);
  r.v = Matrix(n, n);
  r.singular_values.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    r.singular_values[j] = s[src];
    for (std::size_t i = 0; i < n; ++i) r.v(i, j) = v(i, src);
    if (s[src] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) r.u(i, j) = w(i, src) / s[src];
    }
  }

  const double smax = r.singular_values.empty() ? 0.0 : r.singular_values[0];
  r.numerical_rank = 0;
  for (double sv : r.singular_values) {
    if (sv > kRankTol * smax && sv > 0.0) ++r.numerical_rank;
  }

  // complete columns paired with zero singular values to an orthonormal set
  for (std::size_t j = r.numerical_rank; j < n; ++j) {
    if (r.singular_values[j] > 0.0) continue;  // below cutoff but usable
    for (std::size_t e = 0; e < m; ++e) {
      std::vector<double> cand(m, 0.0);
      cand[e] = 1.0;
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < m; ++i) dot += r.u(i, k) * cand[i];
        for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * r.u(i, k);
      }
      double norm = 0.0;
      for (double x : cand) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-8) {
        for (std::size_t i = 0; i < m; ++i) r.u(i, j) = cand[i] / norm;
        break;
      }
    }
  }
  return r;
}

}  // namespace

SvdResult svd(const Matrix& m) {
  if (m.rows == 0 || m.cols == 0) throw std::invalid_argument("svd: empty matrix");
  if (!m.finite()) throw std::invalid_argument("svd: non-finite entries");
  if (m.rows >= m.cols) return svd_tall(m);
  SvdResult t = svd_tall(transpose(m));
  std::swap(t.u, t.v);
  return t;
}

Matrix orthonormal_complement(std::size_t n, const Matrix& basis) {
  if (basis.rows != n && basis.data.empty() == false) {
    throw std::invalid_argument("orthonormal_complement: basis row mismatch");
  }
  const std::size_t r = basis.data.empty() ? 0 : basis.cols;
  Matrix out(n, n - r);
  std::size_t found = 0;
  std::vector<std::vector<double>> accepted;
  for (std::size_t e = 0; e < n && found < n - r; ++e) {
    std::vector<double> cand(n, 0.0);
    cand[e] = 1.0;
    for (std::size_t k = 0; k < r; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += basis(i, k) * cand[i];
      for (std::size_t i = 0; i < n; ++i) cand[i] -= dot * basis(i, k);
    }
    for (const auto& a : accepted) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += a[i] * cand[i];
      for (std::size_t i = 0; i < n; ++i) cand[i] -= dot * a[i];
    }
    double norm = 0.0;
    for (double x : cand) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 1e-8) {
      for (double& x : cand) x /= norm;
      for (std::size_t i = 0; i < n; ++i) out(i, found) = cand[i];
      accepted.push_back(cand);
      ++found;
    }
  }
  if (found != n - r) {
    throw std::runtime_error("orthonormal_complement: failed to complete basis");
  }
  return out;
}

double det_factor_invertible(const Matrix& w) {
  if (w.rows != w.cols) {
    throw std::invalid_argument("det_factor_invertible: matrix not square");
  }
  SvdResult r = svd(w);
  if (r.numerical_rank < w.cols) {
    throw std::domain_error(
        "det_factor_invertible: singular weight matrix, factor is infinite");
  }
  double det = 1.0;
  for (double s : r.singular_values) det *= s;
  if (det < 1e-300) {
    throw std::domain_error(
        "det_factor_invertible: determinant underflow, factor is infinite");
  }
  return 1.0 / std::sqrt(det);
}

double det_factor_injective(const Matrix& w) {
  SvdResult r = svd(w);
  if (r.numerical_rank < w.cols) {
    throw std::domain_error("det_factor_injective: weight matrix is not injective");
  }
  double det = 1.0;
  for (double s : r.singular_values) det *= s;
  if (det < 1e-300) {
    throw std::domain_error("det_factor_injective: determinant underflow");
  }
  return 1.0 / std::sqrt(det);
}

RestrictedDet det_factor_restricted(const Matrix& w) {
  SvdResult r = svd(w);
  double det = 1.0;
  for (std::size_t i = 0; i < r.numerical_rank; ++i) det *= r.singular_values[i];
  RestrictedDet out;
  out.factor = 1.0 / std::sqrt(det);  // empty product -> 1
  const std::size_t n = w.cols;
  Matrix range_basis(n, r.numerical_rank);
  for (std::size_t j = 0; j < r.numerical_rank; ++j) {
    for (std::size_t i = 0; i < n; ++i) range_basis(i, j) = r.v(i, j);
  }
  out.kernel_basis = orthonormal_complement(n, range_basis);
  return out;
}

double lu_det(const Matrix& m) {
  if (m.rows != m.cols) throw std::invalid_argument("lu_det: matrix not square");
  const std::size_t n = m.rows;
  Matrix a = m;
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    }
    if (a(piv, k) == 0.0) return 0.0;
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      det = -det;
    }
    det *= a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return det;
}

SymEig sym_eig(const Matrix& s) {
  if (s.rows != s.cols) throw std::invalid_argument("sym_eig: matrix not square");
  const std::size_t n = s.rows;
  Matrix a = s;
  Matrix q = Matrix::identity(n);
  const int max_sweeps = 128;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (std::sqrt(off) <= 1e-14 * (1.0 + frobenius_norm(s))) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t qq = p + 1; qq < n; ++qq) {
        const double apq = a(p, qq);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (a(qq, qq) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = c * t;
        for (std::size_t i = 0; i < n; ++i) {
          const double aip = a(i, p), aiq = a(i, qq);
          a(i, p) = c * aip - sn * aiq;
          a(i, qq) = sn * aip + c * aiq;
        }
        for (std::size_t j = 0; j < n; ++j) {
          const double apj = a(p, j), aqj = a(qq, j);
          a(p, j) = c * apj - sn * aqj;
          a(qq, j) = sn * apj + c * aqj;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double qip = q(i, p), qiq = q(i, qq);
          q(i, p) = c * qip - sn * qiq;
          q(i, qq) = sn * qip + c * qiq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });
  SymEig out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = a(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = q(i, order[j]);
  }
  return out;
}

std::vector<double> sym_eigenvalues(const Matrix& s) { return sym_eig(s).values; }

double spectral_norm(const Matrix& m) {
  const Matrix g = (m.rows >= m.cols) ? matmul(transpose(m), m)
                                      : matmul(m, transpose(m));
  const std::vector<double> ev = sym_eigenvalues(g);
  return std::sqrt(std::max(0.0, ev.back()));
}

std::size_t ConvKernel::size() const {
  std::size_t n = 1;
  for (std::size_t d : dims) n *= d;
  return n;
}

std::vector<double> paper_scaling(const std::vector<std::size_t>& dims) {
  std::vector<double> s(dims.size());
  for (std::size_t k = 0; k < dims.size(); ++k) {
    s[k] = 1.0 / (2.0 * kPi * static_cast<double>(dims[k]));
  }
  return s;
}

std::vector<double> dft_scaling(const std::vector<std::size_t>& dims) {
  std::vector<double> s(dims.size());
  for (std::size_t k = 0; k < dims.size(); ++k) {
    s[k] = 2.0 * kPi / static_cast<double>(dims[k]);
  }
  return s;
}

namespace {

void decode_index(std::size_t flat, const std::vector<std::size_t>& dims,
                  std::vector<std::size_t>& idx) {
  for (std::size_t k = dims.size(); k-- > 0;) {
    idx[k] = flat % dims[k];
    flat /= dims[k];
  }
}

}  // namespace

std::vector<std::complex<double>> circulant_spectrum(
    const ConvKernel& k, const std::vector<double>& scaling) {
  if (k.dims.empty() || k.size() == 0) {
    throw std::invalid_argument("circulant_spectrum: empty index set");
  }
  if (k.theta.size() != k.size()) {
    throw std::invalid_argument("circulant_spectrum: theta size mismatch");
  }
  if (scaling.size() != k.dims.size()) {
    throw std::invalid_argument("circulant_spectrum: scaling size mismatch");
  }
  const std::size_t n = k.size();
  const std::size_t d = k.dims.size();
  std::vector<std::complex<double>> gamma(n);
  std::vector<std::size_t> mi(d), ji(d);
  for (std::size_t m = 0; m < n; ++m) {
    decode_index(m, k.dims, mi);
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      decode_index(j, k.dims, ji);
      double phase = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        phase += scaling[a] * static_cast<double>(ji[a]) * static_cast<double>(mi[a]);
      }
      acc += k.theta[j] * std::complex<double>(std::cos(phase), std::sin(phase));
    }
    gamma[m] = acc;
  }
  return gamma;
}

Matrix conv_matrix(const ConvKernel& k) {
  if (k.dims.empty() || k.size() == 0) {
    throw std::invalid_argument("conv_matrix: empty index set");
  }
  const std::size_t n = k.size();
  const std::size_t d = k.dims.size();
  Matrix c(n, n);
  std::vector<std::size_t> ki(d), ji(d), ui(d);
  for (std::size_t row = 0; row < n; ++row) {
    decode_index(row, k.dims, ki);
    for (std::size_t col = 0; col < n; ++col) {
      decode_index(col, k.dims, ji);
      std::size_t flat = 0;
      for (std::size_t a = 0; a < d; ++a) {
        const std::size_t na = k.dims[a];
        ui[a] = (ki[a] + na - ji[a]) % na;
        flat = flat * na + ui[a];
      }
      c(row, col) = k.theta[flat];
    }
  }
  return c;
}

std::vector<double> conv_apply(const ConvKernel& k, const std::vector<double>& x) {
  if (x.size() != k.size()) throw std::invalid_argument("conv_apply: size mismatch");
  const std::size_t n = k.size();
  const std::size_t d = k.dims.size();
  std::vector<double> y(n, 0.0);
  std::vector<std::size_t> ki(d), ji(d);
  for (std::size_t row = 0; row < n; ++row) {
    decode_index(row, k.dims, ki);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      decode_index(j, k.dims, ji);
      std::size_t flat = 0;
      for (std::size_t a = 0; a < d; ++a) {
        const std::size_t na = k.dims[a];
        flat = flat * na + (ki[a] + na - ji[a]) % na;
      }
      s += k.theta[j] * x[flat];
    }
    y[row] = s;
  }
  return y;
}

Matrix pool_matrix(std::size_t n, std::size_t pool_size) {
  if (pool_size == 0 || n % pool_size != 0) {
    throw std::invalid_argument("pool_matrix: size not divisible by pool_size");
  }
  Matrix p(n, n);
  const double w = 1.0 / static_cast<double>(pool_size);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t g = i / pool_size;
    for (std::size_t j = g * pool_size; j < (g + 1) * pool_size; ++j) p(i, j) = w;
  }
  return p;
}

DomainBox interval_affine_image(const Matrix& w, const std::vector<double>& b,
                                const DomainBox& box) {
  if (w.cols != box.dim() || (b.size() != w.rows && !b.empty())) {
    throw std::invalid_argument("interval_affine_image: dimension mismatch");
  }
  std::vector<double> lo(w.rows), hi(w.rows);
  for (std::size_t i = 0; i < w.rows; ++i) {
    double a = b.empty() ? 0.0 : b[i];
    double c = a;
    for (std::size_t j = 0; j < w.cols; ++j) {
      const double x = w(i, j) * box.lower[j];
      const double y = w(i, j) * box.upper[j];
      a += std::min(x, y);
      c += std::max(x, y);
    }
    lo[i] = a;
    hi[i] = c;
  }
  return DomainBox(std::move(lo), std::move(hi));
}

void interval_dot(const std::vector<double>& q, const DomainBox& box,
                  double& lo, double& hi) {
  lo = 0.0;
  hi = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    const double x = q[j] * box.lower[j];
    const double y = q[j] * box.upper[j];
    lo += std::min(x, y);
    hi += std::max(x, y);
  }
}

}  // namespace kb::linalg
