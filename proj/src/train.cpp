#include "kb/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "kb/activation.hpp"
#include "kb/parallel.hpp"
#include "kb/rng.hpp"

namespace kb::train {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
// half-range of the synthetic classification inputs
constexpr double kClassifierRadius = 0.3;
using linalg::Matrix;

void TrainConfigCheck(const TrainConfig& c) {
  if (c.lambda < 0.0) throw std::invalid_argument("train: lambda must be >= 0");
  if (c.sample_size < 1) throw std::invalid_argument("train: sample_size >= 1");
  if (c.batch_size < 1) throw std::invalid_argument("train: batch_size >= 1");
}

Matrix random_gaussian(Rng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  Matrix m(r, c);
  for (double& x : m.data) x = sd * rng.normal();
  return m;
}

// orthonormal columns (rows >= cols) by Gram-Schmidt on a Gaussian draw
Matrix orthogonal_init(Rng& rng, std::size_t rows, std::size_t cols) {
  if (rows < cols) {
    Matrix t = orthogonal_init(rng, cols, rows);
    return linalg::transpose(t);
  }
  Matrix m = random_gaussian(rng, rows, cols);
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < rows; ++i) dot += m(i, k) * m(i, j);
      for (std::size_t i = 0; i < rows; ++i) m(i, j) -= dot * m(i, k);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < rows; ++i) norm += m(i, j) * m(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      m(j % rows, j) = 1.0;
      norm = 1.0;
    }
    for (std::size_t i = 0; i < rows; ++i) m(i, j) /= norm;
  }
  return m;
}

Matrix truncated_normal_init(Rng& rng, std::size_t rows, std::size_t cols,
                             double sd = 0.05) {
  Matrix m(rows, cols);
  for (double& x : m.data) {
    double v = rng.normal();
    while (std::abs(v) > 2.0) v = rng.normal();
    x = sd * v;
  }
  return m;
}

struct SpectralInfo {
  double norm = 0.0;
  Matrix grad;  // u1 v1^T
};

SpectralInfo spectral_with_grad(const Matrix& w) {
  const Matrix g = linalg::matmul(linalg::transpose(w), w);
  const linalg::SymEig eig = linalg::sym_eig(g);
  SpectralInfo out;
  out.norm = std::sqrt(std::max(0.0, eig.values.back()));
  out.grad = Matrix(w.rows, w.cols);
  if (out.norm < 1e-12) return out;
  std::vector<double> v1(w.cols);
  for (std::size_t i = 0; i < w.cols; ++i) v1[i] = eig.vectors(i, w.cols - 1);
  std::vector<double> u1 = linalg::matvec(w, v1);
  double un = 0.0;
  for (double x : u1) un += x * x;
  un = std::sqrt(un);
  if (un < 1e-12) return out;
  for (std::size_t i = 0; i < w.rows; ++i) {
    for (std::size_t j = 0; j < w.cols; ++j) out.grad(i, j) = u1[i] / un * v1[j];
  }
  return out;
}

struct DetQuarterInfo {
  double value = 1.0;  // det(W^T W)^(1/4)
  Matrix grad;         // (1/2) value * W (W^T W)^(-1), singular values clamped
};

DetQuarterInfo det_quarter_with_grad(const Matrix& w) {
  const linalg::SvdResult s = linalg::svd(w);
  DetQuarterInfo out;
  double log_det = 0.0;
  for (double sv : s.singular_values) log_det += std::log(std::max(sv, 1e-8));
  out.value = std::exp(0.5 * log_det);
  // W (W^T W)^(-1) = U diag(1/s) V^T with the same clamping
  out.grad = Matrix(w.rows, w.cols);
  for (std::size_t k = 0; k < s.singular_values.size(); ++k) {
    const double inv = 1.0 / std::max(s.singular_values[k], 1e-8);
    for (std::size_t i = 0; i < w.rows; ++i) {
      const double uk = s.u(i, k) * inv;
      for (std::size_t j = 0; j < w.cols; ++j) {
        out.grad(i, j) += 0.5 * out.value * uk * s.v(j, k);
      }
    }
  }
  return out;
}

double inf_norm(const std::vector<double>& b, std::size_t* arg = nullptr) {
  double m = 0.0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (std::abs(b[i]) > m) {
      m = std::abs(b[i]);
      k = i;
    }
  }
  if (arg) *arg = k;
  return m;
}

}  // namespace

void TrainConfig::validate() const { TrainConfigCheck(*this); }

SyntheticData build_synthetic_task(std::uint64_t data_seed, std::size_t samples) {
  SyntheticData d;
  const auto fill = [&](Dataset& set, const char* tag) {
    Rng rng(data_seed, fnv1a64("train/data") ^ fnv1a64(tag));
    set.x.resize(samples);
    set.targets.resize(samples);
    for (std::size_t i = 0; i < samples; ++i) {
      set.x[i] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      double q = 0.0;
      for (double v : set.x[i]) {
        const double t = 2.0 * v - 1.0;
        q += t * t;
      }
      set.targets[i] = std::exp(-q);
    }
  };
  fill(d.train, "train");
  fill(d.test, "test");
  return d;
}

ClassifierData build_classifier_task(std::uint64_t data_seed, std::size_t samples,
                                     std::size_t dim, std::size_t classes,
                                     double noise) {
  ClassifierData d;
  d.dim = dim;
  d.classes = classes;
  Rng proto_rng(data_seed, fnv1a64("train/classifier/protos"));
  std::vector<std::vector<double>> protos(classes);
  for (auto& p : protos) {
    p.resize(dim);
    for (double& v : p) v = proto_rng.uniform(-kClassifierRadius, kClassifierRadius);
  }
  const auto fill = [&](Dataset& set, const char* tag) {
    Rng rng(data_seed, fnv1a64("train/classifier/data") ^ fnv1a64(tag));
    set.x.resize(samples);
    set.labels.resize(samples);
    for (std::size_t i = 0; i < samples; ++i) {
      const std::size_t cls = rng.next_u64() % classes;
      set.labels[i] = cls;
      set.x[i].resize(dim);
      for (std::size_t k = 0; k < dim; ++k) {
        set.x[i][k] =
            std::clamp(protos[cls][k] + noise * rng.normal(), -kClassifierRadius,
                       kClassifierRadius);
      }
    }
  };
  fill(d.train, "train");
  fill(d.test, "test");
  return d;
}

SyntheticReg synthetic_reg_with_grad(const Matrix& w1, const std::vector<double>& b1,
                                     const Matrix& w2, double w3,
                                     double input_radius) {
  SyntheticReg out;
  const SpectralInfo sp = spectral_with_grad(w1);
  const double s1 = sp.norm * input_radius + inf_norm(b1);
  const std::size_t d1 = w1.rows;

  const double ch = std::cosh(s1);
  const double sup = std::pow(ch, 2.0 * static_cast<double>(d1));
  const double dsup_ds1 = 2.0 * static_cast<double>(d1) *
                          std::pow(ch, 2.0 * static_cast<double>(d1) - 1.0) *
                          std::sinh(s1);

  const DetQuarterInfo q1 = det_quarter_with_grad(w1);
  const DetQuarterInfo q2 = det_quarter_with_grad(w2);
  const double f1 = 1.0 / q1.value;
  const double f2 = 1.0 / q2.value;
  const double aw3 = std::abs(w3);

  out.value = aw3 * sup * f1 * f2;
  out.d_w3 = (w3 >= 0.0 ? 1.0 : -1.0) * sup * f1 * f2;

  out.d_w1 = Matrix(w1.rows, w1.cols);
  for (std::size_t i = 0; i < w1.data.size(); ++i) {
    const double via_sup = aw3 * f1 * f2 * dsup_ds1 * input_radius * sp.grad.data[i];
    // d(1/q)/dW = -(1/q^2) dq/dW
    const double via_det = -aw3 * sup * f2 / (q1.value * q1.value) * q1.grad.data[i];
    out.d_w1.data[i] = via_sup + via_det;
  }
  out.d_w2 = Matrix(w2.rows, w2.cols);
  for (std::size_t i = 0; i < w2.data.size(); ++i) {
    out.d_w2.data[i] = -aw3 * sup * f1 / (q2.value * q2.value) * q2.grad.data[i];
  }
  return out;
}

namespace {

// one decomposition of W^T W serves the spectral norm, its gradient, and the
// det-quarter factor with its gradient; eigenvalues are clamped at 1e-16,
// which matches the 1e-8 clamp on singular values
struct WeightFactors {
  SpectralInfo spectral;
  DetQuarterInfo quarter;
};

WeightFactors weight_factors(const Matrix& w) {
  const Matrix gram = linalg::matmul(linalg::transpose(w), w);
  const linalg::SymEig eig = linalg::sym_eig(gram);
  const std::size_t n = w.cols;

  WeightFactors out;
  out.spectral.norm = std::sqrt(std::max(0.0, eig.values.back()));
  out.spectral.grad = Matrix(w.rows, w.cols);
  if (out.spectral.norm > 1e-12) {
    std::vector<double> v1(n);
    for (std::size_t i = 0; i < n; ++i) v1[i] = eig.vectors(i, n - 1);
    std::vector<double> u1 = linalg::matvec(w, v1);
    double un = 0.0;
    for (double x : u1) un += x * x;
    un = std::sqrt(un);
    if (un > 1e-12) {
      for (std::size_t i = 0; i < w.rows; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          out.spectral.grad(i, j) = u1[i] / un * v1[j];
        }
      }
    }
  }

  double log_det = 0.0;
  for (double lam : eig.values) log_det += std::log(std::max(lam, 1e-16));
  out.quarter.value = std::exp(0.25 * log_det);
  // W (W^T W)^(-1) = W Q diag(1/lam) Q^T with the same clamp
  Matrix qscaled(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      qscaled(i, k) = eig.vectors(i, k) / std::max(eig.values[k], 1e-16);
    }
  }
  const Matrix inv = linalg::matmul(qscaled, linalg::transpose(eig.vectors));
  out.quarter.grad = linalg::matmul(w, inv);
  for (double& x : out.quarter.grad.data) x *= 0.5 * out.quarter.value;
  return out;
}

}  // namespace

DenseRegs dense_regs_with_grad(const Matrix& w1, const std::vector<double>& b1,
                               const Matrix& w2, const std::vector<double>& b2,
                               double input_radius, double smu_alpha, double smu_mu) {
  using activation::ActivationSpec;
  const ActivationSpec act = ActivationSpec::smooth_leaky(smu_alpha, smu_mu);

  const WeightFactors f1 = weight_factors(w1);
  const WeightFactors f2 = weight_factors(w2);
  const SpectralInfo& sp1 = f1.spectral;
  const SpectralInfo& sp2 = f2.spectral;
  std::size_t a1 = 0, a2 = 0;
  const double binf1 = inf_norm(b1, &a1);
  const double binf2 = inf_norm(b2, &a2);
  const double s1 = sp1.norm * input_radius + binf1;
  const double s2 = sp2.norm * s1 + binf2;

  // sup over (X_l)_1 of the inverse slope sits at the left endpoint -s_l
  const auto g = [&](double s) { return 1.0 / act.derivative(-s); };
  const auto dg_ds = [&](double s) {
    const double k = 1.0 - smu_alpha;
    const double base = k * k * s * s + smu_mu * smu_mu;
    const double second = 0.5 * k * k * smu_mu * smu_mu / std::pow(base, 1.5);
    const double first = act.derivative(-s);
    return second / (first * first);
  };

  DenseRegs out;
  out.r1 = g(s1) + g(s2);
  const DetQuarterInfo& q1 = f1.quarter;
  const DetQuarterInfo& q2 = f2.quarter;
  out.r2 = 1.0 / (1.0 + q1.value) + 1.0 / (1.0 + q2.value);
  out.r3 = sp1.norm + sp2.norm;

  const double g1p = dg_ds(s1);
  const double g2p = dg_ds(s2);

  // s1 feeds both g(s1) and g(s2) through s2 = |W2| s1 + |b2|_inf
  const double ds1_coeff = g1p + g2p * sp2.norm;

  out.d_w1 = Matrix(w1.rows, w1.cols);
  for (std::size_t i = 0; i < w1.data.size(); ++i) {
    double v = ds1_coeff * input_radius * sp1.grad.data[i];        // r1 path
    v += -1.0 / std::pow(1.0 + q1.value, 2.0) * q1.grad.data[i];   // r2 path
    v += sp1.grad.data[i];                                         // r3 path
    out.d_w1.data[i] = v;
  }
  out.d_w2 = Matrix(w2.rows, w2.cols);
  for (std::size_t i = 0; i < w2.data.size(); ++i) {
    double v = g2p * s1 * sp2.grad.data[i];
    v += -1.0 / std::pow(1.0 + q2.value, 2.0) * q2.grad.data[i];
    v += sp2.grad.data[i];
    out.d_w2.data[i] = v;
  }
  out.d_b1.assign(b1.size(), 0.0);
  if (binf1 > 0.0) {
    out.d_b1[a1] = ds1_coeff * (b1[a1] >= 0.0 ? 1.0 : -1.0);
  }
  out.d_b2.assign(b2.size(), 0.0);
  if (binf2 > 0.0) {
    out.d_b2[a2] = g2p * (b2[a2] >= 0.0 ? 1.0 : -1.0);
  }
  return out;
}

SupCorner tanh_sup_corner(double lo, double hi) {
  SupCorner out;
  // 1/(1 - tanh^2 x) = cosh^2 x peaks at the endpoint of larger magnitude;
  // ties resolve to the lower endpoint
  const bool lower_wins = std::abs(lo) >= std::abs(hi);
  const double x = lower_wins ? lo : hi;
  const double c = std::cosh(x);
  out.value = c * c;
  const double d = std::sinh(2.0 * x);  // d/dx cosh^2 x
  if (lower_wins) {
    out.d_lower = d;
  } else {
    out.d_upper = d;
  }
  return out;
}

// ----------------------------------------------------------------------------
// optimizers

namespace {

struct Optimizer {
  OptimizerConfig cfg;
  std::vector<double> m, v;
  std::size_t t = 0;

  explicit Optimizer(OptimizerConfig c, std::size_t n) : cfg(c) {
    if (cfg.kind == OptimizerConfig::Kind::adam) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
  }

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    if (cfg.kind == OptimizerConfig::Kind::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        params[i] -= cfg.lr * grad[i];
      }
      return;
    }
    ++t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
};

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t data_seed,
                                          std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(data_seed, fnv1a64("train/shuffle"), epoch);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.next_u64() % i;
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

// ----------------------------------------------------------------------------
// synthetic experiment: f(x) = w3 exp(-|W2 tanh(W1 x + b1) + b2|^2),
// b1 = b2 = 0 held fixed; learnable (W1, W2, w3)

struct SyntheticModel {
  // packed params: W1 (3x3), W2 (6x3), w3
  static constexpr std::size_t kW1 = 0, kW2 = 9, kW3 = 27, kTotal = 28;
  std::vector<double> params;

  Matrix w1() const { return Matrix(3, 3, {params.begin(), params.begin() + 9}); }
  Matrix w2() const {
    return Matrix(6, 3, {params.begin() + 9, params.begin() + 27});
  }
  double w3() const { return params[kW3]; }

  static SyntheticModel init(std::uint64_t init_seed) {
    Rng rng(init_seed, fnv1a64("train/init/synthetic"));
    SyntheticModel m;
    m.params.resize(kTotal);
    const Matrix w1 = orthogonal_init(rng, 3, 3);
    const Matrix w2 = orthogonal_init(rng, 6, 3);
    std::copy(w1.data.begin(), w1.data.end(), m.params.begin());
    std::copy(w2.data.begin(), w2.data.end(), m.params.begin() + 9);
    m.params[kW3] = 1.0;  // orthogonal init of a 1x1 block
    return m;
  }
};

// loss and gradient of the mean squared error over the given batch
double synthetic_data_loss(const std::vector<double>& params, const Dataset& data,
                           const std::vector<std::size_t>& batch,
                           std::vector<double>* grad) {
  const std::size_t nb = batch.size();
  const std::size_t chunk = 64;
  const std::size_t nchunks = (nb + chunk - 1) / chunk;
  std::vector<double> losses(nchunks, 0.0);
  std::vector<std::vector<double>> grads;
  if (grad) grads.assign(nchunks, std::vector<double>(SyntheticModel::kTotal, 0.0));

  const double* w1 = &params[SyntheticModel::kW1];
  const double* w2 = &params[SyntheticModel::kW2];
  const double w3 = params[SyntheticModel::kW3];

  parallel_for(nchunks, [&](std::size_t c) {
    double loss = 0.0;
    double* gw = grad ? grads[c].data() : nullptr;
    const std::size_t begin = c * chunk;
    const std::size_t end = std::min(begin + chunk, nb);
    for (std::size_t bi = begin; bi < end; ++bi) {
      const std::vector<double>& x = data.x[batch[bi]];
      const double target = data.targets[batch[bi]];
      double u[3], h[3], z[6];
      for (int i = 0; i < 3; ++i) {
        u[i] = w1[i * 3] * x[0] + w1[i * 3 + 1] * x[1] + w1[i * 3 + 2] * x[2];
        h[i] = std::tanh(u[i]);
      }
      double zsq = 0.0;
      for (int i = 0; i < 6; ++i) {
        z[i] = w2[i * 3] * h[0] + w2[i * 3 + 1] * h[1] + w2[i * 3 + 2] * h[2];
        zsq += z[i] * z[i];
      }
      const double gexp = std::exp(-zsq);
      const double f = w3 * gexp;
      const double err = f - target;
      loss += err * err;
      if (!gw) continue;
      const double df = 2.0 * err;
      gw[SyntheticModel::kW3] += df * gexp;
      const double dg = df * w3;
      double dz[6], dh[3] = {0, 0, 0};
      for (int i = 0; i < 6; ++i) {
        dz[i] = dg * gexp * (-2.0 * z[i]);
        for (int j = 0; j < 3; ++j) {
          gw[SyntheticModel::kW2 + i * 3 + j] += dz[i] * h[j];
          dh[j] += w2[i * 3 + j] * dz[i];
        }
      }
      for (int i = 0; i < 3; ++i) {
        const double du = dh[i] * (1.0 - h[i] * h[i]);
        for (int j = 0; j < 3; ++j) {
          gw[SyntheticModel::kW1 + i * 3 + j] += du * x[j];
        }
      }
    }
    losses[c] = loss;
  });

  double total = 0.0;
  for (double l : losses) total += l;
  if (grad) {
    grad->assign(SyntheticModel::kTotal, 0.0);
    for (const auto& g : grads) {
      for (std::size_t i = 0; i < g.size(); ++i) (*grad)[i] += g[i];
    }
    for (double& g : *grad) g /= static_cast<double>(nb);
  }
  return total / static_cast<double>(nb);
}

double synthetic_full_loss(const std::vector<double>& params, const Dataset& data,
                           const std::vector<std::size_t>& batch, double lambda,
                           std::vector<double>* grad) {
  double loss = synthetic_data_loss(params, data, batch, grad);
  if (lambda == 0.0) return loss;
  SyntheticModel m;
  m.params = params;
  const SyntheticReg reg =
      synthetic_reg_with_grad(m.w1(), {0, 0, 0}, m.w2(), m.w3(), 1.0);
  if (grad) {
    for (std::size_t i = 0; i < 9; ++i) {
      (*grad)[SyntheticModel::kW1 + i] += lambda * reg.d_w1.data[i];
    }
    for (std::size_t i = 0; i < 18; ++i) {
      (*grad)[SyntheticModel::kW2 + i] += lambda * reg.d_w2.data[i];
    }
    (*grad)[SyntheticModel::kW3] += lambda * reg.d_w3;
  }
  return loss + lambda * reg.value;
}

double synthetic_bound_value(const SyntheticModel& m, std::size_t samples) {
  const Matrix w1 = m.w1();
  const Matrix w2 = m.w2();
  const double s1 = linalg::spectral_norm(w1);
  const double vn = std::abs(m.w3()) * std::pow(kPi / 2.0, 6.0 / 4.0);
  const double koop = std::pow(std::cosh(s1), 3.0);
  const DetQuarterInfo q1 = det_quarter_with_grad(w1);
  const DetQuarterInfo q2 = det_quarter_with_grad(w2);
  return vn * koop / (q1.value * q2.value) /
         std::sqrt(static_cast<double>(samples));
}

// ----------------------------------------------------------------------------
// dense classifier: softmax(W4 s(W3 s(W2 s(W1 x + b1) + b2) + b3) + b4)

struct ClassifierShape {
  std::size_t d0 = 64, d1 = 64, d2 = 128, d3 = 128, d4 = 10;
  std::size_t w1o = 0, w2o = 0, w3o = 0, w4o = 0, total = 0;

  ClassifierShape() { recompute(); }
  void recompute() {
    w1o = 0;
    w2o = w1o + d1 * d0;
    w3o = w2o + d2 * d1;
    w4o = w3o + d3 * d2;
    total = w4o + d4 * d3;
  }
};

struct ClassifierModel {
  ClassifierShape shape;
  std::vector<double> params;
  double smu_alpha = 0.1;
  double smu_mu = 0.5;
  double input_radius = kClassifierRadius;

  static ClassifierModel init(std::uint64_t init_seed, const ClassifierShape& sh) {
    ClassifierModel m;
    m.shape = sh;
    m.params.assign(sh.total, 0.0);
    Rng rng(init_seed, fnv1a64("train/init/classifier"));
    const Matrix w1 = orthogonal_init(rng, sh.d1, sh.d0);
    const Matrix w2 = orthogonal_init(rng, sh.d2, sh.d1);
    const Matrix w3 = truncated_normal_init(rng, sh.d3, sh.d2);
    const Matrix w4 = truncated_normal_init(rng, sh.d4, sh.d3);
    std::copy(w1.data.begin(), w1.data.end(), m.params.begin() + sh.w1o);
    std::copy(w2.data.begin(), w2.data.end(), m.params.begin() + sh.w2o);
    std::copy(w3.data.begin(), w3.data.end(), m.params.begin() + sh.w3o);
    std::copy(w4.data.begin(), w4.data.end(), m.params.begin() + sh.w4o);
    return m;
  }

  Matrix w(std::size_t which) const {
    const auto& s = shape;
    switch (which) {
      case 1: return Matrix(s.d1, s.d0, {params.begin() + s.w1o, params.begin() + s.w2o});
      case 2: return Matrix(s.d2, s.d1, {params.begin() + s.w2o, params.begin() + s.w3o});
      case 3: return Matrix(s.d3, s.d2, {params.begin() + s.w3o, params.begin() + s.w4o});
      default:
        return Matrix(s.d4, s.d3, {params.begin() + s.w4o, params.begin() + s.total});
    }
  }
  // biases exist in the model but stay at zero; they are not learnable
  std::vector<double> b(std::size_t which) const {
    const auto& s = shape;
    switch (which) {
      case 1: return std::vector<double>(s.d1, 0.0);
      case 2: return std::vector<double>(s.d2, 0.0);
      case 3: return std::vector<double>(s.d3, 0.0);
      default: return std::vector<double>(s.d4, 0.0);
    }
  }
};

struct ClassifierEval {
  double loss = 0.0;
  double accuracy = 0.0;
};

ClassifierEval classifier_data_loss(const ClassifierModel& model,
                                    const std::vector<double>& params,
                                    const Dataset& data,
                                    const std::vector<std::size_t>& batch,
                                    std::vector<double>* grad) {
  const ClassifierShape& sh = model.shape;
  const activation::ActivationSpec act =
      activation::ActivationSpec::smooth_leaky(model.smu_alpha, model.smu_mu);
  const std::size_t nb = batch.size();
  const std::size_t chunk = 16;
  const std::size_t nchunks = (nb + chunk - 1) / chunk;
  std::vector<double> losses(nchunks, 0.0);
  std::vector<double> hits(nchunks, 0.0);
  std::vector<std::vector<double>> grads;
  if (grad) grads.assign(nchunks, std::vector<double>(sh.total, 0.0));

  const double* P = params.data();

  parallel_for(nchunks, [&](std::size_t c) {
    double loss = 0.0, hit = 0.0;
    double* G = grad ? grads[c].data() : nullptr;
    std::vector<double> z1(sh.d1), a1(sh.d1), z2(sh.d2), a2(sh.d2), z3(sh.d3),
        a3(sh.d3), z4(sh.d4), p(sh.d4);
    std::vector<double> dz1(sh.d1), dz2(sh.d2), dz3(sh.d3), dz4(sh.d4);
    const std::size_t begin = c * chunk;
    const std::size_t end = std::min(begin + chunk, nb);
    for (std::size_t bi = begin; bi < end; ++bi) {
      const std::vector<double>& x = data.x[batch[bi]];
      const std::size_t label = data.labels[batch[bi]];

      const auto dense = [&](const double* w, const double* in, std::size_t din,
                             double* out, std::size_t dout) {
        for (std::size_t i = 0; i < dout; ++i) {
          double s = 0.0;
          const double* row = w + i * din;
          for (std::size_t j = 0; j < din; ++j) s += row[j] * in[j];
          out[i] = s;
        }
      };

      dense(P + sh.w1o, x.data(), sh.d0, z1.data(), sh.d1);
      for (std::size_t i = 0; i < sh.d1; ++i) a1[i] = act.apply(z1[i]);
      dense(P + sh.w2o, a1.data(), sh.d1, z2.data(), sh.d2);
      for (std::size_t i = 0; i < sh.d2; ++i) a2[i] = act.apply(z2[i]);
      dense(P + sh.w3o, a2.data(), sh.d2, z3.data(), sh.d3);
      for (std::size_t i = 0; i < sh.d3; ++i) a3[i] = act.apply(z3[i]);
      dense(P + sh.w4o, a3.data(), sh.d3, z4.data(), sh.d4);

      double zmax = z4[0];
      std::size_t argmax = 0;
      for (std::size_t i = 0; i < sh.d4; ++i) {
        if (z4[i] > zmax) {
          zmax = z4[i];
          argmax = i;
        }
      }
      double zsum = 0.0;
      for (std::size_t i = 0; i < sh.d4; ++i) {
        p[i] = std::exp(z4[i] - zmax);
        zsum += p[i];
      }
      for (std::size_t i = 0; i < sh.d4; ++i) p[i] /= zsum;
      loss += -std::log(std::max(p[label], 1e-300));
      if (argmax == label) hit += 1.0;
      if (!G) continue;

      for (std::size_t i = 0; i < sh.d4; ++i) {
        dz4[i] = p[i] - (i == label ? 1.0 : 0.0);
      }
      const auto backward = [&](const double* w, std::size_t wo, const double* in,
                                std::size_t din, const double* dout,
                                std::size_t doutn, double* din_grad) {
        for (std::size_t i = 0; i < doutn; ++i) {
          const double d = dout[i];
          double* gw = G + wo + i * din;
          for (std::size_t j = 0; j < din; ++j) gw[j] += d * in[j];
        }
        if (!din_grad) return;
        for (std::size_t j = 0; j < din; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < doutn; ++i) s += w[i * din + j] * dout[i];
          din_grad[j] = s;
        }
      };

      std::vector<double> da3(sh.d3), da2(sh.d2), da1(sh.d1);
      backward(P + sh.w4o, sh.w4o, a3.data(), sh.d3, dz4.data(), sh.d4, da3.data());
      for (std::size_t i = 0; i < sh.d3; ++i) dz3[i] = da3[i] * act.derivative(z3[i]);
      backward(P + sh.w3o, sh.w3o, a2.data(), sh.d2, dz3.data(), sh.d3, da2.data());
      for (std::size_t i = 0; i < sh.d2; ++i) dz2[i] = da2[i] * act.derivative(z2[i]);
      backward(P + sh.w2o, sh.w2o, a1.data(), sh.d1, dz2.data(), sh.d2, da1.data());
      for (std::size_t i = 0; i < sh.d1; ++i) dz1[i] = da1[i] * act.derivative(z1[i]);
      backward(P + sh.w1o, sh.w1o, x.data(), sh.d0, dz1.data(), sh.d1, nullptr);
    }
    losses[c] = loss;
    hits[c] = hit;
  });

  double total = 0.0, hit_total = 0.0;
  for (std::size_t c = 0; c < nchunks; ++c) {
    total += losses[c];
    hit_total += hits[c];
  }
  if (grad) {
    grad->assign(sh.total, 0.0);
    for (const auto& g : grads) {
      for (std::size_t i = 0; i < g.size(); ++i) (*grad)[i] += g[i];
    }
    for (double& g : *grad) g /= static_cast<double>(nb);
  }
  ClassifierEval ev;
  ev.loss = total / static_cast<double>(nb);
  ev.accuracy = hit_total / static_cast<double>(nb);
  return ev;
}

double classifier_full_loss(const ClassifierModel& model,
                            const std::vector<double>& params, const Dataset& data,
                            const std::vector<std::size_t>& batch, double lambda,
                            std::vector<double>* grad, double* reg_value = nullptr) {
  ClassifierModel m = model;
  m.params = params;
  const ClassifierEval ev = classifier_data_loss(m, params, data, batch, grad);
  if (lambda == 0.0 && !reg_value) return ev.loss;
  const DenseRegs regs = dense_regs_with_grad(m.w(1), m.b(1), m.w(2), m.b(2),
                                              m.input_radius, m.smu_alpha, m.smu_mu);
  if (reg_value) *reg_value = regs.sum();
  if (lambda == 0.0) return ev.loss;
  if (grad) {
    const ClassifierShape& sh = m.shape;
    for (std::size_t i = 0; i < regs.d_w1.data.size(); ++i) {
      (*grad)[sh.w1o + i] += lambda * regs.d_w1.data[i];
    }
    for (std::size_t i = 0; i < regs.d_w2.data.size(); ++i) {
      (*grad)[sh.w2o + i] += lambda * regs.d_w2.data[i];
    }
    // biases are fixed at zero, so no bias terms enter the gradient
  }
  return ev.loss + lambda * regs.sum();
}

double classifier_bound_value(const ClassifierModel& m, std::size_t samples) {
  // log-space assembly: |v| <= sqrt(vol(X2~)), one Koopman factor for the
  // first activation, det factors for W1 and W2
  const Matrix w1 = m.w(1);
  const Matrix w2 = m.w(2);
  const activation::ActivationSpec act =
      activation::ActivationSpec::smooth_leaky(m.smu_alpha, m.smu_mu);
  const double s1 = linalg::spectral_norm(w1) * m.input_radius + inf_norm(m.b(1));
  const double s2 = linalg::spectral_norm(w2) * s1 + inf_norm(m.b(2));
  const double sup1 = 1.0 / act.derivative(-s1);
  double logb = 0.0;
  logb += 0.5 * static_cast<double>(m.shape.d2) * std::log(2.0 * s2);  // ||v||
  logb += 0.5 * static_cast<double>(m.shape.d1) * std::log(sup1);      // ||A_1||
  for (const Matrix* w : {&w1, &w2}) {
    const Matrix gram = linalg::matmul(linalg::transpose(*w), *w);
    for (double lam : linalg::sym_eigenvalues(gram)) {
      logb -= 0.25 * std::log(std::max(lam, 1e-16));
    }
  }
  logb -= 0.5 * std::log(static_cast<double>(samples));
  return logb > 690.0 ? 1e300 : std::exp(logb);
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

TrainLog run_synthetic(const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.experiment != Experiment::synthetic_regression) {
    throw std::invalid_argument("run_synthetic: wrong experiment kind");
  }
  const SyntheticData data = build_synthetic_task(cfg.data_seed, cfg.sample_size);
  SyntheticModel model = SyntheticModel::init(cfg.init_seed);
  Optimizer opt(cfg.optimizer, model.params.size());

  const auto train_idx = all_indices(data.train.x.size());
  const auto test_idx = all_indices(data.test.x.size());

  TrainLog log;
  const auto record = [&](std::size_t epoch) {
    EpochRow row;
    row.epoch = epoch;
    row.train_loss = synthetic_data_loss(model.params, data.train, train_idx, nullptr);
    row.test_loss = synthetic_data_loss(model.params, data.test, test_idx, nullptr);
    row.gap = row.test_loss - row.train_loss;
    SyntheticModel m;
    m.params = model.params;
    row.regularizer =
        synthetic_reg_with_grad(m.w1(), {0, 0, 0}, m.w2(), m.w3(), 1.0).value;
    row.bound = synthetic_bound_value(m, data.train.x.size());
    log.rows.push_back(row);
    return std::isfinite(row.train_loss) && std::isfinite(row.test_loss);
  };

  if (!record(0)) {
    log.diverged = true;
    return log;
  }
  std::vector<double> grad;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(train_idx.size(), cfg.data_seed, epoch);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, order.size());
      const std::vector<std::size_t> batch(order.begin() + start,
                                           order.begin() + stop);
      synthetic_full_loss(model.params, data.train, batch, cfg.lambda, &grad);
      opt.step(model.params, grad);
    }
    if (!record(epoch)) {
      log.diverged = true;
      break;
    }
  }
  return log;
}

DenseClassifierResult run_dense_classifier(const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.experiment != Experiment::dense_classifier) {
    throw std::invalid_argument("run_dense_classifier: wrong experiment kind");
  }
  const ClassifierShape shape;
  const ClassifierData data =
      build_classifier_task(cfg.data_seed, cfg.sample_size, shape.d0, shape.d4);

  const auto run_arm = [&](double lambda) {
    ClassifierModel model = ClassifierModel::init(cfg.init_seed, shape);
    Optimizer opt(cfg.optimizer, model.params.size());
    const auto train_idx = all_indices(data.train.x.size());
    const auto test_idx = all_indices(data.test.x.size());

    TrainLog log;
    const auto record = [&](std::size_t epoch) {
      EpochRow row;
      row.epoch = epoch;
      const ClassifierEval tr =
          classifier_data_loss(model, model.params, data.train, train_idx, nullptr);
      const ClassifierEval te =
          classifier_data_loss(model, model.params, data.test, test_idx, nullptr);
      row.train_loss = tr.loss;
      row.test_loss = te.loss;
      row.gap = te.loss - tr.loss;
      row.test_accuracy = te.accuracy;
      const DenseRegs regs = dense_regs_with_grad(
          model.w(1), model.b(1), model.w(2), model.b(2), model.input_radius,
          model.smu_alpha, model.smu_mu);
      row.regularizer = regs.sum();
      row.reg_r1 = regs.r1;
      row.reg_r2 = regs.r2;
      row.reg_r3 = regs.r3;
      row.bound = classifier_bound_value(model, data.train.x.size());
      log.rows.push_back(row);
      return std::isfinite(tr.loss) && std::isfinite(te.loss);
    };

    if (!record(0)) {
      log.diverged = true;
      return log;
    }
    std::vector<double> grad;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      const auto order = shuffled_indices(train_idx.size(), cfg.data_seed, epoch);
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t stop = std::min(start + cfg.batch_size, order.size());
        const std::vector<std::size_t> batch(order.begin() + start,
                                             order.begin() + stop);
        classifier_full_loss(model, model.params, data.train, batch, lambda, &grad);
        opt.step(model.params, grad);
      }
      if (!record(epoch)) {
        log.diverged = true;
        break;
      }
    }
    return log;
  };

  DenseClassifierResult result;
  result.regularized = run_arm(cfg.lambda);
  result.control = run_arm(0.0);
  return result;
}

void emit_plot_data(const TrainLog& log, const std::string& path) {
  if (log.rows.empty()) throw std::invalid_argument("emit_plot_data: empty log");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit_plot_data: cannot write '" + path + "'");
  out << "epoch,train_loss,test_loss,gap,regularizer,bound\n";
  char buf[512];
  for (const EpochRow& r : log.rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                  r.train_loss, r.test_loss, r.gap, r.regularizer, r.bound);
    out << buf;
  }
}

namespace {

std::vector<double> ranks_with_ties(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("spearman: need two equal-length series");
  }
  const std::vector<double> ra = ranks_with_ties(a);
  const std::vector<double> rb = ranks_with_ties(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

double grad_check(const std::function<double(const std::vector<double>&)>& loss_at,
                  const std::vector<double>& params,
                  const std::vector<double>& analytic_grad, std::size_t probes,
                  double h, std::uint64_t seed) {
  if (params.size() != analytic_grad.size()) {
    throw std::invalid_argument("grad_check: gradient length mismatch");
  }
  Rng rng(seed, fnv1a64("train/grad_check"));
  double worst = 0.0;
  std::vector<double> perturbed = params;
  for (std::size_t p = 0; p < probes; ++p) {
    const std::size_t idx = rng.next_u64() % params.size();
    perturbed[idx] = params[idx] + h;
    const double up = loss_at(perturbed);
    perturbed[idx] = params[idx] - h;
    const double down = loss_at(perturbed);
    perturbed[idx] = params[idx];
    const double fd = (up - down) / (2.0 * h);
    const double g = analytic_grad[idx];
    const double rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-6});
    worst = std::max(worst, rel);
  }
  return worst;
}

double grad_check_synthetic(const TrainConfig& cfg, std::size_t steps, double h,
                            double init_jitter) {
  const SyntheticData data = build_synthetic_task(cfg.data_seed, cfg.sample_size);
  SyntheticModel model = SyntheticModel::init(cfg.init_seed);
  if (init_jitter > 0.0) {
    Rng rng(cfg.init_seed, fnv1a64("train/jitter"));
    for (double& p : model.params) p += init_jitter * rng.normal();
  }
  Optimizer opt(cfg.optimizer, model.params.size());
  std::vector<double> grad;
  const auto order = shuffled_indices(data.train.x.size(), cfg.data_seed, 1);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t start = (s * cfg.batch_size) % order.size();
    const std::size_t stop = std::min(start + cfg.batch_size, order.size());
    const std::vector<std::size_t> batch(order.begin() + start, order.begin() + stop);
    synthetic_full_loss(model.params, data.train, batch, cfg.lambda, &grad);
    opt.step(model.params, grad);
  }
  const std::size_t nb = std::min<std::size_t>(64, data.train.x.size());
  std::vector<std::size_t> batch(order.begin(), order.begin() + nb);
  synthetic_full_loss(model.params, data.train, batch, cfg.lambda, &grad);
  const auto loss_at = [&](const std::vector<double>& p) {
    return synthetic_full_loss(p, data.train, batch, cfg.lambda, nullptr);
  };
  return grad_check(loss_at, model.params, grad, 40, h, cfg.init_seed + 17);
}

double grad_check_classifier(const TrainConfig& cfg, std::size_t steps, double h,
                             double init_jitter) {
  const ClassifierShape shape;
  const ClassifierData data =
      build_classifier_task(cfg.data_seed, cfg.sample_size, shape.d0, shape.d4);
  ClassifierModel model = ClassifierModel::init(cfg.init_seed, shape);
  if (init_jitter > 0.0) {
    Rng rng(cfg.init_seed, fnv1a64("train/jitter"));
    for (double& p : model.params) p += init_jitter * rng.normal();
  }
  Optimizer opt(cfg.optimizer, model.params.size());
  std::vector<double> grad;
  const auto order = shuffled_indices(data.train.x.size(), cfg.data_seed, 1);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t start = (s * cfg.batch_size) % order.size();
    const std::size_t stop = std::min(start + cfg.batch_size, order.size());
    const std::vector<std::size_t> batch(order.begin() + start, order.begin() + stop);
    classifier_full_loss(model, model.params, data.train, batch, cfg.lambda, &grad);
    opt.step(model.params, grad);
  }
  const std::size_t nb = std::min<std::size_t>(32, data.train.x.size());
  std::vector<std::size_t> batch(order.begin(), order.begin() + nb);
  classifier_full_loss(model, model.params, data.train, batch, cfg.lambda, &grad);
  const auto loss_at = [&](const std::vector<double>& p) {
    return classifier_full_loss(model, p, data.train, batch, cfg.lambda, nullptr);
  };
  return grad_check(loss_at, model.params, grad, 40, h, cfg.init_seed + 17);
}

}  // namespace kb::train
