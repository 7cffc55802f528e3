#include "kb/activation.hpp"

#include <cmath>
#include <stdexcept>

namespace kb::activation {

namespace {

double safe_inv_slope(const ActivationSpec& act, double x) {
  const double d = act.derivative(x);
  if (!(d > 0.0)) {
    throw std::domain_error("unsupported activation: zero slope inside the domain");
  }
  return 1.0 / d;
}

}  // namespace

ActivationSpec ActivationSpec::identity() { return {}; }

ActivationSpec ActivationSpec::tanh_fn() {
  ActivationSpec s;
  s.kind = Kind::tanh_fn;
  return s;
}

ActivationSpec ActivationSpec::sigmoid() {
  ActivationSpec s;
  s.kind = Kind::sigmoid;
  return s;
}

ActivationSpec ActivationSpec::leaky(double slope) {
  if (slope <= 0.0) throw std::invalid_argument("leaky_relu: slope must be positive");
  ActivationSpec s;
  s.kind = Kind::leaky_relu;
  s.slope = slope;
  return s;
}

ActivationSpec ActivationSpec::smooth_leaky(double alpha, double mu) {
  if (alpha <= 0.0 || alpha >= 1.0 || mu <= 0.0) {
    throw std::invalid_argument("smooth_leaky_relu: need 0 < alpha < 1 and mu > 0");
  }
  ActivationSpec s;
  s.kind = Kind::smooth_leaky_relu;
  s.alpha = alpha;
  s.mu = mu;
  return s;
}

ActivationSpec ActivationSpec::relu() {
  ActivationSpec s;
  s.kind = Kind::relu;
  return s;
}

std::string ActivationSpec::name() const {
  switch (kind) {
    case Kind::identity: return "identity";
    case Kind::tanh_fn: return "tanh";
    case Kind::sigmoid: return "sigmoid";
    case Kind::leaky_relu: return "leaky_relu";
    case Kind::smooth_leaky_relu: return "smooth_leaky_relu";
    case Kind::relu: return "relu";
  }
  return "?";
}

double ActivationSpec::apply(double x) const {
  switch (kind) {
    case Kind::identity: return x;
    case Kind::tanh_fn: return std::tanh(x);
    case Kind::sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Kind::leaky_relu: return x > 0.0 ? x : slope * x;
    case Kind::smooth_leaky_relu: {
      const double k = 1.0 - alpha;
      return 0.5 * ((1.0 + alpha) * x + std::sqrt(k * k * x * x + mu * mu));
    }
    case Kind::relu: return x > 0.0 ? x : 0.0;
  }
  return x;
}

void ActivationSpec::apply(std::vector<double>& x) const {
  for (double& v : x) v = apply(v);
}

double ActivationSpec::derivative(double x) const {
  switch (kind) {
    case Kind::identity: return 1.0;
    case Kind::tanh_fn: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Kind::sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
    case Kind::leaky_relu: return x > 0.0 ? 1.0 : slope;
    case Kind::smooth_leaky_relu: {
      const double k = 1.0 - alpha;
      return 0.5 * ((1.0 + alpha) + k * k * x / std::sqrt(k * k * x * x + mu * mu));
    }
    case Kind::relu: return x > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

bool ActivationSpec::monotone_invertible() const { return kind != Kind::relu; }

double ActivationSpec::inverse(double y) const {
  switch (kind) {
    case Kind::identity: return y;
    case Kind::tanh_fn: return std::atanh(y);
    case Kind::sigmoid: return std::log(y / (1.0 - y));
    case Kind::leaky_relu: return y > 0.0 ? y : y / slope;
    case Kind::smooth_leaky_relu: {
      // expand a bracket, then bisect; sigma is strictly increasing with
      // slope in (alpha, 1)
      double lo = -1.0, hi = 1.0;
      while (apply(lo) > y) lo *= 2.0;
      while (apply(hi) < y) hi *= 2.0;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (hi - lo < 1e-12 * (1.0 + std::abs(mid))) return mid;
        if (apply(mid) < y) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      return 0.5 * (lo + hi);
    }
    case Kind::relu:
      throw std::domain_error("relu is not invertible");
  }
  return y;
}

double ActivationSpec::inverse_derivative(double y) const {
  switch (kind) {
    case Kind::identity: return 1.0;
    case Kind::tanh_fn: return 1.0 / (1.0 - y * y);
    case Kind::sigmoid: return 1.0 / (y * (1.0 - y));
    case Kind::leaky_relu: return y > 0.0 ? 1.0 : 1.0 / slope;
    case Kind::smooth_leaky_relu: return 1.0 / derivative(inverse(y));
    case Kind::relu:
      throw std::domain_error("relu is not invertible");
  }
  return 1.0;
}

void ActivationSpec::image_interval(double lo, double hi, double& out_lo,
                                    double& out_hi) const {
  out_lo = apply(lo);
  out_hi = apply(hi);
}

linalg::DomainBox ActivationSpec::image_box(const linalg::DomainBox& box) const {
  std::vector<double> lo(box.dim()), hi(box.dim());
  for (std::size_t i = 0; i < box.dim(); ++i) {
    image_interval(box.lower[i], box.upper[i], lo[i], hi[i]);
  }
  return linalg::DomainBox(std::move(lo), std::move(hi));
}

KoopmanNormBound koopman_norm_tanh(const linalg::DomainBox& domain_tilde) {
  KoopmanNormBound b;
  b.domain_used = domain_tilde;
  b.per_dimension_sup.resize(domain_tilde.dim());
  double prod = 1.0;
  for (std::size_t i = 0; i < domain_tilde.dim(); ++i) {
    // 1/(1-x^2) on tanh([a,b]) peaks at the endpoint of larger magnitude,
    // where it equals cosh^2
    const double t = std::max(std::abs(domain_tilde.lower[i]),
                              std::abs(domain_tilde.upper[i]));
    const double c = std::cosh(t);
    b.per_dimension_sup[i] = c * c;
    prod *= c * c;
  }
  b.value = std::sqrt(prod);
  return b;
}

KoopmanNormBound koopman_norm_sigmoid(const linalg::DomainBox& domain_tilde) {
  KoopmanNormBound b;
  b.domain_used = domain_tilde;
  b.per_dimension_sup.resize(domain_tilde.dim());
  const ActivationSpec sig = ActivationSpec::sigmoid();
  double prod = 1.0;
  for (std::size_t i = 0; i < domain_tilde.dim(); ++i) {
    // x - x^2 is concave with its max at 1/2; the sup of 1/(x - x^2) over
    // the image interval sits at the endpoint farther from 1/2
    const double a = sig.apply(domain_tilde.lower[i]);
    const double c = sig.apply(domain_tilde.upper[i]);
    const double x = std::abs(a - 0.5) >= std::abs(c - 0.5) ? a : c;
    const double sup = 1.0 / (x - x * x);
    b.per_dimension_sup[i] = sup;
    prod *= sup;
  }
  b.value = std::sqrt(prod);
  return b;
}

KoopmanNormBound koopman_norm_leaky_relu(double slope, std::size_t dim) {
  if (slope <= 0.0) throw std::invalid_argument("leaky_relu: slope must be positive");
  KoopmanNormBound b;
  b.per_dimension_sup.assign(dim, std::max(1.0, 1.0 / slope));
  double prod = 1.0;
  for (double s : b.per_dimension_sup) prod *= s;
  b.value = std::sqrt(prod);
  return b;
}

KoopmanNormBound koopman_norm_generic(const ActivationSpec& activation,
                                      const linalg::DomainBox& domain_tilde,
                                      std::size_t grid_density) {
  if (!activation.monotone_invertible()) {
    throw std::domain_error("unsupported activation: " + activation.name() +
                            " has no differentiable inverse");
  }
  KoopmanNormBound b;
  b.domain_used = domain_tilde;
  b.per_dimension_sup.resize(domain_tilde.dim());
  double prod = 1.0;
  for (std::size_t i = 0; i < domain_tilde.dim(); ++i) {
    const double a = domain_tilde.lower[i];
    const double c = domain_tilde.upper[i];
    // sup over y in sigma([a,c]) of (sigma^-1)'(y) equals the sup over
    // x in [a,c] of 1/sigma'(x); scan a grid and take the endpoints exactly
    double sup = std::max(safe_inv_slope(activation, a), safe_inv_slope(activation, c));
    if (grid_density > 1 && c > a) {
      const double step = (c - a) / static_cast<double>(grid_density - 1);
      for (std::size_t g = 1; g + 1 < grid_density; ++g) {
        sup = std::max(sup, safe_inv_slope(activation, a + step * static_cast<double>(g)));
      }
    }
    b.per_dimension_sup[i] = sup;
    prod *= sup;
  }
  b.value = std::sqrt(prod);
  return b;
}

double shift_koopman_norm() { return 1.0; }

KoopmanNormBound koopman_norm(const ActivationSpec& activation,
                              const linalg::DomainBox& domain_tilde) {
  switch (activation.kind) {
    case Kind::tanh_fn: return koopman_norm_tanh(domain_tilde);
    case Kind::sigmoid: return koopman_norm_sigmoid(domain_tilde);
    case Kind::leaky_relu:
      return koopman_norm_leaky_relu(activation.slope, domain_tilde.dim());
    case Kind::identity:
    case Kind::smooth_leaky_relu:
      return koopman_norm_generic(activation, domain_tilde);
    case Kind::relu:
      throw std::domain_error("unsupported activation: relu has derivative zero");
  }
  throw std::domain_error("unsupported activation");
}

}  // namespace kb::activation
