#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "kb/linalg.hpp"

namespace kb::activation {

enum class Kind {
  identity,
  tanh_fn,
  sigmoid,
  leaky_relu,        // slope a > 0 on the negative axis
  smooth_leaky_relu, // ((1+alpha) x + sqrt((1-alpha)^2 x^2 + mu^2)) / 2
  relu,              // accepted by the parser, rejected by every norm bound
};

struct ActivationSpec {
  Kind kind = Kind::identity;
  double slope = 1.0;   // leaky_relu
  double alpha = 0.1;   // smooth_leaky_relu
  double mu = 0.5;      // smooth_leaky_relu

  static ActivationSpec identity();
  static ActivationSpec tanh_fn();
  static ActivationSpec sigmoid();
  static ActivationSpec leaky(double slope);
  static ActivationSpec smooth_leaky(double alpha, double mu);
  static ActivationSpec relu();

  std::string name() const;

  double apply(double x) const;
  void apply(std::vector<double>& x) const;
  double derivative(double x) const;
  // scalar inverse; smooth_leaky_relu is inverted by bisection to 1e-12
  double inverse(double y) const;
  // derivative of the inverse at y, i.e. 1 / sigma'(inverse(y))
  double inverse_derivative(double y) const;

  bool monotone_invertible() const;

  // image of [lo, hi] under the elementwise map (monotone increasing)
  void image_interval(double lo, double hi, double& out_lo, double& out_hi) const;
  linalg::DomainBox image_box(const linalg::DomainBox& box) const;
};

struct KoopmanNormBound {
  double value = 1.0;                      // (prod per_dimension_sup)^(1/2)
  std::vector<double> per_dimension_sup;   // sup of the inverse-Jacobian factor
  std::optional<linalg::DomainBox> domain_used;
};

KoopmanNormBound koopman_norm_tanh(const linalg::DomainBox& domain_tilde);
KoopmanNormBound koopman_norm_sigmoid(const linalg::DomainBox& domain_tilde);
// domain-independent; valid on all of R^d
KoopmanNormBound koopman_norm_leaky_relu(double slope, std::size_t dim);
// grid sup of the inverse-Jacobian over the image of domain_tilde, with the
// interval endpoints evaluated exactly (the sup of a coordinatewise monotone
// factor sits on the edge set)
KoopmanNormBound koopman_norm_generic(const ActivationSpec& activation,
                                      const linalg::DomainBox& domain_tilde,
                                      std::size_t grid_density = 4096);
// bias shifts contribute no complexity
double shift_koopman_norm();

// dispatch: closed-form bound when one exists, grid sup otherwise
KoopmanNormBound koopman_norm(const ActivationSpec& activation,
                              const linalg::DomainBox& domain_tilde);

}  // namespace kb::activation
