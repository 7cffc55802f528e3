#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kb/mc.hpp"
#include "kb/model.hpp"

namespace kb::bound {

enum class Theorem { thm1, thm2, thm3, thm4, cnn_prop };

std::string theorem_name(Theorem t);

struct PerLayerFactors {
  std::size_t layer_index = 0;
  double koopman_norm = 1.0;              // 1 when the layer has no activation
  double det_factor = 1.0;                // the reciprocal contribution
  std::optional<mc::McEstimate> alpha;    // empty means the conservative 1
  double kernel_volume = 1.0;
  std::optional<double> beta_modulus;     // conv layers only
};

struct BoundReport {
  Theorem theorem = Theorem::thm1;
  std::size_t samples = 1;                // S
  double cap = 0.0;                       // D; 0 when not applicable
  std::vector<PerLayerFactors> per_layer;
  double v_norm = 0.0;
  double value = 0.0;                     // at the supplied weights
  double cap_value = 0.0;                 // sup over the D-ball (cap substituted)
  std::uint64_t seed = 0;

  std::string to_json() const;
};

enum class AlphaMode { conservative, estimate };

// value = prod(koopman_norms) * v_norm / sqrt(S)
BoundReport bound_thm1(const std::vector<double>& koopman_norms, double v_norm,
                       std::size_t samples);

// invertible square weights; det factor |det W|^(-1/2) per layer, each <= D
BoundReport bound_thm2(const model::NetworkSpec& spec, std::size_t samples, double cap);

struct AlphaEstimate {
  mc::McEstimate numerator;    // integral over W X_{l-1} against the range measure
  mc::McEstimate denominator;  // integral over the enclosing box
  double ratio = 1.0;
  double std_error = 0.0;
};

using RealFn = std::function<double(const std::vector<double>&)>;

AlphaEstimate estimate_alpha(const RealFn& h, const linalg::Matrix& w,
                             const linalg::DomainBox& prev_domain,
                             const linalg::DomainBox& domain_tilde,
                             const mc::McConfig& mc_cfg, std::uint64_t stream);

// injective weights; koopman norms over propagated domains, alpha per layer
BoundReport bound_thm3(const model::NetworkSpec& spec, std::size_t samples, double cap,
                       const mc::McConfig& mc_cfg,
                       AlphaMode alpha_mode = AlphaMode::conservative);

// volume of the coefficient box along kernel directions; 1 for a trivial kernel
double kernel_volume(const linalg::Matrix& kernel_basis,
                     const std::vector<std::pair<double, double>>& bounds);

// any rank; restricted determinants plus kernel-volume factors
BoundReport bound_thm4(const model::NetworkSpec& spec, std::size_t samples, double cap,
                       const mc::McConfig& mc_cfg,
                       AlphaMode alpha_mode = AlphaMode::conservative);

// convolution layers with square average pooling
BoundReport bound_cnn(const model::NetworkSpec& spec, std::size_t samples, double cap);

BoundReport evaluate(Theorem t, const model::NetworkSpec& spec, std::size_t samples,
                     double cap, const mc::McConfig& mc_cfg,
                     AlphaMode alpha_mode = AlphaMode::conservative);

enum class RegularizerMode { synthetic_r, dense_r123, lenet_r123 };

// regularizer values computed from the recipe radii and SVD singular values
std::map<std::string, double> regularizer_values(const model::NetworkSpec& spec,
                                                 RegularizerMode mode);

}  // namespace kb::bound
