#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <vector>

#include "kb/linalg.hpp"
#include "kb/rng.hpp"

namespace kb::mc {

using CFn = std::function<std::complex<double>(const std::vector<double>&)>;

// importance proposal for L2 integrals
struct Proposal {
  enum class Kind { uniform_box, gaussian };
  Kind kind = Kind::uniform_box;
  linalg::DomainBox box;       // uniform_box
  std::vector<double> center;  // gaussian
  double width_c = 1.0;        // gaussian density (c/pi)^(d/2) exp(-c ||y-x||^2)

  static Proposal uniform(linalg::DomainBox b);
  static Proposal gaussian(std::vector<double> center, double width_c);

  std::size_t dim() const;
  double density(const std::vector<double>& y) const;
  std::vector<double> sample(Rng& rng) const;
  void sample_into(Rng& rng, std::vector<double>& y) const;
};

struct McConfig {
  std::size_t sample_count = 200000;  // >= 100
  std::uint64_t root_seed = 0;
  Proposal proposal;

  void validate() const;
};

struct McEstimate {
  std::complex<double> value{0.0, 0.0};
  double std_error = 0.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  bool coverage_warning = false;

  double real() const { return value.real(); }
  double abs() const { return std::abs(value); }
};

// Integral of f against Lebesgue measure, importance-sampled from the
// proposal. Samples are drawn in fixed-size chunks each with its own
// (root, stream, chunk) generator; chunk partials are combined in index
// order, so results are bit-identical for any thread count.
McEstimate mc_integral(const CFn& f, const McConfig& cfg, std::uint64_t stream);

// Integral of f * conj(g). Flags a coverage warning when more than 1% of
// samples land where both |f| and |g| are below 1e-12.
McEstimate l2_inner(const CFn& f, const CFn& g, const McConfig& cfg,
                    std::uint64_t stream);

// finite mixture of axis-aligned Gaussians sum_k w_k exp(-sum_i c_ki (y_i-m_ki)^2)
struct GaussianMixture {
  struct Component {
    std::vector<double> center;
    std::vector<double> widths;  // per-dimension exponents c_i > 0
    double weight = 1.0;
  };
  std::vector<Component> components;

  static Component isotropic(std::vector<double> center, double width_c,
                             double weight);

  double eval(const std::vector<double>& y) const;
  // int over R^d of |h|^2, by the pairwise Gaussian product rule
  double l2_norm_sq_analytic() const;
};

// int over R^d of exp(-c1 ||y-m1||^2) exp(-c2 ||y-m2||^2) dy
double gaussian_overlap(double c1, const std::vector<double>& m1, double c2,
                        const std::vector<double>& m2);

// stderr of sqrt(num/den) from the two estimates (delta method)
double ratio_std_error(double num, double num_se, double den, double den_se);

}  // namespace kb::mc
