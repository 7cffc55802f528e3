#pragma once

#include <complex>
#include <string>
#include <vector>

#include "kb/activation.hpp"
#include "kb/bound.hpp"
#include "kb/mc.hpp"
#include "kb/model.hpp"

namespace kb::verify {

// Gram matrix of pairwise L2 inner products. Both triangles are estimated
// with independent streams, so Hermitian symmetry is a property to check,
// not a construction artifact.
struct GramMatrix {
  std::size_t n = 0;
  std::vector<std::complex<double>> entries;  // row-major
  std::vector<double> std_errors;             // row-major

  std::complex<double> at(std::size_t i, std::size_t j) const {
    return entries[i * n + j];
  }
  double std_error(std::size_t i, std::size_t j) const {
    return std_errors[i * n + j];
  }
  // max over pairs of |k_ij - conj(k_ji)| - 3 * combined stderr (<= 0 passes)
  double hermitian_excess() const;
  double trace_real() const;
  // eigenvalues of (K + K*) / 2, ascending, via the real symmetric embedding
  std::vector<double> symmetrized_eigenvalues() const;
};

GramMatrix gram(const std::vector<mc::CFn>& fs, const mc::McConfig& cfg,
                std::uint64_t stream_base = 0);

struct IsometryResult {
  double residual_linear = 0.0;   // |<probe, sum c_i f_i> - sum conj(c_i) k(probe, i)|
  double residual_norm = 0.0;     // | ||sum c_i f_i||^2 - sum c_i conj(c_j) k_ij |
  double combined_std_error = 0.0;
};

// shared_streams reuses one sample stream for every estimate, which makes the
// linear residual exactly zero; independent streams expose the MC noise
IsometryResult isometry_check(const std::vector<mc::CFn>& fs,
                              const std::vector<std::complex<double>>& coeffs,
                              const mc::CFn& probe, const mc::McConfig& cfg,
                              bool shared_streams = false);

struct LemmaCheckReport {
  std::size_t trials = 0;
  std::size_t failures = 0;
  double bound_value = 0.0;
  double max_ratio = 0.0;
  double max_excess = 0.0;  // max over trials of ratio - (bound + 3 stderr)
  bool pass = true;
};

// ratio oracle for ||K_sigma h|| / ||h|| over random Gaussian-mixture test
// functions supported on sigma(domain_tilde)
LemmaCheckReport koopman_lemma_check(const activation::ActivationSpec& act,
                                     const linalg::DomainBox& domain_tilde,
                                     const activation::KoopmanNormBound& bound,
                                     std::size_t trials, const mc::McConfig& cfg);

// near-tightness witness for the leaky ReLU: a test function concentrated in
// the negative orthant achieves the a^(-d/2) ratio
double leaky_tightness_ratio(double slope, std::size_t dim, const mc::McConfig& cfg);

// affine-group parameter tuples ---------------------------------------------

struct AffineTuple {
  std::vector<linalg::Matrix> weights;
  std::vector<std::vector<double>> biases;
};

// two dense layers with a leaky activation between, gaussian bump output
model::NetworkSpec affine_template(std::size_t dim, double leaky_slope);

model::NetworkSpec instantiate(const model::NetworkSpec& tmpl, const AffineTuple& t,
                               model::Flavor flavor);

// rejection-sample tuples with every |det W_l|^(-1/2) <= cap
std::vector<AffineTuple> sample_tuples(std::size_t dim, std::size_t layers,
                                       std::size_t count, double cap,
                                       std::uint64_t seed);

double det_factor_product(const AffineTuple& t);  // prod |det W_l|^(-1/2)

// empirical Rademacher complexity --------------------------------------------

enum class RademacherMode { mc_search, exact_enumeration };

struct RademacherEstimate {
  double value = 0.0;
  std::size_t draws = 0;
  std::size_t candidates = 0;
  RademacherMode mode = RademacherMode::mc_search;
  double std_error = 0.0;
};

// values: N x S candidate-by-input value matrix; the sup is over candidates.
// mc_search averages M sign draws; exact_enumeration (S <= 16) averages all
// 2^S sign vectors. Both are lower estimates of the class supremum.
RademacherEstimate empirical_rademacher(const linalg::Matrix& values,
                                        std::size_t draws, RademacherMode mode,
                                        std::uint64_t root_seed);

struct RademacherProblem {
  std::vector<AffineTuple> candidates;
  std::vector<std::vector<double>> inputs;
  linalg::Matrix nn_values;       // N x S: NN_c(g_n, x_s), det scale removed
  linalg::Matrix f_values;        // N x S: F_c(g_n, x_s), det scale included
  double max_det_factor_product = 0.0;
};

RademacherProblem build_affine_problem(const model::NetworkSpec& tmpl,
                                       std::size_t candidates, std::size_t samples,
                                       double cap, double reg_c,
                                       std::size_t inner_samples,
                                       std::uint64_t seed);

// verification suites ---------------------------------------------------------

struct CheckResult {
  std::string name;
  bool pass = false;
  double statistic = 0.0;
  double threshold = 0.0;
  std::uint64_t seed = 0;
};

std::vector<CheckResult> suite_lemmas(std::uint64_t seed, std::size_t trials = 200,
                                      std::size_t mc_samples = 20000);
std::vector<CheckResult> suite_gram(std::uint64_t seed,
                                    std::size_t mc_samples = 200000);
std::vector<CheckResult> suite_rademacher(std::uint64_t seed,
                                          std::size_t candidates = 1000,
                                          std::size_t draws = 200,
                                          std::size_t inner_samples = 2000);

}  // namespace kb::verify
