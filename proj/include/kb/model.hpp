#pragma once

#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "kb/activation.hpp"
#include "kb/linalg.hpp"
#include "kb/mc.hpp"

namespace kb::model {

enum class LayerKind { dense, conv, pool, heisenberg };
enum class Flavor { plain, affine_scaled, heisenberg, cnn };
enum class DomainMode { tight, paper_recipe };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;

  linalg::Matrix weight;           // dense
  std::vector<double> bias;        // dense

  linalg::ConvKernel conv;         // conv

  std::size_t pool_size = 0;       // pool
  linalg::Matrix pool;             // square upsampled-average matrix, built on load

  std::vector<double> heis_a, heis_b;  // heisenberg group element (a, b, c)
  double heis_c = 0.0;

  std::optional<activation::ActivationSpec> act;

  std::optional<linalg::DomainBox> domain_tilde;  // pre-activation enclosure
  std::optional<linalg::DomainBox> domain;        // post-activation enclosure

  std::size_t out_dim(std::size_t in_dim) const;
};

enum class FinalKind { gaussian_bump, softmax, lookup_table };
enum class NormMode { exact, measure_bound, mc_integral };

struct LookupTable {
  linalg::DomainBox box;
  std::vector<std::size_t> dims;   // grid points per axis
  std::vector<double> values;      // row-major
  double eval(const std::vector<double>& x) const;  // multilinear, clamped
};

struct FinalTransform {
  FinalKind kind = FinalKind::gaussian_bump;
  double w3 = 1.0;                 // gaussian_bump weight
  NormMode norm_mode = NormMode::exact;
  LookupTable table;

  double eval(const std::vector<double>& z) const;
};

struct NetworkSpec {
  Flavor flavor = Flavor::plain;
  DomainMode domain_mode = DomainMode::tight;
  linalg::DomainBox input_domain;
  std::vector<LayerSpec> layers;
  FinalTransform final;

  // filled by finalize()
  double affine_det_scale = 1.0;   // prod |det W_l|^(1/2) over dense layers
  std::vector<std::string> warnings;

  std::size_t output_dim() const;
  void validate() const;
  void finalize();                 // validate + cache the affine scale
};

// Domain propagation. tight: interval image per layer, then the elementwise
// activation image. paper_recipe: radius_l = |W_l| radius_{l-1} + |b_l|_inf
// boxes; a recipe box that fails to contain the tight image is inflated to
// cover it and a warning is recorded.
NetworkSpec propagate_domains(const NetworkSpec& spec);

// composite forward value; complex phase only for the heisenberg flavor
std::complex<double> forward(const NetworkSpec& spec, const std::vector<double>& x);

bool input_in_domain(const NetworkSpec& spec, const std::vector<double>& x);

// Gaussian regularizer p_{c,x}, normalized explicitly to unit L2 norm:
// p(y) = (2c/pi)^(d/4) exp(-c ||y - x||^2)
struct Regularizer {
  std::vector<double> center;
  double width_c = 1.0;
  double norm_const = 1.0;

  Regularizer(std::vector<double> center, double width_c);
  double eval(const std::vector<double>& y) const;
  std::size_t dim() const { return center.size(); }
};

// F_c(g, x) = <f, p_{c,x}>, estimated with p's Gaussian as the importance
// proposal (the proposal density cancels up to a constant)
mc::McEstimate regularized_forward(const NetworkSpec& spec, const Regularizer& p,
                                   const mc::McConfig& mc_template,
                                   std::uint64_t stream = 0);

// ||v|| per the final transform's norm mode over the last propagated domain
double v_norm(const FinalTransform& final, const linalg::DomainBox& last_domain,
              std::size_t mc_samples = 200000, std::uint64_t seed = 0);

// file formats ------------------------------------------------------------

// JSON network description; sidecar weights resolve relative to the file
NetworkSpec load_network(const std::string& path);
NetworkSpec parse_network(const std::string& json_text, const std::string& base_dir);

// binary weight file: 16-byte header (magic "KBW1", u32 rows, u32 cols,
// u32 reserved), then rows*cols little-endian f64, row-major
linalg::Matrix read_weight_file(const std::string& path);
void write_weight_file(const std::string& path, const linalg::Matrix& m);

}  // namespace kb::model
