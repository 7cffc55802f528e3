#include "kb/bound.hpp"

#include <cmath>

#include "kb/activation.hpp"
#include "kb/error.hpp"
#include "json.hpp"

namespace kb::bound {

namespace {
using json = nlohmann::ordered_json;
using model::Flavor;
using model::LayerKind;
using model::NetworkSpec;
}  // namespace

std::string theorem_name(Theorem t) {
  switch (t) {
    case Theorem::thm1: return "thm1";
    case Theorem::thm2: return "thm2";
    case Theorem::thm3: return "thm3";
    case Theorem::thm4: return "thm4";
    case Theorem::cnn_prop: return "cnn";
  }
  return "?";
}

std::string BoundReport::to_json() const {
  json j;
  j["theorem"] = theorem_name(theorem);
  j["samples"] = samples;
  j["cap"] = cap;
  j["v_norm"] = v_norm;
  j["value"] = value;
  j["cap_value"] = cap_value;
  j["seed"] = seed;
  j["per_layer"] = json::array();
  for (const PerLayerFactors& f : per_layer) {
    json lj;
    lj["layer"] = f.layer_index;
    lj["koopman_norm"] = f.koopman_norm;
    lj["det_factor"] = f.det_factor;
    if (f.alpha.has_value()) {
      lj["alpha"] = f.alpha->real();
      lj["alpha_std_error"] = f.alpha->std_error;
    } else {
      lj["alpha"] = 1.0;
    }
    lj["kernel_volume"] = f.kernel_volume;
    if (f.beta_modulus.has_value()) lj["beta_modulus"] = *f.beta_modulus;
    j["per_layer"].push_back(lj);
  }
  return j.dump(2) + "\n";
}

namespace {

void require_samples(std::size_t samples) {
  if (samples < 1) throw std::invalid_argument("bound: sample size S must be >= 1");
}

NetworkSpec with_domains(const NetworkSpec& spec) {
  for (const auto& l : spec.layers) {
    if (!l.domain_tilde.has_value()) return model::propagate_domains(spec);
  }
  return spec;
}

// Koopman norms for the activations of layers 1..L-1 over their propagated
// pre-activation boxes
std::vector<double> activation_norms(const NetworkSpec& spec,
                                     std::vector<PerLayerFactors>& per_layer) {
  std::vector<double> norms;
  for (std::size_t i = 0; i + 1 < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (!l.act.has_value()) continue;
    const double v = activation::koopman_norm(*l.act, *l.domain_tilde).value;
    norms.push_back(v);
    per_layer[i].koopman_norm = v;
  }
  if (!spec.layers.empty() && spec.layers.back().act.has_value()) {
    throw std::domain_error(
        "bound: an activation on the final layer is not covered; fold it into "
        "the final transform v");
  }
  return norms;
}

double last_domain_v_norm(const NetworkSpec& spec) {
  const linalg::DomainBox& last = spec.layers.empty()
                                      ? spec.input_domain
                                      : *spec.layers.back().domain_tilde;
  return model::v_norm(spec.final, last);
}

// Wraps the downstream composite f_l:
// x -> v(W_L sigma_{L-1}( ... W_{l+1} sigma_l(x)))
RealFn make_downstream(const NetworkSpec& spec, std::size_t layer) {
  return [&spec, layer](const std::vector<double>& x) {
    std::vector<double> z = x;
    const auto& l0 = spec.layers[layer];
    if (l0.act.has_value()) l0.act->apply(z);
    for (std::size_t k = layer + 1; k < spec.layers.size(); ++k) {
      const auto& l = spec.layers[k];
      if (l.kind != LayerKind::dense) {
        throw std::domain_error("alpha composite: only dense layers are supported");
      }
      z = linalg::matvec(l.weight, z);
      for (std::size_t i = 0; i < l.bias.size(); ++i) z[i] += l.bias[i];
      if (l.act.has_value()) l.act->apply(z);
    }
    return spec.final.eval(z);
  };
}

}  // namespace

BoundReport bound_thm1(const std::vector<double>& koopman_norms, double v_norm,
                       std::size_t samples) {
  require_samples(samples);
  BoundReport r;
  r.theorem = Theorem::thm1;
  r.samples = samples;
  r.v_norm = v_norm;
  double prod = 1.0;
  for (std::size_t i = 0; i < koopman_norms.size(); ++i) {
    prod *= koopman_norms[i];
    PerLayerFactors f;
    f.layer_index = i;
    f.koopman_norm = koopman_norms[i];
    r.per_layer.push_back(f);
  }
  r.value = prod * v_norm / std::sqrt(static_cast<double>(samples));
  r.cap_value = r.value;
  return r;
}

BoundReport bound_thm2(const NetworkSpec& spec_in, std::size_t samples, double cap) {
  require_samples(samples);
  if (spec_in.flavor != Flavor::affine_scaled) {
    throw std::domain_error(
        "thm2 applies to the affine_scaled flavor; for plain networks use thm3 "
        "(injective) or thm4 (any rank)");
  }
  NetworkSpec spec = with_domains(spec_in);
  BoundReport r;
  r.theorem = Theorem::thm2;
  r.samples = samples;
  r.cap = cap;
  r.per_layer.assign(spec.layers.size(), {});
  for (std::size_t i = 0; i < spec.layers.size(); ++i) r.per_layer[i].layer_index = i;

  double norm_prod = 1.0;
  for (double v : activation_norms(spec, r.per_layer)) norm_prod *= v;

  double det_prod = 1.0;
  std::size_t dense_count = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.kind != LayerKind::dense) continue;
    double factor;
    try {
      factor = linalg::det_factor_invertible(l.weight);
    } catch (const std::domain_error&) {
      throw std::domain_error(
          "thm2: layer " + std::to_string(i) +
          " has a singular weight matrix; use thm4 for rank-deficient layers");
    }
    if (factor > cap) {
      throw std::domain_error("thm2: layer " + std::to_string(i) + " det factor " +
                              std::to_string(factor) + " exceeds the cap D");
    }
    r.per_layer[i].det_factor = factor;
    det_prod *= factor;
    ++dense_count;
  }

  r.v_norm = last_domain_v_norm(spec);
  const double base = norm_prod * r.v_norm / std::sqrt(static_cast<double>(samples));
  r.value = base * det_prod;
  r.cap_value = base * std::pow(cap, static_cast<double>(dense_count));
  return r;
}

AlphaEstimate estimate_alpha(const RealFn& h, const linalg::Matrix& w,
                             const linalg::DomainBox& prev_domain,
                             const linalg::DomainBox& domain_tilde,
                             const mc::McConfig& mc_cfg, std::uint64_t stream) {
  linalg::SvdResult s = linalg::svd(w);
  if (s.numerical_rank < w.cols) {
    throw std::domain_error("estimate_alpha: weight matrix is not injective");
  }
  double sqrt_det = 1.0;
  for (double sv : s.singular_values) sqrt_det *= sv;

  // numerator: sample x in X_{l-1} uniformly; the change of variables onto
  // the range subspace contributes |det(W*W)|^(1/2)
  mc::McConfig num_cfg = mc_cfg;
  num_cfg.proposal = mc::Proposal::uniform(prev_domain);
  mc::McEstimate num = mc::mc_integral(
      [&](const std::vector<double>& x) {
        const std::vector<double> y = linalg::matvec(w, x);
        const double v = h(y);
        return std::complex<double>(v * v * sqrt_det, 0.0);
      },
      num_cfg, stream);

  mc::McConfig den_cfg = mc_cfg;
  den_cfg.proposal = mc::Proposal::uniform(domain_tilde);
  mc::McEstimate den = mc::mc_integral(
      [&](const std::vector<double>& y) {
        const double v = h(y);
        return std::complex<double>(v * v, 0.0);
      },
      den_cfg, stream ^ fnv1a64("bound/alpha/denominator"));

  if (!(den.real() > 0.0)) {
    throw std::domain_error("estimate_alpha: degenerate denominator domain");
  }
  AlphaEstimate a;
  a.numerator = num;
  a.denominator = den;
  a.ratio = std::sqrt(std::max(0.0, num.real()) / den.real());
  a.std_error =
      mc::ratio_std_error(num.real(), num.std_error, den.real(), den.std_error);
  return a;
}

namespace {

// shared assembly for thm3 (restricted = false) and thm4 (restricted = true)
BoundReport bound_injective_family(const NetworkSpec& spec_in, std::size_t samples,
                                   double cap, const mc::McConfig& mc_cfg,
                                   AlphaMode alpha_mode, bool restricted) {
  require_samples(samples);
  NetworkSpec spec = with_domains(spec_in);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind != LayerKind::dense) {
      throw std::domain_error("thm3/thm4 apply to dense layers only");
    }
  }

  BoundReport r;
  r.theorem = restricted ? Theorem::thm4 : Theorem::thm3;
  r.samples = samples;
  r.cap = cap;
  r.seed = mc_cfg.root_seed;
  r.per_layer.assign(spec.layers.size(), {});
  for (std::size_t i = 0; i < spec.layers.size(); ++i) r.per_layer[i].layer_index = i;

  double norm_alpha_prod = 1.0;
  for (std::size_t i = 0; i + 1 < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.act.has_value()) {
      const double v = activation::koopman_norm(*l.act, *l.domain_tilde).value;
      r.per_layer[i].koopman_norm = v;
      norm_alpha_prod *= v;
    }
    const bool injective = linalg::svd(l.weight).numerical_rank == l.weight.cols;
    if (alpha_mode == AlphaMode::estimate && injective) {
      const linalg::DomainBox& prev =
          (i == 0) ? spec.input_domain : *spec.layers[i - 1].domain;
      AlphaEstimate a =
          estimate_alpha(make_downstream(spec, i), l.weight, prev, *l.domain_tilde,
                         mc_cfg, fnv1a64("bound/alpha") ^ (i + 1));
      mc::McEstimate est;
      est.value = {a.ratio, 0.0};
      est.std_error = a.std_error;
      est.samples = a.numerator.samples;
      est.seed = mc_cfg.root_seed;
      r.per_layer[i].alpha = est;
      norm_alpha_prod *= a.ratio;
    }
  }
  if (!spec.layers.empty() && spec.layers.back().act.has_value()) {
    throw std::domain_error(
        "bound: an activation on the final layer is not covered; fold it into "
        "the final transform v");
  }

  double det_prod = 1.0;
  double mu_prod = 1.0;
  std::size_t dense_count = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    double factor;
    if (restricted) {
      linalg::RestrictedDet rd = linalg::det_factor_restricted(l.weight);
      factor = rd.factor;
      if (rd.kernel_basis.cols > 0) {
        const linalg::DomainBox& prev =
            (i == 0) ? spec.input_domain : *spec.layers[i - 1].domain;
        std::vector<std::pair<double, double>> bounds(rd.kernel_basis.cols);
        for (std::size_t k = 0; k < rd.kernel_basis.cols; ++k) {
          std::vector<double> q(rd.kernel_basis.rows);
          for (std::size_t row = 0; row < rd.kernel_basis.rows; ++row) {
            q[row] = rd.kernel_basis(row, k);
          }
          linalg::interval_dot(q, prev, bounds[k].first, bounds[k].second);
        }
        const double mu = kernel_volume(rd.kernel_basis, bounds);
        r.per_layer[i].kernel_volume = mu;
        mu_prod *= mu;
      }
    } else {
      try {
        factor = linalg::det_factor_injective(l.weight);
      } catch (const std::domain_error&) {
        throw std::domain_error("thm3: layer " + std::to_string(i) +
                                " is rank deficient; use thm4");
      }
    }
    if (factor > cap) {
      throw std::domain_error((restricted ? "thm4" : "thm3") + std::string(": layer ") +
                              std::to_string(i) + " det factor exceeds the cap D");
    }
    r.per_layer[i].det_factor = factor;
    det_prod *= factor;
    ++dense_count;
  }

  r.v_norm = last_domain_v_norm(spec);
  const double base =
      norm_alpha_prod * r.v_norm / std::sqrt(static_cast<double>(samples));
  r.value = base * mu_prod * det_prod;
  r.cap_value = base * mu_prod * std::pow(cap, static_cast<double>(dense_count));
  return r;
}

}  // namespace

BoundReport bound_thm3(const NetworkSpec& spec, std::size_t samples, double cap,
                       const mc::McConfig& mc_cfg, AlphaMode alpha_mode) {
  return bound_injective_family(spec, samples, cap, mc_cfg, alpha_mode, false);
}

double kernel_volume(const linalg::Matrix& kernel_basis,
                     const std::vector<std::pair<double, double>>& bounds) {
  if (kernel_basis.cols != bounds.size()) {
    throw std::invalid_argument("kernel_volume: bounds count mismatch");
  }
  if (kernel_basis.cols > 0) {
    const linalg::Matrix g =
        linalg::matmul(linalg::transpose(kernel_basis), kernel_basis);
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t j = 0; j < g.cols; ++j) {
        const double want = (i == j) ? 1.0 : 0.0;
        if (std::abs(g(i, j) - want) > 1e-8) {
          throw std::invalid_argument("kernel_volume: basis is not orthonormal");
        }
      }
    }
  }
  double v = 1.0;
  for (const auto& [a, b] : bounds) {
    if (b < a) throw std::invalid_argument("kernel_volume: empty interval");
    v *= (b - a);
  }
  return v;
}

BoundReport bound_thm4(const NetworkSpec& spec, std::size_t samples, double cap,
                       const mc::McConfig& mc_cfg, AlphaMode alpha_mode) {
  return bound_injective_family(spec, samples, cap, mc_cfg, alpha_mode, true);
}

BoundReport bound_cnn(const NetworkSpec& spec_in, std::size_t samples, double cap) {
  require_samples(samples);
  if (spec_in.flavor != Flavor::cnn) {
    throw std::domain_error("the cnn bound applies to the cnn flavor");
  }
  NetworkSpec spec = with_domains(spec_in);
  BoundReport r;
  r.theorem = Theorem::cnn_prop;
  r.samples = samples;
  r.cap = cap;
  r.per_layer.assign(spec.layers.size(), {});
  for (std::size_t i = 0; i < spec.layers.size(); ++i) r.per_layer[i].layer_index = i;

  double numerator = 1.0;
  double beta_prod = 1.0;
  std::size_t conv_count = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.act.has_value() && i + 1 < spec.layers.size()) {
      const double v = activation::koopman_norm(*l.act, *l.domain_tilde).value;
      r.per_layer[i].koopman_norm = v;
      numerator *= v;
    }
    if (l.kind == LayerKind::conv) {
      const auto gamma =
          linalg::circulant_spectrum(l.conv, linalg::dft_scaling(l.conv.dims));
      std::complex<double> beta(1.0, 0.0);
      for (const auto& g : gamma) {
        if (std::abs(g) < 1e-300) {
          throw std::domain_error(
              "cnn bound: layer " + std::to_string(i) +
              " convolution has a zero Fourier component and is not invertible");
        }
        beta *= g;
      }
      const double beta_mod = std::abs(beta);
      const double factor = 1.0 / std::sqrt(beta_mod);
      if (factor > cap) {
        throw std::domain_error("cnn bound: layer " + std::to_string(i) +
                                " beta factor exceeds the cap D");
      }
      r.per_layer[i].beta_modulus = beta_mod;
      r.per_layer[i].det_factor = factor;
      beta_prod *= factor;
      ++conv_count;
    }
    if (l.kind == LayerKind::pool) {
      // the weighted pooling Koopman factor: volume of the coefficient box
      // along ker(P); the nonzero singular values of P are all 1
      linalg::RestrictedDet rd = linalg::det_factor_restricted(l.pool);
      const linalg::DomainBox& prev =
          (i == 0) ? spec.input_domain : *spec.layers[i - 1].domain;
      std::vector<std::pair<double, double>> bounds(rd.kernel_basis.cols);
      for (std::size_t k = 0; k < rd.kernel_basis.cols; ++k) {
        std::vector<double> q(rd.kernel_basis.rows);
        for (std::size_t row = 0; row < rd.kernel_basis.rows; ++row) {
          q[row] = rd.kernel_basis(row, k);
        }
        linalg::interval_dot(q, prev, bounds[k].first, bounds[k].second);
      }
      const double mu = kernel_volume(rd.kernel_basis, bounds);
      r.per_layer[i].kernel_volume = mu;
      numerator *= mu;
    }
  }

  r.v_norm = last_domain_v_norm(spec);
  const double base = numerator * r.v_norm / std::sqrt(static_cast<double>(samples));
  r.value = base * beta_prod;
  r.cap_value = base * std::pow(cap, static_cast<double>(conv_count));
  return r;
}

BoundReport evaluate(Theorem t, const NetworkSpec& spec, std::size_t samples,
                     double cap, const mc::McConfig& mc_cfg, AlphaMode alpha_mode) {
  switch (t) {
    case Theorem::thm1: {
      NetworkSpec s = with_domains(spec);
      BoundReport tmp;
      tmp.per_layer.assign(s.layers.size(), {});
      const std::vector<double> norms = activation_norms(s, tmp.per_layer);
      BoundReport r = bound_thm1(norms, last_domain_v_norm(s), samples);
      r.per_layer = tmp.per_layer;
      r.seed = mc_cfg.root_seed;
      return r;
    }
    case Theorem::thm2: {
      BoundReport r = bound_thm2(spec, samples, cap);
      r.seed = mc_cfg.root_seed;
      return r;
    }
    case Theorem::thm3: return bound_thm3(spec, samples, cap, mc_cfg, alpha_mode);
    case Theorem::thm4: return bound_thm4(spec, samples, cap, mc_cfg, alpha_mode);
    case Theorem::cnn_prop: {
      BoundReport r = bound_cnn(spec, samples, cap);
      r.seed = mc_cfg.root_seed;
      return r;
    }
  }
  throw std::invalid_argument("unknown theorem tag");
}

namespace {

void recipe_radius_chain(const NetworkSpec& spec, std::vector<double>& all) {
  double r = spec.input_domain.radius_inf();
  for (const auto& l : spec.layers) {
    double op = 1.0, binf = 0.0;
    switch (l.kind) {
      case LayerKind::dense:
        op = linalg::spectral_norm(l.weight);
        for (double b : l.bias) binf = std::max(binf, std::abs(b));
        break;
      case LayerKind::conv:
        op = linalg::spectral_norm(linalg::conv_matrix(l.conv));
        break;
      case LayerKind::pool:
        op = 1.0;
        break;
      case LayerKind::heisenberg:
        op = 1.0;
        for (double b : l.heis_b) binf = std::max(binf, std::abs(b));
        break;
    }
    r = op * r + binf;
    all.push_back(r);
  }
}

double det_quarter_power(const linalg::Matrix& w) {
  // det(W^T W)^(1/4) = prod s_i^(1/2), in log space; singular values are
  // clamped below to avoid blow-up near rank deficiency
  double acc = 0.0;
  for (double s : linalg::svd(w).singular_values) {
    acc += 0.5 * std::log(std::max(s, 1e-8));
  }
  return std::exp(acc);
}

}  // namespace

std::map<std::string, double> regularizer_values(const NetworkSpec& spec,
                                                 RegularizerMode mode) {
  std::map<std::string, double> out;
  std::vector<double> radii;
  recipe_radius_chain(spec, radii);

  if (mode == RegularizerMode::synthetic_r) {
    if (spec.layers.size() != 2 || spec.layers[0].kind != LayerKind::dense ||
        spec.layers[1].kind != LayerKind::dense || !spec.layers[0].act.has_value() ||
        spec.layers[0].act->kind != activation::Kind::tanh_fn ||
        spec.final.kind != model::FinalKind::gaussian_bump) {
      throw std::invalid_argument(
          "synthetic_r expects two dense layers with a tanh between and a "
          "gaussian bump output");
    }
    const double s1 = radii[0];
    const std::size_t d1 = spec.layers[0].weight.rows;
    const linalg::DomainBox box = linalg::DomainBox::centered(d1, s1);
    const activation::KoopmanNormBound kb = activation::koopman_norm_tanh(box);
    double sup = 1.0;
    for (double s : kb.per_dimension_sup) sup *= s;
    const double f1 = 1.0 / det_quarter_power(spec.layers[0].weight);
    const double f2 = 1.0 / det_quarter_power(spec.layers[1].weight);
    out["sup_factor"] = sup;
    out["det_factor_1"] = f1;
    out["det_factor_2"] = f2;
    out["r"] = std::abs(spec.final.w3) * sup * f1 * f2;
    return out;
  }

  if (mode == RegularizerMode::dense_r123) {
    if (spec.layers.size() < 2 || spec.layers[0].kind != LayerKind::dense ||
        spec.layers[1].kind != LayerKind::dense || !spec.layers[0].act.has_value() ||
        !spec.layers[1].act.has_value()) {
      throw std::invalid_argument(
          "dense_r123 expects at least two dense layers with activations");
    }
    double r1 = 0.0;
    for (std::size_t l = 0; l < 2; ++l) {
      // first-coordinate slice of X_l = sigma([-s_l, s_l])
      const linalg::DomainBox band({-radii[l]}, {radii[l]});
      const activation::KoopmanNormBound kb =
          activation::koopman_norm_generic(*spec.layers[l].act, band);
      r1 += kb.per_dimension_sup[0];
    }
    double r2 = 0.0, r3 = 0.0;
    for (std::size_t l = 0; l < 2; ++l) {
      r2 += 1.0 / (1.0 + det_quarter_power(spec.layers[l].weight));
      r3 += linalg::spectral_norm(spec.layers[l].weight);
    }
    out["r1"] = r1;
    out["r2"] = r2;
    out["r3"] = r3;
    out["sum"] = r1 + r2 + r3;
    return out;
  }

  // lenet_r123
  double r1 = 0.0, r2 = 0.0, r3 = 0.0;
  std::size_t weight_layers = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    linalg::Matrix w;
    if (l.kind == LayerKind::dense) {
      w = l.weight;
    } else if (l.kind == LayerKind::conv) {
      w = linalg::conv_matrix(l.conv);
    } else {
      continue;
    }
    ++weight_layers;
    if (l.act.has_value() && l.act->kind == activation::Kind::tanh_fn) {
      // sup over the first coordinate of the tanh image of 1/(1 + 1 - x^2)
      const double t = std::tanh(radii[i]);
      r1 += 1.0 / (2.0 - t * t);
    }
    const auto sv = linalg::svd(w).singular_values;
    r2 += 1.0 / (0.01 + sv.back());
    r3 = linalg::spectral_norm(w);  // the last weight layer wins
  }
  if (weight_layers == 0) {
    throw std::invalid_argument("lenet_r123 expects at least one weight layer");
  }
  out["r1"] = r1;
  out["r2"] = r2;
  out["r3"] = r3;
  out["sum"] = r1 + r2 + r3;
  return out;
}

}  // namespace kb::bound
