#include "kb/verify.hpp"

#include <algorithm>
#include <cmath>

#include "kb/parallel.hpp"
#include "kb/rng.hpp"

namespace kb::verify {

namespace {
constexpr double kPi = 3.14159265358979323846264338327950288;
using linalg::DomainBox;
using linalg::Matrix;
}  // namespace

double GramMatrix::hermitian_excess() const {
  double worst = -1e300;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double diff = std::abs(at(i, j) - std::conj(at(j, i)));
      const double se = std::sqrt(std_error(i, j) * std_error(i, j) +
                                  std_error(j, i) * std_error(j, i));
      worst = std::max(worst, diff - 3.0 * se);
    }
  }
  return n > 1 ? worst : 0.0;
}

double GramMatrix::trace_real() const {
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) t += at(i, i).real();
  return t;
}

std::vector<double> GramMatrix::symmetrized_eigenvalues() const {
  // H = (K + K*) / 2 is Hermitian; embed as [[Re, -Im], [Im, Re]] whose
  // spectrum is that of H with every eigenvalue doubled
  Matrix m(2 * n, 2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::complex<double> h = 0.5 * (at(i, j) + std::conj(at(j, i)));
      m(i, j) = h.real();
      m(n + i, n + j) = h.real();
      m(i, n + j) = -h.imag();
      m(n + i, j) = h.imag();
    }
  }
  const std::vector<double> doubled = linalg::sym_eigenvalues(m);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = doubled[2 * i];
  return out;
}

GramMatrix gram(const std::vector<mc::CFn>& fs, const mc::McConfig& cfg,
                std::uint64_t stream_base) {
  GramMatrix g;
  g.n = fs.size();
  g.entries.assign(g.n * g.n, {0.0, 0.0});
  g.std_errors.assign(g.n * g.n, 0.0);
  if (stream_base == 0) stream_base = fnv1a64("verify/gram");
  const std::size_t n = g.n;
  // entries in sequence; each estimate parallelizes over its sample chunks
  for (std::size_t cell = 0; cell < n * n; ++cell) {
    const std::size_t i = cell / n;
    const std::size_t j = cell % n;
    const mc::McEstimate e = mc::l2_inner(fs[i], fs[j], cfg, stream_base ^ (cell + 1));
    g.entries[cell] = e.value;
    g.std_errors[cell] = e.std_error;
  }
  return g;
}

IsometryResult isometry_check(const std::vector<mc::CFn>& fs,
                              const std::vector<std::complex<double>>& coeffs,
                              const mc::CFn& probe, const mc::McConfig& cfg,
                              bool shared_streams) {
  if (fs.size() != coeffs.size()) {
    throw std::invalid_argument("isometry_check: coefficient count mismatch");
  }
  const std::uint64_t base = fnv1a64("verify/isometry");
  const auto stream = [&](std::size_t k) -> std::uint64_t {
    return shared_streams ? base : base ^ (k + 1);
  };

  mc::CFn combination = [&](const std::vector<double>& y) {
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t i = 0; i < fs.size(); ++i) acc += coeffs[i] * fs[i](y);
    return acc;
  };

  // direct integral of <probe, sum c_i f_i> vs the Gram-linear evaluation
  const mc::McEstimate direct = mc::l2_inner(probe, combination, cfg, stream(0));
  std::complex<double> linear(0.0, 0.0);
  double var = direct.std_error * direct.std_error;
  for (std::size_t i = 0; i < fs.size(); ++i) {
    const mc::McEstimate ki = mc::l2_inner(probe, fs[i], cfg, stream(i));
    linear += std::conj(coeffs[i]) * ki.value;
    var += std::norm(coeffs[i]) * ki.std_error * ki.std_error;
  }

  IsometryResult r;
  r.residual_linear = std::abs(direct.value - linear);

  // || sum c_i f_i ||^2 against the quadratic form in the Gram entries
  const mc::McEstimate norm_sq =
      mc::l2_inner(combination, combination, cfg, stream(fs.size() + 1));
  std::complex<double> quad(0.0, 0.0);
  double qvar = norm_sq.std_error * norm_sq.std_error;
  for (std::size_t i = 0; i < fs.size(); ++i) {
    for (std::size_t j = 0; j < fs.size(); ++j) {
      const mc::McEstimate kij = mc::l2_inner(
          fs[i], fs[j], cfg, shared_streams ? base : base ^ ((i + 2) * 997 + j));
      quad += coeffs[i] * std::conj(coeffs[j]) * kij.value;
      qvar += std::norm(coeffs[i] * coeffs[j]) * kij.std_error * kij.std_error;
    }
  }
  r.residual_norm = std::abs(norm_sq.value - quad);
  r.combined_std_error = std::sqrt(var + qvar);
  return r;
}

namespace {

mc::GaussianMixture random_mixture(Rng& rng, const DomainBox& support) {
  mc::GaussianMixture h;
  const std::size_t k = 1 + rng.next_u64() % 3;
  for (std::size_t c = 0; c < k; ++c) {
    mc::GaussianMixture::Component comp;
    comp.center = rng.uniform_in_box(support.lower, support.upper);
    comp.widths.resize(support.dim());
    for (std::size_t i = 0; i < support.dim(); ++i) {
      // component extent proportional to the box width in every dimension,
      // so both integrals stay well sampled in anisotropic boxes
      const double sd = rng.uniform(0.15, 0.35) * std::max(support.width(i), 1e-6);
      comp.widths[i] = 1.0 / (2.0 * sd * sd);
    }
    comp.weight = rng.uniform(0.2, 1.0);
    h.components.push_back(comp);
  }
  return h;
}

struct TrialOutcome {
  double ratio = 0.0;
  double excess = -1e300;
  bool fail = false;
};

}  // namespace

LemmaCheckReport koopman_lemma_check(const activation::ActivationSpec& act,
                                     const DomainBox& domain_tilde,
                                     const activation::KoopmanNormBound& bound,
                                     std::size_t trials, const mc::McConfig& cfg) {
  if (trials < 1) throw std::invalid_argument("koopman_lemma_check: trials >= 1");
  const DomainBox image = act.image_box(domain_tilde);
  const std::uint64_t hstream = fnv1a64("verify/lemma/h") ^ fnv1a64(act.name());

  std::vector<TrialOutcome> outcomes(trials);
  parallel_for(trials, [&](std::size_t t) {
    Rng rng(cfg.root_seed, hstream, t);
    const mc::GaussianMixture h = random_mixture(rng, image);

    mc::McConfig push_cfg = cfg;
    push_cfg.proposal = mc::Proposal::uniform(domain_tilde);
    const mc::McEstimate pushed = mc::mc_integral(
        [&](const std::vector<double>& x) {
          std::vector<double> y = x;
          act.apply(y);
          const double v = h.eval(y);
          return std::complex<double>(v * v, 0.0);
        },
        push_cfg, hstream ^ (2 * t + 1));

    mc::McConfig base_cfg = cfg;
    base_cfg.proposal = mc::Proposal::uniform(image);
    const mc::McEstimate base = mc::mc_integral(
        [&](const std::vector<double>& y) {
          const double v = h.eval(y);
          return std::complex<double>(v * v, 0.0);
        },
        base_cfg, hstream ^ (2 * t + 2));

    TrialOutcome out;
    if (base.real() <= 0.0) {
      out.fail = true;
      outcomes[t] = out;
      return;
    }
    out.ratio = std::sqrt(std::max(0.0, pushed.real()) / base.real());
    const double se =
        mc::ratio_std_error(std::max(pushed.real(), 1e-300), pushed.std_error,
                            base.real(), base.std_error);
    out.excess = out.ratio - (bound.value + 3.0 * se);
    out.fail = out.excess > 0.0;
    outcomes[t] = out;
  });

  LemmaCheckReport rep;
  rep.trials = trials;
  rep.bound_value = bound.value;
  rep.max_excess = -1e300;
  for (const TrialOutcome& o : outcomes) {
    rep.max_ratio = std::max(rep.max_ratio, o.ratio);
    rep.max_excess = std::max(rep.max_excess, o.excess);
    if (o.fail) ++rep.failures;
  }
  rep.pass = rep.failures == 0;
  return rep;
}

double leaky_tightness_ratio(double slope, std::size_t dim, const mc::McConfig& cfg) {
  const activation::ActivationSpec act = activation::ActivationSpec::leaky(slope);
  // single bump deep in the negative orthant, where sigma(x) = a x exactly;
  // matched Gaussian proposals keep both integrals tightly resolved
  const double width_c = 4.0;
  const std::vector<double> center(dim, -2.5);
  mc::GaussianMixture h;
  h.components.push_back(mc::GaussianMixture::isotropic(center, width_c, 1.0));

  std::vector<double> preimage_center(dim);
  for (std::size_t i = 0; i < dim; ++i) preimage_center[i] = center[i] / slope;

  mc::McConfig push_cfg = cfg;
  push_cfg.proposal =
      mc::Proposal::gaussian(preimage_center, width_c * slope * slope);
  const mc::McEstimate pushed = mc::mc_integral(
      [&](const std::vector<double>& x) {
        std::vector<double> y = x;
        act.apply(y);
        const double v = h.eval(y);
        return std::complex<double>(v * v, 0.0);
      },
      push_cfg, fnv1a64("verify/tightness/push"));

  mc::McConfig base_cfg = cfg;
  base_cfg.proposal = mc::Proposal::gaussian(center, width_c);
  const mc::McEstimate base = mc::mc_integral(
      [&](const std::vector<double>& y) {
        const double v = h.eval(y);
        return std::complex<double>(v * v, 0.0);
      },
      base_cfg, fnv1a64("verify/tightness/base"));

  return std::sqrt(std::max(0.0, pushed.real()) / base.real());
}

model::NetworkSpec affine_template(std::size_t dim, double leaky_slope) {
  model::NetworkSpec spec;
  spec.flavor = model::Flavor::affine_scaled;
  spec.input_domain =
      DomainBox(std::vector<double>(dim, -1.0), std::vector<double>(dim, 1.0));
  model::LayerSpec l1;
  l1.kind = model::LayerKind::dense;
  l1.weight = Matrix::identity(dim);
  l1.bias.assign(dim, 0.0);
  l1.act = activation::ActivationSpec::leaky(leaky_slope);
  spec.layers.push_back(l1);
  model::LayerSpec l2;
  l2.kind = model::LayerKind::dense;
  l2.weight = Matrix::identity(dim);
  l2.bias.assign(dim, 0.0);
  spec.layers.push_back(l2);
  spec.final.kind = model::FinalKind::gaussian_bump;
  spec.final.w3 = 1.0;
  spec.final.norm_mode = model::NormMode::exact;
  spec.finalize();
  return spec;
}

model::NetworkSpec instantiate(const model::NetworkSpec& tmpl, const AffineTuple& t,
                               model::Flavor flavor) {
  model::NetworkSpec spec = tmpl;
  spec.flavor = flavor;
  std::size_t k = 0;
  for (auto& l : spec.layers) {
    if (l.kind != model::LayerKind::dense) continue;
    if (k >= t.weights.size()) {
      throw std::invalid_argument("instantiate: tuple has too few layers");
    }
    l.weight = t.weights[k];
    l.bias = t.biases[k];
    ++k;
  }
  if (k != t.weights.size()) {
    throw std::invalid_argument("instantiate: tuple has too many layers");
  }
  spec.finalize();
  return spec;
}

std::vector<AffineTuple> sample_tuples(std::size_t dim, std::size_t layers,
                                       std::size_t count, double cap,
                                       std::uint64_t seed) {
  std::vector<AffineTuple> out;
  out.reserve(count);
  Rng rng(seed, fnv1a64("verify/tuples"));
  while (out.size() < count) {
    AffineTuple t;
    bool ok = true;
    for (std::size_t l = 0; l < layers && ok; ++l) {
      Matrix w(dim, dim);
      for (double& x : w.data) x = rng.uniform(-1.25, 1.25);
      // |det W|^(-1/2) <= cap  <=>  |det W| >= cap^(-2)
      if (std::abs(linalg::lu_det(w)) < 1.0 / (cap * cap)) {
        ok = false;
        break;
      }
      std::vector<double> b(dim);
      for (double& x : b) x = rng.uniform(-0.5, 0.5);
      t.weights.push_back(std::move(w));
      t.biases.push_back(std::move(b));
    }
    if (ok) out.push_back(std::move(t));
  }
  return out;
}

double det_factor_product(const AffineTuple& t) {
  double p = 1.0;
  for (const Matrix& w : t.weights) p /= std::sqrt(std::abs(linalg::lu_det(w)));
  return p;
}

RademacherEstimate empirical_rademacher(const Matrix& values, std::size_t draws,
                                        RademacherMode mode,
                                        std::uint64_t root_seed) {
  const std::size_t n = values.rows;
  const std::size_t s = values.cols;
  if (s == 0) throw std::invalid_argument("empirical_rademacher: S must be >= 1");
  if (n == 0) throw std::invalid_argument("empirical_rademacher: no candidates");

  RademacherEstimate est;
  est.candidates = n;
  est.mode = mode;

  if (mode == RademacherMode::exact_enumeration) {
    if (s > 16) {
      throw std::invalid_argument(
          "empirical_rademacher: exact enumeration requires S <= 16");
    }
    const std::size_t patterns = std::size_t{1} << s;
    const std::size_t chunk = 1024;
    const std::size_t nchunks = (patterns + chunk - 1) / chunk;
    std::vector<double> partial(nchunks, 0.0);
    parallel_for(nchunks, [&](std::size_t c) {
      double acc = 0.0;
      const std::size_t begin = c * chunk;
      const std::size_t end = std::min(begin + chunk, patterns);
      for (std::size_t mask = begin; mask < end; ++mask) {
        double best = -1e300;
        for (std::size_t i = 0; i < n; ++i) {
          double sum = 0.0;
          const double* row = &values.data[i * s];
          for (std::size_t j = 0; j < s; ++j) {
            sum += ((mask >> j) & 1u) ? row[j] : -row[j];
          }
          best = std::max(best, sum);
        }
        acc += best;
      }
      partial[c] = acc;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    est.draws = patterns;
    est.value = total / static_cast<double>(patterns) / static_cast<double>(s);
    est.std_error = 0.0;
    return est;
  }

  if (draws == 0) throw std::invalid_argument("empirical_rademacher: draws >= 1");
  const std::size_t chunk = 64;
  const std::size_t nchunks = (draws + chunk - 1) / chunk;
  std::vector<double> sums(nchunks, 0.0), sums_sq(nchunks, 0.0);
  parallel_for(nchunks, [&](std::size_t c) {
    Rng rng(root_seed, fnv1a64("verify/rademacher/draws"), c);
    double acc = 0.0, acc_sq = 0.0;
    const std::size_t begin = c * chunk;
    const std::size_t end = std::min(begin + chunk, draws);
    std::vector<double> eps(s);
    for (std::size_t m = begin; m < end; ++m) {
      for (std::size_t j = 0; j < s; ++j) {
        eps[j] = (rng.next_u64() & 1u) ? 1.0 : -1.0;
      }
      double best = -1e300;
      for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        const double* row = &values.data[i * s];
        for (std::size_t j = 0; j < s; ++j) sum += row[j] * eps[j];
        best = std::max(best, sum);
      }
      acc += best;
      acc_sq += best * best;
    }
    sums[c] = acc;
    sums_sq[c] = acc_sq;
  });
  double total = 0.0, total_sq = 0.0;
  for (std::size_t c = 0; c < nchunks; ++c) {
    total += sums[c];
    total_sq += sums_sq[c];
  }
  const double m = static_cast<double>(draws);
  const double mean = total / m;
  const double var = std::max(0.0, (total_sq - m * mean * mean) / (m - 1.0));
  est.draws = draws;
  est.value = mean / static_cast<double>(s);
  est.std_error = std::sqrt(var / m) / static_cast<double>(s);
  return est;
}

RademacherProblem build_affine_problem(const model::NetworkSpec& tmpl,
                                       std::size_t candidates, std::size_t samples,
                                       double cap, double reg_c,
                                       std::size_t inner_samples,
                                       std::uint64_t seed) {
  RademacherProblem prob;
  std::size_t layer_count = 0;
  const std::size_t dim = tmpl.input_domain.dim();
  for (const auto& l : tmpl.layers) {
    if (l.kind == model::LayerKind::dense) ++layer_count;
  }
  prob.candidates = sample_tuples(dim, layer_count, candidates, cap, seed);

  Rng xin(seed, fnv1a64("verify/rademacher/inputs"));
  prob.inputs.resize(samples);
  for (auto& x : prob.inputs) {
    x = xin.uniform_in_box(tmpl.input_domain.lower, tmpl.input_domain.upper);
  }

  prob.nn_values = Matrix(candidates, samples);
  prob.f_values = Matrix(candidates, samples);

  std::vector<model::NetworkSpec> plain_specs(candidates);
  std::vector<double> det_scales(candidates);
  for (std::size_t i = 0; i < candidates; ++i) {
    plain_specs[i] = instantiate(tmpl, prob.candidates[i], model::Flavor::plain);
    double scale = 1.0;
    for (const Matrix& w : prob.candidates[i].weights) {
      scale *= std::sqrt(std::abs(linalg::lu_det(w)));
    }
    det_scales[i] = scale;
    prob.max_det_factor_product = std::max(prob.max_det_factor_product,
                                           det_factor_product(prob.candidates[i]));
  }

  mc::McConfig inner;
  inner.sample_count = inner_samples;
  inner.root_seed = seed;

  parallel_for(candidates * samples, [&](std::size_t cell) {
    const std::size_t i = cell / samples;
    const std::size_t j = cell % samples;
    const model::Regularizer p(prob.inputs[j], reg_c);
    const mc::McEstimate e = model::regularized_forward(
        plain_specs[i], p, inner, fnv1a64("verify/rademacher/value") ^ (cell + 1));
    prob.nn_values(i, j) = e.real();
    prob.f_values(i, j) = e.real() * det_scales[i];
  });
  return prob;
}

// ----------------------------------------------------------------------------
// suites

std::vector<CheckResult> suite_lemmas(std::uint64_t seed, std::size_t trials,
                                      std::size_t mc_samples) {
  std::vector<CheckResult> out;
  mc::McConfig cfg;
  cfg.sample_count = mc_samples;
  cfg.root_seed = seed;
  cfg.proposal = mc::Proposal::uniform(DomainBox({0.0}, {1.0}));  // replaced per use

  struct Case {
    activation::ActivationSpec act;
    std::string label;
  };
  const std::vector<Case> cases = {
      {activation::ActivationSpec::tanh_fn(), "tanh"},
      {activation::ActivationSpec::sigmoid(), "sigmoid"},
      {activation::ActivationSpec::leaky(0.1), "leaky_relu(0.1)"},
      {activation::ActivationSpec::leaky(0.5), "leaky_relu(0.5)"},
      {activation::ActivationSpec::leaky(2.0), "leaky_relu(2)"},
      {activation::ActivationSpec::smooth_leaky(0.1, 0.5),
       "smooth_leaky_relu(0.1,0.5)"},
  };

  for (const Case& c : cases) {
    for (std::size_t d = 1; d <= 3; ++d) {
      Rng rng(seed, fnv1a64("verify/lemmas/box") ^ fnv1a64(c.label), d);
      DomainBox box;
      if (c.act.kind == activation::Kind::leaky_relu) {
        const double b = rng.uniform(2.0, 6.0);
        box = DomainBox(std::vector<double>(d, -b), std::vector<double>(d, b));
      } else {
        std::vector<double> lo(d), hi(d);
        for (std::size_t i = 0; i < d; ++i) {
          const double width = rng.uniform(0.8, 4.0);
          const double center = rng.uniform(-2.0, 2.0);
          lo[i] = center - 0.5 * width;
          hi[i] = center + 0.5 * width;
        }
        box = DomainBox(lo, hi);
      }
      const activation::KoopmanNormBound bound = activation::koopman_norm(c.act, box);
      const LemmaCheckReport rep = koopman_lemma_check(c.act, box, bound, trials, cfg);
      CheckResult r;
      r.name = "lemma_ratio/" + c.label + "/d" + std::to_string(d);
      r.pass = rep.pass;
      r.statistic = rep.max_ratio;
      r.threshold = rep.bound_value;
      r.seed = seed;
      out.push_back(r);
    }
  }

  for (double a : {0.1, 0.5}) {
    for (std::size_t d = 1; d <= 3; ++d) {
      mc::McConfig tcfg = cfg;
      tcfg.sample_count = std::max<std::size_t>(mc_samples, 40000);
      const double ratio = leaky_tightness_ratio(a, d, tcfg);
      const double target =
          0.95 * std::sqrt(std::pow(1.0 / a, static_cast<double>(d)));
      CheckResult r;
      r.name = "leaky_tightness/a" + std::to_string(a).substr(0, 3) + "/d" +
               std::to_string(d);
      r.pass = ratio >= target;
      r.statistic = ratio;
      r.threshold = target;
      r.seed = seed;
      out.push_back(r);
    }
  }

  {
    double worst = 0.0;
    for (double b : {0.5, 1.0, 2.0}) {
      for (std::size_t d = 1; d <= 3; ++d) {
        const DomainBox box(std::vector<double>(d, -b), std::vector<double>(d, b));
        const double got = activation::koopman_norm_tanh(box).value;
        const double want = std::pow(std::cosh(b), static_cast<double>(d));
        worst = std::max(worst, std::abs(got - want) / want);
      }
    }
    out.push_back({"closed_form/tanh_cosh_power", worst <= 1e-6, worst, 1e-6, seed});
  }

  {
    Rng rng(seed, fnv1a64("verify/lemmas/conv"));
    double worst = 0.0;
    for (std::size_t n = 1; n <= 8; ++n) {
      linalg::ConvKernel k;
      k.dims = {n};
      k.theta.resize(n);
      for (double& t : k.theta) t = rng.uniform(-1.0, 1.0);
      std::complex<double> prod(1.0, 0.0);
      for (const auto& g :
           linalg::circulant_spectrum(k, linalg::dft_scaling(k.dims))) {
        prod *= g;
      }
      const double det = std::abs(linalg::lu_det(linalg::conv_matrix(k)));
      if (det < 1e-12) continue;
      worst = std::max(worst, std::abs(std::abs(prod) - det) / det);
    }
    out.push_back({"closed_form/beta_vs_dense_det", worst <= 1e-8, worst, 1e-8, seed});
  }

  {
    double worst = 0.0;
    for (std::size_t m : {std::size_t{2}, std::size_t{4}}) {
      const linalg::SvdResult s = linalg::svd(linalg::pool_matrix(8, m));
      for (std::size_t i = 0; i < s.numerical_rank; ++i) {
        worst = std::max(worst, std::abs(s.singular_values[i] - 1.0));
      }
    }
    out.push_back(
        {"closed_form/pool_singular_values", worst <= 1e-10, worst, 1e-10, seed});
  }

  return out;
}

std::vector<CheckResult> suite_gram(std::uint64_t seed, std::size_t mc_samples) {
  std::vector<CheckResult> out;
  const std::size_t n = 8;
  const model::NetworkSpec tmpl = affine_template(2, 0.5);
  const std::vector<AffineTuple> tuples = sample_tuples(2, 2, n, 4.0, seed);

  std::vector<model::NetworkSpec> specs(n);
  std::vector<mc::CFn> fs(n);
  for (std::size_t i = 0; i < n; ++i) {
    specs[i] = instantiate(tmpl, tuples[i], model::Flavor::affine_scaled);
    fs[i] = [&specs, i](const std::vector<double>& y) {
      return model::forward(specs[i], y);
    };
  }

  mc::McConfig cfg;
  cfg.sample_count = mc_samples;
  cfg.root_seed = seed;
  cfg.proposal = mc::Proposal::gaussian({0.0, 0.0}, 0.08);

  const GramMatrix g = gram(fs, cfg);

  {
    const double excess = g.hermitian_excess();
    out.push_back({"gram/hermitian_within_3se", excess <= 0.0, excess, 0.0, seed});
  }
  {
    const std::vector<double> eig = g.symmetrized_eigenvalues();
    const double floor = -1e-3 * g.trace_real();
    out.push_back(
        {"gram/psd_min_eigenvalue", eig.front() >= floor, eig.front(), floor, seed});
  }
  {
    double worst = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double kij = std::abs(g.at(i, j));
        const double kii = g.at(i, i).real();
        const double kjj = g.at(j, j).real();
        const double viol = kij * kij - kii * kjj;
        const double sigma =
            std::sqrt(std::pow(2.0 * kij * g.std_error(i, j), 2) +
                      std::pow(kii * g.std_error(j, j), 2) +
                      std::pow(kjj * g.std_error(i, i), 2));
        worst = std::max(worst, viol - 3.0 * sigma);
      }
    }
    out.push_back({"gram/cauchy_schwarz", worst <= 0.0, worst, 0.0, seed});
  }
  {
    Rng rng(seed, fnv1a64("verify/overlap"));
    double worst = 0.0;
    for (int pair = 0; pair < 20; ++pair) {
      std::vector<double> x{rng.uniform(-1, 1), rng.uniform(-1, 1)};
      std::vector<double> y{rng.uniform(-1, 1), rng.uniform(-1, 1)};
      const model::Regularizer px(x, 1.0), py(y, 1.0);
      std::vector<double> mid{0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1])};
      mc::McConfig ocfg;
      ocfg.sample_count = 100000;
      ocfg.root_seed = seed;
      // deliberately mismatched width so the estimator has real variance
      ocfg.proposal = mc::Proposal::gaussian(mid, 1.4);
      const mc::McEstimate e = mc::l2_inner(
          [&](const std::vector<double>& z) {
            return std::complex<double>(px.eval(z), 0.0);
          },
          [&](const std::vector<double>& z) {
            return std::complex<double>(py.eval(z), 0.0);
          },
          ocfg, fnv1a64("verify/overlap/mc") ^ (pair + 1));
      const double d2 =
          (x[0] - y[0]) * (x[0] - y[0]) + (x[1] - y[1]) * (x[1] - y[1]);
      worst = std::max(worst, std::abs(e.real() - std::exp(-0.5 * d2)));
    }
    out.push_back({"gram/gaussian_overlap_oracle", worst <= 1e-2, worst, 1e-2, seed});
  }
  {
    std::vector<mc::CFn> one{fs[0]};
    mc::McConfig icfg = cfg;
    icfg.sample_count = std::min<std::size_t>(mc_samples, 50000);
    const IsometryResult shared = isometry_check(one, {{1.0, 0.0}}, fs[0], icfg, true);
    out.push_back({"isometry/shared_stream_zero", shared.residual_linear == 0.0,
                   shared.residual_linear, 0.0, seed});

    std::vector<mc::CFn> two{fs[0], fs[1]};
    const IsometryResult indep =
        isometry_check(two, {{0.7, 0.0}, {-0.4, 0.0}}, fs[2], icfg, false);
    const double stat = std::max(indep.residual_linear, indep.residual_norm);
    out.push_back({"isometry/independent_streams",
                   stat <= 3.0 * indep.combined_std_error, stat,
                   3.0 * indep.combined_std_error, seed});
  }
  return out;
}

std::vector<CheckResult> suite_rademacher(std::uint64_t seed, std::size_t candidates,
                                          std::size_t draws,
                                          std::size_t inner_samples) {
  std::vector<CheckResult> out;
  const double cap = 2.0;
  const double leaky_slope = 0.5;
  const double reg_c = 4.0;
  const model::NetworkSpec tmpl = affine_template(2, leaky_slope);

  const RademacherProblem prob =
      build_affine_problem(tmpl, candidates, 50, cap, reg_c, inner_samples, seed);

  const double koopman = activation::koopman_norm_leaky_relu(leaky_slope, 2).value;
  const double vn = std::pow(kPi / 2.0, 0.5);  // gaussian bump, d = 2
  const double thm1_value = koopman * vn / std::sqrt(50.0);

  {
    const RademacherEstimate est =
        empirical_rademacher(prob.f_values, draws, RademacherMode::mc_search, seed);
    out.push_back({"rademacher/thm1_necessary", est.value <= thm1_value, est.value,
                   thm1_value, seed});
  }
  {
    const RademacherEstimate est =
        empirical_rademacher(prob.nn_values, draws, RademacherMode::mc_search, seed);
    const double thm2_cap = thm1_value * cap * cap;
    out.push_back({"rademacher/thm2_necessary_cap", est.value <= thm2_cap, est.value,
                   thm2_cap, seed});
    const double tight = thm1_value * prob.max_det_factor_product;
    out.push_back({"rademacher/thm2_necessary_tight", est.value <= tight, est.value,
                   tight, seed});
  }
  {
    const RademacherProblem small = build_affine_problem(
        tmpl, candidates, 8, cap, reg_c, inner_samples, seed ^ fnv1a64("s8"));
    const RademacherEstimate exact = empirical_rademacher(
        small.nn_values, 0, RademacherMode::exact_enumeration, seed);
    const RademacherEstimate search =
        empirical_rademacher(small.nn_values, 4000, RademacherMode::mc_search, seed);
    const double rel =
        std::abs(search.value - exact.value) / std::max(exact.value, 1e-12);
    out.push_back({"rademacher/exact_vs_mc_5pct", rel <= 0.05, rel, 0.05, seed});
  }
  {
    const std::vector<AffineTuple> tuples =
        sample_tuples(2, 2, 50, cap, seed ^ fnv1a64("normcheck"));
    std::vector<double> excesses(tuples.size());
    std::vector<model::NetworkSpec> specs(tuples.size());
    for (std::size_t i = 0; i < tuples.size(); ++i) {
      specs[i] = instantiate(tmpl, tuples[i], model::Flavor::affine_scaled);
    }
    parallel_for(tuples.size(), [&](std::size_t i) {
      mc::McConfig cfg;
      cfg.sample_count = 100000;
      cfg.root_seed = seed;
      cfg.proposal = mc::Proposal::gaussian({0.0, 0.0}, 0.05);
      const mc::McEstimate e = mc::mc_integral(
          [&](const std::vector<double>& y) {
            const double v = model::forward(specs[i], y).real();
            return std::complex<double>(v * v, 0.0);
          },
          cfg, fnv1a64("verify/normcheck") ^ (i + 1));
      const double norm = std::sqrt(std::max(0.0, e.real()));
      const double se = 0.5 / std::max(norm, 1e-9) * e.std_error;
      excesses[i] = norm - (koopman * vn + 3.0 * se);
    });
    double worst = -1e300;
    for (double e : excesses) worst = std::max(worst, e);
    out.push_back({"rademacher/model_norm_bound", worst <= 0.0, worst, 0.0, seed});
  }
  return out;
}

}  // namespace kb::verify
