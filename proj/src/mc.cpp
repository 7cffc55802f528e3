#include "kb/mc.hpp"

#include <cmath>
#include <stdexcept>

#include "kb/parallel.hpp"

namespace kb::mc {

namespace {
constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr std::size_t kChunk = 4096;
constexpr double kFloor = 1e-12;
}  // namespace

Proposal Proposal::uniform(linalg::DomainBox b) {
  Proposal p;
  p.kind = Kind::uniform_box;
  p.box = std::move(b);
  return p;
}

Proposal Proposal::gaussian(std::vector<double> center, double width_c) {
  if (width_c <= 0.0) throw std::invalid_argument("proposal: width must be positive");
  Proposal p;
  p.kind = Kind::gaussian;
  p.center = std::move(center);
  p.width_c = width_c;
  return p;
}

std::size_t Proposal::dim() const {
  return kind == Kind::uniform_box ? box.dim() : center.size();
}

double Proposal::density(const std::vector<double>& y) const {
  if (kind == Kind::uniform_box) {
    const double v = box.volume();
    if (v <= 0.0) throw std::domain_error("proposal: degenerate box");
    return box.contains(y) ? 1.0 / v : 0.0;
  }
  double q = 0.0;
  for (std::size_t i = 0; i < center.size(); ++i) {
    const double d = y[i] - center[i];
    q += d * d;
  }
  const double dd = static_cast<double>(center.size());
  return std::pow(width_c / kPi, 0.5 * dd) * std::exp(-width_c * q);
}

std::vector<double> Proposal::sample(Rng& rng) const {
  std::vector<double> y(dim());
  sample_into(rng, y);
  return y;
}

void Proposal::sample_into(Rng& rng, std::vector<double>& y) const {
  y.resize(dim());
  if (kind == Kind::uniform_box) {
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] = rng.uniform(box.lower[i], box.upper[i]);
    }
    return;
  }
  // N(center, 1/(2c) I)
  const double sd = 1.0 / std::sqrt(2.0 * width_c);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = center[i] + sd * rng.normal();
}

void McConfig::validate() const {
  if (sample_count < 100) {
    throw std::invalid_argument("mc config: sample_count must be at least 100");
  }
  if (proposal.kind == Proposal::Kind::uniform_box && proposal.box.volume() <= 0.0) {
    throw std::domain_error("mc config: degenerate uniform proposal");
  }
}

namespace {

struct ChunkStats {
  std::complex<double> sum{0.0, 0.0};
  double sum_sq = 0.0;
  std::size_t n = 0;
  std::size_t both_small = 0;
};

// Weighted-sample body: given a point and the proposal density, return the
// integrand value; `small` reports whether all integrand factors were below
// the coverage floor.
using SampleBody =
    std::function<std::complex<double>(const std::vector<double>&, bool& small)>;

McEstimate run_chunked(const SampleBody& body, const McConfig& cfg,
                       std::uint64_t stream) {
  cfg.validate();
  const std::size_t n = cfg.sample_count;
  const std::size_t nchunks = (n + kChunk - 1) / kChunk;
  std::vector<ChunkStats> partial(nchunks);

  parallel_for(nchunks, [&](std::size_t c) {
    Rng rng(cfg.root_seed, stream, c);
    const std::size_t begin = c * kChunk;
    const std::size_t end = std::min(begin + kChunk, n);
    ChunkStats st;
    std::vector<double> y(cfg.proposal.dim());
    for (std::size_t i = begin; i < end; ++i) {
      cfg.proposal.sample_into(rng, y);
      const double q = cfg.proposal.density(y);
      bool small = false;
      std::complex<double> val = body(y, small);
      const std::complex<double> w = (q > 0.0) ? val / q : std::complex<double>(0.0);
      st.sum += w;
      st.sum_sq += std::norm(w);
      st.n += 1;
      if (small) st.both_small += 1;
    }
    partial[c] = st;
  });

  // index-ordered reduction: identical result for any schedule
  ChunkStats total;
  for (const ChunkStats& st : partial) {
    total.sum += st.sum;
    total.sum_sq += st.sum_sq;
    total.n += st.n;
    total.both_small += st.both_small;
  }

  McEstimate est;
  est.samples = total.n;
  est.seed = cfg.root_seed;
  est.value = total.sum / static_cast<double>(total.n);
  const double mean_sq = std::norm(est.value);
  const double var =
      std::max(0.0, (total.sum_sq - static_cast<double>(total.n) * mean_sq)) /
      static_cast<double>(total.n - 1);
  est.std_error = std::sqrt(var / static_cast<double>(total.n));
  est.coverage_warning =
      total.both_small * 100 > total.n;  // > 1% of samples below the floor
  return est;
}

}  // namespace

McEstimate mc_integral(const CFn& f, const McConfig& cfg, std::uint64_t stream) {
  return run_chunked(
      [&](const std::vector<double>& y, bool& small) {
        std::complex<double> v = f(y);
        small = std::abs(v) < kFloor;
        return v;
      },
      cfg, stream);
}

McEstimate l2_inner(const CFn& f, const CFn& g, const McConfig& cfg,
                    std::uint64_t stream) {
  return run_chunked(
      [&](const std::vector<double>& y, bool& small) {
        const std::complex<double> fv = f(y);
        const std::complex<double> gv = g(y);
        small = std::abs(fv) < kFloor && std::abs(gv) < kFloor;
        return fv * std::conj(gv);
      },
      cfg, stream);
}

GaussianMixture::Component GaussianMixture::isotropic(std::vector<double> center,
                                                      double width_c,
                                                      double weight) {
  Component c;
  c.widths.assign(center.size(), width_c);
  c.center = std::move(center);
  c.weight = weight;
  return c;
}

double GaussianMixture::eval(const std::vector<double>& y) const {
  double s = 0.0;
  for (const Component& c : components) {
    double q = 0.0;
    for (std::size_t i = 0; i < c.center.size(); ++i) {
      const double d = y[i] - c.center[i];
      q += c.widths[i] * d * d;
    }
    s += c.weight * std::exp(-q);
  }
  return s;
}

double gaussian_overlap(double c1, const std::vector<double>& m1, double c2,
                        const std::vector<double>& m2) {
  const double dd = static_cast<double>(m1.size());
  double dist_sq = 0.0;
  for (std::size_t i = 0; i < m1.size(); ++i) {
    const double d = m1[i] - m2[i];
    dist_sq += d * d;
  }
  return std::exp(-c1 * c2 / (c1 + c2) * dist_sq) *
         std::pow(kPi / (c1 + c2), 0.5 * dd);
}

double GaussianMixture::l2_norm_sq_analytic() const {
  double s = 0.0;
  for (const Component& a : components) {
    for (const Component& b : components) {
      double prod = 1.0;
      for (std::size_t i = 0; i < a.center.size(); ++i) {
        const double c1 = a.widths[i], c2 = b.widths[i];
        const double d = a.center[i] - b.center[i];
        prod *= std::exp(-c1 * c2 / (c1 + c2) * d * d) *
                std::sqrt(kPi / (c1 + c2));
      }
      s += a.weight * b.weight * prod;
    }
  }
  return s;
}

double ratio_std_error(double num, double num_se, double den, double den_se) {
  if (num <= 0.0 || den <= 0.0) return std::numeric_limits<double>::infinity();
  const double r = std::sqrt(num / den);
  const double rel = std::sqrt((num_se / num) * (num_se / num) +
                               (den_se / den) * (den_se / den));
  return 0.5 * r * rel;
}

}  // namespace kb::mc
