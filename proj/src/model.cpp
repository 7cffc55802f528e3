#include "kb/model.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "kb/error.hpp"
#include "json.hpp"

namespace kb::model {

namespace {
constexpr double kPi = 3.14159265358979323846264338327950288;
using json = nlohmann::ordered_json;
}  // namespace

std::size_t LayerSpec::out_dim(std::size_t in_dim) const {
  switch (kind) {
    case LayerKind::dense: return weight.rows;
    case LayerKind::conv: return conv.size();
    case LayerKind::pool: return in_dim;
    case LayerKind::heisenberg: return in_dim;
  }
  return in_dim;
}

double LookupTable::eval(const std::vector<double>& x) const {
  const std::size_t d = dims.size();
  std::vector<std::size_t> i0(d);
  std::vector<double> frac(d);
  for (std::size_t k = 0; k < d; ++k) {
    if (dims[k] == 1) {
      i0[k] = 0;
      frac[k] = 0.0;
      continue;
    }
    const double w = box.upper[k] - box.lower[k];
    double t = (x[k] - box.lower[k]) / w * static_cast<double>(dims[k] - 1);
    t = std::min(std::max(t, 0.0), static_cast<double>(dims[k] - 1));
    i0[k] = std::min(static_cast<std::size_t>(t), dims[k] - 2);
    frac[k] = t - static_cast<double>(i0[k]);
  }
  double acc = 0.0;
  const std::size_t corners = std::size_t{1} << d;
  for (std::size_t c = 0; c < corners; ++c) {
    double w = 1.0;
    std::size_t flat = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const bool hi = (c >> k) & 1u;
      w *= hi ? frac[k] : 1.0 - frac[k];
      flat = flat * dims[k] + i0[k] + (hi ? 1 : 0) * (dims[k] > 1 ? 1 : 0);
    }
    acc += w * values[flat];
  }
  return acc;
}

double FinalTransform::eval(const std::vector<double>& z) const {
  switch (kind) {
    case FinalKind::gaussian_bump: {
      double q = 0.0;
      for (double v : z) q += v * v;
      return w3 * std::exp(-q);
    }
    case FinalKind::softmax: {
      double m = z[0];
      for (double v : z) m = std::max(m, v);
      double sum = 0.0;
      for (double v : z) sum += std::exp(v - m);
      return std::exp(z[0] - m) / sum;
    }
    case FinalKind::lookup_table:
      return table.eval(z);
  }
  return 0.0;
}

std::size_t NetworkSpec::output_dim() const {
  std::size_t d = input_domain.dim();
  for (const LayerSpec& l : layers) d = l.out_dim(d);
  return d;
}

void NetworkSpec::validate() const {
  std::size_t d = input_domain.dim();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::dense:
        if (l.weight.cols != d) {
          throw ConfigError("layer " + std::to_string(i) + ": dense weight cols " +
                            std::to_string(l.weight.cols) + " != input dim " +
                            std::to_string(d));
        }
        if (!l.bias.empty() && l.bias.size() != l.weight.rows) {
          throw ConfigError("layer " + std::to_string(i) + ": bias length mismatch");
        }
        if (!l.weight.finite()) {
          throw ConfigError("layer " + std::to_string(i) + ": non-finite weights");
        }
        if (flavor == Flavor::affine_scaled && l.weight.rows != l.weight.cols) {
          throw ConfigError("affine_scaled flavor requires square dense layers");
        }
        break;
      case LayerKind::conv:
        if (l.conv.size() != d) {
          throw ConfigError("layer " + std::to_string(i) + ": conv index set size " +
                            std::to_string(l.conv.size()) + " != input dim " +
                            std::to_string(d));
        }
        break;
      case LayerKind::pool:
        if (l.pool_size == 0 || d % l.pool_size != 0) {
          throw ConfigError("layer " + std::to_string(i) +
                            ": pool_size must divide the width");
        }
        break;
      case LayerKind::heisenberg:
        if (l.heis_a.size() != d || l.heis_b.size() != d) {
          throw ConfigError("layer " + std::to_string(i) +
                            ": heisenberg a/b dimension mismatch");
        }
        break;
    }
    d = l.out_dim(d);
  }
}

void NetworkSpec::finalize() {
  for (LayerSpec& l : layers) {
    if (l.kind == LayerKind::pool && l.pool.rows == 0) {
      // width known only from context; resolved in validate order
    }
  }
  std::size_t d = input_domain.dim();
  for (LayerSpec& l : layers) {
    if (l.kind == LayerKind::pool) l.pool = linalg::pool_matrix(d, l.pool_size);
    d = l.out_dim(d);
  }
  validate();
  affine_det_scale = 1.0;
  if (flavor == Flavor::affine_scaled) {
    for (const LayerSpec& l : layers) {
      if (l.kind != LayerKind::dense) continue;
      double det = 1.0;
      for (double s : linalg::svd(l.weight).singular_values) det *= s;
      affine_det_scale *= std::sqrt(det);
    }
  }
}

namespace {

linalg::DomainBox linear_image(const LayerSpec& l, const linalg::DomainBox& box) {
  switch (l.kind) {
    case LayerKind::dense:
      return linalg::interval_affine_image(l.weight, l.bias, box);
    case LayerKind::conv:
      return linalg::interval_affine_image(linalg::conv_matrix(l.conv), {}, box);
    case LayerKind::pool:
      return linalg::interval_affine_image(l.pool, {}, box);
    case LayerKind::heisenberg: {
      linalg::DomainBox out = box;
      for (std::size_t i = 0; i < out.dim(); ++i) {
        out.lower[i] -= l.heis_b[i];
        out.upper[i] -= l.heis_b[i];
      }
      return out;
    }
  }
  return box;
}

double recipe_operator_norm(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::dense: return linalg::spectral_norm(l.weight);
    case LayerKind::conv: return linalg::spectral_norm(linalg::conv_matrix(l.conv));
    case LayerKind::pool: return linalg::spectral_norm(l.pool);
    case LayerKind::heisenberg: return 1.0;
  }
  return 1.0;
}

double bias_inf_norm(const LayerSpec& l) {
  const std::vector<double>* b = nullptr;
  if (l.kind == LayerKind::dense) b = &l.bias;
  if (l.kind == LayerKind::heisenberg) b = &l.heis_b;
  if (!b) return 0.0;
  double m = 0.0;
  for (double v : *b) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

NetworkSpec propagate_domains(const NetworkSpec& spec) {
  NetworkSpec out = spec;
  out.warnings.clear();
  linalg::DomainBox tight_box = spec.input_domain;
  double recipe_radius = spec.input_domain.radius_inf();

  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    LayerSpec& l = out.layers[i];
    const linalg::DomainBox tight_tilde = linear_image(l, tight_box);

    if (spec.domain_mode == DomainMode::tight) {
      l.domain_tilde = tight_tilde;
    } else {
      recipe_radius = recipe_operator_norm(l) * recipe_radius + bias_inf_norm(l);
      linalg::DomainBox recipe =
          linalg::DomainBox::centered(tight_tilde.dim(), recipe_radius);
      if (!recipe.contains(tight_tilde)) {
        out.warnings.push_back(
            "layer " + std::to_string(i) +
            ": recipe box does not enclose the tight image; inflated to cover it");
        recipe = recipe.hull(tight_tilde);
      }
      l.domain_tilde = recipe;
    }

    if (l.act.has_value()) {
      l.domain = l.act->image_box(*l.domain_tilde);
    } else {
      l.domain = l.domain_tilde;
    }
    tight_box = l.act.has_value() ? l.act->image_box(tight_tilde) : tight_tilde;
  }
  return out;
}

bool input_in_domain(const NetworkSpec& spec, const std::vector<double>& x) {
  return spec.input_domain.contains(x);
}

std::complex<double> forward(const NetworkSpec& spec, const std::vector<double>& x) {
  if (x.size() != spec.input_domain.dim()) {
    throw std::invalid_argument("forward: input dimension mismatch");
  }
  // reused per thread; forward is called inside tight MC sample loops
  static thread_local std::vector<double> cur, next;
  cur = x;
  std::complex<double> phase(1.0, 0.0);
  bool inside = true;

  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& l = spec.layers[li];
    switch (l.kind) {
      case LayerKind::dense: {
        next.assign(l.weight.rows, 0.0);
        for (std::size_t i = 0; i < l.weight.rows; ++i) {
          double s = l.bias.empty() ? 0.0 : l.bias[i];
          const double* row = &l.weight.data[i * l.weight.cols];
          for (std::size_t j = 0; j < l.weight.cols; ++j) s += row[j] * cur[j];
          next[i] = s;
        }
        std::swap(cur, next);
        break;
      }
      case LayerKind::conv:
        cur = linalg::conv_apply(l.conv, cur);
        break;
      case LayerKind::pool:
        cur = linalg::matvec(l.pool, cur);
        break;
      case LayerKind::heisenberg: {
        double dot_ab = 0.0, dot_ax = 0.0;
        for (std::size_t i = 0; i < cur.size(); ++i) {
          dot_ab += l.heis_a[i] * l.heis_b[i];
          dot_ax += l.heis_a[i] * cur[i];
        }
        const double ang = l.heis_c - 0.5 * dot_ab + dot_ax;
        phase *= std::complex<double>(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < cur.size(); ++i) cur[i] -= l.heis_b[i];
        break;
      }
    }
    for (double v : cur) {
      if (!std::isfinite(v)) {
        throw std::runtime_error("forward: non-finite intermediate at layer " +
                                 std::to_string(li));
      }
    }
    if (spec.flavor == Flavor::cnn && l.domain_tilde.has_value() &&
        !l.domain_tilde->contains(cur)) {
      inside = false;
    }
    if (l.act.has_value()) l.act->apply(cur);
    if (spec.flavor == Flavor::cnn && l.domain.has_value() &&
        !l.domain->contains(cur)) {
      inside = false;
    }
  }

  double val = spec.final.eval(cur);
  if (spec.flavor == Flavor::affine_scaled) val *= spec.affine_det_scale;
  if (spec.flavor == Flavor::cnn && !inside) return {0.0, 0.0};
  return phase * val;
}

Regularizer::Regularizer(std::vector<double> c, double w) : center(std::move(c)), width_c(w) {
  if (center.empty()) throw std::invalid_argument("regularizer: empty center");
  if (!(width_c > 0.0)) {
    throw std::invalid_argument("regularizer: width must be positive");
  }
  norm_const = std::pow(2.0 * width_c / kPi, 0.25 * static_cast<double>(center.size()));
}

double Regularizer::eval(const std::vector<double>& y) const {
  double q = 0.0;
  for (std::size_t i = 0; i < center.size(); ++i) {
    const double d = y[i] - center[i];
    q += d * d;
  }
  return norm_const * std::exp(-width_c * q);
}

mc::McEstimate regularized_forward(const NetworkSpec& spec, const Regularizer& p,
                                   const mc::McConfig& mc_template,
                                   std::uint64_t stream) {
  if (p.dim() != spec.input_domain.dim()) {
    throw std::invalid_argument("regularized_forward: regularizer dimension mismatch");
  }
  mc::McConfig cfg = mc_template;
  cfg.proposal = mc::Proposal::gaussian(p.center, p.width_c);
  if (stream == 0) stream = fnv1a64("model/regularized_forward");
  return mc::mc_integral(
      [&](const std::vector<double>& y) { return forward(spec, y) * p.eval(y); },
      cfg, stream);
}

double v_norm(const FinalTransform& final, const linalg::DomainBox& last_domain,
              std::size_t mc_samples, std::uint64_t seed) {
  const double d = static_cast<double>(last_domain.dim());
  switch (final.norm_mode) {
    case NormMode::exact:
      if (final.kind != FinalKind::gaussian_bump) {
        throw ConfigError("v_norm: exact mode is only available for gaussian_bump");
      }
      return std::abs(final.w3) * std::pow(kPi / 2.0, 0.25 * d);
    case NormMode::measure_bound: {
      Rng rng(seed, fnv1a64("model/v_norm/measure_check"));
      for (int i = 0; i < 512; ++i) {
        const std::vector<double> x =
            rng.uniform_in_box(last_domain.lower, last_domain.upper);
        if (std::abs(final.eval(x)) > 1.0) {
          throw std::domain_error(
              "v_norm: measure_bound requires |v| <= 1, violated on a sample");
        }
      }
      return std::sqrt(last_domain.volume());
    }
    case NormMode::mc_integral: {
      mc::McConfig cfg;
      cfg.sample_count = mc_samples;
      cfg.root_seed = seed;
      cfg.proposal = mc::Proposal::uniform(last_domain);
      const mc::McEstimate est = mc::mc_integral(
          [&](const std::vector<double>& y) {
            const double v = final.eval(y);
            return std::complex<double>(v * v, 0.0);
          },
          cfg, fnv1a64("model/v_norm/mc"));
      return std::sqrt(std::max(0.0, est.real()));
    }
  }
  throw ConfigError("v_norm: unknown norm mode");
}

// ---------------------------------------------------------------------------
// file formats

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

std::vector<double> as_vector(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be an array");
  std::vector<double> v;
  v.reserve(j.size());
  for (const auto& e : j) v.push_back(e.get<double>());
  return v;
}

activation::ActivationSpec parse_activation(const json& j) {
  check_keys(j, {"kind", "slope", "alpha", "mu"}, "activation");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "identity") return activation::ActivationSpec::identity();
  if (kind == "tanh") return activation::ActivationSpec::tanh_fn();
  if (kind == "sigmoid") return activation::ActivationSpec::sigmoid();
  if (kind == "relu") return activation::ActivationSpec::relu();
  if (kind == "leaky_relu") {
    return activation::ActivationSpec::leaky(j.value("slope", 0.01));
  }
  if (kind == "smooth_leaky_relu") {
    return activation::ActivationSpec::smooth_leaky(j.value("alpha", 0.1),
                                                    j.value("mu", 0.5));
  }
  throw ConfigError("unknown activation kind '" + kind + "'");
}

LayerSpec parse_layer(const json& j, const std::string& base_dir, std::size_t index) {
  const std::string where = "layers[" + std::to_string(index) + "]";
  check_keys(j,
             {"kind", "rows", "cols", "weights", "weights_file", "bias",
              "activation", "index_set", "theta", "pool_size", "a", "b", "c"},
             where);
  LayerSpec l;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "dense") {
    l.kind = LayerKind::dense;
    if (j.contains("weights_file")) {
      std::string p = j.at("weights_file").get<std::string>();
      if (!p.empty() && p.front() != '/' && !base_dir.empty()) p = base_dir + "/" + p;
      l.weight = read_weight_file(p);
      if (j.contains("rows") && j.at("rows").get<std::size_t>() != l.weight.rows) {
        throw ConfigError(where + ": rows disagrees with the weight file");
      }
      if (j.contains("cols") && j.at("cols").get<std::size_t>() != l.weight.cols) {
        throw ConfigError(where + ": cols disagrees with the weight file");
      }
    } else {
      const std::size_t rows = j.at("rows").get<std::size_t>();
      const std::size_t cols = j.at("cols").get<std::size_t>();
      l.weight = linalg::Matrix(rows, cols, as_vector(j.at("weights"), where + ".weights"));
    }
    if (j.contains("bias")) l.bias = as_vector(j.at("bias"), where + ".bias");
  } else if (kind == "conv") {
    l.kind = LayerKind::conv;
    for (const auto& e : j.at("index_set")) {
      l.conv.dims.push_back(e.get<std::size_t>());
    }
    l.conv.theta = as_vector(j.at("theta"), where + ".theta");
    if (l.conv.theta.size() != l.conv.size()) {
      throw ConfigError(where + ": theta length does not match the index set");
    }
  } else if (kind == "pool") {
    l.kind = LayerKind::pool;
    l.pool_size = j.at("pool_size").get<std::size_t>();
  } else if (kind == "heisenberg") {
    l.kind = LayerKind::heisenberg;
    l.heis_a = as_vector(j.at("a"), where + ".a");
    l.heis_b = as_vector(j.at("b"), where + ".b");
    l.heis_c = j.at("c").get<double>();
  } else {
    throw ConfigError(where + ": unknown layer kind '" + kind + "'");
  }
  if (j.contains("activation")) l.act = parse_activation(j.at("activation"));
  return l;
}

FinalTransform parse_final(const json& j) {
  check_keys(j, {"kind", "w3", "norm_mode", "box", "dims", "values"}, "final");
  FinalTransform f;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "gaussian_bump") {
    f.kind = FinalKind::gaussian_bump;
    f.w3 = j.value("w3", 1.0);
  } else if (kind == "softmax") {
    f.kind = FinalKind::softmax;
    f.norm_mode = NormMode::measure_bound;
  } else if (kind == "lookup_table") {
    f.kind = FinalKind::lookup_table;
    f.norm_mode = NormMode::mc_integral;
    const json& b = j.at("box");
    check_keys(b, {"lower", "upper"}, "final.box");
    f.table.box = linalg::DomainBox(as_vector(b.at("lower"), "final.box.lower"),
                                    as_vector(b.at("upper"), "final.box.upper"));
    for (const auto& e : j.at("dims")) f.table.dims.push_back(e.get<std::size_t>());
    f.table.values = as_vector(j.at("values"), "final.values");
    std::size_t n = 1;
    for (std::size_t dk : f.table.dims) n *= dk;
    if (f.table.values.size() != n) {
      throw ConfigError("final.values length does not match dims");
    }
  } else {
    throw ConfigError("unknown final kind '" + kind + "'");
  }
  if (j.contains("norm_mode")) {
    const std::string m = j.at("norm_mode").get<std::string>();
    if (m == "exact") {
      f.norm_mode = NormMode::exact;
    } else if (m == "measure_bound") {
      f.norm_mode = NormMode::measure_bound;
    } else if (m == "mc") {
      f.norm_mode = NormMode::mc_integral;
    } else {
      throw ConfigError("unknown norm_mode '" + m + "'");
    }
  }
  return f;
}

}  // namespace

NetworkSpec parse_network(const std::string& json_text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("network spec: invalid JSON: ") + e.what());
  }
  check_keys(j, {"model_flavor", "domain_mode", "input_domain", "layers", "final", "train"},
             "network spec");
  NetworkSpec spec;
  const std::string flavor = j.value("model_flavor", std::string("plain"));
  if (flavor == "plain") {
    spec.flavor = Flavor::plain;
  } else if (flavor == "affine_scaled") {
    spec.flavor = Flavor::affine_scaled;
  } else if (flavor == "heisenberg") {
    spec.flavor = Flavor::heisenberg;
  } else if (flavor == "cnn") {
    spec.flavor = Flavor::cnn;
  } else {
    throw ConfigError("unknown model_flavor '" + flavor + "'");
  }
  const std::string mode = j.value("domain_mode", std::string("tight"));
  if (mode == "tight") {
    spec.domain_mode = DomainMode::tight;
  } else if (mode == "paper_recipe") {
    spec.domain_mode = DomainMode::paper_recipe;
  } else {
    throw ConfigError("unknown domain_mode '" + mode + "'");
  }
  const json& dj = j.at("input_domain");
  check_keys(dj, {"lower", "upper"}, "input_domain");
  spec.input_domain = linalg::DomainBox(as_vector(dj.at("lower"), "input_domain.lower"),
                                        as_vector(dj.at("upper"), "input_domain.upper"));
  std::size_t idx = 0;
  for (const auto& lj : j.at("layers")) {
    spec.layers.push_back(parse_layer(lj, base_dir, idx++));
  }
  spec.final = parse_final(j.at("final"));
  spec.finalize();
  return propagate_domains(spec);
}

NetworkSpec load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open network spec '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  std::string base_dir;
  const auto slash = path.find_last_of('/');
  if (slash != std::string::npos) base_dir = path.substr(0, slash);
  return parse_network(ss.str(), base_dir);
}

linalg::Matrix read_weight_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open weight file '" + path + "'");
  char header[16];
  in.read(header, 16);
  if (!in || std::memcmp(header, "KBW1", 4) != 0) {
    throw ConfigError("weight file '" + path + "': bad magic");
  }
  std::uint32_t rows = 0, cols = 0;
  std::memcpy(&rows, header + 4, 4);
  std::memcpy(&cols, header + 8, 4);
  linalg::Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data.data()),
          static_cast<std::streamsize>(sizeof(double) * m.data.size()));
  if (!in) throw ConfigError("weight file '" + path + "': truncated payload");
  return m;
}

void write_weight_file(const std::string& path, const linalg::Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write weight file '" + path + "'");
  char header[16] = {};
  std::memcpy(header, "KBW1", 4);
  const std::uint32_t rows = static_cast<std::uint32_t>(m.rows);
  const std::uint32_t cols = static_cast<std::uint32_t>(m.cols);
  std::memcpy(header + 4, &rows, 4);
  std::memcpy(header + 8, &cols, 4);
  out.write(header, 16);
  out.write(reinterpret_cast<const char*>(m.data.data()),
            static_cast<std::streamsize>(sizeof(double) * m.data.size()));
}

}  // namespace kb::model
