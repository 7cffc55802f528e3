#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kb/bound.hpp"
#include "kb/error.hpp"
#include "kb/model.hpp"
#include "kb/parallel.hpp"
#include "kb/train.hpp"
#include "kb/verify.hpp"

namespace {

using json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;  // domain or verification failure
constexpr int kExitUsage = 2;    // usage or config error

void print_warnings(const kb::model::NetworkSpec& spec) {
  for (const std::string& w : spec.warnings) {
    std::cerr << "warning: " << w << "\n";
  }
}

// ---------------------------------------------------------------------------

int cmd_bound(const std::string& spec_path, const std::string& theorem,
              std::size_t samples, double cap, const std::string& report_path,
              std::uint64_t seed, const std::string& alpha_mode_name) {
  std::cout << "seed: " << seed << "\n";
  const kb::model::NetworkSpec spec = kb::model::load_network(spec_path);
  print_warnings(spec);

  kb::bound::Theorem tag;
  if (theorem == "thm1") {
    tag = kb::bound::Theorem::thm1;
  } else if (theorem == "thm2") {
    tag = kb::bound::Theorem::thm2;
  } else if (theorem == "thm3") {
    tag = kb::bound::Theorem::thm3;
  } else if (theorem == "thm4") {
    tag = kb::bound::Theorem::thm4;
  } else if (theorem == "cnn") {
    tag = kb::bound::Theorem::cnn_prop;
  } else {
    throw kb::ConfigError("unknown theorem tag '" + theorem + "'");
  }
  const kb::bound::AlphaMode alpha_mode = alpha_mode_name == "estimate"
                                              ? kb::bound::AlphaMode::estimate
                                              : kb::bound::AlphaMode::conservative;

  kb::mc::McConfig mc_cfg;
  mc_cfg.root_seed = seed;
  const kb::bound::BoundReport report =
      kb::bound::evaluate(tag, spec, samples, cap, mc_cfg, alpha_mode);

  std::printf("%-6s %-14s %-12s %-10s %-12s %s\n", "layer", "koopman_norm",
              "det_factor", "alpha", "kernel_vol", "beta_modulus");
  for (const auto& f : report.per_layer) {
    std::printf("%-6zu %-14.6g %-12.6g %-10.6g %-12.6g %s\n", f.layer_index,
                f.koopman_norm, f.det_factor,
                f.alpha.has_value() ? f.alpha->real() : 1.0, f.kernel_volume,
                f.beta_modulus.has_value() ? std::to_string(*f.beta_modulus).c_str()
                                           : "-");
  }
  std::printf("v_norm = %.6g\n", report.v_norm);
  std::printf("cap value (D-ball sup) = %.6g\n", report.cap_value);
  std::printf("bound = %.6g\n", report.value);

  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw kb::ConfigError("cannot write report '" + report_path + "'");
    out << report.to_json();
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_verify(const std::string& suite, std::uint64_t seed, std::size_t trials,
               std::size_t mc_samples, std::size_t candidates, std::size_t draws,
               const std::string& report_path) {
  std::cout << "seed: " << seed << "\n";
  std::vector<kb::verify::CheckResult> results;
  const auto append = [&](std::vector<kb::verify::CheckResult> r) {
    results.insert(results.end(), r.begin(), r.end());
  };
  if (suite == "lemmas" || suite == "all") {
    append(kb::verify::suite_lemmas(seed, trials, mc_samples));
  }
  if (suite == "gram" || suite == "all") {
    append(kb::verify::suite_gram(seed));
  }
  if (suite == "rademacher" || suite == "all") {
    append(kb::verify::suite_rademacher(seed, candidates, draws));
  }
  if (results.empty()) {
    throw kb::ConfigError("unknown suite '" + suite +
                          "' (expected lemmas|gram|rademacher|all)");
  }

  std::size_t failures = 0;
  for (const auto& r : results) {
    if (!r.pass) ++failures;
    std::printf("%-4s %-45s statistic=%-12.6g threshold=%-12.6g seed=%llu\n",
                r.pass ? "PASS" : "FAIL", r.name.c_str(), r.statistic, r.threshold,
                static_cast<unsigned long long>(r.seed));
  }
  std::printf("summary: %zu checks, %zu failed\n", results.size(), failures);

  if (!report_path.empty()) {
    json j = json::array();
    for (const auto& r : results) {
      json e;
      e["name"] = r.name;
      e["status"] = r.pass ? "pass" : "fail";
      e["statistic"] = r.statistic;
      e["threshold"] = r.threshold;
      e["seed"] = r.seed;
      j.push_back(e);
    }
    std::ofstream out(report_path);
    if (!out) throw kb::ConfigError("cannot write report '" + report_path + "'");
    out << j.dump(2) << "\n";
  }
  return failures == 0 ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

kb::train::TrainConfig parse_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw kb::ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw kb::ConfigError(std::string("train config: invalid JSON: ") + e.what());
  }
  if (!j.contains("train")) throw kb::ConfigError("config is missing a train section");
  const json& t = j.at("train");
  for (auto it = t.begin(); it != t.end(); ++it) {
    static const std::vector<std::string> allowed = {
        "experiment", "sample_size", "epochs",    "batch_size",   "optimizer",
        "lambda",     "data_seed",   "init_seed", "output_prefix"};
    bool ok = false;
    for (const auto& k : allowed) ok = ok || it.key() == k;
    if (!ok) throw kb::ConfigError("unknown key 'train." + it.key() + "'");
  }
  kb::train::TrainConfig cfg;
  const std::string exp = t.value("experiment", std::string("synthetic_regression"));
  if (exp == "synthetic_regression") {
    cfg.experiment = kb::train::Experiment::synthetic_regression;
  } else if (exp == "dense_classifier") {
    cfg.experiment = kb::train::Experiment::dense_classifier;
  } else {
    throw kb::ConfigError("unknown experiment '" + exp + "'");
  }
  cfg.sample_size = t.value("sample_size", std::size_t{1000});
  cfg.epochs = t.value("epochs", std::size_t{200});
  cfg.batch_size = t.value("batch_size", std::size_t{32});
  cfg.lambda = t.value("lambda", 0.1);
  cfg.data_seed = t.value("data_seed", std::uint64_t{1});
  cfg.init_seed = t.value("init_seed", std::uint64_t{2});
  cfg.output_prefix = t.value("output_prefix", std::string("train"));
  if (t.contains("optimizer")) {
    const json& o = t.at("optimizer");
    for (auto it = o.begin(); it != o.end(); ++it) {
      static const std::vector<std::string> allowed = {"kind", "lr", "beta1",
                                                       "beta2", "eps"};
      bool ok = false;
      for (const auto& k : allowed) ok = ok || it.key() == k;
      if (!ok) throw kb::ConfigError("unknown key 'train.optimizer." + it.key() + "'");
    }
    const std::string kind = o.value("kind", std::string("sgd"));
    if (kind == "sgd") {
      cfg.optimizer.kind = kb::train::OptimizerConfig::Kind::sgd;
    } else if (kind == "adam") {
      cfg.optimizer.kind = kb::train::OptimizerConfig::Kind::adam;
    } else {
      throw kb::ConfigError("unknown optimizer '" + kind + "'");
    }
    cfg.optimizer.lr = o.value("lr", 0.001);
    cfg.optimizer.beta1 = o.value("beta1", 0.9);
    cfg.optimizer.beta2 = o.value("beta2", 0.999);
    cfg.optimizer.eps = o.value("eps", 1e-8);
  }
  return cfg;
}

void apply_override(kb::train::TrainConfig& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) {
    throw kb::ConfigError("override '" + kv + "' is not key=value");
  }
  const std::string key = kv.substr(0, eq);
  const std::string val = kv.substr(eq + 1);
  try {
    if (key == "train.epochs") {
      cfg.epochs = std::stoull(val);
    } else if (key == "train.batch_size") {
      cfg.batch_size = std::stoull(val);
    } else if (key == "train.sample_size") {
      cfg.sample_size = std::stoull(val);
    } else if (key == "train.lambda") {
      cfg.lambda = std::stod(val);
    } else if (key == "train.data_seed") {
      cfg.data_seed = std::stoull(val);
    } else if (key == "train.init_seed") {
      cfg.init_seed = std::stoull(val);
    } else if (key == "train.optimizer.lr") {
      cfg.optimizer.lr = std::stod(val);
    } else if (key == "train.output_prefix") {
      cfg.output_prefix = val;
    } else {
      throw kb::ConfigError("unknown override key '" + key + "'");
    }
  } catch (const std::invalid_argument&) {
    throw kb::ConfigError("override '" + kv + "' has a malformed value");
  }
}

int cmd_train(const std::string& config_path, std::size_t runs,
              const std::vector<std::string>& overrides) {
  kb::train::TrainConfig base = parse_train_config(config_path);
  for (const std::string& kv : overrides) apply_override(base, kv);
  base.validate();
  std::cout << "seed: data=" << base.data_seed << " init=" << base.init_seed << "\n";

  bool diverged = false;
  for (std::size_t run = 0; run < runs; ++run) {
    kb::train::TrainConfig cfg = base;
    cfg.data_seed = base.data_seed + run;
    cfg.init_seed = base.init_seed + run;
    const std::string suffix = "_" + std::to_string(run) + ".csv";

    if (cfg.experiment == kb::train::Experiment::synthetic_regression) {
      const kb::train::TrainLog log = kb::train::run_synthetic(cfg);
      kb::train::emit_plot_data(log, cfg.output_prefix + suffix);
      diverged = diverged || log.diverged;
      std::vector<double> gaps, regs;
      for (const auto& row : log.rows) {
        gaps.push_back(row.gap);
        regs.push_back(row.regularizer);
      }
      const double rho = log.rows.size() > 1 ? kb::train::spearman(gaps, regs) : 0.0;
      const auto& last = log.rows.back();
      std::printf(
          "run %zu: epochs=%zu train_loss=%.6g test_loss=%.6g gap=%.6g r=%.6g "
          "spearman(gap,r)=%.4f%s\n",
          run, last.epoch, last.train_loss, last.test_loss, last.gap,
          last.regularizer, rho, log.diverged ? " DIVERGED" : "");
      const std::size_t mid = log.rows.size() / 2;
      if (log.rows.back().regularizer > log.rows[mid].regularizer) {
        std::cerr << "warning: regularizer value did not decrease over the "
                     "second half of training (run "
                  << run << ")\n";
      }
    } else {
      const kb::train::DenseClassifierResult res =
          kb::train::run_dense_classifier(cfg);
      kb::train::emit_plot_data(res.regularized, cfg.output_prefix + "_reg" + suffix);
      kb::train::emit_plot_data(res.control, cfg.output_prefix + "_control" + suffix);
      diverged = diverged || res.regularized.diverged || res.control.diverged;
      const auto& r = res.regularized.rows.back();
      const auto& c = res.control.rows.back();
      std::printf(
          "run %zu: reg_acc=%.4f control_acc=%.4f reg_r=%.6g (epoch0 %.6g) "
          "r1=%.3f r2=%.3f r3=%.3f (epoch0 %.3f/%.3f/%.3f)%s\n",
          run, r.test_accuracy, c.test_accuracy, r.regularizer,
          res.regularized.rows.front().regularizer, r.reg_r1, r.reg_r2, r.reg_r3,
          res.regularized.rows.front().reg_r1, res.regularized.rows.front().reg_r2,
          res.regularized.rows.front().reg_r3,
          (res.regularized.diverged || res.control.diverged) ? " DIVERGED" : "");
    }
  }
  return diverged ? kExitFailure : kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_kernel(const std::string& spec_path, std::size_t tuples, std::uint64_t seed,
               std::size_t mc_samples, const std::string& out_path) {
  if (tuples < 1) throw kb::ConfigError("kernel: need at least one tuple");
  std::cout << "seed: " << seed << "\n";
  const kb::model::NetworkSpec tmpl = kb::model::load_network(spec_path);
  print_warnings(tmpl);
  std::size_t dense_layers = 0;
  for (const auto& l : tmpl.layers) {
    if (l.kind == kb::model::LayerKind::dense) ++dense_layers;
  }
  if (dense_layers == 0) {
    throw kb::ConfigError("kernel: the template spec has no dense layers");
  }
  const std::size_t dim = tmpl.input_domain.dim();
  const auto ts = kb::verify::sample_tuples(dim, dense_layers, tuples, 100.0, seed);

  std::vector<kb::model::NetworkSpec> specs(tuples);
  std::vector<kb::mc::CFn> fs(tuples);
  for (std::size_t i = 0; i < tuples; ++i) {
    specs[i] = kb::verify::instantiate(tmpl, ts[i], tmpl.flavor);
    fs[i] = [&specs, i](const std::vector<double>& y) {
      return kb::model::forward(specs[i], y);
    };
  }
  kb::mc::McConfig cfg;
  cfg.sample_count = mc_samples;
  cfg.root_seed = seed;
  cfg.proposal = kb::mc::Proposal::gaussian(std::vector<double>(dim, 0.0), 0.08);
  const kb::verify::GramMatrix g = kb::verify::gram(fs, cfg);

  std::ofstream out(out_path);
  if (!out) throw kb::ConfigError("cannot write '" + out_path + "'");
  out << "i,j,re,im,std_error\n";
  char buf[256];
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g,%.17g\n", i, j,
                    g.at(i, j).real(), g.at(i, j).imag(), g.std_error(i, j));
      out << buf;
    }
  }

  const std::vector<double> eig = g.symmetrized_eigenvalues();
  const double floor = -1e-3 * g.trace_real();
  std::printf("gram written to %s\n", out_path.c_str());
  std::printf("min eigenvalue = %.6g (noise floor %.6g)\n", eig.front(), floor);
  if (eig.front() < 1e-6 * g.trace_real()) {
    std::cerr << "warning: near-singular Gram matrix\n";
  }
  const bool pass = eig.front() >= floor;
  std::printf("psd verdict: %s\n", pass ? "PASS" : "FAIL");
  return pass ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Koopman-operator Rademacher complexity bounds for deep networks"};
  app.require_subcommand(1);

  bool serial = false;
  app.add_flag("--serial", serial, "run the data-parallel kernels on one thread");

  auto* bound_cmd = app.add_subcommand("bound", "evaluate a complexity bound");
  std::string spec_path, theorem = "thm1", report_path, alpha_mode = "conservative";
  std::size_t samples = 1000;
  double cap = 10.0;
  std::uint64_t seed = 12345;
  bound_cmd->add_option("--spec", spec_path, "network spec file")->required();
  bound_cmd->add_option("--theorem", theorem,
                        "bound to evaluate: thm1|thm2|thm3|thm4|cnn")
      ->capture_default_str();
  bound_cmd->add_option("--samples", samples, "sample size S")->capture_default_str();
  bound_cmd->add_option("--cap", cap, "determinant-factor cap D")
      ->capture_default_str();
  bound_cmd->add_option("--report", report_path, "write the report JSON here");
  bound_cmd->add_option("--seed", seed, "root seed")->capture_default_str();
  bound_cmd->add_option("--alpha", alpha_mode, "alpha mode: conservative|estimate")
      ->capture_default_str();

  auto* verify_cmd = app.add_subcommand("verify", "run a verification suite");
  std::string suite = "all", verify_report;
  std::uint64_t vseed = 12345;
  std::size_t trials = 200, mc_samples = 20000, candidates = 1000, draws = 200;
  verify_cmd->add_option("--suite", suite, "suite: lemmas|gram|rademacher|all")
      ->capture_default_str();
  verify_cmd->add_option("--seed", vseed, "root seed")->capture_default_str();
  verify_cmd->add_option("--trials", trials, "test functions per lemma case")
      ->capture_default_str();
  verify_cmd->add_option("--mc-samples", mc_samples, "samples per lemma integral")
      ->capture_default_str();
  verify_cmd->add_option("--candidates", candidates, "rademacher candidate count")
      ->capture_default_str();
  verify_cmd->add_option("--draws", draws, "rademacher sign draws")
      ->capture_default_str();
  verify_cmd->add_option("--report", verify_report, "write the report JSON here");

  auto* train_cmd = app.add_subcommand("train", "run a training experiment");
  std::string config_path;
  std::size_t runs = 1;
  std::vector<std::string> overrides;
  train_cmd->add_option("--config", config_path, "train config file")->required();
  train_cmd->add_option("--runs", runs, "independent runs")->capture_default_str();
  train_cmd->add_option("--set", overrides,
                        "override config values, e.g. --set train.epochs=50");

  auto* kernel_cmd = app.add_subcommand("kernel", "dump a Gram matrix and verdict");
  std::string kspec, kout = "gram.csv";
  std::size_t ktuples = 8, ksamples = 200000;
  std::uint64_t kseed = 12345;
  kernel_cmd->add_option("--spec", kspec, "template network spec")->required();
  kernel_cmd->add_option("--tuples", ktuples, "number of parameter tuples")
      ->capture_default_str();
  kernel_cmd->add_option("--seed", kseed, "root seed")->capture_default_str();
  kernel_cmd->add_option("--samples", ksamples, "MC samples per entry")
      ->capture_default_str();
  kernel_cmd->add_option("--out", kout, "gram CSV path")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (serial) kb::set_exec_mode(kb::ExecMode::serial);

  try {
    if (bound_cmd->parsed()) {
      return cmd_bound(spec_path, theorem, samples, cap, report_path, seed,
                       alpha_mode);
    }
    if (verify_cmd->parsed()) {
      return cmd_verify(suite, vseed, trials, mc_samples, candidates, draws,
                        verify_report);
    }
    if (train_cmd->parsed()) {
      return cmd_train(config_path, runs, overrides);
    }
    if (kernel_cmd->parsed()) {
      return cmd_kernel(kspec, ktuples, kseed, ksamples, kout);
    }
  } catch (const kb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
