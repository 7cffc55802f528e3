#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kb/linalg.hpp"

namespace kb::train {

struct OptimizerConfig {
  enum class Kind { sgd, adam };
  Kind kind = Kind::sgd;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class Experiment { synthetic_regression, dense_classifier };

struct TrainConfig {
  Experiment experiment = Experiment::synthetic_regression;
  std::size_t sample_size = 1000;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  OptimizerConfig optimizer;
  double lambda = 0.1;
  std::uint64_t data_seed = 1;
  std::uint64_t init_seed = 2;
  std::string output_prefix = "train";

  void validate() const;
};

struct EpochRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double gap = 0.0;           // test_loss - train_loss
  double regularizer = 0.0;   // r (synthetic) or r1+r2+r3 (classifier)
  double reg_r1 = 0.0, reg_r2 = 0.0, reg_r3 = 0.0;  // classifier breakdown
  double bound = 0.0;         // assembled bound value at the current weights
  double test_accuracy = 0.0; // classifier only
};

struct TrainLog {
  std::vector<EpochRow> rows;
  bool diverged = false;
};

struct Dataset {
  std::vector<std::vector<double>> x;
  std::vector<double> targets;       // regression
  std::vector<std::size_t> labels;   // classification
};

struct SyntheticData {
  Dataset train, test;
};

// t(x) = exp(-||2x - 1||^2) on uniform [-1, 1]^3 samples
SyntheticData build_synthetic_task(std::uint64_t data_seed, std::size_t samples = 1000);

struct ClassifierData {
  Dataset train, test;
  std::size_t classes = 10;
  std::size_t dim = 64;
};

// prototype-plus-noise classification on [0, 1]^64 (8x8 inputs)
ClassifierData build_classifier_task(std::uint64_t data_seed, std::size_t samples,
                                     std::size_t dim = 64, std::size_t classes = 10,
                                     double noise = 0.2);

TrainLog run_synthetic(const TrainConfig& cfg);

struct DenseClassifierResult {
  TrainLog regularized;
  TrainLog control;  // identical seeds, lambda = 0
};
DenseClassifierResult run_dense_classifier(const TrainConfig& cfg);

// CSV: epoch,train_loss,test_loss,gap,regularizer,bound; 17 significant digits
void emit_plot_data(const TrainLog& log, const std::string& path);

// Spearman rank correlation with average ranks on ties
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// central finite differences against a supplied gradient over a random
// parameter subset; returns the max relative error
double grad_check(const std::function<double(const std::vector<double>&)>& loss_at,
                  const std::vector<double>& params,
                  const std::vector<double>& analytic_grad, std::size_t probes,
                  double h, std::uint64_t seed);

// experiment-level checks: run `steps` optimizer steps from the (jittered)
// init, then compare the full loss gradient against finite differences
double grad_check_synthetic(const TrainConfig& cfg, std::size_t steps, double h,
                            double init_jitter = 0.0);
double grad_check_classifier(const TrainConfig& cfg, std::size_t steps, double h,
                             double init_jitter = 0.0);

// regularizer terms with analytic gradients ---------------------------------

struct SyntheticReg {
  double value = 0.0;
  linalg::Matrix d_w1, d_w2;
  double d_w3 = 0.0;
};
SyntheticReg synthetic_reg_with_grad(const linalg::Matrix& w1,
                                     const std::vector<double>& b1,
                                     const linalg::Matrix& w2, double w3,
                                     double input_radius);

struct DenseRegs {
  double r1 = 0.0, r2 = 0.0, r3 = 0.0;
  linalg::Matrix d_w1, d_w2;
  std::vector<double> d_b1, d_b2;
  double sum() const { return r1 + r2 + r3; }
};
DenseRegs dense_regs_with_grad(const linalg::Matrix& w1, const std::vector<double>& b1,
                               const linalg::Matrix& w2, const std::vector<double>& b2,
                               double input_radius, double smu_alpha, double smu_mu);

// sup over [lo, hi] of 1/(1 - tanh(x)^2) with the subgradient taken through
// the achieving endpoint
struct SupCorner {
  double value = 0.0;
  double d_lower = 0.0;
  double d_upper = 0.0;
};
SupCorner tanh_sup_corner(double lo, double hi);

}  // namespace kb::train
