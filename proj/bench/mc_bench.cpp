// Compares the serial reference path against the OpenMP path on the
// data-parallel kernels and checks that both produce identical bits.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#include "kb/mc.hpp"
#include "kb/model.hpp"
#include "kb/parallel.hpp"
#include "kb/verify.hpp"

namespace {

using Clock = std::chrono::steady_clock;

template <typename F>
double timed(F&& f) {
  const auto t0 = Clock::now();
  f();
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void row(const char* name, double serial, double parallel, bool identical) {
  std::printf("%-28s serial %8.3fs   openmp %8.3fs   speedup %.2fx   %s\n", name,
              serial, parallel, serial / parallel,
              identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
  std::printf("threads available: %d\n", kb::max_threads());

  // 1. plain MC integral
  {
    kb::mc::McConfig cfg;
    cfg.sample_count = 4000000;
    cfg.root_seed = 1;
    cfg.proposal = kb::mc::Proposal::gaussian({0.0, 0.0}, 0.5);
    const auto f = [](const std::vector<double>& y) {
      return std::complex<double>(std::exp(-y[0] * y[0] - 0.7 * y[1] * y[1]) *
                                      std::cos(y[0] * y[1]),
                                  0.0);
    };
    kb::mc::McEstimate a, b;
    kb::set_exec_mode(kb::ExecMode::serial);
    const double ts = timed([&] { a = kb::mc::mc_integral(f, cfg, 11); });
    kb::set_exec_mode(kb::ExecMode::openmp);
    const double tp = timed([&] { b = kb::mc::mc_integral(f, cfg, 11); });
    row("mc_integral (4M samples)", ts, tp,
        a.value == b.value && a.std_error == b.std_error);
  }

  // 2. Gram assembly over affine tuples
  {
    const auto tmpl = kb::verify::affine_template(2, 0.5);
    const auto tuples = kb::verify::sample_tuples(2, 2, 6, 4.0, 3);
    std::vector<kb::model::NetworkSpec> specs(tuples.size());
    std::vector<kb::mc::CFn> fs(tuples.size());
    for (std::size_t i = 0; i < tuples.size(); ++i) {
      specs[i] =
          kb::verify::instantiate(tmpl, tuples[i], kb::model::Flavor::affine_scaled);
      fs[i] = [&specs, i](const std::vector<double>& y) {
        return kb::model::forward(specs[i], y);
      };
    }
    kb::mc::McConfig cfg;
    cfg.sample_count = 100000;
    cfg.root_seed = 2;
    cfg.proposal = kb::mc::Proposal::gaussian({0.0, 0.0}, 0.08);
    kb::verify::GramMatrix ga, gb;
    kb::set_exec_mode(kb::ExecMode::serial);
    const double ts = timed([&] { ga = kb::verify::gram(fs, cfg); });
    kb::set_exec_mode(kb::ExecMode::openmp);
    const double tp = timed([&] { gb = kb::verify::gram(fs, cfg); });
    row("gram (36 entries x 100k)", ts, tp, ga.entries == gb.entries);
  }

  // 3. Rademacher sign-draw search
  {
    kb::linalg::Matrix values(2000, 50);
    kb::Rng rng(5, kb::fnv1a64("bench/values"));
    for (double& v : values.data) v = rng.uniform(-1.0, 1.0);
    kb::verify::RademacherEstimate ra, rb;
    kb::set_exec_mode(kb::ExecMode::serial);
    const double ts = timed([&] {
      ra = kb::verify::empirical_rademacher(values, 20000,
                                            kb::verify::RademacherMode::mc_search, 7);
    });
    kb::set_exec_mode(kb::ExecMode::openmp);
    const double tp = timed([&] {
      rb = kb::verify::empirical_rademacher(values, 20000,
                                            kb::verify::RademacherMode::mc_search, 7);
    });
    row("rademacher (20k draws)", ts, tp,
        ra.value == rb.value && ra.std_error == rb.std_error);
  }

  return 0;
}
