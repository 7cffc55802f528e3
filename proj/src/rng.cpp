#include "kb/rng.hpp"

#include <cmath>

namespace kb {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // rejection-free Box-Muller; u1 > 0 guaranteed by the offset
  double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = uniform01();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::vector<double> Rng::uniform_in_box(const std::vector<double>& lower,
                                        const std::vector<double>& upper) {
  std::vector<double> x(lower.size());
  for (std::size_t i = 0; i < lower.size(); ++i) {
    x[i] = uniform(lower[i], upper[i]);
  }
  return x;
}

}  // namespace kb
