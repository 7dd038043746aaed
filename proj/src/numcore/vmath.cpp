#include "vmath.hpp"

#include <cmath>

namespace efuse::nc::vm {

void exp(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

void erf(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::erf(x[i]);
}

void gauss(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::exp(-0.5 * x[i] * x[i]);
}

}  // namespace efuse::nc::vm
