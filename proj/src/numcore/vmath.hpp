#pragma once

#include <cstddef>

// Array kernels for transcendental functions. Built in their own translation
// unit so the compiler may call the vector math library.
namespace efuse::nc::vm {

void exp(const double* x, double* y, std::size_t n);
void erf(const double* x, double* y, std::size_t n);
// y = exp(-x * x / 2)
void gauss(const double* x, double* y, std::size_t n);

}  // namespace efuse::nc::vm
