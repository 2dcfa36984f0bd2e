#pragma once

namespace pot {

// Selects between the OpenMP kernels and their single-threaded versions.
enum class Exec { serial, parallel };

void set_threads(int n);
int max_threads();
bool openmp_enabled();

}  // namespace pot
