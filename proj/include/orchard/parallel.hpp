#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace orchard::par {

// Every parallel kernel in this codebase comes in two flavors selected by
// ExecMode: a serial reference and an OpenMP version. Kernels only ever
// write to disjoint per-index slots; reductions happen afterwards in a
// fixed order, so both flavors produce bitwise identical results and the
// OpenMP flavor is independent of thread count.
enum class ExecMode { serial, openmp };

ExecMode default_mode();
void set_default_mode(ExecMode mode);

int thread_count();
void set_thread_count(int n);  // n <= 0 restores the runtime default

template <typename Body>
void for_index(ExecMode mode, std::int64_t n, const Body& body) {
#ifdef _OPENMP
  if (mode == ExecMode::openmp) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
#else
  (void)mode;
#endif
  for (std::int64_t i = 0; i < n; ++i) body(i);
}

template <typename Body>
void for_index(std::int64_t n, const Body& body) {
  for_index(default_mode(), n, body);
}

}  // namespace orchard::par
