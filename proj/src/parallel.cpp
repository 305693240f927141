#include "orchard/parallel.hpp"

namespace orchard::par {

namespace {
ExecMode g_mode =
#ifdef _OPENMP
    ExecMode::openmp;
#else
    ExecMode::serial;
#endif
}  // namespace

ExecMode default_mode() { return g_mode; }

void set_default_mode(ExecMode mode) { g_mode = mode; }

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_thread_count(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace orchard::par
