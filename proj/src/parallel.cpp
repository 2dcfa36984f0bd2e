#include "pot/parallel.hpp"

#ifdef POT_HAVE_OPENMP
#include <omp.h>
#endif

namespace pot {

void set_threads(int n) {
#ifdef POT_HAVE_OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int max_threads() {
#ifdef POT_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

bool openmp_enabled() {
#ifdef POT_HAVE_OPENMP
  return true;
#else
  return false;
#endif
}

}  // namespace pot
