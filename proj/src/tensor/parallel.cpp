#include "lpie/parallel.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lpie {

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

int configure_threads_from_env() {
  if (const char* env = std::getenv("LPIE_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) set_num_threads(n);
    } catch (const std::exception&) {
      // ignored: invalid values leave the runtime default in place
    }
  }
  return num_threads();
}

}  // namespace lpie
