#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gs2d {

inline int hardware_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

/// Static partition; every index writes only its own outputs, so results are
/// identical for any thread count.
template <class F>
inline void parallel_for(std::int64_t begin, std::int64_t end, F&& f) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (std::int64_t i = begin; i < end; ++i) f(i);
#else
  for (std::int64_t i = begin; i < end; ++i) f(i);
#endif
}

}  // namespace gs2d
