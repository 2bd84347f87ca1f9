#pragma once

#include <cstddef>

namespace lpie {

// Caps worker threads for every parallel kernel. Parallel loops only split
// work over disjoint outputs, so results do not depend on the count.
void set_num_threads(int n);
int num_threads();

// Applies LPIE_THREADS from the environment if set. Returns the active count.
int configure_threads_from_env();

}  // namespace lpie
