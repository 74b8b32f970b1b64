#pragma once

#include <functional>

namespace migc {

// Runs fn(0..n-1) across `workers` threads (<=1 means inline on the caller).
// Jobs own disjoint output slots keyed by their index and receive no shared
// mutable state, so results are identical for every worker count; when jobs
// throw, the exception of the lowest failing index is rethrown after all
// threads drain, matching what a sequential run would surface.
void run_indexed_jobs(int n, int workers, const std::function<void(int)>& fn);

}  // namespace migc
