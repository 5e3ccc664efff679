// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace dtr {

// Worker cap: TEMPORAL_REBALANCE_THREADS if set to a positive integer,
// otherwise the hardware concurrency (at least 1).
std::size_t default_worker_count();

// Runs fn(0..n-1) on up to `workers` threads. The first exception thrown by
// any task is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t workers = default_worker_count());

}  // namespace dtr
