// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace ats {

/// Worker cap: $ATS_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index runs
/// exactly once; the first exception thrown is rethrown on the caller.
/// Callers must make fn(i) write only to slot i for deterministic results.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t threads = worker_count());

}  // namespace ats
