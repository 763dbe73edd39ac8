#pragma once

#include <cstddef>

// Instrumented allocation accounting for tensor buffers. The benchmark harness
// reports "peak transient memory" = high-water mark of live tracked bytes since
// the last reset. Thread-safe (atomics); near-zero overhead per allocation.
namespace sphere_ssm::memtrack {

void record_alloc(std::size_t bytes) noexcept;
void record_free(std::size_t bytes) noexcept;

std::size_t current_bytes() noexcept;
std::size_t peak_bytes() noexcept;

// Resets the peak to the current live count (live allocations stay counted).
void reset_peak() noexcept;

// Allocates/frees doubles through the tracker. Used by Tensor storage.
double* alloc_doubles(std::size_t n);
void free_doubles(double* p, std::size_t n) noexcept;

} // namespace sphere_ssm::memtrack
