#include "sphere_ssm/memtrack.hpp"

#include <atomic>
#include <new>

namespace sphere_ssm::memtrack {

namespace {
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};

void bump_peak(std::size_t cur) noexcept {
    std::size_t peak = g_peak.load(std::memory_order_relaxed);
    while (cur > peak &&
           !g_peak.compare_exchange_weak(peak, cur, std::memory_order_relaxed)) {
    }
}
} // namespace

void record_alloc(std::size_t bytes) noexcept {
    std::size_t cur = g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    bump_peak(cur);
}

void record_free(std::size_t bytes) noexcept {
    g_current.fetch_sub(bytes, std::memory_order_relaxed);
}

std::size_t current_bytes() noexcept { return g_current.load(std::memory_order_relaxed); }
std::size_t peak_bytes() noexcept { return g_peak.load(std::memory_order_relaxed); }

void reset_peak() noexcept {
    g_peak.store(g_current.load(std::memory_order_relaxed), std::memory_order_relaxed);
}

double* alloc_doubles(std::size_t n) {
    double* p = static_cast<double*>(::operator new[](n * sizeof(double), std::align_val_t(64)));
    record_alloc(n * sizeof(double));
    return p;
}

void free_doubles(double* p, std::size_t n) noexcept {
    if (!p) return;
    ::operator delete[](p, std::align_val_t(64));
    record_free(n * sizeof(double));
}

} // namespace sphere_ssm::memtrack
