#pragma once

#include <cstdint>
#include <string>

namespace sphere_ssm {

// Process-level runtime setup. Call first thing in main(), before any BLAS use.
//
// OpenBLAS picks its kernel set from CPUID at library load time. On VMs that
// report a generic CPU model it falls back to a slow generic kernel even when
// AVX-512 is available (measured 4.4x slower dgemm on the reference host). The
// kernel choice is env-driven (OPENBLAS_CORETYPE) and read before main runs,
// so when the CPU supports the SkylakeX subset and the variable is unset, this
// function sets it and re-executes the process once (guarded, inherited by
// children). It also pins the BLAS thread count to 1: parallelism is managed
// by the caller, and a pinned count keeps results bit-reproducible.
void runtime_init(int argc, char** argv);

// Hardware/provenance info for benchmark reports.
std::string cpu_model_string();
int hw_cores();
bool has_avx512();

// Default seed resolution: explicit value if >= 0, else SPHERE_SSM_SEED env
// var, else fallback.
std::uint64_t resolve_seed(long long explicit_seed, std::uint64_t fallback = 42);

} // namespace sphere_ssm
