#include "sphere_ssm/runtime.hpp"

#include <cstdlib>
#include <fstream>
#include <string>
#include <thread>

#include <dlfcn.h>
#include <unistd.h>

namespace sphere_ssm {

namespace {
bool cpu_has_skylakex_subset() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512dq") &&
           __builtin_cpu_supports("avx512bw") && __builtin_cpu_supports("avx512vl") &&
           __builtin_cpu_supports("avx512cd");
#else
    return false;
#endif
}
} // namespace

void runtime_init(int, char** argv) {
    if (!std::getenv("SPHERE_SSM_RT_INIT") && !std::getenv("OPENBLAS_CORETYPE") &&
        cpu_has_skylakex_subset()) {
        setenv("SPHERE_SSM_RT_INIT", "1", 1);
        setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 1);
        execv("/proc/self/exe", argv);
        // If exec fails we continue on the slow kernel; correctness unaffected.
    }
    using set_threads_fn = void (*)(int);
    if (auto fn = reinterpret_cast<set_threads_fn>(
            dlsym(RTLD_DEFAULT, "openblas_set_num_threads"))) {
        fn(1);
    }
}

std::string cpu_model_string() {
    std::ifstream f("/proc/cpuinfo");
    std::string line;
    while (std::getline(f, line)) {
        if (line.rfind("model name", 0) == 0) {
            auto pos = line.find(':');
            if (pos != std::string::npos) {
                pos = line.find_first_not_of(" \t", pos + 1);
                return pos == std::string::npos ? "" : line.substr(pos);
            }
        }
    }
    return "unknown";
}

int hw_cores() {
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : int(n);
}

bool has_avx512() { return cpu_has_skylakex_subset(); }

std::uint64_t resolve_seed(long long explicit_seed, std::uint64_t fallback) {
    if (explicit_seed >= 0) return std::uint64_t(explicit_seed);
    if (const char* env = std::getenv("SPHERE_SSM_SEED")) {
        char* end = nullptr;
        unsigned long long v = std::strtoull(env, &end, 10);
        if (end && *end == '\0') return v;
    }
    return fallback;
}

} // namespace sphere_ssm
