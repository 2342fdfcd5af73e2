#include "fusenet/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <stdexcept>
#include <string>

#include "fusenet/error.hpp"

namespace fusenet::kern {

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

std::atomic<const Ops*> g_active{nullptr};
std::once_flag g_env_once;
Backend g_selected = Backend::auto_select;

const Ops* resolve(Backend b) {
    switch (b) {
        case Backend::scalar:
            return &scalar_ops();
        case Backend::avx2:
            if (!avx2_supported()) {
                throw ConfigError("backend 'avx2' requested but the CPU lacks AVX2+FMA");
            }
            return &avx2_ops();
        case Backend::auto_select:
        default:
            return avx2_supported() ? &avx2_ops() : &scalar_ops();
    }
}

}  // namespace

Backend parse_backend(std::string_view name) {
    if (name == "scalar") return Backend::scalar;
    if (name == "avx2") return Backend::avx2;
    if (name == "auto") return Backend::auto_select;
    throw ConfigError("unknown backend '" + std::string(name) + "' (expected scalar|avx2|auto)");
}

// Intended for startup / single-threaded use; worker threads only read.
void select(Backend b) {
    g_active.store(resolve(b), std::memory_order_release);
    g_selected = b;
}

Backend selected() { return g_selected; }

const Ops& active() {
    const Ops* ops = g_active.load(std::memory_order_acquire);
    if (ops == nullptr) {
        std::call_once(g_env_once, [] {
            if (g_active.load(std::memory_order_acquire) != nullptr) return;
            Backend b = Backend::auto_select;
            if (const char* env = std::getenv("FUSENET_BACKEND")) {
                b = parse_backend(env);
            }
            g_active.store(resolve(b), std::memory_order_release);
            g_selected = b;
        });
        ops = g_active.load(std::memory_order_acquire);
    }
    return *ops;
}

}  // namespace fusenet::kern
