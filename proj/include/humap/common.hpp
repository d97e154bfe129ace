#ifndef HUMAP_COMMON_HPP
#define HUMAP_COMMON_HPP

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

/**
 * @file common.hpp
 *
 * @brief Error types, execution modes and seeding shared by every stage.
 */

namespace humap {

/**
 * Broad category of a failure. The CLI maps these onto exit codes and the
 * explorer service onto HTTP statuses.
 */
enum class ErrorKind {
    parameter,     ///< A caller-supplied parameter violates a precondition.
    input,         ///< Input data is malformed (NaN, empty rows, bad files).
    degenerate,    ///< The computation has no meaningful answer for this input.
    ordering,      ///< Operations invoked in an invalid order.
    unassociated,  ///< A point could not be associated to any landmark.
    io,            ///< File system failure.
    internal
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::parameter: return "parameter";
        case ErrorKind::input: return "input";
        case ErrorKind::degenerate: return "degenerate";
        case ErrorKind::ordering: return "ordering";
        case ErrorKind::unassociated: return "unassociated";
        case ErrorKind::io: return "io";
        case ErrorKind::internal: return "internal";
    }
    return "internal";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

/**
 * Deterministic mode runs every stage on one thread and is bit-reproducible.
 * Parallel mode spreads row-independent work across threads; the layout
 * optimizer additionally allows racy coordinate updates in this mode.
 */
enum class ExecutionMode { deterministic, parallel };

struct Execution {
    ExecutionMode mode = ExecutionMode::deterministic;

    /// Thread count in parallel mode; 0 uses the hardware count, capped by `HUMAP_THREADS`.
    std::size_t max_threads = 0;

    std::size_t threads() const {
        if (mode == ExecutionMode::deterministic) {
            return 1;
        }
        if (max_threads) {
            return max_threads;
        }
        std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
        if (const char* env = std::getenv("HUMAP_THREADS")) {
            auto cap = static_cast<std::size_t>(std::strtoull(env, nullptr, 10));
            if (cap) {
                n = std::min(n, cap);
            }
        }
        return n;
    }
};

/**
 * Runs `fn(begin, end)` over contiguous blocks of `[0, n)`.
 * Blocks are fixed by `n` and the thread count, never by scheduling.
 */
template<typename Fn>
void parallel_blocks(std::size_t n, std::size_t nthreads, Fn&& fn) {
    nthreads = std::max<std::size_t>(1, std::min(nthreads, n));
    if (nthreads <= 1) {
        if (n) {
            fn(std::size_t{0}, n);
        }
        return;
    }
    std::size_t chunk = (n + nthreads - 1) / nthreads;
    std::vector<std::exception_ptr> errors(nthreads);
    {
        std::vector<std::jthread> workers;
        workers.reserve(nthreads - 1);
        for (std::size_t t = 1; t < nthreads; ++t) {
            std::size_t start = std::min(n, t * chunk), stop = std::min(n, start + chunk);
            if (start < stop) {
                workers.emplace_back([&fn, &errors, t, start, stop] {
                    try {
                        fn(start, stop);
                    } catch (...) {
                        errors[t] = std::current_exception();
                    }
                });
            }
        }
        try {
            fn(std::size_t{0}, std::min(n, chunk));
        } catch (...) {
            errors[0] = std::current_exception();
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

template<typename Fn>
void parallel_for(std::size_t n, const Execution& exec, Fn&& fn) {
    parallel_blocks(n, exec.threads(), [&fn](std::size_t start, std::size_t stop) {
        for (std::size_t i = start; i < stop; ++i) {
            fn(i);
        }
    });
}

using Rng = std::mt19937_64;

inline std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

/**
 * Every random stream is keyed by (seed, stage, id), so a stream's values do
 * not depend on how work is split between threads.
 */
inline Rng make_rng(std::uint64_t seed, std::string_view stage, std::uint64_t id = 0) {
    std::uint64_t tag = fnv1a(stage);
    std::seed_seq seq{
        static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
        static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32),
        static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(id >> 32)
    };
    return Rng(seq);
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(rng() % n);
}

}

#endif
