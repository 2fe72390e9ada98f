// Copyright (c) 2026 catoptra contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace catoptra {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec2i = Eigen::Vector2i;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

inline constexpr double kPi = 3.14159265358979323846;

inline double degToRad(double deg) { return deg * kPi / 180.0; }
inline double radToDeg(double rad) { return rad * 180.0 / kPi; }

// ---------------------------------------------------------------------------
// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map failures to exit codes in one place.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConditionViolation : Error { using Error::Error; };
struct DegenerateFov : Error { using Error::Error; };
struct SceneTooLarge : Error { using Error::Error; };
struct InfeasibleAngles : Error { using Error::Error; };
struct InfeasibleDesign : Error { using Error::Error; };
struct GeometryMismatch : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct NonTriangleFace : Error { using Error::Error; };
struct EmptyHull : Error { using Error::Error; };
struct NoValidPixels : Error { using Error::Error; };
struct Diverged : Error { using Error::Error; };
struct BehindCamera : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

struct ParseError : Error {
    ParseError(const std::string& where, long line, const std::string& reason)
        : Error(where + ":" + std::to_string(line) + ": " + reason),
          line(line), reason(reason) {}
    ParseError(const std::string& where, const std::string& reason)
        : Error(where + ": " + reason), line(-1), reason(reason) {}
    long line;
    std::string reason;
};

// ---------------------------------------------------------------------------
// Thread pool-free parallel helpers. Work is split into fixed blocks so that
// per-block outputs (and block-ordered reductions) do not depend on how many
// workers ran.
// ---------------------------------------------------------------------------

inline int defaultThreadCount() {
    if (const char* env = std::getenv("CATOPTRA_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

inline int& threadCountRef() {
    static int count = defaultThreadCount();
    return count;
}

inline int threadCount() { return threadCountRef(); }
inline void setThreadCount(int n) { threadCountRef() = n > 0 ? n : defaultThreadCount(); }

// Runs fn(blockIndex) for blockIndex in [0, nBlocks). Blocks are claimed
// dynamically; each block writes only its own outputs.
inline void parallelBlocks(std::size_t nBlocks, const std::function<void(std::size_t)>& fn) {
    int nt = std::min<std::size_t>(threadCount(), nBlocks);
    if (nt <= 1) {
        for (std::size_t b = 0; b < nBlocks; ++b) fn(b);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    workers.reserve(nt);
    std::exception_ptr err;
    std::mutex errMutex;
    for (int t = 0; t < nt; ++t) {
        workers.emplace_back([&] {
            for (;;) {
                std::size_t b = next.fetch_add(1);
                if (b >= nBlocks) return;
                try {
                    fn(b);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(errMutex);
                    if (!err) err = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    if (err) std::rethrow_exception(err);
}

// Parallel loop over [0, n) in contiguous chunks; fn(begin, end).
inline void parallelFor(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                        std::size_t blockSize = 0) {
    if (n == 0) return;
    if (blockSize == 0) blockSize = (n + threadCount() - 1) / threadCount();
    if (blockSize == 0) blockSize = 1;
    std::size_t nBlocks = (n + blockSize - 1) / blockSize;
    parallelBlocks(nBlocks, [&](std::size_t b) {
        std::size_t begin = b * blockSize;
        std::size_t end = std::min(n, begin + blockSize);
        fn(begin, end);
    });
}

}  // namespace catoptra
