/*
 * Copyright 2026 The hiddenrf Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef HIDDENRF_COMMON_HPP_
#define HIDDENRF_COMMON_HPP_

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace hiddenrf {

inline constexpr std::string_view kVersion = "1.0.0";

// Error hierarchy. The CLI maps each family onto a distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SimulationError : public Error {
 public:
  using Error::Error;
};

// Covariance (or other model parameters) rejected, e.g. not positive definite.
class RejectedParameters : public SimulationError {
 public:
  using SimulationError::SimulationError;
};

class SamplerStall : public SimulationError {
 public:
  using SimulationError::SimulationError;
};

class NumericError : public SimulationError {
 public:
  using SimulationError::SimulationError;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class DegenerateBaseline : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Child seed for stream `index` of `master`. Used for per-tree, per-arm and
/// per-permutation streams so results never depend on scheduling.
constexpr std::uint64_t derive_seed(std::uint64_t master,
                                    std::uint64_t index) noexcept {
  return mix64(mix64(master) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(master, h);
}

/// Thread count from HIDDENRF_THREADS, else hardware concurrency.
inline unsigned default_thread_count() {
  if (const char* env = std::getenv("HIDDENRF_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1U : hw;
}

/// Runs body(i) for i in [0, count) on up to `threads` workers. Work items
/// are claimed dynamically; callers write results by index, so output does
/// not depend on the worker count. The first exception is rethrown.
template <class Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(threads, count));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Exact fixed-point accumulator. Every term is rounded onto a grid of
/// 2^-scale_bits independently of the others and the terms are added as
/// integers, so the total does not depend on summation order.
class FixedSum {
 public:
  using Int = __int128;

  explicit FixedSum(int scale_bits = 64) : scale_bits_(scale_bits) {}

  /// Largest grid that keeps `terms` values of magnitude <= max_abs within
  /// the 127-bit range.
  static int scale_for(double max_abs, std::size_t terms) {
    int headroom = 2;
    while ((std::size_t{1} << headroom) < terms + 1 && headroom < 62) ++headroom;
    int exponent = 0;
    if (max_abs > 0.0 && std::isfinite(max_abs)) std::frexp(max_abs, &exponent);
    return 124 - headroom - exponent;
  }

  int scale_bits() const noexcept { return scale_bits_; }

  Int to_fixed(double v) const {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    const auto biased = static_cast<int>((bits >> 52) & 0x7ffU);
    std::uint64_t mantissa = bits & ((std::uint64_t{1} << 52) - 1);
    if (biased != 0) mantissa |= std::uint64_t{1} << 52;
    if (mantissa == 0) return 0;
    const int shift = (biased == 0 ? 1 : biased) - 1075 + scale_bits_;
    Int magnitude;
    if (shift >= 0) {
      magnitude = static_cast<Int>(mantissa) << shift;
    } else if (shift > -64) {
      const Int m = mantissa;
      magnitude = (m + (Int{1} << (-shift - 1))) >> -shift;
    } else {
      magnitude = 0;
    }
    return (bits >> 63) ? -magnitude : magnitude;
  }

  double to_double(Int fixed) const {
    return std::ldexp(static_cast<double>(fixed), -scale_bits_);
  }

  /// total / count rounded to the grid (half away from zero), then to double:
  /// one rounding to double in all, so equal terms give back that term.
  double to_double_mean(Int total, std::size_t count) const {
    const auto n = static_cast<Int>(count);
    Int q = total / n;
    const Int r = total % n;
    if (2 * (r < 0 ? -r : r) >= n) q += total < 0 ? -1 : 1;
    return to_double(q);
  }

  void add(double v) { total_ += to_fixed(v); }
  void add_fixed(Int v) { total_ += v; }
  Int total() const noexcept { return total_; }
  double value() const { return to_double(total_); }

 private:
  int scale_bits_;
  Int total_ = 0;
};

}  // namespace hiddenrf

#endif  // HIDDENRF_COMMON_HPP_
