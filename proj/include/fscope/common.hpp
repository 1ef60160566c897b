#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fscope {

inline constexpr const char* kVersion = "0.1.0";

// Error taxonomy; the CLI maps these onto exit codes (2/3/4).
class config_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class data_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class numeric_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class insufficient_data : public data_error {
public:
  insufficient_data(const std::string& msg, std::size_t count)
      : data_error(msg), count(count) {}
  std::size_t count;
};

// Axis-aligned box, half-open: covers [x, x+w) x [y, y+h).
struct Box {
  double x = 0, y = 0, w = 0, h = 0;

  double area() const { return w * h; }
  double center_x() const { return x + w / 2.0; }
  double center_y() const { return y + h / 2.0; }

  bool contains(double px, double py) const {
    return px >= x && px < x + w && py >= y && py < y + h;
  }

  Box intersect(const Box& o) const {
    double x0 = std::max(x, o.x), y0 = std::max(y, o.y);
    double x1 = std::min(x + w, o.x + o.w), y1 = std::min(y + h, o.y + o.h);
    return {x0, y0, std::max(0.0, x1 - x0), std::max(0.0, y1 - y0)};
  }
};

inline Box box_from_center(double cx, double cy, double w, double h) {
  return {cx - w / 2.0, cy - h / 2.0, w, h};
}

// Intersection-over-union under the half-open box convention.
inline double iou(const Box& a, const Box& b) {
  if (a.area() <= 0 || b.area() <= 0)
    throw std::domain_error("iou of zero-area box");
  double inter = a.intersect(b).area();
  return inter / (a.area() + b.area() - inter);
}

// Uniform double in [0, 1) from the top 24 bits of an mt19937 draw.
// mt19937 output is pinned by the standard, so this is platform-stable
// (std::uniform_real_distribution is not).
inline double unit_uniform(std::mt19937& rng) {
  return static_cast<double>(rng() >> 8) * (1.0 / 16777216.0);
}

// splitmix64, used to derive independent sub-seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Order-independent sum (recursive pairwise halving).
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double s = 0;
    for (double x : xs) s += x;
    return s;
  }
  std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

inline double mean_of(std::span<const double> xs) {
  if (xs.empty()) throw data_error("mean of empty series");
  return pairwise_sum(xs) / static_cast<double>(xs.size());
}

// Population standard deviation.
inline double stddev_of(std::span<const double> xs) {
  double m = mean_of(xs);
  std::vector<double> sq(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) sq[i] = (xs[i] - m) * (xs[i] - m);
  return std::sqrt(pairwise_sum(sq) / static_cast<double>(xs.size()));
}

// Worker count resolution: FS_WORKERS env var wins, then the requested
// value, then hardware concurrency.
inline int resolve_workers(int requested = 0) {
  if (const char* env = std::getenv("FS_WORKERS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  if (requested > 0) return requested;
  unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

// Runs fn(i) for i in [0, n) on `workers` threads. Each index writes its own
// output slot, so results never depend on the worker count.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  workers = std::max(1, workers);
  if (n == 0) return;
  if (workers == 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  std::size_t nthreads = std::min<std::size_t>(workers, n);
  for (std::size_t t = 0; t < nthreads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// Deterministic float formatting for CSV/JSON-adjacent text output.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace fscope
