#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace acr {

// 64-bit finalizer (splitmix64) used to derive sub-stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t double_bits(double v) {
  std::uint64_t b;
  std::memcpy(&b, &v, sizeof b);
  return b;
}

/// Seed for a named sub-stream of a root seed. All randomness in the project
/// flows from one root via these named streams, so components can be re-run
/// independently without disturbing each other's sequences.
inline std::uint64_t stream_seed(std::uint64_t root, std::string_view name,
                                 std::uint64_t extra0 = 0,
                                 std::uint64_t extra1 = 0) {
  std::uint64_t h = mix64(root ^ hash_name(name));
  h = mix64(h ^ extra0);
  h = mix64(h ^ extra1);
  return h;
}

/// Deterministic random stream. Samplers are hand-rolled on top of
/// mt19937_64 so sequences never depend on the standard library's
/// implementation-defined distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  static Rng stream(std::uint64_t root, std::string_view name,
                    std::uint64_t extra0 = 0, std::uint64_t extra1 = 0) {
    return Rng(stream_seed(root, name, extra0, extra1));
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (no cached second value).
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Exponential inter-arrival time for a process with the given rate (>0).
  double exponential(double rate) {
    return -std::log(1.0 - uniform()) / rate;
  }

  /// Lognormal parameterized by its median and the std dev of the log.
  double lognormal_median(double median, double sigma_log) {
    return std::exp(std::log(median) + sigma_log * normal());
  }

  /// Index drawn proportionally to non-negative weights.
  std::size_t categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) throw std::invalid_argument("categorical: zero total weight");
    double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.size() - 1;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace acr
