#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace glimpse {

// Deterministic splitmix64 stream. All randomness in the project flows from
// one root seed through named substreams, so changing a single experiment
// axis never perturbs the random draws of another.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {
    // decorrelate trivially related seeds
    next_u64();
    next_u64();
  }

  static RngStream substream(std::uint64_t root, std::string_view name,
                             std::uint64_t index = 0) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
    for (unsigned char c : name) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return RngStream(mix(mix(root ^ h) + index));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  long uniform_int(long lo, long hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<long>(next_u64() % span);
  }

  double gaussian(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller, fresh pair per call; u1 in (0,1] keeps the log finite
    const double u1 =
        (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace glimpse
