#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>

namespace flowrl {

// Deterministic counter-based random stream. A master seed is split into
// named child streams (dataset, init, batch, noise, eval, ...) so that
// consuming draws from one stream never perturbs another. Every draw is a
// pure function of (key, counter), which makes whole runs replayable.
class Rng {
 public:
  Rng() : key_(0) {}
  explicit Rng(std::uint64_t key) : key_(key) {}

  static Rng master(std::uint64_t seed) { return Rng(mix(seed ^ 0x8af6'5a1c'3b0f'9d2eULL)); }

  Rng child(std::string_view name) const {
    std::uint64_t h = key_ ^ 0xcbf2'9ce4'8422'2325ULL;
    for (char c : name) {
      h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
      h *= 0x100'0000'01b3ULL;
    }
    return Rng(mix(h));
  }

  Rng child(std::uint64_t index) const {
    return Rng(mix(key_ ^ (0x9e37'79b9'7f4a'7c15ULL + index * 0xbf58'476d'1ce4'e5b9ULL)));
  }

  std::uint64_t next_u64() {
    return mix(key_ + 0x9e37'79b9'7f4a'7c15ULL * ++counter_);
  }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // standard normal via Box-Muller; the spare draw is cached
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925287 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // uniform over {0, 1, ..., n-1}
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                             static_cast<unsigned __int128>(n)) >> 64);
  }

  std::uint64_t key() const { return key_; }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58'476d'1ce4'e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d0'49bb'1331'11ebULL;
    x ^= x >> 31;
    return x;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace flowrl
