#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace fbsde {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) {
    for (int r = 0; r < 10; ++r) {
      ctr = round(ctr, key);
      key[0] += kW0;
      key[1] += kW1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  static Counter round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

// Stream keyed by (seed, stream id); counters address (step, block) so any
// draw can be regenerated independently of evaluation order.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  Philox4x32::Counter raw(std::uint32_t step, std::uint32_t block) const {
    return Philox4x32::generate(
        {static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32), step, block}, key_);
  }

  // Two uniforms: first in (0,1], second in [0,1).
  std::array<double, 2> uniforms(std::uint32_t step, std::uint32_t block) const {
    const auto r = raw(step, block);
    const std::uint64_t a = (static_cast<std::uint64_t>(r[0]) << 32) | r[1];
    const std::uint64_t b = (static_cast<std::uint64_t>(r[2]) << 32) | r[3];
    constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
    return {static_cast<double>((a >> 11) + 1) * kScale, static_cast<double>(b >> 11) * kScale};
  }

  // Box-Muller pair of standard normals.
  std::array<double, 2> normals(std::uint32_t step, std::uint32_t block) const {
    const auto u = uniforms(step, block);
    const double r = std::sqrt(-2.0 * std::log(u[0]));
    const double phi = 2.0 * std::numbers::pi * u[1];
    return {r * std::cos(phi), r * std::sin(phi)};
  }

 private:
  Philox4x32::Key key_;
  std::uint64_t stream_;
};

}  // namespace fbsde
