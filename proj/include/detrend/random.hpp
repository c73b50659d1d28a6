#pragma once

#include "detrend/types.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace detrend {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
/// Stateless: the output is a pure function of (counter, key).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) {
    constexpr std::uint32_t kM0 = 0xD2511F53u;
    constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u;
    constexpr std::uint32_t kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kW0;
      key[1] += kW1;
    }
    return ctr;
  }
};

/// Uniform double in the open interval (0, 1) from the top 52 of 64 random bits.
inline double to_unit_open(std::uint64_t bits) {
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

enum class InnovationKind { normal, rademacher };

/// Indexed noise source. The innovation for (path, step) is a pure function
/// of (seed, path, step), so any two simulations that share a seed consume
/// identical increments regardless of evaluation order.
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed, InnovationKind kind = InnovationKind::normal)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)}, kind_(kind) {}

  /// Step indices are 32-bit; paths use the full 64-bit range.
  Vec draw(std::uint64_t path, std::uint32_t step, int dim) const {
    Vec out(dim);
    for (int block = 0; 2 * block < dim; ++block) {
      const auto r = Philox4x32::generate(
          {static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(block),
           static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32)},
          key_);
      const std::uint64_t a = (std::uint64_t{r[0]} << 32) | r[1];
      const std::uint64_t b = (std::uint64_t{r[2]} << 32) | r[3];
      double z0 = 0.0;
      double z1 = 0.0;
      if (kind_ == InnovationKind::normal) {
        const double rad = std::sqrt(-2.0 * std::log(to_unit_open(a)));
        const double ang = 2.0 * std::numbers::pi * to_unit_open(b);
        z0 = rad * std::cos(ang);
        z1 = rad * std::sin(ang);
      } else {
        z0 = (a >> 63) ? 1.0 : -1.0;
        z1 = (b >> 63) ? 1.0 : -1.0;
      }
      out(2 * block) = z0;
      if (2 * block + 1 < dim) out(2 * block + 1) = z1;
    }
    return out;
  }

  InnovationKind kind() const { return kind_; }

 private:
  Philox4x32::Key key_;
  InnovationKind kind_;
};

/// Randomly shifted Halton sequence on [0,1)^dims (Cranley-Patterson rotation).
class HaltonSequence {
 public:
  static constexpr int kMaxDims = 16;

  HaltonSequence(int dims, std::uint64_t seed) : dims_(dims) {
    if (dims < 1 || dims > kMaxDims) throw ModelError("Halton dimension out of range");
    const Philox4x32::Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    for (int i = 0; i < dims; ++i) {
      const auto r = Philox4x32::generate({0x484C544Eu, static_cast<std::uint32_t>(i), 0u, 0u}, key);
      shift_[i] = to_unit_open((std::uint64_t{r[0]} << 32) | r[1]);
    }
  }

  int dims() const { return dims_; }

  /// Coordinate `dim` of point `index`.
  double operator()(std::uint64_t index, int dim) const {
    static constexpr std::array<std::uint64_t, kMaxDims> kPrimes{2, 3, 5, 7, 11, 13, 17, 19,
                                                                23, 29, 31, 37, 41, 43, 47, 53};
    const std::uint64_t base = kPrimes[dim];
    double inv = 1.0 / static_cast<double>(base);
    double scale = inv;
    double value = 0.0;
    for (std::uint64_t n = index + 1; n > 0; n /= base) {
      value += static_cast<double>(n % base) * scale;
      scale *= inv;
    }
    value += shift_[dim];
    return value - std::floor(value);
  }

 private:
  int dims_;
  std::array<double, kMaxDims> shift_{};
};

}  // namespace detrend
