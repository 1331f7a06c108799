#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace upliftkit::rng {

/// SplitMix64 finalizer. Bijective on 64-bit words.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stream labels so distinct draw purposes never collide for the same
/// (seed, customer) pair.
enum class Purpose : std::uint64_t {
  kFeature = 1,
  kTreatment = 2,
  kNoise = 3,
  kBernoulliOutcome = 4,
  kGeneric = 5,
};

/// Counter-based draw keyed by (seed, unit, purpose, counter). Independent of
/// evaluation order, so generation can be sharded by customer.
inline std::uint64_t keyed_bits(std::uint64_t seed, std::uint64_t unit,
                                Purpose purpose, std::uint64_t counter) {
  std::uint64_t h = mix64(seed ^ 0x8f2e9d4b71c3a5f6ULL);
  h = mix64(h ^ unit);
  h = mix64(h ^ static_cast<std::uint64_t>(purpose));
  h = mix64(h ^ counter);
  return h;
}

/// Uniform draw in the open interval (0, 1); never returns an endpoint.
/// 52 bits only: with 53 the top value lands halfway to 1.0 and the
/// round-to-even step returns the closed endpoint.
inline double to_open01(std::uint64_t bits) {
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

inline double keyed_uniform(std::uint64_t seed, std::uint64_t unit,
                            Purpose purpose, std::uint64_t counter) {
  return to_open01(keyed_bits(seed, unit, purpose, counter));
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// ~1e-9 relative accuracy). Avoids std::normal_distribution, whose output
/// stream is implementation-defined.
inline double inverse_normal_cdf(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double q, r;
  if (p < plow) {
    q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p <= 1.0 - plow) {
    q = p - 0.5;
    r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  q = std::sqrt(-2.0 * std::log(1.0 - p));
  return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
         ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
}

inline double keyed_normal(std::uint64_t seed, std::uint64_t unit,
                           Purpose purpose, std::uint64_t counter) {
  return inverse_normal_cdf(keyed_uniform(seed, unit, purpose, counter));
}

/// Sequential SplitMix64 engine for bulk draws (subsampling, shuffles, test
/// instance generation). Satisfies UniformRandomBitGenerator.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~0ULL; }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  double uniform01() { return to_open01((*this)()); }

  double normal() { return inverse_normal_cdf(uniform01()); }

  /// Unbiased integer in [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    while (true) {
      std::uint64_t x = (*this)();
      unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
      std::uint64_t lo = static_cast<std::uint64_t>(m);
      if (lo >= n || lo >= (0ULL - n) % n) {
        return static_cast<std::uint64_t>(m >> 64);
      }
    }
  }

 private:
  std::uint64_t state_;
};

/// Fisher-Yates shuffle with our own bounded draws. std::shuffle output is
/// implementation-defined, which would break the determinism contract.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, SplitMix64& gen) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(gen.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

/// First k elements of a deterministic permutation of [0, n).
inline std::vector<std::uint32_t> sample_without_replacement(std::size_t n,
                                                             std::size_t k,
                                                             SplitMix64& gen) {
  std::vector<std::uint32_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i);
  if (k > n) k = n;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(gen.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace upliftkit::rng
