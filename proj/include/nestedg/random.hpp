#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace nestedg {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). A block is a
// pure function of (counter, key), so any substream can be positioned without
// touching shared state.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter counter, Key key) noexcept;
};

/// SplitMix64 finaliser; used to derive independent stream keys.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Derives a 64-bit stream key from a seed and an ordered list of tags.
/// derive_key(s, {a, b}) and derive_key(s, {b, a}) differ.
std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) noexcept;

// Stream tags. Values are frozen: changing them changes every seeded result.
namespace stream_tag {
inline constexpr std::uint64_t kMonteCarlo = 0x4d43;     // g-computation paths
inline constexpr std::uint64_t kResample = 0x5253;       // bootstrap resampling
inline constexpr std::uint64_t kReplicate = 0x5250;      // bootstrap replicate MC
inline constexpr std::uint64_t kCohort = 0x4348;         // cohort generation
inline constexpr std::uint64_t kStudyRep = 0x5354;       // study repetition
inline constexpr std::uint64_t kOracle = 0x4f52;         // ground-truth oracle
}  // namespace stream_tag

/// One substream of Philox4x32-10: key fixed, counter = (block index, substream
/// index). Satisfies UniformRandomBitGenerator.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  RandomStream(std::uint64_t key, std::uint64_t substream) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept;

  /// Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform() noexcept;
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal (Marsaglia polar method; caches the paired variate).
  double normal() noexcept;

 private:
  void refill() noexcept;

  Philox4x32::Key key_;
  std::uint64_t substream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Variate generators. Parameterised by mean and dispersion where that is how
// the GLM layer thinks about them.
double draw_normal(RandomStream& rng, double mean, double variance) noexcept;
/// Gamma with the given shape and unit scale; any shape > 0.
double draw_gamma_shape(RandomStream& rng, double shape) noexcept;
/// Gamma with mean `mean` and variance mean^2 * dispersion.
double draw_gamma(RandomStream& rng, double mean, double dispersion) noexcept;
/// Inverse Gaussian with mean `mean` and shape `lambda` (variance mean^3 / lambda).
double draw_inverse_gaussian(RandomStream& rng, double mean, double lambda) noexcept;
bool draw_bernoulli(RandomStream& rng, double p) noexcept;

}  // namespace nestedg
