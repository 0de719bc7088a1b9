#include "nestedg/random.hpp"

#include <cmath>

namespace nestedg {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& lo, std::uint32_t& hi) noexcept {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  lo = static_cast<std::uint32_t>(product);
  hi = static_cast<std::uint32_t>(product >> 32);
}

}  // namespace

Philox4x32::Counter Philox4x32::block(Counter ctr, Key key) noexcept {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t lo0, hi0, lo1, hi1;
    mulhilo(kPhiloxM0, ctr[0], lo0, hi0);
    mulhilo(kPhiloxM1, ctr[2], lo1, hi1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t t : tags) h = mix64(h ^ mix64(t + 0x632BE59BD9B4E019ull));
  return h;
}

RandomStream::RandomStream(std::uint64_t key, std::uint64_t substream) noexcept
    : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
      substream_(substream) {}

void RandomStream::refill() noexcept {
  const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
                                static_cast<std::uint32_t>(substream_),
                                static_cast<std::uint32_t>(substream_ >> 32)};
  buffer_ = Philox4x32::block(ctr, key_);
  ++block_;
  pos_ = 0;
}

RandomStream::result_type RandomStream::operator()() noexcept {
  if (pos_ > 2) refill();
  const std::uint64_t v = (static_cast<std::uint64_t>(buffer_[pos_ + 1]) << 32) | buffer_[pos_];
  pos_ += 2;
  return v;
}

double RandomStream::uniform() noexcept {
  return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t RandomStream::below(std::uint64_t n) noexcept {
  // Lemire's nearly-divisionless method.
  unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<unsigned __int128>((*this)()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double RandomStream::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

double draw_normal(RandomStream& rng, double mean, double variance) noexcept {
  return mean + std::sqrt(variance) * rng.normal();
}

// Marsaglia & Tsang (2000) squeeze/rejection; shapes below one are boosted by
// U^(1/shape).
double draw_gamma_shape(RandomStream& rng, double shape) noexcept {
  if (shape < 1.0) {
    const double g = draw_gamma_shape(rng, shape + 1.0);
    return g * std::pow(rng.uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double draw_gamma(RandomStream& rng, double mean, double dispersion) noexcept {
  const double shape = 1.0 / dispersion;
  return draw_gamma_shape(rng, shape) * mean * dispersion;
}

// Michael, Schucany & Haas (1976): transform a chi-square(1) variate, then pick
// one of the two roots with probability mean / (mean + root).
double draw_inverse_gaussian(RandomStream& rng, double mean, double lambda) noexcept {
  const double z = rng.normal();
  const double y = z * z;
  const double my = mean * y;
  const double x = mean + mean * my / (2.0 * lambda) -
                   mean / (2.0 * lambda) * std::sqrt(4.0 * lambda * my + my * my);
  if (rng.uniform() <= mean / (mean + x)) return x;
  return mean * mean / x;
}

bool draw_bernoulli(RandomStream& rng, double p) noexcept { return rng.uniform() < p; }

}  // namespace nestedg
