#include "somno/fft.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "somno/error.hpp"

namespace somno {

namespace {

// Plain product; std::complex operator* carries NaN/Inf recovery that blocks vectorization.
inline Complex mul(Complex a, Complex b) {
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

}  // namespace

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

FftPlan::FftPlan(std::size_t n) : n_(n) {
  require(is_power_of_two(n), ErrorKind::InvalidLength, "FFT size must be a power of two");
  twiddles_.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    twiddles_[k] = {std::cos(angle), std::sin(angle)};
  }
  bitrev_.resize(n);
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < n) ++bits;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
    bitrev_[i] = r;
  }
}

void FftPlan::transform(std::span<Complex> data, bool inverse) const {
  require(data.size() == n_, ErrorKind::InvalidLength, "FFT buffer size does not match plan");
  for (std::size_t i = 0; i < n_; ++i) {
    if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
  }
  for (std::size_t len = 2; len <= n_; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n_ / len;
    for (std::size_t start = 0; start < n_; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        Complex w = twiddles_[k * step];
        if (inverse) w = std::conj(w);
        const Complex u = data[start + k];
        const Complex v = mul(data[start + k + half], w);
        data[start + k] = u + v;
        data[start + k + half] = u - v;
      }
    }
  }
}

const FftPlan& fft_plan(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<FftPlan>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<FftPlan>(n);
  return *slot;
}

namespace {

std::vector<Complex> direct_dft(std::span<const double> x, std::size_t nfft, std::size_t bins) {
  std::vector<Complex> out(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    Complex acc{0.0, 0.0};
    for (std::size_t t = 0; t < x.size(); ++t) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>((k * t) % nfft) /
                           static_cast<double>(nfft);
      acc += x[t] * Complex{std::cos(angle), std::sin(angle)};
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace

std::vector<Complex> rfft(std::span<const double> x, std::size_t nfft, std::size_t max_bins) {
  require(!x.empty(), ErrorKind::InvalidLength, "empty input");
  require(x.size() <= nfft, ErrorKind::InvalidLength, "input longer than nfft");
  const std::size_t one_sided = nfft / 2 + 1;
  const std::size_t bins = (max_bins == 0 || max_bins > one_sided) ? one_sided : max_bins;
  if (!is_power_of_two(nfft) || nfft < 4) return direct_dft(x, nfft, bins);

  // Pack the real sequence into a half-length complex sequence z[m] = x[2m] + i x[2m+1].
  const std::size_t m = nfft / 2;
  std::vector<Complex> z(m, Complex{0.0, 0.0});
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (t % 2 == 0) {
      z[t / 2].real(x[t]);
    } else {
      z[t / 2].imag(x[t]);
    }
  }
  fft_plan(m).transform(z);

  const FftPlan& full = fft_plan(nfft);
  std::vector<Complex> out(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    const Complex zk = z[k % m];
    const Complex zc = std::conj(z[(m - k % m) % m]);
    const Complex even = 0.5 * (zk + zc);
    const Complex d = zk - zc;
    const Complex odd{0.5 * d.imag(), -0.5 * d.real()};
    out[k] = even + mul(full.twiddle(k), odd);
  }
  return out;
}

std::vector<double> irfft(std::span<const Complex> half, std::size_t n) {
  require(is_power_of_two(n), ErrorKind::InvalidLength, "irfft size must be a power of two");
  require(half.size() == n / 2 + 1, ErrorKind::InvalidLength, "irfft expects n/2+1 bins");
  std::vector<Complex> full(n);
  for (std::size_t k = 0; k <= n / 2; ++k) full[k] = half[k];
  for (std::size_t k = n / 2 + 1; k < n; ++k) full[k] = std::conj(half[n - k]);
  fft_plan(n).transform(full, true);
  std::vector<double> out(n);
  for (std::size_t t = 0; t < n; ++t) out[t] = full[t].real() / static_cast<double>(n);
  return out;
}

}  // namespace somno
