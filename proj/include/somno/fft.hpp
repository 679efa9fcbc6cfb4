#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace somno {

using Complex = std::complex<double>;

// Iterative radix-2 FFT with precomputed twiddles and bit-reversal table.
// Plans are immutable once built, so one plan may be used from many threads.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n);

  std::size_t size() const { return n_; }

  // In-place forward (e^{-i...}) or unscaled inverse transform.
  void transform(std::span<Complex> data, bool inverse = false) const;

  // e^{-2 pi i k / n} for k in [0, n].
  Complex twiddle(std::size_t k) const {
    k %= n_;
    return k < n_ / 2 ? twiddles_[k] : -twiddles_[k - n_ / 2];
  }

 private:
  std::size_t n_;
  std::vector<Complex> twiddles_;
  std::vector<std::size_t> bitrev_;
};

bool is_power_of_two(std::size_t n);

// Shared plan cache keyed by size; n must be a power of two.
const FftPlan& fft_plan(std::size_t n);

// One-sided DFT (bins 0..nfft/2) of x zero-padded to nfft. Only the first
// max_bins bins are returned when max_bins is non-zero. Power-of-two sizes
// use the FFT; other sizes fall back to a direct DFT.
std::vector<Complex> rfft(std::span<const double> x, std::size_t nfft, std::size_t max_bins = 0);

// Real signal of length n whose one-sided spectrum is `half` (n/2+1 bins).
std::vector<double> irfft(std::span<const Complex> half, std::size_t n);

}  // namespace somno
