#pragma once

// Reference implementations written straight from the textbook definitions.
// They share no code with the library and favour clarity over speed.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <vector>

namespace oracle {

// X[k] = sum_n x[n] e^{-2 pi i k n / N}, x zero-padded to N.
inline std::complex<double> dft_bin(const std::vector<double>& x, std::size_t n_fft, std::size_t k) {
  std::complex<double> acc = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double phase = -2.0 * std::numbers::pi * static_cast<double>((k * n) % n_fft) / static_cast<double>(n_fft);
    acc += x[n] * std::complex<double>(std::cos(phase), std::sin(phase));
  }
  return acc;
}

// Cross-correlation with zero padding, layouts [N,C,H,W] / [Cout,Cin,kh,kw].
inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t n, std::size_t c, std::size_t h,
                                  std::size_t w, const std::vector<double>& k, std::size_t co, std::size_t kh,
                                  std::size_t kw, const std::vector<double>& bias, std::size_t sh, std::size_t sw,
                                  std::size_t ph, std::size_t pw, std::size_t& oh, std::size_t& ow) {
  oh = (h + 2 * ph - kh) / sh + 1;
  ow = (w + 2 * pw - kw) / sw + 1;
  std::vector<double> y(n * co * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long r = static_cast<long>(i * sh + u) - static_cast<long>(ph);
                const long s = static_cast<long>(j * sw + v) - static_cast<long>(pw);
                if (r < 0 || s < 0 || r >= static_cast<long>(h) || s >= static_cast<long>(w)) continue;
                acc += x[((b * c + ci) * h + static_cast<std::size_t>(r)) * w + static_cast<std::size_t>(s)] *
                       k[((o * c + ci) * kh + u) * kw + v];
              }
          y[((b * co + o) * oh + i) * ow + j] = acc;
        }
  return y;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Band descriptors over one-sided magnitudes m_k at frequencies f_k.
struct Descriptors {
  double power, mean, std, median, min, max, entropy, energy, centroid;
  double slope, decrease, skewness, kurtosis, crest;
};

inline Descriptors descriptors(const std::vector<double>& m, const std::vector<double>& f) {
  Descriptors d{};
  const double n = static_cast<double>(m.size());
  double energy = 0.0;
  for (double x : m) energy += x * x;
  d.energy = energy;
  d.power = energy / n;
  d.mean = mean(m);
  double var = 0.0;
  for (double x : m) var += (x - d.mean) * (x - d.mean);
  var /= n;
  d.std = std::sqrt(var);
  std::vector<double> s = m;
  std::sort(s.begin(), s.end());
  d.median = s.size() % 2 ? s[s.size() / 2] : (s[s.size() / 2 - 1] + s[s.size() / 2]) / 2.0;
  d.min = s.front();
  d.max = s.back();
  d.entropy = 0.0;
  for (double x : m) {
    const double p = x * x / energy;
    if (p > 0) d.entropy -= p * std::log2(p);
  }
  d.entropy /= std::log2(n);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    num += f[k] * m[k];
    den += m[k];
  }
  d.centroid = num / den;
  const double fbar = mean(f);
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    sxy += (f[k] - fbar) * (m[k] - d.mean);
    sxx += (f[k] - fbar) * (f[k] - fbar);
  }
  d.slope = sxy / sxx;
  double dn = 0.0;
  double dd = 0.0;
  for (std::size_t k = 1; k < m.size(); ++k) {
    dn += (m[k] - m[0]) / static_cast<double>(k);
    dd += m[k];
  }
  d.decrease = dn / dd;
  double m3 = 0.0;
  double m4 = 0.0;
  for (double x : m) {
    m3 += std::pow(x - d.mean, 3);
    m4 += std::pow(x - d.mean, 4);
  }
  d.skewness = (m3 / n) / std::pow(var, 1.5);
  d.kurtosis = (m4 / n) / (var * var);
  d.crest = d.max / d.mean;
  return d;
}

// Exact rational sensitivity/specificity from a [truth][pred] count matrix.
struct Ratio {
  std::uint64_t num = 0;
  std::uint64_t den = 0;
};

template <std::size_t K>
Ratio sensitivity(const std::array<std::array<std::uint64_t, K>, K>& m, std::size_t c) {
  Ratio r;
  r.num = m[c][c];
  for (std::size_t j = 0; j < K; ++j) r.den += m[c][j];
  return r;
}

template <std::size_t K>
Ratio specificity(const std::array<std::array<std::uint64_t, K>, K>& m, std::size_t c) {
  Ratio r;
  for (std::size_t i = 0; i < K; ++i) {
    if (i == c) continue;
    for (std::size_t j = 0; j < K; ++j) {
      r.den += m[i][j];
      if (j != c) r.num += m[i][j];
    }
  }
  return r;
}

// Exact linear least squares with an L2 penalty on all but the first column,
// solved by Gaussian elimination with partial pivoting.
inline std::vector<double> weighted_ridge(const std::vector<std::vector<double>>& rows, const std::vector<double>& y,
                                          const std::vector<double>& w, double ridge) {
  const std::size_t p = rows.front().size();
  std::vector<std::vector<double>> a(p, std::vector<double>(p + 1, 0.0));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t r = 0; r < p; ++r) {
      for (std::size_t c = 0; c < p; ++c) a[r][c] += w[i] * rows[i][r] * rows[i][c];
      a[r][p] += w[i] * rows[i][r] * y[i];
    }
  for (std::size_t r = 1; r < p; ++r) a[r][r] += ridge;
  for (std::size_t col = 0; col < p; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < p; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    for (std::size_t r = 0; r < p; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c <= p; ++c) a[r][c] -= f * a[col][c];
    }
  }
  std::vector<double> beta(p);
  for (std::size_t r = 0; r < p; ++r) beta[r] = a[r][p] / a[r][r];
  return beta;
}

}  // namespace oracle
