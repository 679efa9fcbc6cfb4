#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "../support/oracles.hpp"
#include "somno/dsp.hpp"
#include "somno/error.hpp"
#include "somno/fft.hpp"

using namespace somno;

namespace {

std::vector<double> tone(double f, std::size_t n, double rate = 512.0, double phase = 0.3) {
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) x[t] = std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t) / rate + phase);
  return x;
}

}  // namespace

TEST_CASE("rfft matches a naive DFT") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (std::size_t nfft : {8u, 64u, 256u, 1024u, 12u, 100u}) {
    for (std::size_t len : {nfft / 2, nfft}) {
      std::vector<double> x(len);
      for (auto& v : x) v = g(rng);
      const auto fast = rfft(x, nfft);
      REQUIRE(fast.size() == nfft / 2 + 1);
      for (std::size_t k = 0; k < fast.size(); ++k) {
        const auto ref = oracle::dft_bin(x, nfft, k);
        CHECK(std::abs(fast[k] - ref) < 1e-9 * (1.0 + std::abs(ref)));
      }
    }
  }
}

TEST_CASE("rfft truncation keeps the leading bins") {
  const auto x = tone(10.0, 300);
  const auto full = rfft(x, 1024);
  const auto head = rfft(x, 1024, 40);
  REQUIRE(head.size() == 40);
  for (std::size_t k = 0; k < 40; ++k) CHECK(std::abs(full[k] - head[k]) < 1e-12);
}

TEST_CASE("irfft inverts rfft") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  std::vector<double> x(512);
  for (auto& v : x) v = g(rng);
  const auto back = irfft(rfft(x, 512), 512);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-10));
}

TEST_CASE("Parseval holds for the full transform") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<Complex> a(256);
  double energy = 0.0;
  for (auto& v : a) {
    v = {g(rng), g(rng)};
    energy += std::norm(v);
  }
  fft_plan(256).transform(a);
  double spec = 0.0;
  for (const auto& v : a) spec += std::norm(v);
  CHECK(spec / 256.0 == doctest::Approx(energy).epsilon(1e-12));
}

TEST_CASE("Hann window is symmetric with zero endpoints") {
  const auto w = hanning(101);
  CHECK(w.front() == 0.0);
  CHECK(w.back() == 0.0);
  CHECK(w[50] == 1.0);
  for (std::size_t k = 0; k < 101; ++k) CHECK(w[k] == w[100 - k]);
  CHECK_THROWS_AS(hanning(1), Error);
}

TEST_CASE("tone argmax lands on the expected FFT bin") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> uf(2.0, 78.0);
  for (int i = 0; i < 30; ++i) {
    const double f = uf(rng);
    const Spectrum s = fft_magnitude(tone(f, 2560), 8192, 512.0);
    CHECK(s.bin_hz == 0.0625);
    const auto best = static_cast<double>(std::max_element(s.bins.begin(), s.bins.end()) - s.bins.begin());
    CHECK(std::abs(best - std::round(f / 0.0625)) <= 1.0);
  }
}

TEST_CASE("spectrogram is 21 x 70 and peaks in the tone band") {
  StftConfig cfg;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uf(2.0, 78.0);
  const double width = 80.0 / 21.0;
  int checked = 0;
  while (checked < 20) {
    const double f = uf(rng);
    const double pos = f / width;
    if (pos - std::floor(pos) < 0.5 / width || std::ceil(pos) - pos < 0.5 / width) continue;
    const auto x = tone(f, 2560);
    const std::vector<float> xf(x.begin(), x.end());
    const Spectrogram sg = spectrogram_of(xf, ChannelKind::EEG1, cfg, 512.0);
    REQUIRE(sg.values.rows == 21);
    REQUIRE(sg.values.cols == 70);
    std::vector<double> band_sum(21, 0.0);
    for (std::size_t b = 0; b < 21; ++b)
      for (std::size_t j = 0; j < 70; ++j) band_sum[b] += sg.values(b, j);
    const auto best = static_cast<std::size_t>(std::max_element(band_sum.begin(), band_sum.end()) - band_sum.begin());
    CHECK(best == static_cast<std::size_t>(std::floor(pos)));
    ++checked;
  }
}

TEST_CASE("stft frame count and padding") {
  StftConfig cfg;
  const auto raw = stft(tone(10, 2560), cfg, 512.0);
  CHECK(raw.values.cols == 69);
  CHECK(raw.first_bin == 0);
  CHECK(raw.values.rows == 1281);  // 0..80 Hz inclusive at 0.0625 Hz
  const auto pooled = pool_spectrogram(raw, cfg);
  for (std::size_t b = 0; b < 21; ++b) CHECK(pooled.values(b, 69) == pooled.values(b, 68));
}

TEST_CASE("stft frame equals a windowed naive DFT") {
  StftConfig cfg;
  cfg.nfft = 512;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  std::vector<double> x(600);
  for (auto& v : x) v = g(rng);
  const auto raw = stft(x, cfg, 512.0);
  const auto w = hanning(101);
  const std::size_t frame = 3;
  std::vector<double> seg(101);
  for (std::size_t k = 0; k < 101; ++k) seg[k] = x[frame * 36 + k] * w[k];
  for (std::size_t r = 0; r < raw.values.rows; r += 7) {
    CHECK(raw.values(r, frame) == doctest::Approx(std::abs(oracle::dft_bin(seg, 512, r))).epsilon(1e-9));
  }
}

TEST_CASE("band_of uses half-open bands") {
  StftConfig cfg;
  const double w = 80.0 / 21.0;
  CHECK(band_of(0.0, cfg) == 0);
  CHECK(band_of(w - 1e-9, cfg) == 0);
  CHECK(band_of(w + 1e-9, cfg) == 1);
  CHECK(band_of(80.0, cfg) == 20);
  CHECK(band_of(38.0, cfg) == 9);
}

TEST_CASE("stft rejects bad input") {
  StftConfig cfg;
  CHECK_THROWS_AS(stft(std::vector<double>(50, 0.0), cfg, 512.0), Error);
  StftConfig bad = cfg;
  bad.freq_hi = 300;
  CHECK_THROWS_AS(bad.validate(512.0), Error);
  bad = cfg;
  bad.hop = 0;
  CHECK_THROWS_AS(bad.validate(512.0), Error);
}

TEST_CASE("spectrogram dumps round-trip at float precision") {
  StftConfig cfg;
  SpectrogramDump dump;
  Epoch e;
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    const auto x = tone(5.0 + 7.0 * static_cast<double>(c), 2560);
    e.samples[c].assign(x.begin(), x.end());
  }
  dump.labels = {DisorderClass::Sbd, DisorderClass::Nfl};
  dump.epochs = {spectrograms_of(e, cfg), spectrograms_of(e, cfg)};
  const auto path = std::filesystem::temp_directory_path() / "somno_unit_dump.spec";
  write_spectrograms(path, dump);
  const auto back = load_spectrograms(path);
  REQUIRE(back.epochs.size() == 2);
  CHECK(back.labels == dump.labels);
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    CHECK(back.epochs[1][c].channel == dump.epochs[1][c].channel);
    for (std::size_t i = 0; i < dump.epochs[1][c].values.data.size(); ++i) {
      CHECK(back.epochs[1][c].values.data[i] == static_cast<double>(static_cast<float>(dump.epochs[1][c].values.data[i])));
    }
  }
}
