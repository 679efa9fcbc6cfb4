#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "somno/signals.hpp"

namespace somno {

enum class KernelKind { Linear, Rbf };

struct SvmParams {
  double C = 1.0;
  KernelKind kernel = KernelKind::Rbf;
  double gamma = 0.0;  // 0 = 1 / (d * variance of the standardized training matrix)
  double tolerance = 1e-3;
  std::size_t max_iterations = 0;  // 0 = max(10^7, 100 n)
};

// z-score transform fitted on training rows; constant features keep scale 1.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(std::span<const std::vector<double>> rows);
  std::vector<double> apply(std::span<const double> x) const;
};

// Solution of one binary soft-margin problem, f(x) = sum coef_i K(sv_i, x) - rho.
struct BinarySvm {
  std::vector<std::vector<double>> support;  // standardized support vectors
  std::vector<double> coef;                  // alpha_i * y_i
  double rho = 0.0;
  double kkt_gap = 0.0;  // max violating pair gap m - M at exit
  std::size_t iterations = 0;
  bool converged = false;
};

struct SmoResult {
  std::vector<double> alpha;
  double rho = 0.0;
  double kkt_gap = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

// Dual soft-margin solver with second-order working-set selection on a
// precomputed kernel matrix (row-major n x n). y holds +1/-1.
SmoResult smo_solve(std::span<const double> kernel, std::span<const double> y, double C, double tolerance,
                    std::size_t max_iterations);

double kernel_value(KernelKind kind, double gamma, std::span<const double> a, std::span<const double> b);

class SvmModel {
 public:
  // One-vs-rest over the class slots present in `labels`. Throws InvalidFeature
  // on non-finite input, DegenerateLabels with fewer than two classes.
  static SvmModel train(std::span<const std::vector<double>> rows, std::span<const DisorderClass> labels,
                        const SvmParams& params);

  // Decision values per class slot; absent classes get -infinity.
  std::array<double, kClassCount> decision_values(std::span<const double> x) const;
  DisorderClass predict(std::span<const double> x) const;

  const SvmParams& params() const { return params_; }
  double gamma() const { return gamma_; }
  std::size_t feature_count() const { return standardizer_.mean.size(); }
  const std::array<bool, kClassCount>& present() const { return present_; }
  const BinarySvm& machine(DisorderClass c) const { return machines_[index_of(c)]; }

  std::string to_json() const;
  static SvmModel from_json(const std::string& text);

 private:
  SvmParams params_;
  double gamma_ = 0.0;
  Standardizer standardizer_;
  std::array<bool, kClassCount> present_{};
  std::array<BinarySvm, kClassCount> machines_{};
};

}  // namespace somno
