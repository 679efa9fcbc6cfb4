#include "somno/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <json.hpp>

#include "somno/error.hpp"
#include "somno/parallel.hpp"

namespace somno {

using nlohmann::json;

namespace {

constexpr double kTau = 1e-12;
constexpr std::size_t kMaxKernelRows = 12000;

const char* kernel_name(KernelKind k) { return k == KernelKind::Linear ? "linear" : "rbf"; }

KernelKind parse_kernel(const std::string& s) {
  if (s == "linear") return KernelKind::Linear;
  if (s == "rbf") return KernelKind::Rbf;
  fail(ErrorKind::ConfigError, "unknown kernel '" + s + "'");
}

}  // namespace

Standardizer Standardizer::fit(std::span<const std::vector<double>> rows) {
  require(!rows.empty(), ErrorKind::EmptyDataset, "cannot standardize zero rows");
  const std::size_t d = rows.front().size();
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 1.0);
  for (const auto& r : rows) {
    for (std::size_t f = 0; f < d; ++f) s.mean[f] += r[f];
  }
  for (auto& m : s.mean) m /= static_cast<double>(rows.size());
  std::vector<double> var(d, 0.0);
  for (const auto& r : rows) {
    for (std::size_t f = 0; f < d; ++f) var[f] += (r[f] - s.mean[f]) * (r[f] - s.mean[f]);
  }
  for (std::size_t f = 0; f < d; ++f) {
    const double sd = std::sqrt(var[f] / static_cast<double>(rows.size()));
    s.scale[f] = sd > 1e-12 * std::max(1.0, std::abs(s.mean[f])) ? sd : 1.0;
  }
  return s;
}

std::vector<double> Standardizer::apply(std::span<const double> x) const {
  require(x.size() == mean.size(), ErrorKind::ShapeError,
          "expected " + std::to_string(mean.size()) + " features, got " + std::to_string(x.size()));
  std::vector<double> out(x.size());
  for (std::size_t f = 0; f < x.size(); ++f) out[f] = (x[f] - mean[f]) / scale[f];
  return out;
}

double kernel_value(KernelKind kind, double gamma, std::span<const double> a, std::span<const double> b) {
  if (kind == KernelKind::Linear) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return std::exp(-gamma * d2);
}

SmoResult smo_solve(std::span<const double> K, std::span<const double> y, double C, double tolerance,
                    std::size_t max_iterations) {
  const std::size_t n = y.size();
  require(K.size() == n * n, ErrorKind::ShapeError, "kernel matrix must be n x n");
  require(C > 0.0 && tolerance > 0.0, ErrorKind::ConfigError, "C and tolerance must be positive");
  if (max_iterations == 0) max_iterations = std::max<std::size_t>(10'000'000, 100 * n);
  SmoResult res;
  res.alpha.assign(n, 0.0);
  auto& alpha = res.alpha;
  std::vector<double> G(n, -1.0);
  auto up = [&](std::size_t t) { return y[t] > 0 ? alpha[t] < C : alpha[t] > 0.0; };
  auto low = [&](std::size_t t) { return y[t] > 0 ? alpha[t] > 0.0 : alpha[t] < C; };

  while (true) {
    double gmax = -std::numeric_limits<double>::infinity();
    std::size_t i = n;
    for (std::size_t t = 0; t < n; ++t) {
      if (up(t) && -y[t] * G[t] >= gmax) {
        gmax = -y[t] * G[t];
        i = t;
      }
    }
    double gmax2 = -std::numeric_limits<double>::infinity();
    std::size_t j = n;
    double obj_min = std::numeric_limits<double>::infinity();
    if (i < n) {
      const double* Ki = K.data() + i * n;
      for (std::size_t t = 0; t < n; ++t) {
        if (!low(t)) continue;
        const double yg = y[t] * G[t];
        gmax2 = std::max(gmax2, yg);
        const double b = gmax + yg;
        if (b > 0.0) {
          double a = Ki[i] + K[t * n + t] - 2.0 * Ki[t];
          if (a <= 0.0) a = kTau;
          const double obj = -(b * b) / a;
          if (obj <= obj_min) {
            obj_min = obj;
            j = t;
          }
        }
      }
    }
    res.kkt_gap = (i < n && std::isfinite(gmax2)) ? gmax + gmax2 : 0.0;
    if (i == n || j == n || res.kkt_gap < tolerance) {
      res.converged = true;
      break;
    }
    if (res.iterations >= max_iterations) break;
    ++res.iterations;

    const double* Ki = K.data() + i * n;
    const double* Kj = K.data() + j * n;
    const double old_i = alpha[i];
    const double old_j = alpha[j];
    double quad = Ki[i] + Kj[j] - 2.0 * Ki[j];
    if (quad <= 0.0) quad = kTau;
    if (y[i] != y[j]) {
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) {
          alpha[j] = 0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = -diff;
      }
      if (diff > 0) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = C - diff;
        }
      } else if (alpha[j] > C) {
        alpha[j] = C;
        alpha[i] = C + diff;
      }
    } else {
      const double delta = (G[i] - G[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > C) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = sum - C;
        }
      } else if (alpha[j] < 0) {
        alpha[j] = 0;
        alpha[i] = sum;
      }
      if (sum > C) {
        if (alpha[j] > C) {
          alpha[j] = C;
          alpha[i] = sum - C;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = sum;
      }
    }
    const double di = (alpha[i] - old_i) * y[i];
    const double dj = (alpha[j] - old_j) * y[j];
    for (std::size_t k = 0; k < n; ++k) G[k] += y[k] * (Ki[k] * di + Kj[k] * dj);
  }

  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  std::size_t free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * G[t];
    if (alpha[t] >= C) {
      if (y[t] < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (alpha[t] <= 0.0) {
      if (y[t] > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++free;
      sum_free += yg;
    }
  }
  res.rho = free > 0 ? sum_free / static_cast<double>(free) : (ub + lb) / 2.0;
  return res;
}

SvmModel SvmModel::train(std::span<const std::vector<double>> rows, std::span<const DisorderClass> labels,
                         const SvmParams& params) {
  require(rows.size() == labels.size(), ErrorKind::ShapeError, "one label per row required");
  require(!rows.empty(), ErrorKind::EmptyDataset, "no training rows");
  require(rows.size() <= kMaxKernelRows, ErrorKind::ConfigError,
          "SVM training keeps the full kernel matrix; at most " + std::to_string(kMaxKernelRows) + " rows supported");
  require(params.C > 0.0, ErrorKind::ConfigError, "C must be positive");
  require(params.gamma >= 0.0, ErrorKind::ConfigError, "gamma must be non-negative");
  const std::size_t d = rows.front().size();
  require(d >= 1, ErrorKind::ShapeError, "feature vectors are empty");
  for (const auto& r : rows) {
    require(r.size() == d, ErrorKind::ShapeError, "feature vectors differ in length");
    for (double v : r) require(std::isfinite(v), ErrorKind::InvalidFeature, "non-finite feature value");
  }
  SvmModel m;
  m.params_ = params;
  for (auto l : labels) m.present_[index_of(l)] = true;
  require(std::count(m.present_.begin(), m.present_.end(), true) >= 2, ErrorKind::DegenerateLabels,
          "SVM needs at least two classes");

  m.standardizer_ = Standardizer::fit(rows);
  const std::size_t n = rows.size();
  Eigen::MatrixXd X(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = m.standardizer_.apply(rows[i]);
    for (std::size_t f = 0; f < d; ++f) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) = z[f];
  }
  if (params.gamma > 0.0) {
    m.gamma_ = params.gamma;
  } else {
    const double mean = X.mean();
    const double var = X.array().square().mean() - mean * mean;
    m.gamma_ = 1.0 / (static_cast<double>(d) * (var > 0.0 ? var : 1.0));
  }
  Eigen::MatrixXd gram = X * X.transpose();
  if (params.kernel == KernelKind::Rbf) {
    const Eigen::VectorXd sq = gram.diagonal();
    for (Eigen::Index c = 0; c < gram.cols(); ++c) {
      for (Eigen::Index r = 0; r < gram.rows(); ++r) {
        gram(r, c) = std::exp(-m.gamma_ * std::max(0.0, sq(r) + sq(c) - 2.0 * gram(r, c)));
      }
    }
  }
  // Column-major symmetric matrix reads identically as row-major.
  const std::span<const double> K(gram.data(), n * n);

  std::vector<std::size_t> classes;
  for (std::size_t k = 0; k < kClassCount; ++k) {
    if (m.present_[k]) classes.push_back(k);
  }
  parallel_for(classes.size(), [&](std::size_t ci) {
    const std::size_t k = classes[ci];
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = index_of(labels[i]) == k ? 1.0 : -1.0;
    const SmoResult r = smo_solve(K, y, params.C, params.tolerance, params.max_iterations);
    BinarySvm& b = m.machines_[k];
    b.rho = r.rho;
    b.kkt_gap = r.kkt_gap;
    b.iterations = r.iterations;
    b.converged = r.converged;
    for (std::size_t i = 0; i < n; ++i) {
      if (r.alpha[i] <= 0.0) continue;
      std::vector<double> sv(d);
      for (std::size_t f = 0; f < d; ++f) sv[f] = X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f));
      b.support.push_back(std::move(sv));
      b.coef.push_back(r.alpha[i] * y[i]);
    }
  });
  return m;
}

std::array<double, kClassCount> SvmModel::decision_values(std::span<const double> x) const {
  require(!standardizer_.mean.empty(), ErrorKind::StateError, "SVM is not trained");
  for (double v : x) require(std::isfinite(v), ErrorKind::InvalidFeature, "non-finite feature value");
  const auto z = standardizer_.apply(x);
  std::array<double, kClassCount> out;
  out.fill(-std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < kClassCount; ++k) {
    if (!present_[k]) continue;
    const BinarySvm& b = machines_[k];
    double f = -b.rho;
    for (std::size_t s = 0; s < b.support.size(); ++s) f += b.coef[s] * kernel_value(params_.kernel, gamma_, b.support[s], z);
    out[k] = f;
  }
  return out;
}

DisorderClass SvmModel::predict(std::span<const double> x) const {
  const auto v = decision_values(x);
  return static_cast<DisorderClass>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::string SvmModel::to_json() const {
  json j;
  j["kind"] = "svm";
  j["params"] = {{"C", params_.C},
                 {"kernel", kernel_name(params_.kernel)},
                 {"gamma", params_.gamma},
                 {"tolerance", params_.tolerance},
                 {"max_iterations", params_.max_iterations}};
  j["gamma"] = gamma_;
  j["mean"] = standardizer_.mean;
  j["scale"] = standardizer_.scale;
  json machines = json::array();
  for (std::size_t k = 0; k < kClassCount; ++k) {
    if (!present_[k]) continue;
    const BinarySvm& b = machines_[k];
    machines.push_back({{"class", std::string(class_code(static_cast<DisorderClass>(k)))},
                        {"rho", b.rho},
                        {"kkt_gap", b.kkt_gap},
                        {"iterations", b.iterations},
                        {"converged", b.converged},
                        {"coef", b.coef},
                        {"support", b.support}});
  }
  j["machines"] = std::move(machines);
  return j.dump();
}

SvmModel SvmModel::from_json(const std::string& text) {
  SvmModel m;
  try {
    const json j = json::parse(text);
    require(j.at("kind") == "svm", ErrorKind::FormatError, "not an SVM model");
    const auto& p = j.at("params");
    m.params_.C = p.at("C");
    m.params_.kernel = parse_kernel(p.at("kernel").get<std::string>());
    m.params_.gamma = p.at("gamma");
    m.params_.tolerance = p.at("tolerance");
    m.params_.max_iterations = p.at("max_iterations");
    m.gamma_ = j.at("gamma");
    m.standardizer_.mean = j.at("mean").get<std::vector<double>>();
    m.standardizer_.scale = j.at("scale").get<std::vector<double>>();
    const std::size_t d = m.standardizer_.mean.size();
    require(d >= 1 && m.standardizer_.scale.size() == d, ErrorKind::FormatError, "standardizer size mismatch");
    for (const auto& jm : j.at("machines")) {
      const auto cls = parse_class(jm.at("class").get<std::string>());
      require(cls.has_value(), ErrorKind::FormatError, "unknown class in SVM model");
      BinarySvm& b = m.machines_[index_of(*cls)];
      m.present_[index_of(*cls)] = true;
      b.rho = jm.at("rho");
      b.kkt_gap = jm.at("kkt_gap");
      b.iterations = jm.at("iterations");
      b.converged = jm.at("converged");
      b.coef = jm.at("coef").get<std::vector<double>>();
      b.support = jm.at("support").get<std::vector<std::vector<double>>>();
      require(b.coef.size() == b.support.size(), ErrorKind::FormatError, "coefficient count mismatch");
      for (const auto& sv : b.support) require(sv.size() == d, ErrorKind::FormatError, "support vector size mismatch");
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("malformed SVM model: ") + e.what());
  }
  require(std::count(m.present_.begin(), m.present_.end(), true) >= 2, ErrorKind::FormatError,
          "SVM model has fewer than two classes");
  return m;
}

}  // namespace somno
