#pragma once

// Reference implementations written independently of the library code paths,
// used as oracles by the unit and acceptance tests.

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// Parameter count of a dense MLP by layer arithmetic.
inline std::size_t mlp_parameter_count(const std::vector<std::size_t>& layers) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) n += layers[l] * layers[l + 1] + layers[l + 1];
  return n;
}

// Scalar-loop forward pass over one input row; weights laid out per layer as
// W (fan_in x fan_out, row-major) then b, relu hidden, chosen output map.
inline std::vector<double> mlp_forward_row(const std::vector<std::size_t>& layers, const std::vector<double>& w,
                                           std::vector<double> x, bool sigmoid_output) {
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    const std::size_t in = layers[l], out = layers[l + 1];
    std::vector<double> z(out, 0.0);
    for (std::size_t j = 0; j < out; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < in; ++i) s += x[i] * w[off + i * out + j];
      z[j] = s;
    }
    off += in * out;
    for (std::size_t j = 0; j < out; ++j) z[j] += w[off + j];
    off += out;
    const bool last = l + 2 == layers.size();
    for (auto& v : z) {
      if (!last) v = v > 0.0 ? v : 0.0;
      else if (sigmoid_output) v = 1.0 / (1.0 + std::exp(-v));
    }
    x = z;
  }
  return x;
}

// Direct PEHE evaluation.
inline double pehe(const std::vector<double>& tau_hat, const std::vector<double>& mu1, const std::vector<double>& mu0) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < tau_hat.size(); ++i) {
    const long double d = static_cast<long double>(tau_hat[i]) - (static_cast<long double>(mu1[i]) - mu0[i]);
    s += d * d;
  }
  return static_cast<double>(std::sqrt(s / static_cast<long double>(tau_hat.size())));
}

// Leading singular value via a full SVD.
inline double leading_singular_value(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

// Central finite differences of f around x.
inline std::vector<double> fd_gradient(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
                                       double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = x[i];
    x[i] = s + h;
    const double up = f(x);
    x[i] = s - h;
    const double down = f(x);
    x[i] = s;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::sqrt(std::max(na, nb));
  return den == 0.0 ? 0.0 : std::sqrt(d) / den;
}

inline double dr_pseudo(double y, int t, double mu0, double mu1, double pi) {
  const double mu_t = t == 1 ? mu1 : mu0;
  return (t - pi) / (pi * (1.0 - pi)) * (y - mu_t) + mu1 - mu0;
}

inline double ra_pseudo(double y, int t, double mu0, double mu1) { return t == 1 ? y - mu0 : mu1 - y; }

// Sample mean and standard error (sample sd / sqrt n).
inline std::pair<double, double> mean_se(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()))};
}

}  // namespace oracle
