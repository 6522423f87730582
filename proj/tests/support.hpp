// Shared helpers for the unit tests.

#ifndef METADMOE_TEST_SUPPORT_HPP
#define METADMOE_TEST_SUPPORT_HPP

#include "metadmoe/autodiff.hpp"
#include "metadmoe/param_store.hpp"

#include <functional>
#include <random>
#include <vector>

namespace testing_support {

using metadmoe::Index;
using Mat = metadmoe::Matrix<double>;
using VarD = metadmoe::ad::Var<double>;

inline Mat random_matrix(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

using ScalarFn = std::function<VarD(const std::vector<VarD>&)>;

/// Central finite-difference gradient of `f` at `points`, one matrix per input.
inline std::vector<Mat> numeric_gradient(const ScalarFn& f, const std::vector<Mat>& points, double eps = 1e-6) {
  metadmoe::ad::NoGradGuard no_grad;
  std::vector<Mat> out;
  for (std::size_t k = 0; k < points.size(); ++k) {
    Mat g(points[k].rows(), points[k].cols());
    for (Index i = 0; i < points[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<VarD> vars;
        for (std::size_t j = 0; j < points.size(); ++j) {
          Mat p = points[j];
          if (j == k) p.data()[i] += delta;
          vars.push_back(VarD::constant(p));
        }
        return f(vars).item();
      };
      g.data()[i] = (eval(eps) - eval(-eps)) / (2 * eps);
    }
    out.push_back(g);
  }
  return out;
}

inline std::vector<Mat> analytic_gradient(const ScalarFn& f, const std::vector<Mat>& points) {
  std::vector<VarD> leaves;
  for (const auto& p : points) leaves.push_back(VarD::leaf(p));
  std::vector<VarD> g = metadmoe::ad::grad(f(leaves), leaves);
  std::vector<Mat> out;
  for (const auto& v : g) out.push_back(v.value());
  return out;
}

/// Largest |a - b| / max(1, |b|) over all entries.
inline double max_rel_error(const std::vector<Mat>& a, const std::vector<Mat>& b) {
  double worst = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (Index i = 0; i < a[k].size(); ++i) {
      const double denom = std::max(1.0, std::abs(b[k].data()[i]));
      worst = std::max(worst, std::abs(a[k].data()[i] - b[k].data()[i]) / denom);
    }
  }
  return worst;
}

}  // namespace testing_support

#endif  // METADMOE_TEST_SUPPORT_HPP
