#ifndef METADMOE_OPTIM_HPP
#define METADMOE_OPTIM_HPP

#include "metadmoe/param_store.hpp"

#include <cmath>

namespace metadmoe {

/// Adam over one ParamStore. Moment buffers are created on the first step.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore<Scalar>& params, const ParamStore<Scalar>& grads, double lr) {
    if (first_.size() == 0) {
      first_ = zeros_like(params);
      second_ = zeros_like(params);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const Scalar b1 = static_cast<Scalar>(beta1_);
    const Scalar b2 = static_cast<Scalar>(beta2_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Matrix<Scalar>& g = grads.at(params.name(i));
      Matrix<Scalar>& m = first_.at(i);
      Matrix<Scalar>& v = second_.at(i);
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
      const Scalar step_size = static_cast<Scalar>(lr / c1);
      const Scalar root_c2 = static_cast<Scalar>(std::sqrt(c2));
      params.at(i).array() -= step_size * m.array() / (v.array().sqrt() / root_c2 + static_cast<Scalar>(eps_));
    }
  }

  long steps() const { return t_; }

 private:
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
  ParamStore<Scalar> first_;
  ParamStore<Scalar> second_;
};

}  // namespace metadmoe

#endif  // METADMOE_OPTIM_HPP
