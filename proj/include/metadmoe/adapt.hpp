// Knowledge-distillation adaptation of the student feature extractor.

#ifndef METADMOE_ADAPT_HPP
#define METADMOE_ADAPT_HPP

#include "metadmoe/nets.hpp"

#include <cmath>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace metadmoe {

enum class DistillTarget { features, logits, both };
enum class DistillLoss { mean_squared, l2_norm };

std::string to_string(DistillTarget t);
std::string to_string(DistillLoss l);
DistillTarget distill_target_from_string(const std::string& s);
DistillLoss distill_loss_from_string(const std::string& s);

struct AdaptConfig {
  /// Inner (adaptation) learning rate.
  double alpha = 1.0;
  int num_inner_steps = 1;
  DistillTarget target = DistillTarget::features;
  DistillLoss loss = DistillLoss::mean_squared;
  /// Keep the inner gradient differentiable so the outer update sees it.
  bool second_order = true;
  /// Softmax temperature for logit distillation.
  double temperature = 1.0;
  /// Unlabeled samples used to adapt to one domain.
  int n_support = 24;
  /// Refuse to adapt on fewer than n_support samples instead of warning.
  bool strict = false;

  void validate() const {
    if (!(alpha >= 0)) throw std::invalid_argument("AdaptConfig: alpha must be >= 0");
    if (num_inner_steps < 1) throw std::invalid_argument("AdaptConfig: num_inner_steps must be >= 1");
    if (!(temperature > 0)) throw std::invalid_argument("AdaptConfig: temperature must be > 0");
    if (n_support < 1) throw std::invalid_argument("AdaptConfig: n_support must be >= 1");
  }
};

struct MaskSpec {
  std::optional<int> masked_expert;
};

/// Student + aggregator architecture shared by training and evaluation.
struct Architecture {
  StudentConfig student;
  AggregatorConfig aggregator;
};

/// Adaptation updates performed per domain.
struct AdaptationCounter {
  std::map<int, long> per_domain;
  long total = 0;

  void add(int domain_id, long updates) {
    per_domain[domain_id] += updates;
    total += updates;
  }
};

/// Tally of classifier comparisons made around inner adaptations.
struct ClassifierAudit {
  long checks = 0;
  long changes = 0;

  void record(bool unchanged) {
    ++checks;
    if (!unchanged) ++changes;
  }
  void merge(const ClassifierAudit& other) {
    checks += other.checks;
    changes += other.changes;
  }
};

namespace detail {

inline void check_mask(int num_experts, const MaskSpec& mask) {
  if (mask.masked_expert && (*mask.masked_expert < 0 || *mask.masked_expert >= num_experts)) {
    throw std::out_of_range("mask index " + std::to_string(*mask.masked_expert) + " outside [0, " +
                            std::to_string(num_experts) + ")");
  }
}

template <typename Scalar>
Matrix<Scalar> mask_matrix(Index rows, Index cols, int num_experts, const MaskSpec& mask) {
  Matrix<Scalar> keep = Matrix<Scalar>::Ones(rows, cols);
  if (mask.masked_expert) {
    for (Index r = *mask.masked_expert; r < rows; r += num_experts) keep.row(r).setZero();
  }
  return keep;
}

}  // namespace detail

/// Zeroes the token of the masked expert for every sample. The zero token
/// stays in place, so the aggregator still sees N tokens.
template <typename Scalar>
Matrix<Scalar> mask_experts(const Matrix<Scalar>& tokens, int num_experts, const MaskSpec& mask) {
  detail::check_mask(num_experts, mask);
  if (tokens.rows() % num_experts != 0) throw std::invalid_argument("mask_experts: rows not a multiple of N");
  if (!mask.masked_expert) return tokens;
  return tokens.cwiseProduct(detail::mask_matrix<Scalar>(tokens.rows(), tokens.cols(), num_experts, mask));
}

template <typename Scalar>
ad::Var<Scalar> mask_experts(const ad::Var<Scalar>& tokens, int num_experts, const MaskSpec& mask) {
  detail::check_mask(num_experts, mask);
  if (tokens.rows() % num_experts != 0) throw std::invalid_argument("mask_experts: rows not a multiple of N");
  if (!mask.masked_expert) return tokens;
  return ad::cwise_product(
      tokens, ad::Var<Scalar>::constant(detail::mask_matrix<Scalar>(tokens.rows(), tokens.cols(), num_experts, mask)));
}

/// Distillation loss between the aggregated teacher features and the
/// student's features on the same support batch.
template <typename Scalar>
ad::Var<Scalar> distill_loss(const AdaptConfig& cfg, const ad::Var<Scalar>& teacher, const ad::Var<Scalar>& student,
                             const ParamVars<Scalar>& theta_c) {
  if (teacher.rows() != student.rows()) throw std::invalid_argument("distill_loss: batch mismatch");
  ad::Var<Scalar> total;
  if (cfg.target != DistillTarget::logits) {
    if (teacher.cols() != student.cols()) {
      throw std::invalid_argument("distill_loss: aggregated width " + std::to_string(teacher.cols()) +
                                  " differs from student feature width " + std::to_string(student.cols()));
    }
    ad::Var<Scalar> diff = teacher - student;
    if (cfg.loss == DistillLoss::mean_squared) {
      total = ad::mean(ad::cwise_product(diff, diff));
    } else {
      total = ad::mean(ad::row_norm(diff));
    }
  }
  if (cfg.target != DistillTarget::features) {
    const Scalar inv_t = Scalar(1) / static_cast<Scalar>(cfg.temperature);
    ad::Var<Scalar> log_p_teacher = ad::log_softmax_rows(inv_t * classify(theta_c, teacher));
    ad::Var<Scalar> log_p_student = ad::log_softmax_rows(inv_t * classify(theta_c, student));
    ad::Var<Scalar> kl = ad::cwise_product(ad::exp(log_p_teacher), log_p_teacher - log_p_student);
    ad::Var<Scalar> logit_loss = (Scalar(1) / static_cast<Scalar>(student.rows())) * ad::sum(kl);
    total = total.defined() ? total + logit_loss : logit_loss;
  }
  return total;
}

/// One DIST call: `num_inner_steps` plain gradient steps of theta_e on the
/// distillation loss.
///
/// `tokens` are the (unmasked) expert tokens of `support_x`. theta_c is only
/// read, for logit targets. The returned parameters are fresh graph nodes;
/// with `second_order` and recording enabled they stay differentiable with
/// respect to theta_e, phi and theta_c.
template <typename Scalar>
ParamVars<Scalar> dist_update(const Architecture& arch, const ParamVars<Scalar>& theta_e,
                              const ParamVars<Scalar>& phi, const ParamVars<Scalar>& theta_c,
                              const ad::Var<Scalar>& tokens, const ad::Var<Scalar>& support_x,
                              const MaskSpec& mask, const AdaptConfig& cfg, std::vector<Scalar>* losses = nullptr) {
  cfg.validate();
  if (support_x.rows() < 1) throw std::invalid_argument("dist_update: empty support set");
  const int n_exp = arch.aggregator.num_experts;
  if (tokens.rows() != support_x.rows() * n_exp) {
    throw std::invalid_argument("dist_update: expected " + std::to_string(support_x.rows() * n_exp) +
                                " expert tokens, got " + std::to_string(tokens.rows()));
  }
  const ad::Var<Scalar> teacher = aggregate(arch.aggregator, phi, mask_experts(tokens, n_exp, mask));
  const bool create_graph = cfg.second_order && ad::grad_enabled();
  const Scalar alpha = static_cast<Scalar>(cfg.alpha);

  ParamVars<Scalar> current = theta_e;
  for (int step = 0; step < cfg.num_inner_steps; ++step) {
    ad::Var<Scalar> loss = distill_loss(cfg, teacher, student_features(arch.student, current, support_x), theta_c);
    const Scalar value = loss.item();
    if (!std::isfinite(static_cast<double>(value))) {
      std::ostringstream msg;
      msg << "dist_update: non-finite distillation loss " << value << " at inner step " << step
          << " (alpha=" << cfg.alpha << "); lower alpha or check the aggregator output scale";
      throw std::runtime_error(msg.str());
    }
    if (losses != nullptr) losses->push_back(value);
    if (alpha == Scalar(0)) continue;
    std::vector<ad::Var<Scalar>> grads = ad::grad(loss, current.list(), create_graph);
    ParamVars<Scalar> next;
    for (std::size_t i = 0; i < current.size(); ++i) next.add(current.name(i), current.at(i) - alpha * grads[i]);
    current = std::move(next);
  }
  return current;
}

/// Convenience overload over a frozen expert bank and plain matrices.
template <typename Scalar>
ParamVars<Scalar> dist_update(const Architecture& arch, const ParamVars<Scalar>& theta_e,
                              const ParamVars<Scalar>& phi, const ParamVars<Scalar>& theta_c,
                              const ExpertBank<Scalar>& experts, const Matrix<Scalar>& support_x,
                              const MaskSpec& mask, const AdaptConfig& cfg, std::vector<Scalar>* losses = nullptr) {
  if (experts.size() != arch.aggregator.num_experts) {
    throw std::invalid_argument("dist_update: expert bank has " + std::to_string(experts.size()) +
                                " experts, aggregator expects " + std::to_string(arch.aggregator.num_experts));
  }
  return dist_update(arch, theta_e, phi, theta_c, ad::Var<Scalar>::constant(experts.tokens(support_x)),
                     ad::Var<Scalar>::constant(support_x), mask, cfg, losses);
}

/// Student after test-time adaptation. The classifier is a copy of the
/// meta-trained one.
template <typename Scalar>
struct AdaptedStudent {
  ParamStore<Scalar> extractor;
  ParamStore<Scalar> classifier;
  int updates = 0;
  std::vector<Scalar> losses;
};

/// Adapts to one unseen domain from unlabeled samples: num_inner_steps
/// distillation updates, no masking, inputs left untouched.
template <typename Scalar>
AdaptedStudent<Scalar> test_time_adapt(const Architecture& arch, const StudentParams<Scalar>& student,
                                       const ParamStore<Scalar>& phi, const ExpertBank<Scalar>& experts,
                                       const Matrix<Scalar>& unlabeled_x, const AdaptConfig& cfg, int domain_id = -1,
                                       AdaptationCounter* counter = nullptr) {
  if (unlabeled_x.rows() < cfg.n_support) {
    const std::string msg = "test_time_adapt: domain " + std::to_string(domain_id) + " offers " +
                            std::to_string(unlabeled_x.rows()) + " unlabeled samples, configured n_support is " +
                            std::to_string(cfg.n_support);
    if (cfg.strict) throw std::invalid_argument(msg);
    std::cerr << "warning: " << msg << "; adapting anyway\n";
  }
  ad::GradModeGuard record(true);
  ParamVars<Scalar> theta_e = ParamVars<Scalar>::from_store(student.extractor, true);
  ParamVars<Scalar> theta_c = ParamVars<Scalar>::from_store(student.classifier, false);
  ParamVars<Scalar> phi_vars = ParamVars<Scalar>::from_store(phi, false);
  AdaptConfig inner = cfg;
  inner.second_order = false;
  AdaptedStudent<Scalar> out;
  ParamVars<Scalar> adapted =
      dist_update(arch, theta_e, phi_vars, theta_c, experts, unlabeled_x, MaskSpec{}, inner, &out.losses);
  out.extractor = adapted.values_store();
  out.classifier = student.classifier;
  out.updates = cfg.num_inner_steps;
  if (counter != nullptr) counter->add(domain_id, cfg.num_inner_steps);
  return out;
}

}  // namespace metadmoe

#endif  // METADMOE_ADAPT_HPP
