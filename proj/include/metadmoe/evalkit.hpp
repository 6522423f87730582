// Metrics, the target-domain evaluation protocol and baseline methods.

#ifndef METADMOE_EVALKIT_HPP
#define METADMOE_EVALKIT_HPP

#include "metadmoe/adapt.hpp"
#include "metadmoe/synthdata.hpp"

#include "json.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace metadmoe {

/// Unweighted mean of per-class F1. Classes absent from both predictions and
/// labels are left out of the mean.
double macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels, int num_classes);

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

/// Minimum over groups.
double worst_case_metric(const std::vector<double>& per_group);

/// Product-moment correlation. Throws std::domain_error when either side has
/// zero variance or fewer than two samples are given.
double pearson_r(const std::vector<double>& predictions, const std::vector<double>& targets);

enum class Method { meta_dmoe, meta_dmoe_no_adapt, erm, arm_bn };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct DomainMetrics {
  int domain_id = 0;
  int num_evaluated = 0;
  double accuracy = 0;
  double macro_f1 = 0;
  double pearson_r = std::numeric_limits<double>::quiet_NaN();
  long adaptation_updates = 0;
  /// Digest of the adapted extractor (empty for methods without updates).
  std::string adapted_digest;
};

struct MetricReport {
  std::string method;
  int num_samples = 0;
  double accuracy = 0;
  double macro_f1 = 0;
  double worst_case_accuracy = 0;
  double pearson_r = std::numeric_limits<double>::quiet_NaN();
  double worst_case_pearson_r = std::numeric_limits<double>::quiet_NaN();
  long adaptation_updates = 0;
  /// Classifier comparisons before/after each test-time adaptation.
  ClassifierAudit classifier_audit;
  std::vector<DomainMetrics> per_domain;
  std::vector<int> skipped_domains;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

/// Unadapted and adapted student features of every evaluated sample.
struct EmbeddingDump {
  std::vector<int> domain_ids;
  std::vector<int> labels;
  std::vector<Eigen::VectorXd> unadapted;
  std::vector<Eigen::VectorXd> adapted;

  std::size_t size() const { return domain_ids.size(); }
  /// Rows of (domain, label, unadapted x/y, adapted x/y) on the top two
  /// principal axes of the pooled features.
  std::string to_csv() const;
};

/// The trained models a method may need. Unused members may stay null.
template <typename Scalar>
struct MethodModels {
  Architecture arch;
  const StudentParams<Scalar>* meta_student = nullptr;
  const ParamStore<Scalar>* phi = nullptr;
  const ExpertBank<Scalar>* experts = nullptr;
  const StudentParams<Scalar>* erm_student = nullptr;
  const StudentParams<Scalar>* arm_bn_student = nullptr;
  StudentConfig arm_bn_config;
};

namespace detail {

struct Pooled {
  std::vector<int> predictions;
  std::vector<int> labels;
  std::vector<double> outputs;
  std::vector<double> targets;
  std::vector<int> groups;
};

MetricReport summarize(const std::string& method, TaskKind task, int num_classes, const Pooled& pooled,
                       std::vector<DomainMetrics> per_domain, bool groups_missing);

template <typename Scalar>
std::vector<int> argmax_rows(const Matrix<Scalar>& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Index r = 0; r < m.rows(); ++r) {
    Index best = 0;
    m.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace detail

/// Runs one method over the target domains.
///
/// Per domain, n_support samples are drawn (seeded by `seed` and the domain
/// id, so every method sees the same split) for adaptation and excluded from
/// scoring; the remaining samples are scored. Domains with fewer than
/// n_support + 1 samples are skipped and recorded.
template <typename Scalar>
MetricReport evaluate_method(Method method, const MethodModels<Scalar>& models, const DomainAccess& access,
                             const std::vector<int>& target_ids, TaskKind task, const AdaptConfig& adapt,
                             std::uint64_t seed, EmbeddingDump* dump = nullptr) {
  const StudentConfig& cfg = models.arch.student;
  const int num_classes = cfg.num_classes;
  detail::Pooled pooled;
  std::vector<DomainMetrics> per_domain;
  std::vector<int> skipped;
  std::vector<std::string> warnings;
  bool groups_missing = false;
  long updates = 0;
  ClassifierAudit audit;

  const StudentParams<Scalar>* student = nullptr;
  switch (method) {
    case Method::meta_dmoe:
    case Method::meta_dmoe_no_adapt:
      student = models.meta_student;
      break;
    case Method::erm:
      student = models.erm_student;
      break;
    case Method::arm_bn:
      student = models.arm_bn_student;
      break;
  }
  if (student == nullptr) throw std::invalid_argument("evaluate_method: no trained model for " + to_string(method));
  if (method == Method::meta_dmoe && (models.phi == nullptr || models.experts == nullptr)) {
    throw std::invalid_argument("evaluate_method: meta_dmoe needs the aggregator and experts");
  }

  for (int id : target_ids) {
    const DomainDataset& domain = access.fetch(id);
    if (domain.num_samples() < adapt.n_support + 1) {
      skipped.push_back(id);
      warnings.push_back("domain " + std::to_string(id) + " skipped: " + std::to_string(domain.num_samples()) +
                         " samples < n_support + 1");
      std::cerr << "warning: " << warnings.back() << "\n";
      continue;
    }
    Rng rng(split_seed(seed, 50000 + static_cast<std::uint64_t>(id)));
    std::vector<int> support_idx = sample_without_replacement(domain.num_samples(), adapt.n_support, rng);
    std::vector<bool> in_support(static_cast<std::size_t>(domain.num_samples()), false);
    for (int i : support_idx) in_support[static_cast<std::size_t>(i)] = true;
    std::vector<int> eval_idx;
    for (int i = 0; i < domain.num_samples(); ++i) {
      if (!in_support[static_cast<std::size_t>(i)]) eval_idx.push_back(i);
    }
    const Matrix<Scalar> support_x = gather_rows(domain.inputs, support_idx).template cast<Scalar>();
    const Matrix<Scalar> eval_x = gather_rows(domain.inputs, eval_idx).template cast<Scalar>();

    DomainMetrics dm;
    dm.domain_id = id;
    dm.num_evaluated = static_cast<int>(eval_idx.size());
    Matrix<Scalar> outputs;
    {
      ad::NoGradGuard no_grad;
      auto constant = [](const Matrix<Scalar>& m) { return ad::Var<Scalar>::constant(m); };
      auto run = [&](const ParamStore<Scalar>& extractor, const ParamStore<Scalar>& classifier,
                     const StudentConfig& c, const NormStats<Scalar>* stats) {
        ad::Var<Scalar> feats =
            student_features(c, ParamVars<Scalar>::from_store(extractor, false), constant(eval_x), stats);
        return std::make_pair(feats.value(), classify(ParamVars<Scalar>::from_store(classifier, false), feats).value());
      };
      if (method == Method::meta_dmoe) {
        AdaptationCounter counter;
        AdaptedStudent<Scalar> adapted =
            test_time_adapt(models.arch, *student, *models.phi, *models.experts, support_x, adapt, id, &counter);
        dm.adaptation_updates = counter.total;
        audit.record(adapted.classifier == student->classifier);
        dm.adapted_digest = hex_digest(adapted.extractor.digest());
        auto [feats, out] = run(adapted.extractor, adapted.classifier, cfg, nullptr);
        outputs = out;
        if (dump != nullptr) {
          auto [base_feats, base_out] = run(student->extractor, student->classifier, cfg, nullptr);
          (void)base_out;
          for (Index r = 0; r < feats.rows(); ++r) {
            const int sample = eval_idx[static_cast<std::size_t>(r)];
            dump->domain_ids.push_back(id);
            dump->labels.push_back(task == TaskKind::classification ? domain.labels(sample) : 0);
            dump->unadapted.push_back(base_feats.row(r).transpose().template cast<double>());
            dump->adapted.push_back(feats.row(r).transpose().template cast<double>());
          }
        }
      } else if (method == Method::arm_bn) {
        const NormStats<Scalar> stats = batch_norm_stats(models.arm_bn_config, student->extractor, support_x);
        outputs = run(student->extractor, student->classifier, models.arm_bn_config, &stats).second;
      } else {
        outputs = run(student->extractor, student->classifier, cfg, nullptr).second;
      }
    }
    updates += dm.adaptation_updates;

    if (domain.group_tags.empty()) groups_missing = true;
    std::vector<int> preds;
    std::vector<int> labels;
    std::vector<double> outs;
    std::vector<double> targets;
    if (task == TaskKind::classification) preds = detail::argmax_rows(outputs);
    for (std::size_t k = 0; k < eval_idx.size(); ++k) {
      const int sample = eval_idx[k];
      const int group = domain.group_tags.empty() ? id : domain.group_tags[static_cast<std::size_t>(sample)];
      pooled.groups.push_back(group);
      if (task == TaskKind::classification) {
        labels.push_back(domain.labels(sample));
        pooled.predictions.push_back(preds[k]);
        pooled.labels.push_back(labels.back());
      } else {
        outs.push_back(static_cast<double>(outputs(static_cast<Index>(k), 0)));
        targets.push_back(static_cast<double>(domain.targets(sample)));
        pooled.outputs.push_back(outs.back());
        pooled.targets.push_back(targets.back());
      }
    }
    if (task == TaskKind::classification) {
      dm.accuracy = accuracy(preds, labels);
      dm.macro_f1 = macro_f1(preds, labels, num_classes);
    } else {
      try {
        dm.pearson_r = pearson_r(outs, targets);
      } catch (const std::domain_error&) {
        dm.pearson_r = std::numeric_limits<double>::quiet_NaN();
      }
    }
    per_domain.push_back(dm);
  }

  MetricReport report = detail::summarize(to_string(method), task, num_classes, pooled, std::move(per_domain),
                                          groups_missing);
  report.adaptation_updates = updates;
  report.classifier_audit = audit;
  report.skipped_domains = std::move(skipped);
  report.warnings.insert(report.warnings.begin(), warnings.begin(), warnings.end());
  return report;
}

}  // namespace metadmoe

#endif  // METADMOE_EVALKIT_HPP
