#include "metadmoe/privacy.hpp"

#include <algorithm>
#include <cmath>

namespace metadmoe {

void PrivacySplit::validate(const DomainRegistry& registry) const {
  if (private_ids.empty() || public_ids.empty()) throw std::logic_error("PrivacySplit: both sides must be non-empty");
  std::set<int> sources(registry.source_ids.begin(), registry.source_ids.end());
  std::set<int> priv;
  for (int id : private_ids) {
    if (sources.count(id) == 0) throw std::logic_error("PrivacySplit: private domain " + std::to_string(id) + " is not a source");
    priv.insert(id);
  }
  for (int id : public_ids) {
    if (sources.count(id) == 0) throw std::logic_error("PrivacySplit: public domain " + std::to_string(id) + " is not a source");
    if (priv.count(id) != 0) throw std::logic_error("PrivacySplit: domain " + std::to_string(id) + " is on both sides");
  }
}

PrivacySplit split_privacy(const DomainRegistry& registry, double fraction_private, std::uint64_t seed) {
  if (!(fraction_private > 0 && fraction_private < 1)) {
    throw std::invalid_argument("split_privacy: fraction_private must be in (0, 1)");
  }
  const int n = static_cast<int>(registry.source_ids.size());
  if (n < 2) throw std::invalid_argument("split_privacy: need at least two source domains");
  const int k = std::clamp(static_cast<int>(std::lround(fraction_private * n)), 1, n - 1);
  Rng rng(seed);
  std::vector<int> order = sample_without_replacement(n, n, rng);
  PrivacySplit split;
  for (int i = 0; i < n; ++i) {
    const int id = registry.source_ids[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    (i < k ? split.private_ids : split.public_ids).push_back(id);
  }
  std::sort(split.private_ids.begin(), split.private_ids.end());
  std::sort(split.public_ids.begin(), split.public_ids.end());
  return split;
}

std::string to_string(Phase p) {
  switch (p) {
    case Phase::expert_pretraining:
      return "expert_pretraining";
    case Phase::baseline_training:
      return "baseline_training";
    case Phase::warm_start:
      return "warm_start";
    case Phase::meta_training:
      return "meta_training";
    case Phase::evaluation:
      return "evaluation";
  }
  return "expert_pretraining";
}

AuditedAccess::AuditedAccess(const DomainRegistry& registry, const PrivacySplit& split)
    : registry_(registry), private_(split.private_ids.begin(), split.private_ids.end()) {}

const DomainDataset& AuditedAccess::fetch(int domain_id) const {
  const bool is_private = private_.count(domain_id) != 0;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    log_.push_back({static_cast<long>(log_.size()), phase_, domain_id, is_private});
  }
  if (is_private && phase_ != Phase::expert_pretraining) {
    throw PrivacyViolation("privacy violation: private domain " + std::to_string(domain_id) + " read during " +
                           to_string(phase_));
  }
  return registry_.domain(domain_id);
}

std::vector<AccessEvent> AuditedAccess::log() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return log_;
}

long AuditedAccess::private_reads_after_pretraining() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return std::count_if(log_.begin(), log_.end(), [](const AccessEvent& e) {
    return e.private_domain && e.phase != Phase::expert_pretraining;
  });
}

nlohmann::json audit_log_to_json(const std::vector<AccessEvent>& log) {
  nlohmann::json events = nlohmann::json::array();
  long violations = 0;
  for (const auto& e : log) {
    events.push_back({{"sequence", e.sequence},
                      {"phase", to_string(e.phase)},
                      {"domain_id", e.domain_id},
                      {"private", e.private_domain}});
    if (e.private_domain && e.phase != Phase::expert_pretraining) ++violations;
  }
  return {{"events", events}, {"private_reads_after_pretraining", violations}};
}

PrivacyResult run_privacy_experiment(const DomainRegistry& registry, const PrivacySplit& split,
                                     const PrivacyRecipe& recipe) {
  using Scalar = float;
  split.validate(registry);
  const TaskKind task = registry.task();
  AuditedAccess access(registry, split);
  PrivacyResult result;
  result.split = split;

  // Experts: trained at the private nodes; only their parameters leave.
  access.set_phase(Phase::expert_pretraining);
  const int num_experts = std::min<int>(recipe.num_experts, static_cast<int>(split.private_ids.size()));
  const SuperDomainMap private_map =
      cluster_domains(registry, split.private_ids, num_experts, recipe.cluster);
  ExpertBank<Scalar> experts = train_experts<Scalar>(recipe.arch.student, access, private_map, task,
                                                     recipe.expert_training, phase_seed(recipe.seed, SeedStream::experts));
  result.expert_digest = experts.digest();

  Architecture arch = recipe.arch;
  arch.aggregator.num_experts = num_experts;

  access.set_phase(Phase::baseline_training);
  std::vector<const DomainDataset*> public_data;
  for (int id : split.public_ids) public_data.push_back(&access.fetch(id));
  const std::uint64_t baseline_seed = phase_seed(recipe.seed, SeedStream::student);
  const StudentParams<Scalar> erm = train_supervised(
      arch.student, init_student<Scalar>(arch.student, split_seed(baseline_seed, 21)), public_data, task,
      recipe.baseline_training, split_seed(baseline_seed, 22));
  StudentConfig bn_config = arch.student;
  bn_config.feature_norm = true;
  SupervisedConfig bn_training = recipe.baseline_training;
  bn_training.per_domain_batches = true;
  const StudentParams<Scalar> arm_bn = train_supervised(
      bn_config, init_student<Scalar>(bn_config, split_seed(baseline_seed, 23)), public_data, task, bn_training,
      split_seed(baseline_seed, 24));

  // No overlap between expert and meta-training domains, so nothing is masked.
  access.set_phase(Phase::warm_start);
  const WarmStart<Scalar> warm = pretrain_student_and_aggregator<Scalar>(
      arch, access, split.public_ids, experts, task, recipe.pretrain, phase_seed(recipe.seed, SeedStream::aggregator));

  access.set_phase(Phase::meta_training);
  MetaConfig meta = recipe.meta;
  meta.mask_overlap = false;
  Validator<Scalar> validator;
  ClassifierAudit val_audit;
  if (!registry.val_ids.empty()) {
    validator = [&](const TrainState<Scalar>& s) {
      MethodModels<Scalar> m;
      m.arch = arch;
      m.meta_student = &s.student;
      m.phi = &s.phi;
      m.experts = &s.experts;
      const MetricReport r = evaluate_method(Method::meta_dmoe, m, access, registry.val_ids, task, meta.adapt,
                                             phase_seed(recipe.seed, SeedStream::eval));
      val_audit.merge(r.classifier_audit);
      return task == TaskKind::classification ? r.macro_f1 : r.pearson_r;
    };
  }
  MetaTrainResult<Scalar> trained = meta_train<Scalar>(
      arch, access, split.public_ids, nullptr, task, meta,
      make_train_state(warm, experts, phase_seed(recipe.seed, SeedStream::meta)), validator);
  result.mask_log = trained.state.mask_log;

  access.set_phase(Phase::evaluation);
  MethodModels<Scalar> models;
  models.arch = arch;
  models.meta_student = &trained.state.student;
  models.phi = &trained.state.phi;
  models.experts = &trained.state.experts;
  models.erm_student = &erm;
  models.arm_bn_student = &arm_bn;
  models.arm_bn_config = bn_config;
  const std::uint64_t eval_seed = phase_seed(recipe.seed, SeedStream::eval);
  result.meta_dmoe = evaluate_method(Method::meta_dmoe, models, access, registry.target_ids, task, meta.adapt, eval_seed);
  result.meta_dmoe.classifier_audit.merge(trained.state.classifier_audit);
  result.meta_dmoe.classifier_audit.merge(val_audit);
  result.erm = evaluate_method(Method::erm, models, access, registry.target_ids, task, meta.adapt, eval_seed);
  result.arm_bn = evaluate_method(Method::arm_bn, models, access, registry.target_ids, task, meta.adapt, eval_seed);
  result.audit_log = access.log();
  return result;
}

}  // namespace metadmoe
