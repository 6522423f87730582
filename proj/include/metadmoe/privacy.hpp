// Privacy-regulated training: experts see only private domains, everything
// after expert pretraining sees only public ones.

#ifndef METADMOE_PRIVACY_HPP
#define METADMOE_PRIVACY_HPP

#include "metadmoe/evalkit.hpp"
#include "metadmoe/metatrain.hpp"
#include "metadmoe/synthdata.hpp"

#include "json.hpp"

#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace metadmoe {

struct PrivacySplit {
  std::vector<int> private_ids;
  std::vector<int> public_ids;

  /// Throws std::logic_error unless the sides are disjoint, non-empty source
  /// domains of `registry`.
  void validate(const DomainRegistry& registry) const;
};

/// Random split of the source domains; `fraction_private` of them (rounded,
/// at least one on each side) become private.
PrivacySplit split_privacy(const DomainRegistry& registry, double fraction_private, std::uint64_t seed);

enum class Phase { expert_pretraining, baseline_training, warm_start, meta_training, evaluation };

std::string to_string(Phase p);

struct AccessEvent {
  long sequence = 0;
  Phase phase = Phase::expert_pretraining;
  int domain_id = 0;
  bool private_domain = false;
};

class PrivacyViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Logging proxy around a registry. Reading a private domain in any phase
/// other than expert pretraining throws PrivacyViolation (after logging it).
class AuditedAccess final : public DomainAccess {
 public:
  AuditedAccess(const DomainRegistry& registry, const PrivacySplit& split);

  const DomainDataset& fetch(int domain_id) const override;

  void set_phase(Phase phase) { phase_ = phase; }
  Phase phase() const { return phase_; }

  std::vector<AccessEvent> log() const;
  /// Private reads logged outside expert pretraining.
  long private_reads_after_pretraining() const;

 private:
  const DomainRegistry& registry_;
  std::set<int> private_;
  Phase phase_ = Phase::expert_pretraining;
  mutable std::mutex mutex_;
  mutable std::vector<AccessEvent> log_;
};

nlohmann::json audit_log_to_json(const std::vector<AccessEvent>& log);

/// Everything needed to train and evaluate one privacy-regulated run.
struct PrivacyRecipe {
  Architecture arch;
  int num_experts = 5;
  ClusterStrategy cluster = ClusterStrategy::round_robin;
  SupervisedConfig expert_training;
  PretrainConfig pretrain;
  SupervisedConfig baseline_training;
  MetaConfig meta;
  std::uint64_t seed = 0;
};

struct PrivacyResult {
  PrivacySplit split;
  MetricReport meta_dmoe;
  MetricReport erm;
  MetricReport arm_bn;
  std::vector<AccessEvent> audit_log;
  std::vector<MaskLogEntry> mask_log;
  std::uint64_t expert_digest = 0;
};

PrivacyResult run_privacy_experiment(const DomainRegistry& registry, const PrivacySplit& split,
                                     const PrivacyRecipe& recipe);

}  // namespace metadmoe

#endif  // METADMOE_PRIVACY_HPP
