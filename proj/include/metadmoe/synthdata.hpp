// Synthetic multi-domain benchmarks, super-domain clustering and episode
// sampling.

#ifndef METADMOE_SYNTHDATA_HPP
#define METADMOE_SYNTHDATA_HPP

#include "metadmoe/random.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace metadmoe {

enum class TaskKind { classification, regression };
enum class Split { source, target_val, target_test };

std::string to_string(TaskKind kind);
std::string to_string(Split split);
TaskKind task_kind_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct BenchmarkSpec {
  int num_source_domains = 20;
  int num_val_domains = 3;
  int num_target_domains = 6;
  int num_classes = 5;
  int input_dim = 16;
  int min_samples = 100;
  int max_samples = 300;
  double shift_strength = 1.0;
  std::uint64_t seed = 1;
  TaskKind task = TaskKind::classification;
  /// Scale of the class prototypes relative to unit within-class noise.
  double class_separation = 2.0;
  double noise = 1.0;
  /// Per-unit-shift rotation angle (radians) and translation magnitude.
  double rotation_scale = 0.6;
  double translation_scale = 2.0;
  /// Domains are drawn around this many region centers; regions double as
  /// per-sample group tags and as the default clustering metadata key.
  int num_regions = 4;
};

struct DomainDataset {
  int domain_id = 0;
  Split split = Split::source;
  int region = 0;
  Eigen::MatrixXf inputs;       // num_samples x input_dim
  Eigen::VectorXi labels;       // classification
  Eigen::VectorXf targets;      // regression
  std::vector<int> group_tags;  // per-sample, may be empty

  int num_samples() const { return static_cast<int>(inputs.rows()); }
};

struct DomainRegistry {
  BenchmarkSpec spec;
  std::vector<DomainDataset> domains;
  std::vector<int> source_ids;
  std::vector<int> val_ids;
  std::vector<int> target_ids;

  TaskKind task() const { return spec.task; }
  int num_classes() const { return spec.task == TaskKind::classification ? spec.num_classes : 1; }
  int input_dim() const { return spec.input_dim; }

  const DomainDataset& domain(int id) const;
  std::vector<const DomainDataset*> select(const std::vector<int>& ids) const;

  /// Throws std::logic_error on any violated registry invariant.
  void validate() const;
};

/// Read access to domain data. Training code reads domains only through this
/// interface so that accesses can be audited.
class DomainAccess {
 public:
  virtual ~DomainAccess() = default;
  virtual const DomainDataset& fetch(int domain_id) const = 0;
};

class RegistryAccess final : public DomainAccess {
 public:
  explicit RegistryAccess(const DomainRegistry& registry) : registry_(registry) {}
  const DomainDataset& fetch(int domain_id) const override { return registry_.domain(domain_id); }

 private:
  const DomainRegistry& registry_;
};

/// Deterministic in `spec.seed`. Rejects fewer than two classes for
/// classification and non-positive counts.
DomainRegistry generate_benchmark(const BenchmarkSpec& spec);

struct SuperDomainMap {
  std::map<int, int> assignment;  // domain_id -> expert index
  int num_experts = 0;

  int expert_of(int domain_id) const;
  bool contains(int domain_id) const { return assignment.count(domain_id) != 0; }
  std::vector<std::vector<int>> members() const;
};

enum class ClusterStrategy { round_robin, metadata_key };

using DomainKey = std::function<int(const DomainDataset&)>;

/// Balanced assignment of source domains to `num_experts` super-domains.
/// round_robin deals sorted ids in turn; metadata_key orders domains by
/// (key, id) and cuts the order into contiguous near-equal chunks (the
/// default key is the domain's region).
SuperDomainMap cluster_domains(const DomainRegistry& registry, const std::vector<int>& source_ids, int num_experts,
                               ClusterStrategy strategy = ClusterStrategy::round_robin, const DomainKey& key = {});

inline SuperDomainMap cluster_domains(const DomainRegistry& registry, int num_experts,
                                      ClusterStrategy strategy = ClusterStrategy::round_robin,
                                      const DomainKey& key = {}) {
  return cluster_domains(registry, registry.source_ids, num_experts, strategy, key);
}

struct Episode {
  int domain_id = 0;
  Eigen::MatrixXf support_x;
  Eigen::MatrixXf query_x;
  Eigen::VectorXi query_y;
  Eigen::VectorXf query_targets;
  std::vector<int> support_indices;
  std::vector<int> query_indices;
};

/// Draws disjoint support and query index sets without replacement.
/// Throws std::invalid_argument when the domain is too small.
Episode sample_episode(const DomainDataset& domain, int n_support, int n_query, Rng& rng);

/// Draws `count` distinct indices in [0, n), in draw order.
std::vector<int> sample_without_replacement(int n, int count, Rng& rng);

/// Rows of `domain` selected by `indices`.
Eigen::MatrixXf gather_rows(const Eigen::MatrixXf& m, const std::vector<int>& indices);

// Persistence: `registry.json` plus one little-endian binary file per array.
void save_registry(const DomainRegistry& registry, const std::filesystem::path& dir);
DomainRegistry load_registry(const std::filesystem::path& dir);

}  // namespace metadmoe

#endif  // METADMOE_SYNTHDATA_HPP
