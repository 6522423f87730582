// Experiment configuration, the end-to-end pipeline, checkpoints, the
// ablation harness and report emission.

#ifndef METADMOE_RUNNER_HPP
#define METADMOE_RUNNER_HPP

#include "metadmoe/evalkit.hpp"
#include "metadmoe/metatrain.hpp"
#include "metadmoe/privacy.hpp"
#include "metadmoe/synthdata.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace metadmoe {

/// Pipelines train in single precision.
using Real = float;

struct EvalConfig {
  bool dump_embeddings = false;
};

struct ExperimentConfig {
  /// `data.seed` is ignored; the data seed is derived from `seed`.
  BenchmarkSpec data;
  int num_experts = 5;
  ClusterStrategy cluster = ClusterStrategy::round_robin;
  ExpertDataMode expert_data = ExpertDataMode::redistribute;
  SupervisedConfig expert_training;
  StudentConfig student;
  AggregatorConfig aggregator;
  AdaptConfig adapt;
  PretrainConfig pretrain;
  TrainScheme scheme;
  MetaConfig meta;
  SupervisedConfig baseline_training;
  EvalConfig eval;
  std::uint64_t seed = 0;
  bool strict = false;
  double privacy_fraction = 0.5;

  ExperimentConfig();

  /// Missing keys keep their defaults; unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Every field, fully resolved.
  nlohmann::json to_json() const;
  /// Sorted-key compact dump of to_json(); independent of input key order.
  std::string canonical() const;
  std::string hash() const;

  BenchmarkSpec resolved_data() const;
  /// Student, aggregator and adaptation settings made mutually consistent
  /// (expert count, token width, class count).
  Architecture architecture() const;
  MetaConfig resolved_meta() const;
  StudentConfig arm_bn_config() const;
  void validate() const;
};

// ---------------------------------------------------------------------------
// Checkpoints: a directory with manifest.json and one raw blob per array.

struct Checkpoint {
  std::map<std::string, ParamStore<Real>> stores;
  nlohmann::json meta = nlohmann::json::object();

  /// Digest of every store's names, shapes and bytes, in name order.
  std::uint64_t digest() const;
  void save(const std::filesystem::path& dir) const;
  static Checkpoint load(const std::filesystem::path& dir);
};

Checkpoint& put_student(Checkpoint& ck, const std::string& prefix, const StudentParams<Real>& s);
StudentParams<Real> get_student(const Checkpoint& ck, const std::string& prefix);

// ---------------------------------------------------------------------------
// Stages

struct Baselines {
  StudentParams<Real> erm;
  StudentParams<Real> arm_bn;
};

struct MetaStage {
  TrainState<Real> state;
  std::vector<CurveRow> curve;
  int best_epoch = 0;
  /// False when the scheme leaves nothing for the outer loop to train.
  bool ran = false;
};

DomainRegistry stage_data(const ExperimentConfig& cfg);
SuperDomainMap stage_cluster(const ExperimentConfig& cfg, const DomainRegistry& registry);
ExpertBank<Real> stage_experts(const ExperimentConfig& cfg, const DomainAccess& access, const SuperDomainMap& map,
                               TaskKind task);
Baselines stage_baselines(const ExperimentConfig& cfg, const DomainAccess& access, const std::vector<int>& source_ids,
                          TaskKind task);
/// Warm start according to the training scheme: `random` components keep
/// their fresh initialization.
WarmStart<Real> stage_pretrain(const ExperimentConfig& cfg, const DomainAccess& access,
                               const std::vector<int>& source_ids, const ExpertBank<Real>& experts,
                               const SuperDomainMap* map, TaskKind task);
/// Meta-training with validation-based model selection on `val_ids`
/// (macro-F1, or Pearson r for regression).
MetaStage stage_meta(const ExperimentConfig& cfg, const DomainAccess& access, const std::vector<int>& source_ids,
                     const std::vector<int>& val_ids, const SuperDomainMap* map, TaskKind task,
                     const WarmStart<Real>& warm, const ExpertBank<Real>& experts);
std::map<std::string, MetricReport> stage_eval(const ExperimentConfig& cfg, const DomainAccess& access,
                                               const std::vector<int>& target_ids, TaskKind task,
                                               const MetaStage& meta, const Baselines& baselines,
                                               EmbeddingDump* dump = nullptr);

// ---------------------------------------------------------------------------
// Records

struct RunRecord {
  nlohmann::json config;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string version;
  std::string kind = "pipeline";
  std::string axis;
  std::string axis_value;
  std::map<std::string, double> timings;
  std::map<std::string, MetricReport> reports;
  std::vector<MaskLogEntry> mask_log;
  nlohmann::json audit_log;
  std::vector<CurveRow> curve;
  int best_epoch = 0;
  ClassifierAudit classifier_audit;
  std::string checkpoint_hash;

  double runtime() const;
  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

std::string code_version();

/// Reuses data, experts and baselines across pipelines whose settings for
/// those stages agree (ablation cells and repeated seeds).
struct PipelineCache {
  std::map<std::string, std::shared_ptr<const DomainRegistry>> registries;
  std::map<std::string, std::shared_ptr<const ExpertBank<Real>>> experts;
  std::map<std::string, std::shared_ptr<const Baselines>> baselines;
};

struct PipelineOutput {
  RunRecord record;
  Checkpoint checkpoint;
  EmbeddingDump embeddings;
};

/// Every stage in sequence. Deterministic in the config (single-threaded).
PipelineOutput run_pipeline(const ExperimentConfig& cfg, PipelineCache* cache = nullptr);

/// Privacy-regulated run; the record's audit log holds every data access.
PipelineOutput run_privacy_pipeline(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Ablations

enum class AblationAxis { num_experts, aggregator_kind, distill_target, train_scheme, mask_overlap, n_su };

std::string to_string(AblationAxis a);
AblationAxis ablation_axis_from_string(const std::string& s);

struct AblationSpec {
  AblationAxis axis = AblationAxis::num_experts;
  /// Values as they appear in the config (numbers, names or booleans).
  std::vector<nlohmann::json> values;
  int repeats = 1;

  void validate() const;
  static AblationSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// `base` with the axis set to `value`.
ExperimentConfig apply_axis(const ExperimentConfig& base, AblationAxis axis, const nlohmann::json& value);
std::string axis_value_label(const nlohmann::json& value);

struct AblationFailure {
  std::string axis_value;
  std::uint64_t seed = 0;
  std::string error;
};

struct AblationResult {
  AblationSpec spec;
  std::vector<RunRecord> records;
  std::vector<AblationFailure> failures;
};

/// One pipeline per (value, seed); seeds are base.seed, base.seed + 1, ...
/// A failing cell is recorded and the sweep continues.
AblationResult run_ablation(const AblationSpec& spec, const ExperimentConfig& base, PipelineCache* cache = nullptr);

// ---------------------------------------------------------------------------
// Reports

/// One row per record: axis,value,seed,<method>_<metric>...,runtime.
std::string records_csv(const std::vector<RunRecord>& records);
/// Per (axis, value): mean and unbiased std of every metric column across seeds.
std::string summary_csv(const std::vector<RunRecord>& records);
std::string curve_csv(const std::vector<CurveRow>& curve);
/// Line plot of metric mean against axis value with a one-std band.
std::string ablation_plot_svg(const std::vector<RunRecord>& records, const std::string& metric);

/// Writes records.csv, summary.csv, records.json, one curve CSV per record
/// and, for ablations, plot_<metric>.svg. Returns the written paths.
std::vector<std::filesystem::path> emit_report(const std::vector<RunRecord>& records,
                                               const std::filesystem::path& dir);

}  // namespace metadmoe

#endif  // METADMOE_RUNNER_HPP
