#include "metadmoe/runner.hpp"

#include <chrono>
#include <stdexcept>

#ifndef METADMOE_VERSION
#define METADMOE_VERSION "unknown"
#endif

namespace metadmoe {

using nlohmann::json;

std::string code_version() { return METADMOE_VERSION; }

DomainRegistry stage_data(const ExperimentConfig& cfg) {
  DomainRegistry registry = generate_benchmark(cfg.resolved_data());
  registry.validate();
  return registry;
}

SuperDomainMap stage_cluster(const ExperimentConfig& cfg, const DomainRegistry& registry) {
  return cluster_domains(registry, cfg.num_experts, cfg.cluster);
}

ExpertBank<Real> stage_experts(const ExperimentConfig& cfg, const DomainAccess& access, const SuperDomainMap& map,
                               TaskKind task) {
  return train_experts<Real>(cfg.architecture().student, access, map, task, cfg.expert_training,
                             phase_seed(cfg.seed, SeedStream::experts), cfg.expert_data);
}

Baselines stage_baselines(const ExperimentConfig& cfg, const DomainAccess& access, const std::vector<int>& source_ids,
                          TaskKind task) {
  std::vector<const DomainDataset*> data;
  for (int id : source_ids) data.push_back(&access.fetch(id));
  const StudentConfig erm_cfg = cfg.architecture().student;
  const StudentConfig bn_cfg = cfg.arm_bn_config();
  const std::uint64_t seed = phase_seed(cfg.seed, SeedStream::student);
  Baselines b;
  b.erm = train_supervised(erm_cfg, init_student<Real>(erm_cfg, split_seed(seed, 21)), data, task,
                           cfg.baseline_training, split_seed(seed, 22));
  // ARM-BN needs single-domain batches so its statistics are domain statistics.
  SupervisedConfig bn_training = cfg.baseline_training;
  bn_training.per_domain_batches = true;
  b.arm_bn = train_supervised(bn_cfg, init_student<Real>(bn_cfg, split_seed(seed, 23)), data, task, bn_training,
                              split_seed(seed, 24));
  return b;
}

WarmStart<Real> stage_pretrain(const ExperimentConfig& cfg, const DomainAccess& access,
                               const std::vector<int>& source_ids, const ExpertBank<Real>& experts,
                               const SuperDomainMap* map, TaskKind task) {
  return pretrain_student_and_aggregator<Real>(cfg.architecture(), access, source_ids, experts, task, cfg.pretrain,
                                               phase_seed(cfg.seed, SeedStream::aggregator),
                                               cfg.scheme.student != StageInit::random,
                                               cfg.scheme.aggregator != StageInit::random,
                                               cfg.meta.mask_overlap ? map : nullptr);
}

MetaStage stage_meta(const ExperimentConfig& cfg, const DomainAccess& access, const std::vector<int>& source_ids,
                     const std::vector<int>& val_ids, const SuperDomainMap* map, TaskKind task,
                     const WarmStart<Real>& warm, const ExpertBank<Real>& experts) {
  const Architecture arch = cfg.architecture();
  const MetaConfig meta = cfg.resolved_meta();
  MetaStage out;
  TrainState<Real> state = make_train_state(warm, experts, meta.seed);
  if (!meta.update_aggregator && !meta.update_student) {
    out.state = std::move(state);
    return out;
  }
  Validator<Real> validator;
  ClassifierAudit val_audit;
  if (!val_ids.empty()) {
    validator = [&](const TrainState<Real>& s) {
      MethodModels<Real> m;
      m.arch = arch;
      m.meta_student = &s.student;
      m.phi = &s.phi;
      m.experts = &s.experts;
      const MetricReport r = evaluate_method(Method::meta_dmoe, m, access, val_ids, task, meta.adapt,
                                             split_seed(phase_seed(cfg.seed, SeedStream::eval), 1));
      val_audit.merge(r.classifier_audit);
      return task == TaskKind::classification ? r.macro_f1 : r.pearson_r;
    };
  }
  MetaTrainResult<Real> r =
      meta_train<Real>(arch, access, source_ids, map, task, meta, std::move(state), validator);
  out.state = std::move(r.state);
  out.state.classifier_audit.merge(val_audit);
  out.curve = std::move(r.curve);
  out.best_epoch = r.best_epoch;
  out.ran = true;
  return out;
}

std::map<std::string, MetricReport> stage_eval(const ExperimentConfig& cfg, const DomainAccess& access,
                                               const std::vector<int>& target_ids, TaskKind task,
                                               const MetaStage& meta, const Baselines& baselines,
                                               EmbeddingDump* dump) {
  MethodModels<Real> models;
  models.arch = cfg.architecture();
  models.meta_student = &meta.state.student;
  models.phi = &meta.state.phi;
  models.experts = &meta.state.experts;
  models.erm_student = &baselines.erm;
  models.arm_bn_student = &baselines.arm_bn;
  models.arm_bn_config = cfg.arm_bn_config();
  AdaptConfig adapt = cfg.adapt;
  adapt.strict = cfg.strict;
  const std::uint64_t seed = phase_seed(cfg.seed, SeedStream::eval);
  std::map<std::string, MetricReport> reports;
  for (Method m : {Method::meta_dmoe, Method::meta_dmoe_no_adapt, Method::erm, Method::arm_bn}) {
    MetricReport r = evaluate_method(m, models, access, target_ids, task, adapt, seed,
                                     m == Method::meta_dmoe ? dump : nullptr);
    if (cfg.strict && !r.skipped_domains.empty()) {
      throw std::runtime_error("strict mode: " + r.warnings.front());
    }
    reports[to_string(m)] = std::move(r);
  }
  return reports;
}

namespace {

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

json data_key(const ExperimentConfig& cfg) {
  const json j = cfg.to_json();
  return {{"data", j.at("data")}, {"seed", cfg.seed}};
}

RunRecord base_record(const ExperimentConfig& cfg) {
  RunRecord r;
  r.config = cfg.to_json();
  r.config_hash = cfg.hash();
  r.seed = cfg.seed;
  r.version = code_version();
  return r;
}

}  // namespace

PipelineOutput run_pipeline(const ExperimentConfig& cfg, PipelineCache* cache) {
  cfg.validate();
  PipelineCache local;
  PipelineCache& c = cache != nullptr ? *cache : local;
  PipelineOutput out;
  RunRecord& rec = out.record;
  rec = base_record(cfg);
  Stopwatch clock;

  const json j = cfg.to_json();
  const std::string dkey = data_key(cfg).dump();
  if (c.registries.count(dkey) == 0) c.registries[dkey] = std::make_shared<const DomainRegistry>(stage_data(cfg));
  const DomainRegistry& registry = *c.registries.at(dkey);
  const TaskKind task = registry.task();
  RegistryAccess access(registry);
  rec.timings["data"] = clock.lap();

  const SuperDomainMap map = stage_cluster(cfg, registry);
  const std::string ekey = json{{"d", dkey}, {"e", j.at("experts")}, {"s", j.at("student")}}.dump();
  if (c.experts.count(ekey) == 0) {
    c.experts[ekey] = std::make_shared<const ExpertBank<Real>>(stage_experts(cfg, access, map, task));
  }
  const ExpertBank<Real>& experts = *c.experts.at(ekey);
  rec.timings["experts"] = clock.lap();

  const std::string bkey = json{{"d", dkey}, {"b", j.at("baselines")}, {"s", j.at("student")}}.dump();
  if (c.baselines.count(bkey) == 0) {
    c.baselines[bkey] = std::make_shared<const Baselines>(stage_baselines(cfg, access, registry.source_ids, task));
  }
  const Baselines& baselines = *c.baselines.at(bkey);
  rec.timings["baselines"] = clock.lap();

  const WarmStart<Real> warm = stage_pretrain(cfg, access, registry.source_ids, experts, &map, task);
  rec.timings["pretrain"] = clock.lap();

  const MetaStage meta = stage_meta(cfg, access, registry.source_ids, registry.val_ids, &map, task, warm, experts);
  rec.timings["meta"] = clock.lap();

  rec.reports = stage_eval(cfg, access, registry.target_ids, task, meta, baselines,
                           cfg.eval.dump_embeddings ? &out.embeddings : nullptr);
  rec.timings["eval"] = clock.lap();

  rec.mask_log = meta.state.mask_log;
  rec.curve = meta.curve;
  rec.best_epoch = meta.best_epoch;
  rec.classifier_audit = meta.state.classifier_audit;
  rec.classifier_audit.merge(rec.reports.at("meta_dmoe").classifier_audit);

  Checkpoint& ck = out.checkpoint;
  ck.stores["phi"] = meta.state.phi;
  put_student(ck, "student", meta.state.student);
  put_student(ck, "erm", baselines.erm);
  put_student(ck, "arm_bn", baselines.arm_bn);
  for (int e = 0; e < experts.size(); ++e) {
    put_student(ck, "expert." + std::to_string(e), experts.experts[static_cast<std::size_t>(e)]);
  }
  ck.meta = {{"config_hash", rec.config_hash}, {"seed", rec.seed}, {"best_epoch", rec.best_epoch}};
  rec.checkpoint_hash = hex_digest(ck.digest());
  return out;
}

PipelineOutput run_privacy_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  PipelineOutput out;
  RunRecord& rec = out.record;
  rec = base_record(cfg);
  rec.kind = "privacy";
  Stopwatch clock;
  const DomainRegistry registry = stage_data(cfg);
  const PrivacySplit split =
      split_privacy(registry, cfg.privacy_fraction, phase_seed(cfg.seed, SeedStream::privacy));
  rec.timings["data"] = clock.lap();

  PrivacyRecipe recipe;
  recipe.arch = cfg.architecture();
  recipe.num_experts = cfg.num_experts;
  recipe.cluster = cfg.cluster;
  recipe.expert_training = cfg.expert_training;
  recipe.pretrain = cfg.pretrain;
  recipe.baseline_training = cfg.baseline_training;
  recipe.meta = cfg.resolved_meta();
  recipe.seed = cfg.seed;
  PrivacyResult result = run_privacy_experiment(registry, split, recipe);
  rec.timings["privacy_run"] = clock.lap();

  rec.reports["meta_dmoe"] = result.meta_dmoe;
  rec.reports["erm"] = result.erm;
  rec.reports["arm_bn"] = result.arm_bn;
  rec.mask_log = result.mask_log;
  rec.classifier_audit = result.meta_dmoe.classifier_audit;
  rec.audit_log = audit_log_to_json(result.audit_log);
  rec.audit_log["private_ids"] = split.private_ids;
  rec.audit_log["public_ids"] = split.public_ids;
  Fnv1a h;
  h.update(&result.expert_digest, sizeof(result.expert_digest));
  rec.checkpoint_hash = hex_digest(h.value());
  return out;
}

// ---------------------------------------------------------------------------
// RunRecord

double RunRecord::runtime() const {
  double total = 0;
  for (const auto& [phase, seconds] : timings) total += seconds;
  return total;
}

json RunRecord::to_json() const {
  json reps = json::object();
  for (const auto& [name, r] : reports) reps[name] = r.to_json();
  json masks = json::array();
  for (const auto& m : mask_log) masks.push_back({m.step, m.domain_id, m.masked_expert});
  json rows = json::array();
  for (const auto& c : curve) rows.push_back({c.epoch, c.mean_loss, c.val_metric, c.beta_a, c.beta_s});
  return {{"kind", kind},
          {"config", config},
          {"config_hash", config_hash},
          {"seed", seed},
          {"version", version},
          {"axis", axis},
          {"axis_value", axis_value},
          {"timings", timings},
          {"reports", reps},
          {"mask_log", masks},
          {"audit_log", audit_log},
          {"curve", rows},
          {"best_epoch", best_epoch},
          {"classifier_checks", classifier_audit.checks},
          {"classifier_changes", classifier_audit.changes},
          {"checkpoint_hash", checkpoint_hash}};
}

RunRecord RunRecord::from_json(const json& j) {
  RunRecord r;
  r.kind = j.at("kind").get<std::string>();
  r.config = j.at("config");
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.version = j.at("version").get<std::string>();
  r.axis = j.at("axis").get<std::string>();
  r.axis_value = j.at("axis_value").get<std::string>();
  r.timings = j.at("timings").get<std::map<std::string, double>>();
  for (const auto& [name, rep] : j.at("reports").items()) r.reports[name] = MetricReport::from_json(rep);
  for (const auto& m : j.at("mask_log")) r.mask_log.push_back({m.at(0).get<long>(), m.at(1).get<int>(), m.at(2).get<int>()});
  r.audit_log = j.at("audit_log");
  for (const auto& c : j.at("curve")) {
    r.curve.push_back({c.at(0).get<int>(), c.at(1).get<double>(), c.at(2).get<double>(), c.at(3).get<double>(),
                       c.at(4).get<double>()});
  }
  r.best_epoch = j.at("best_epoch").get<int>();
  r.classifier_audit.checks = j.at("classifier_checks").get<long>();
  r.classifier_audit.changes = j.at("classifier_changes").get<long>();
  r.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
  return r;
}

}  // namespace metadmoe
