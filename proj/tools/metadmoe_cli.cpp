// Command-line front end. Every stage reads its inputs from and writes its
// outputs to the --out directory; missing upstream artifacts are produced on
// the way.

#include "metadmoe/io.hpp"
#include "metadmoe/runner.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace metadmoe;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  bool strict = false;
  // ablate
  std::string axis;
  std::string values;
  int repeats = 1;
  // report
  std::vector<std::string> records;
};

ExperimentConfig load_config(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.strict) cfg.strict = true;
  cfg.validate();
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  io::write_text(path, j.dump(2) + "\n");
}

/// Artifacts are only reused by the config that produced them.
void check_owner(const Checkpoint& ck, const ExperimentConfig& cfg, const fs::path& dir) {
  if (ck.meta.value("config_hash", "") != cfg.hash()) {
    throw std::runtime_error(dir.string() + " was produced by a different config (hash " +
                             ck.meta.value("config_hash", "?") + ", expected " + cfg.hash() +
                             "); use a fresh --out directory");
  }
}

class Workspace {
 public:
  Workspace(ExperimentConfig cfg, fs::path out) : cfg_(std::move(cfg)), out_(std::move(out)) {
    fs::create_directories(out_);
    write_json(out_ / "config.json", cfg_.to_json());
  }

  const ExperimentConfig& cfg() const { return cfg_; }
  const fs::path& out() const { return out_; }

  const DomainRegistry& registry() {
    if (!registry_) {
      const fs::path dir = out_ / "data";
      if (fs::exists(dir / "registry.json")) {
        registry_ = load_registry(dir);
        if (registry_->spec.seed != cfg_.resolved_data().seed) {
          throw std::runtime_error(dir.string() + " holds data for a different seed; use a fresh --out directory");
        }
      } else {
        registry_ = stage_data(cfg_);
        save_registry(*registry_, dir);
      }
      access_.emplace(*registry_);
      map_ = stage_cluster(cfg_, *registry_);
    }
    return *registry_;
  }

  const RegistryAccess& access() {
    registry();
    return *access_;
  }

  const SuperDomainMap& map() {
    registry();
    return map_;
  }

  const ExpertBank<Real>& experts() {
    if (!experts_) {
      const fs::path dir = out_ / "experts";
      ExpertBank<Real> bank{cfg_.architecture().student, {}};
      if (fs::exists(dir / "manifest.json")) {
        const Checkpoint ck = Checkpoint::load(dir);
        check_owner(ck, cfg_, dir);
        for (int e = 0; e < cfg_.num_experts; ++e) bank.experts.push_back(get_student(ck, "expert." + std::to_string(e)));
      } else {
        bank = stage_experts(cfg_, access(), map(), registry().task());
        Checkpoint ck;
        for (int e = 0; e < bank.size(); ++e) {
          put_student(ck, "expert." + std::to_string(e), bank.experts[static_cast<std::size_t>(e)]);
        }
        ck.meta = owner();
        ck.save(dir);
      }
      experts_ = std::move(bank);
    }
    return *experts_;
  }

  void pretrained(Baselines& baselines, WarmStart<Real>& warm) {
    const fs::path dir = out_ / "pretrain";
    if (fs::exists(dir / "manifest.json")) {
      const Checkpoint ck = Checkpoint::load(dir);
      check_owner(ck, cfg_, dir);
      baselines.erm = get_student(ck, "erm");
      baselines.arm_bn = get_student(ck, "arm_bn");
      warm.student = get_student(ck, "warm.student");
      warm.phi = ck.stores.at("warm.phi");
      return;
    }
    const DomainRegistry& reg = registry();
    baselines = stage_baselines(cfg_, access(), reg.source_ids, reg.task());
    warm = stage_pretrain(cfg_, access(), reg.source_ids, experts(), &map(), reg.task());
    Checkpoint ck;
    put_student(ck, "erm", baselines.erm);
    put_student(ck, "arm_bn", baselines.arm_bn);
    put_student(ck, "warm.student", warm.student);
    ck.stores["warm.phi"] = warm.phi;
    ck.meta = owner();
    ck.save(dir);
  }

  MetaStage meta_trained() {
    const fs::path dir = out_ / "meta";
    MetaStage stage;
    if (fs::exists(dir / "manifest.json")) {
      const Checkpoint ck = Checkpoint::load(dir);
      check_owner(ck, cfg_, dir);
      stage.state.phi = ck.stores.at("phi");
      stage.state.student = get_student(ck, "student");
      stage.state.experts = experts();
      stage.best_epoch = ck.meta.at("best_epoch").get<int>();
      stage.ran = ck.meta.at("ran").get<bool>();
      stage.state.classifier_audit.checks = ck.meta.at("classifier_checks").get<long>();
      stage.state.classifier_audit.changes = ck.meta.at("classifier_changes").get<long>();
      const RunRecord partial = RunRecord::from_json(json::parse(io::read_text(dir / "meta_record.json")));
      stage.curve = partial.curve;
      stage.state.mask_log = partial.mask_log;
      return stage;
    }
    Baselines baselines;
    WarmStart<Real> warm;
    pretrained(baselines, warm);
    const DomainRegistry& reg = registry();
    stage = stage_meta(cfg_, access(), reg.source_ids, reg.val_ids, &map(), reg.task(), warm, experts());
    Checkpoint ck;
    ck.stores["phi"] = stage.state.phi;
    put_student(ck, "student", stage.state.student);
    ck.meta = owner();
    ck.meta["best_epoch"] = stage.best_epoch;
    ck.meta["ran"] = stage.ran;
    ck.meta["classifier_checks"] = stage.state.classifier_audit.checks;
    ck.meta["classifier_changes"] = stage.state.classifier_audit.changes;
    ck.save(dir);
    RunRecord partial;
    partial.curve = stage.curve;
    partial.mask_log = stage.state.mask_log;
    write_json(dir / "meta_record.json", partial.to_json());
    io::write_text(dir / "training_curve.csv", curve_csv(stage.curve));
    return stage;
  }

 private:
  json owner() const { return {{"config_hash", cfg_.hash()}, {"seed", cfg_.seed}}; }

  ExperimentConfig cfg_;
  fs::path out_;
  std::optional<DomainRegistry> registry_;
  std::optional<RegistryAccess> access_;
  SuperDomainMap map_;
  std::optional<ExpertBank<Real>> experts_;
};

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

json report_summary(const std::map<std::string, MetricReport>& reports) {
  json j = json::object();
  for (const auto& [name, r] : reports) {
    j[name] = {{"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}, {"worst_case_accuracy", r.worst_case_accuracy}};
    if (std::isfinite(r.pearson_r)) j[name]["pearson_r"] = r.pearson_r;
  }
  return j;
}

int cmd_gen_data(const Options& o) {
  Workspace ws(load_config(o), o.out);
  const DomainRegistry& reg = ws.registry();
  print({{"data", (ws.out() / "data").string()},
         {"domains", reg.domains.size()},
         {"source", reg.source_ids.size()},
         {"val", reg.val_ids.size()},
         {"target", reg.target_ids.size()}});
  return 0;
}

int cmd_train_experts(const Options& o) {
  Workspace ws(load_config(o), o.out);
  const ExpertBank<Real>& bank = ws.experts();
  print({{"experts", (ws.out() / "experts").string()}, {"count", bank.size()}, {"digest", hex_digest(bank.digest())}});
  return 0;
}

int cmd_pretrain(const Options& o) {
  Workspace ws(load_config(o), o.out);
  Baselines b;
  WarmStart<Real> warm;
  ws.pretrained(b, warm);
  print({{"pretrain", (ws.out() / "pretrain").string()}, {"scheme", ws.cfg().scheme.name()}});
  return 0;
}

int cmd_meta_train(const Options& o) {
  Workspace ws(load_config(o), o.out);
  const MetaStage stage = ws.meta_trained();
  print({{"meta", (ws.out() / "meta").string()},
         {"trained", stage.ran},
         {"best_epoch", stage.best_epoch},
         {"masked_episodes", stage.state.mask_log.size()}});
  return 0;
}

int cmd_adapt_eval(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  Workspace ws(cfg, o.out);
  const MetaStage stage = ws.meta_trained();
  Baselines baselines;
  WarmStart<Real> warm;
  ws.pretrained(baselines, warm);
  EmbeddingDump dump;
  const DomainRegistry& reg = ws.registry();
  // The same record run_pipeline produces, assembled from stored stages.
  RunRecord rec;
  rec.config = cfg.to_json();
  rec.config_hash = cfg.hash();
  rec.seed = cfg.seed;
  rec.version = code_version();
  rec.reports = stage_eval(cfg, ws.access(), reg.target_ids, reg.task(), stage, baselines,
                           cfg.eval.dump_embeddings ? &dump : nullptr);
  rec.mask_log = stage.state.mask_log;
  rec.curve = stage.curve;
  rec.best_epoch = stage.best_epoch;
  rec.classifier_audit = stage.state.classifier_audit;
  rec.classifier_audit.merge(rec.reports.at("meta_dmoe").classifier_audit);
  Checkpoint ck;
  ck.stores["phi"] = stage.state.phi;
  put_student(ck, "student", stage.state.student);
  put_student(ck, "erm", baselines.erm);
  put_student(ck, "arm_bn", baselines.arm_bn);
  const ExpertBank<Real>& experts = ws.experts();
  for (int e = 0; e < experts.size(); ++e) {
    put_student(ck, "expert." + std::to_string(e), experts.experts[static_cast<std::size_t>(e)]);
  }
  rec.checkpoint_hash = hex_digest(ck.digest());
  write_json(ws.out() / "record.json", rec.to_json());
  if (cfg.eval.dump_embeddings) io::write_text(ws.out() / "embedding.csv", dump.to_csv());
  print({{"record", (ws.out() / "record.json").string()},
         {"checkpoint_hash", rec.checkpoint_hash},
         {"metrics", report_summary(rec.reports)}});
  return 0;
}

int cmd_ablate(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  AblationSpec spec;
  spec.axis = ablation_axis_from_string(o.axis);
  spec.repeats = o.repeats;
  std::stringstream in(o.values);
  for (std::string item; std::getline(in, item, ',');) {
    // Numbers and booleans parse as JSON; anything else is a name.
    const json parsed = json::parse(item, nullptr, false);
    spec.values.push_back(parsed.is_discarded() ? json(item) : parsed);
  }
  const AblationResult result = run_ablation(spec, cfg);
  fs::create_directories(o.out);
  write_json(fs::path(o.out) / "config.json", cfg.to_json());
  json failures = json::array();
  for (const auto& f : result.failures) failures.push_back({{"value", f.axis_value}, {"seed", f.seed}, {"error", f.error}});
  write_json(fs::path(o.out) / "ablation.json", {{"spec", spec.to_json()}, {"failures", failures}});
  if (!result.records.empty()) emit_report(result.records, o.out);
  print({{"ablation", o.out}, {"runs", result.records.size()}, {"failures", failures}});
  return result.records.empty() ? 1 : 0;
}

int cmd_privacy_run(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  const PipelineOutput run = run_privacy_pipeline(cfg);
  fs::create_directories(o.out);
  write_json(fs::path(o.out) / "config.json", cfg.to_json());
  write_json(fs::path(o.out) / "record.json", run.record.to_json());
  write_json(fs::path(o.out) / "audit_log.json", run.record.audit_log);
  print({{"record", (fs::path(o.out) / "record.json").string()},
         {"private_reads_after_pretraining", run.record.audit_log.at("private_reads_after_pretraining")},
         {"masked_episodes", run.record.mask_log.size()},
         {"metrics", report_summary(run.record.reports)}});
  return 0;
}

int cmd_report(const Options& o) {
  std::vector<RunRecord> records;
  for (const auto& path : o.records) {
    const json j = json::parse(io::read_text(path));
    if (j.is_array()) {
      for (const auto& r : j) records.push_back(RunRecord::from_json(r));
    } else {
      records.push_back(RunRecord::from_json(j));
    }
  }
  const auto written = emit_report(records, o.out);
  json files = json::array();
  for (const auto& p : written) files.push_back(p.string());
  print({{"report", o.out}, {"files", files}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-DMoE: test-time adaptation by distilling from a mixture of experts"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON experiment config (defaults when omitted)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Root seed (overrides the config)");
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
    sub->add_flag("--strict", o.strict, "Fail instead of warning on undersized target domains");
  };
  struct Entry {
    const char* name;
    const char* help;
    int (*run)(const Options&);
  };
  const Entry entries[] = {
      {"gen-data", "Generate the synthetic benchmark", cmd_gen_data},
      {"train-experts", "Train one expert per super-domain", cmd_train_experts},
      {"pretrain", "Train ERM/ARM-BN baselines and the warm start", cmd_pretrain},
      {"meta-train", "Run episodic meta-training", cmd_meta_train},
      {"adapt-eval", "Adapt to each target domain and evaluate every method", cmd_adapt_eval},
      {"ablate", "Sweep one axis over seeds", cmd_ablate},
      {"privacy-run", "Run the privacy-regulated experiment", cmd_privacy_run},
      {"report", "Build CSV/JSON/SVG reports from run records", cmd_report},
  };
  std::string chosen;
  for (const auto& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    common(sub);
    if (std::string(e.name) == "ablate") {
      sub->add_option("--axis", o.axis, "num_experts, aggregator_kind, distill_target, train_scheme, mask_overlap or n_su")
          ->required();
      sub->add_option("--values", o.values, "Comma-separated axis values")->required();
      sub->add_option("--repeats", o.repeats, "Seeds per value")->capture_default_str();
    }
    if (std::string(e.name) == "report") {
      sub->add_option("--records", o.records, "record.json files (single records or arrays)")->required();
    }
    sub->callback([&chosen, name = e.name] { chosen = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  for (const auto& e : entries) {
    if (chosen != e.name) continue;
    try {
      return e.run(o);
    } catch (const PrivacyViolation& ex) {
      std::cerr << json{{"error", {{"type", "privacy_violation"}, {"command", chosen}, {"message", ex.what()}}}}.dump()
                << "\n";
      return 3;
    } catch (const std::invalid_argument& ex) {
      std::cerr << json{{"error", {{"type", "invalid_argument"}, {"command", chosen}, {"message", ex.what()}}}}.dump()
                << "\n";
      return 2;
    } catch (const std::exception& ex) {
      std::cerr << json{{"error", {{"type", "runtime_error"}, {"command", chosen}, {"message", ex.what()}}}}.dump()
                << "\n";
      return 1;
    }
  }
  return 1;
}
