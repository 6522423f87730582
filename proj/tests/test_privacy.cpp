#include "doctest.h"

#include "metadmoe/privacy.hpp"
#include "metadmoe/runner.hpp"
#include "runner_fixture.hpp"

#include <set>

using namespace metadmoe;

namespace {

DomainRegistry twenty_sources() {
  BenchmarkSpec s;
  s.num_source_domains = 20;
  s.num_val_domains = 2;
  s.num_target_domains = 3;
  s.input_dim = 4;
  s.min_samples = 30;
  s.max_samples = 40;
  s.seed = 8;
  return generate_benchmark(s);
}

PrivacyRecipe small_recipe(const ExperimentConfig& cfg) {
  PrivacyRecipe r;
  r.arch = cfg.architecture();
  r.num_experts = cfg.num_experts;
  r.expert_training = cfg.expert_training;
  r.pretrain = cfg.pretrain;
  r.baseline_training = cfg.baseline_training;
  r.meta = cfg.resolved_meta();
  r.seed = cfg.seed;
  return r;
}

}  // namespace

TEST_CASE("half of twenty sources are private") {
  const DomainRegistry reg = twenty_sources();
  const PrivacySplit split = split_privacy(reg, 0.5, 1);
  CHECK(split.private_ids.size() == 10);
  CHECK(split.public_ids.size() == 10);
  CHECK(split_privacy(reg, 0.5, 1).private_ids == split.private_ids);
  CHECK(split_privacy(reg, 0.5, 2).private_ids != split.private_ids);
}

TEST_CASE("every split is disjoint, non-empty and within the sources") {
  const DomainRegistry reg = twenty_sources();
  const std::set<int> sources(reg.source_ids.begin(), reg.source_ids.end());
  for (double fraction : {0.01, 0.2, 0.5, 0.75, 0.99}) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const PrivacySplit split = split_privacy(reg, fraction, seed);
      CHECK_FALSE(split.private_ids.empty());
      CHECK_FALSE(split.public_ids.empty());
      std::set<int> seen;
      for (int id : split.private_ids) seen.insert(id);
      for (int id : split.public_ids) CHECK(seen.count(id) == 0);
      for (int id : split.public_ids) seen.insert(id);
      CHECK(seen == sources);
      CHECK_NOTHROW(split.validate(reg));
    }
  }
}

TEST_CASE("degenerate fractions and bad splits are rejected") {
  const DomainRegistry reg = twenty_sources();
  for (double fraction : {0.0, 1.0, -0.5, 1.5}) CHECK_THROWS_AS(split_privacy(reg, fraction, 0), std::invalid_argument);
  PrivacySplit overlap{{0, 1}, {1, 2}};
  CHECK_THROWS_AS(overlap.validate(reg), std::logic_error);
  PrivacySplit target{{0}, {reg.target_ids.front()}};
  CHECK_THROWS_AS(target.validate(reg), std::logic_error);
  PrivacySplit empty{{}, {0}};
  CHECK_THROWS_AS(empty.validate(reg), std::logic_error);
}

TEST_CASE("audited access logs reads and blocks private reads after expert pretraining") {
  const DomainRegistry reg = twenty_sources();
  const PrivacySplit split = split_privacy(reg, 0.5, 3);
  AuditedAccess access(reg, split);
  const int priv = split.private_ids.front();
  const int pub = split.public_ids.front();
  CHECK(&access.fetch(priv) == &reg.domain(priv));
  for (Phase p : {Phase::baseline_training, Phase::warm_start, Phase::meta_training, Phase::evaluation}) {
    access.set_phase(p);
    CHECK_NOTHROW(access.fetch(pub));
    CHECK_THROWS_AS(access.fetch(priv), PrivacyViolation);
  }
  const auto log = access.log();
  CHECK(log.size() == 9);
  CHECK(log.front().phase == Phase::expert_pretraining);
  CHECK(log.front().private_domain);
  CHECK(access.private_reads_after_pretraining() == 4);
  for (std::size_t i = 0; i < log.size(); ++i) CHECK(log[i].sequence == static_cast<long>(i));
  const auto j = audit_log_to_json(log);
  CHECK(j.at("private_reads_after_pretraining") == 4);
  CHECK(j.at("events").size() == 9);
}

TEST_CASE("meta-training over a private domain is a hard failure") {
  const ExperimentConfig cfg = runner_fixture::small_config();
  const DomainRegistry reg = stage_data(cfg);
  const PrivacySplit split = split_privacy(reg, 0.5, 4);
  AuditedAccess access(reg, split);
  access.set_phase(Phase::meta_training);
  const Architecture arch = cfg.architecture();
  ExpertBank<Real> bank{arch.student, {}};
  for (int i = 0; i < arch.aggregator.num_experts; ++i) bank.experts.push_back(init_student<Real>(arch.student, i));
  WarmStart<Real> warm{init_aggregator<Real>(arch.aggregator, 1), init_student<Real>(arch.student, 2)};
  MetaConfig meta = cfg.resolved_meta();
  meta.mask_overlap = false;
  std::vector<int> ids = split.public_ids;
  ids.push_back(split.private_ids.front());
  meta.meta_batch = static_cast<int>(ids.size());
  CHECK_THROWS_AS(meta_train<Real>(arch, access, ids, nullptr, TaskKind::classification, meta,
                                   make_train_state(warm, bank, 1)),
                  PrivacyViolation);
}

TEST_CASE("a full privacy run respects the firewall") {
  const ExperimentConfig cfg = runner_fixture::small_config();
  const DomainRegistry reg = stage_data(cfg);
  const PrivacySplit split = split_privacy(reg, 0.5, 5);
  const PrivacyResult r = run_privacy_experiment(reg, split, small_recipe(cfg));

  const std::set<int> priv(split.private_ids.begin(), split.private_ids.end());
  const std::set<int> pub(split.public_ids.begin(), split.public_ids.end());
  const std::set<int> val(reg.val_ids.begin(), reg.val_ids.end());
  const std::set<int> target(reg.target_ids.begin(), reg.target_ids.end());
  std::set<int> expert_reads;
  for (const auto& e : r.audit_log) {
    CAPTURE(to_string(e.phase));
    CAPTURE(e.domain_id);
    CHECK(e.private_domain == (priv.count(e.domain_id) != 0));
    switch (e.phase) {
      case Phase::expert_pretraining:
        CHECK(priv.count(e.domain_id) == 1);
        expert_reads.insert(e.domain_id);
        break;
      case Phase::baseline_training:
      case Phase::warm_start:
        CHECK(pub.count(e.domain_id) == 1);
        break;
      case Phase::meta_training:
        CHECK((pub.count(e.domain_id) == 1 || val.count(e.domain_id) == 1));
        break;
      case Phase::evaluation:
        CHECK(target.count(e.domain_id) == 1);
        break;
    }
  }
  CHECK(expert_reads == priv);
  CHECK(r.mask_log.empty());
  CHECK(r.meta_dmoe.classifier_audit.changes == 0);
  CHECK(r.meta_dmoe.classifier_audit.checks > 0);

  // The experts are exactly what private-only training produces.
  RegistryAccess plain(reg);
  const SuperDomainMap map = cluster_domains(reg, split.private_ids, cfg.num_experts);
  const ExpertBank<Real> direct = train_experts<Real>(cfg.architecture().student, plain, map, reg.task(),
                                                      cfg.expert_training, phase_seed(cfg.seed, SeedStream::experts));
  CHECK(direct.digest() == r.expert_digest);
}

TEST_CASE("privacy pipeline records the audit log") {
  const ExperimentConfig cfg = runner_fixture::small_config();
  const PipelineOutput out = run_privacy_pipeline(cfg);
  CHECK(out.record.kind == "privacy");
  CHECK(out.record.audit_log.at("private_reads_after_pretraining") == 0);
  CHECK(out.record.mask_log.empty());
  CHECK(out.record.reports.count("meta_dmoe") == 1);
  CHECK(out.record.reports.count("erm") == 1);
  const PipelineOutput again = run_privacy_pipeline(cfg);
  CHECK(again.record.reports.at("meta_dmoe").accuracy == out.record.reports.at("meta_dmoe").accuracy);
  CHECK(again.record.audit_log == out.record.audit_log);
}
