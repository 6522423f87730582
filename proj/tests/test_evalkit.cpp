#include "doctest.h"

#include "meta_fixture.hpp"
#include "metadmoe/evalkit.hpp"
#include "metadmoe/runner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace metadmoe;

namespace {

struct EvalSetup {
  meta_fixture::TinyInstance t = meta_fixture::make_tiny(DistillTarget::features);
  StudentConfig bn_config;
  StudentParams<double> bn_student;

  EvalSetup() {
    bn_config = t.arch.student;
    bn_config.feature_norm = true;
    bn_student = init_student<double>(bn_config, 77);
  }

  MethodModels<double> models() const {
    MethodModels<double> m;
    m.arch = t.arch;
    m.meta_student = &t.student;
    m.phi = &t.phi;
    m.experts = &t.experts;
    m.erm_student = &t.student;
    m.arm_bn_student = &bn_student;
    m.arm_bn_config = bn_config;
    return m;
  }

  MetricReport run(Method method, const AdaptConfig& adapt, EmbeddingDump* dump = nullptr) const {
    RegistryAccess access(t.registry);
    return evaluate_method(method, models(), access, t.registry.target_ids, TaskKind::classification, adapt, 9, dump);
  }
};

void check_report_invariants(const MetricReport& r) {
  CHECK(r.accuracy >= 0);
  CHECK(r.accuracy <= 1);
  CHECK(r.macro_f1 >= 0);
  CHECK(r.macro_f1 <= 1);
  CHECK(r.worst_case_accuracy <= r.accuracy + 1e-12);
}

}  // namespace

TEST_CASE("macro-F1 hand-computed cases") {
  CHECK(macro_f1({0, 1, 2, 1}, {0, 1, 2, 1}, 3) == doctest::Approx(1.0));
  // All predicted 0 with half the labels 1: F1_0 = 2*2/(2*2+2) = 2/3, F1_1 = 0.
  CHECK(macro_f1({0, 0, 0, 0}, {0, 0, 1, 1}, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(macro_f1({2, 2, 2}, {2, 2, 2}, 5) == doctest::Approx(1.0));
  CHECK_THROWS_AS(macro_f1({}, {}, 2), std::invalid_argument);
  CHECK_THROWS_AS(macro_f1({0, 3}, {0, 1}, 2), std::invalid_argument);
}

TEST_CASE("macro-F1 is invariant to consistent relabeling") {
  Rng rng(4);
  std::uniform_int_distribution<int> cls(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> p(30);
    std::vector<int> y(30);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = cls(rng);
      y[i] = cls(rng);
    }
    std::vector<int> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> pp(p.size());
    std::vector<int> yy(y.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      pp[i] = perm[static_cast<std::size_t>(p[i])];
      yy[i] = perm[static_cast<std::size_t>(y[i])];
    }
    CHECK(macro_f1(pp, yy, 5) == doctest::Approx(macro_f1(p, y, 5)).epsilon(1e-12));
  }
}

TEST_CASE("worst-case metric examples") {
  CHECK(worst_case_metric({0.9, 0.7, 0.8}) == 0.7);
  CHECK(worst_case_metric({0.85}) == 0.85);
  CHECK(worst_case_metric({0.6, 0.6, 0.6}) == 0.6);
  CHECK_THROWS_AS(worst_case_metric({}), std::invalid_argument);
}

TEST_CASE("pearson r against the raw-sum formula") {
  const std::vector<double> x{1, 2, 3};
  const std::vector<double> y{1, 2, 4};
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  const double n = 3;
  const double oracle = (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
  CHECK(oracle == doctest::Approx(9.0 / std::sqrt(84.0)).epsilon(1e-15));
  CHECK(pearson_r(x, y) == doctest::Approx(oracle).epsilon(1e-14));

  const std::vector<double> t{0.5, -1.0, 2.0, 3.5};
  std::vector<double> neg(t.size());
  std::transform(t.begin(), t.end(), neg.begin(), [](double v) { return -v; });
  CHECK(pearson_r(t, t) == doctest::Approx(1.0));
  CHECK(pearson_r(neg, t) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(pearson_r({1, 1, 1}, {1, 2, 3}), std::domain_error);
  CHECK_THROWS_AS(pearson_r({1}, {1}), std::domain_error);
}

TEST_CASE("alpha = 0 adaptation reproduces the unadapted report") {
  EvalSetup s;
  AdaptConfig adapt = s.t.cfg.adapt;
  adapt.alpha = 0;
  const MetricReport adapted = s.run(Method::meta_dmoe, adapt);
  const MetricReport plain = s.run(Method::meta_dmoe_no_adapt, adapt);
  CHECK(adapted.accuracy == plain.accuracy);
  CHECK(adapted.macro_f1 == plain.macro_f1);
  CHECK(adapted.worst_case_accuracy == plain.worst_case_accuracy);
  CHECK(adapted.num_samples == plain.num_samples);
  REQUIRE(adapted.per_domain.size() == plain.per_domain.size());
  for (std::size_t i = 0; i < adapted.per_domain.size(); ++i) {
    CHECK(adapted.per_domain[i].accuracy == plain.per_domain[i].accuracy);
    CHECK(adapted.per_domain[i].adapted_digest == hex_digest(s.t.student.extractor.digest()));
  }
}

TEST_CASE("adaptation counters and classifier audit") {
  EvalSetup s;
  AdaptConfig adapt = s.t.cfg.adapt;
  adapt.num_inner_steps = 2;
  const MetricReport meta = s.run(Method::meta_dmoe, adapt);
  CHECK(meta.adaptation_updates == 2 * static_cast<long>(s.t.registry.target_ids.size()));
  for (const auto& d : meta.per_domain) CHECK(d.adaptation_updates == 2);
  CHECK(meta.classifier_audit.checks == static_cast<long>(s.t.registry.target_ids.size()));
  CHECK(meta.classifier_audit.changes == 0);
  for (Method m : {Method::meta_dmoe_no_adapt, Method::erm, Method::arm_bn}) {
    const MetricReport r = s.run(m, adapt);
    CHECK(r.adaptation_updates == 0);
    for (const auto& d : r.per_domain) CHECK(d.adaptation_updates == 0);
    check_report_invariants(r);
  }
  check_report_invariants(meta);
}

TEST_CASE("evaluation leaves every model unchanged") {
  EvalSetup s;
  const std::uint64_t before[] = {s.t.student.digest(), s.t.phi.digest(), s.t.experts.digest(), s.bn_student.digest()};
  for (Method m : {Method::meta_dmoe, Method::meta_dmoe_no_adapt, Method::erm, Method::arm_bn}) s.run(m, s.t.cfg.adapt);
  const std::uint64_t after[] = {s.t.student.digest(), s.t.phi.digest(), s.t.experts.digest(), s.bn_student.digest()};
  for (int i = 0; i < 4; ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("adaptation samples are excluded from scoring and small domains are skipped") {
  EvalSetup s;
  const DomainDataset& target = s.t.registry.domain(s.t.registry.target_ids.front());
  const MetricReport r = s.run(Method::erm, s.t.cfg.adapt);
  REQUIRE(r.per_domain.size() == 1);
  CHECK(r.per_domain.front().num_evaluated == target.num_samples() - s.t.cfg.adapt.n_support);

  AdaptConfig big = s.t.cfg.adapt;
  big.n_support = target.num_samples();
  const MetricReport skipped = s.run(Method::meta_dmoe, big);
  CHECK(skipped.skipped_domains == s.t.registry.target_ids);
  CHECK(skipped.per_domain.empty());
  CHECK_FALSE(skipped.warnings.empty());
}

TEST_CASE("embedding dump has one row per evaluated sample") {
  EvalSetup s;
  EmbeddingDump dump;
  const MetricReport r = s.run(Method::meta_dmoe, s.t.cfg.adapt, &dump);
  CHECK(static_cast<int>(dump.size()) == r.num_samples);
  const std::string csv = dump.to_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == r.num_samples + 1);
}

TEST_CASE("metric reports round-trip through JSON") {
  EvalSetup s;
  const MetricReport r = s.run(Method::meta_dmoe, s.t.cfg.adapt);
  const MetricReport back = MetricReport::from_json(r.to_json());
  CHECK(back.to_json() == r.to_json());
  CHECK(back.accuracy == r.accuracy);
  CHECK(std::isnan(back.pearson_r));
}

TEST_CASE("worst-case falls back to per-domain groups when tags are missing") {
  EvalSetup s;
  for (auto& d : s.t.registry.domains) d.group_tags.clear();
  const MetricReport r = s.run(Method::erm, s.t.cfg.adapt);
  CHECK(r.worst_case_accuracy == r.per_domain.front().accuracy);
  CHECK(std::any_of(r.warnings.begin(), r.warnings.end(),
                    [](const std::string& w) { return w.find("group tags") != std::string::npos; }));
}

TEST_CASE("regression reports use pearson r") {
  ExperimentConfig cfg;
  cfg.data.task = TaskKind::regression;
  cfg.data.num_source_domains = 6;
  cfg.data.num_val_domains = 1;
  cfg.data.num_target_domains = 2;
  cfg.num_experts = 3;
  cfg.meta.epochs = 2;
  cfg.expert_training.epochs = 5;
  cfg.pretrain.student.epochs = 5;
  cfg.baseline_training.epochs = 5;
  const RunRecord rec = run_pipeline(cfg).record;
  for (const auto& [name, r] : rec.reports) {
    CAPTURE(name);
    CHECK(std::isfinite(r.pearson_r));
    CHECK(r.pearson_r >= -1);
    CHECK(r.pearson_r <= 1);
    // Correlation is not an average over groups, so the worst group may beat
    // the pooled value; only the range is guaranteed.
    CHECK(r.worst_case_pearson_r >= -1);
    CHECK(r.worst_case_pearson_r <= 1);
  }
}

TEST_CASE("without a domain gap meta_dmoe and erm are indistinguishable") {
  ExperimentConfig cfg;
  cfg.data.shift_strength = 0;
  std::vector<double> meta;
  std::vector<double> erm;
  PipelineCache cache;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    cfg.seed = seed;
    const RunRecord rec = run_pipeline(cfg, &cache).record;
    meta.push_back(rec.reports.at("meta_dmoe").accuracy);
    erm.push_back(rec.reports.at("erm").accuracy);
  }
  auto mean_std = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::make_pair(m, std::sqrt(ss / static_cast<double>(v.size() - 1)));
  };
  const auto [mm, ms] = mean_std(meta);
  const auto [em, es] = mean_std(erm);
  MESSAGE("meta_dmoe " << mm << " +- " << ms << ", erm " << em << " +- " << es);
  CHECK(mm - ms <= em + es);
  CHECK(em - es <= mm + ms);
}
