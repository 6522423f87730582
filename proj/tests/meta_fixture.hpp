// Tiny meta-learning instance shared by the metatrain unit tests and the
// acceptance suite.

#ifndef METADMOE_TEST_META_FIXTURE_HPP
#define METADMOE_TEST_META_FIXTURE_HPP

#include "metadmoe/metatrain.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace meta_fixture {

using namespace metadmoe;

struct TinyInstance {
  DomainRegistry registry;
  Architecture arch;
  SuperDomainMap map;
  ExpertBank<double> experts;
  ParamStore<double> phi;
  StudentParams<double> student;
  std::vector<Episode> episodes;
  MetaConfig cfg;
};

/// input_dim 4, d 8, N 3 experts, B 2 episodes, 64-bit.
inline TinyInstance make_tiny(DistillTarget target, std::uint64_t seed = 5) {
  TinyInstance t;
  BenchmarkSpec spec;
  spec.num_source_domains = 6;
  spec.num_val_domains = 0;
  spec.num_target_domains = 1;
  spec.num_classes = 3;
  spec.input_dim = 4;
  spec.min_samples = 40;
  spec.max_samples = 50;
  spec.seed = seed;
  t.registry = generate_benchmark(spec);

  t.arch.student.input_dim = 4;
  t.arch.student.hidden_dims = {6};
  t.arch.student.feature_dim = 8;
  t.arch.student.num_classes = 3;
  t.arch.student.activation = Activation::tanh;
  t.arch.aggregator.kind = AggregatorKind::transformer;
  t.arch.aggregator.num_experts = 3;
  t.arch.aggregator.token_dim = 8;
  t.arch.aggregator.heads = 2;

  t.map = cluster_domains(t.registry, 3);
  t.experts.config = t.arch.student;
  for (int i = 0; i < 3; ++i) t.experts.experts.push_back(init_student<double>(t.arch.student, seed * 100 + i));
  t.phi = init_aggregator<double>(t.arch.aggregator, seed + 1);
  t.student = init_student<double>(t.arch.student, seed + 2);

  t.cfg.meta_batch = 2;
  t.cfg.adapt.alpha = 0.5;
  t.cfg.adapt.target = target;
  t.cfg.adapt.n_support = 5;
  t.cfg.n_query = 4;
  t.cfg.mask_overlap = true;
  Rng rng(seed + 3);
  RegistryAccess access(t.registry);
  t.episodes = sample_meta_batch<double>(access, t.registry.source_ids, t.cfg, rng);
  return t;
}

/// L_B at the given parameters (the inner step still needs gradients).
inline double query_loss(const TinyInstance& t, const ParamStore<double>& phi, const StudentParams<double>& s) {
  ad::GradModeGuard on(true);
  return meta_batch_loss(t.arch, ParamVars<double>::from_store(phi, true),
                         ParamVars<double>::from_store(s.extractor, true),
                         ParamVars<double>::from_store(s.classifier, true), t.experts, t.episodes, &t.map,
                         TaskKind::classification, t.cfg)
      .item();
}

struct GradientCheck {
  double phi = 0;
  double extractor = 0;
  double classifier = 0;
};

/// Relative error ||g_autodiff - g_fd|| / ||g_fd|| per parameter group, with
/// central differences of step `eps`.
inline GradientCheck check_meta_gradient(const TinyInstance& t, double eps = 1e-5) {
  MetaGradients<double> g = meta_gradients(t.arch, t.phi, t.student, t.experts, t.episodes, &t.map,
                                           TaskKind::classification, t.cfg);
  auto rel = [](const Vector<double>& a, const Vector<double>& n) {
    return (a - n).norm() / std::max(n.norm(), 1e-12);
  };
  GradientCheck out;
  {
    Vector<double> flat = t.phi.flatten();
    Vector<double> num(flat.size());
    for (Index i = 0; i < flat.size(); ++i) {
      Vector<double> up = flat, down = flat;
      up(i) += eps;
      down(i) -= eps;
      num(i) = (query_loss(t, t.phi.unflatten(up), t.student) - query_loss(t, t.phi.unflatten(down), t.student)) /
               (2 * eps);
    }
    out.phi = rel(g.phi.flatten(), num);
  }
  for (int part = 0; part < 2; ++part) {
    const ParamStore<double>& store = part == 0 ? t.student.extractor : t.student.classifier;
    Vector<double> flat = store.flatten();
    Vector<double> num(flat.size());
    for (Index i = 0; i < flat.size(); ++i) {
      StudentParams<double> up = t.student, down = t.student;
      Vector<double> fu = flat, fd = flat;
      fu(i) += eps;
      fd(i) -= eps;
      (part == 0 ? up.extractor : up.classifier) = store.unflatten(fu);
      (part == 0 ? down.extractor : down.classifier) = store.unflatten(fd);
      num(i) = (query_loss(t, t.phi, up) - query_loss(t, t.phi, down)) / (2 * eps);
    }
    (part == 0 ? out.extractor : out.classifier) = rel((part == 0 ? g.extractor : g.classifier).flatten(), num);
  }
  return out;
}

}  // namespace meta_fixture

#endif  // METADMOE_TEST_META_FIXTURE_HPP
