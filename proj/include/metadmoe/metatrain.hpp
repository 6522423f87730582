// Expert pretraining, ERM warm start and episodic bi-level meta-training.

#ifndef METADMOE_METATRAIN_HPP
#define METADMOE_METATRAIN_HPP

#include "metadmoe/adapt.hpp"
#include "metadmoe/optim.hpp"
#include "metadmoe/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace metadmoe {

struct SupervisedConfig {
  int epochs = 20;
  double lr = 1e-3;
  int batch_size = 64;
  /// Multiplicative learning-rate decay applied after every epoch.
  double lr_decay = 1.0;
  /// Draw every minibatch from a single domain.
  bool per_domain_batches = false;
  /// Running-statistics momentum for feature-normalized students.
  double norm_momentum = 0.1;
};

/// Whether the Table-6 style training of a component starts from scratch,
/// from supervised pretraining, or from pretraining followed by meta-training.
enum class StageInit { random, pretrain, meta };

std::string to_string(StageInit s);
StageInit stage_init_from_string(const std::string& s);

struct TrainScheme {
  StageInit aggregator = StageInit::meta;
  StageInit student = StageInit::meta;

  std::string name() const { return to_string(aggregator) + "/" + to_string(student); }
  static TrainScheme parse(const std::string& s);
};

struct MetaConfig {
  int meta_batch = 4;
  double beta_s = 1e-3;
  double beta_a = 1e-3;
  int epochs = 15;
  double lr_decay = 0.98;
  AdaptConfig adapt;
  bool mask_overlap = true;
  int n_query = 16;
  /// Meta-steps per epoch; 0 selects ceil(|source domains| / meta_batch).
  int steps_per_epoch = 0;
  bool update_aggregator = true;
  bool update_student = true;
  /// Stop after this many epochs without validation improvement (0 = never).
  int patience = 0;
  std::uint64_t seed = 0;

  void validate() const {
    adapt.validate();
    if (meta_batch < 1) throw std::invalid_argument("MetaConfig: meta_batch must be >= 1");
    if (!(beta_s > 0) || !(beta_a > 0)) throw std::invalid_argument("MetaConfig: meta learning rates must be > 0");
    if (!(lr_decay > 0 && lr_decay <= 1)) throw std::invalid_argument("MetaConfig: lr_decay must be in (0, 1]");
    if (epochs < 0) throw std::invalid_argument("MetaConfig: epochs must be >= 0");
    if (n_query < 1) throw std::invalid_argument("MetaConfig: n_query must be >= 1");
  }

  /// Meta learning-rate multiplier after `epoch` completed epochs.
  double decay_factor(int epoch) const { return std::pow(lr_decay, static_cast<double>(epoch)); }
};

/// One masked episode. Episodes adapted without a mask are not logged.
struct MaskLogEntry {
  long step = 0;
  int domain_id = 0;
  int masked_expert = 0;
};

template <typename Scalar>
struct TrainState {
  ParamStore<Scalar> phi;
  StudentParams<Scalar> student;
  ExpertBank<Scalar> experts;
  Adam<Scalar> opt_phi;
  Adam<Scalar> opt_extractor;
  Adam<Scalar> opt_classifier;
  int epoch = 0;
  long step = 0;
  Rng rng;
  AdaptationCounter inner_updates;
  std::vector<MaskLogEntry> mask_log;
  ClassifierAudit classifier_audit;

  /// Digest of everything the outer loop trains.
  std::uint64_t digest() const {
    Fnv1a h;
    for (std::uint64_t d : {phi.digest(), student.digest()}) h.update(&d, sizeof(d));
    return h.value();
  }
};

// ---------------------------------------------------------------------------
// Supervised training

namespace detail {

template <typename Scalar>
ad::Var<Scalar> task_loss(TaskKind task, const ad::Var<Scalar>& outputs, const Eigen::VectorXi& labels,
                          const Eigen::VectorXf& targets) {
  return task == TaskKind::classification ? cross_entropy(outputs, labels) : squared_error(outputs, targets);
}

struct SampleRef {
  std::size_t domain;
  int index;
};

/// Minibatch schedule for one epoch.
inline std::vector<std::vector<SampleRef>> make_batches(const std::vector<const DomainDataset*>& data, int batch_size,
                                                         bool per_domain, Rng& rng) {
  std::vector<std::vector<SampleRef>> batches;
  auto chunk = [&](std::vector<SampleRef>& refs) {
    for (std::size_t at = 0; at < refs.size(); at += static_cast<std::size_t>(batch_size)) {
      const std::size_t end = std::min(refs.size(), at + static_cast<std::size_t>(batch_size));
      batches.emplace_back(refs.begin() + static_cast<long>(at), refs.begin() + static_cast<long>(end));
    }
  };
  if (per_domain) {
    for (std::size_t d = 0; d < data.size(); ++d) {
      std::vector<SampleRef> refs;
      for (int i = 0; i < data[d]->num_samples(); ++i) refs.push_back({d, i});
      std::shuffle(refs.begin(), refs.end(), rng);
      chunk(refs);
    }
    std::shuffle(batches.begin(), batches.end(), rng);
  } else {
    std::vector<SampleRef> refs;
    for (std::size_t d = 0; d < data.size(); ++d) {
      for (int i = 0; i < data[d]->num_samples(); ++i) refs.push_back({d, i});
    }
    std::shuffle(refs.begin(), refs.end(), rng);
    chunk(refs);
  }
  return batches;
}

struct Batch {
  Eigen::MatrixXf x;
  Eigen::VectorXi labels;
  Eigen::VectorXf targets;
};

inline Batch gather_batch(const std::vector<const DomainDataset*>& data, const std::vector<SampleRef>& refs,
                          TaskKind task) {
  Batch b;
  const Index n = static_cast<Index>(refs.size());
  b.x.resize(n, data.front()->inputs.cols());
  if (task == TaskKind::classification) b.labels.resize(n);
  else b.targets.resize(n);
  for (Index i = 0; i < n; ++i) {
    const DomainDataset& d = *data[refs[static_cast<std::size_t>(i)].domain];
    const int idx = refs[static_cast<std::size_t>(i)].index;
    b.x.row(i) = d.inputs.row(idx);
    if (task == TaskKind::classification) b.labels(i) = d.labels(idx);
    else b.targets(i) = d.targets(idx);
  }
  return b;
}

inline void check_finite_loss(double value, const std::string& what, int epoch, double lr) {
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << what << ": loss diverged (" << value << ") in epoch " << epoch << " with lr=" << lr
        << "; reduce the learning rate";
    throw std::runtime_error(msg.str());
  }
}

}  // namespace detail

/// Minibatch Adam on the pooled samples of `data`. Deterministic in `seed`.
template <typename Scalar>
StudentParams<Scalar> train_supervised(const StudentConfig& cfg, StudentParams<Scalar> params,
                                       const std::vector<const DomainDataset*>& data, TaskKind task,
                                       const SupervisedConfig& sc, std::uint64_t seed,
                                       std::vector<double>* epoch_losses = nullptr) {
  if (sc.epochs <= 0) return params;
  if (data.empty()) throw std::invalid_argument("train_supervised: no training data");
  Rng rng(seed);
  Adam<Scalar> opt_e;
  Adam<Scalar> opt_c;
  const Scalar momentum = static_cast<Scalar>(sc.norm_momentum);
  for (int epoch = 0; epoch < sc.epochs; ++epoch) {
    const double lr = sc.lr * std::pow(sc.lr_decay, static_cast<double>(epoch));
    double total = 0;
    long count = 0;
    for (const auto& refs : detail::make_batches(data, sc.batch_size, sc.per_domain_batches, rng)) {
      const detail::Batch b = detail::gather_batch(data, refs, task);
      ParamVars<Scalar> theta_e = ParamVars<Scalar>::from_store(params.extractor, true);
      ParamVars<Scalar> theta_c = ParamVars<Scalar>::from_store(params.classifier, true);
      NormStats<Scalar> stats;
      ad::Var<Scalar> feats =
          student_features(cfg, theta_e, ad::Var<Scalar>::constant(b.x.cast<Scalar>()),
                           static_cast<const NormStats<Scalar>*>(nullptr), &stats);
      ad::Var<Scalar> loss = detail::task_loss(task, classify(theta_c, feats), b.labels, b.targets);
      detail::check_finite_loss(static_cast<double>(loss.item()), "train_supervised", epoch, lr);
      std::vector<ad::Var<Scalar>> all = theta_e.list();
      for (const auto& v : theta_c.list()) all.push_back(v);
      std::vector<ad::Var<Scalar>> grads = ad::grad(loss, all);
      opt_e.step(params.extractor, to_store(params.extractor, grads), lr);
      opt_c.step(params.classifier, to_store(params.classifier, grads, params.extractor.size()), lr);
      for (std::size_t i = 0; i < stats.mean.size(); ++i) {
        Matrix<Scalar>& rm = params.norm_stats.at("bn." + std::to_string(i) + ".mean");
        Matrix<Scalar>& rv = params.norm_stats.at("bn." + std::to_string(i) + ".var");
        rm = (Scalar(1) - momentum) * rm + momentum * stats.mean[i];
        rv = (Scalar(1) - momentum) * rv + momentum * stats.var[i];
      }
      total += static_cast<double>(loss.item()) * static_cast<double>(refs.size());
      count += static_cast<long>(refs.size());
    }
    if (epoch_losses != nullptr) epoch_losses->push_back(total / static_cast<double>(count));
  }
  return params;
}

/// Trains one domain expert M^i on the union of its super-domain's samples.
template <typename Scalar>
StudentParams<Scalar> train_expert(const StudentConfig& cfg, const std::vector<const DomainDataset*>& data,
                                   TaskKind task, const SupervisedConfig& sc, std::uint64_t seed) {
  if (data.empty()) throw std::invalid_argument("train_expert: empty super-domain");
  return train_supervised(cfg, init_student<Scalar>(cfg, split_seed(seed, 0)), data, task, sc, split_seed(seed, 1));
}

/// How expert pretraining data is formed when the number of experts varies.
enum class ExpertDataMode {
  /// Every source sample goes to exactly one expert; the total is fixed.
  redistribute,
  /// Each expert trains on a uniform subsample of total / N of its pooled
  /// super-domain samples (capped at what it has).
  subsample,
};

std::string to_string(ExpertDataMode m);
ExpertDataMode expert_data_mode_from_string(const std::string& s);

/// Trains one expert per super-domain.
template <typename Scalar>
ExpertBank<Scalar> train_experts(const StudentConfig& cfg, const DomainAccess& access, const SuperDomainMap& map,
                                 TaskKind task, const SupervisedConfig& sc, std::uint64_t seed,
                                 ExpertDataMode mode = ExpertDataMode::redistribute) {
  ExpertBank<Scalar> bank{cfg, {}};
  const auto members = map.members();
  long total = 0;
  for (const auto& ids : members) {
    for (int id : ids) total += access.fetch(id).num_samples();
  }
  std::vector<DomainDataset> subsampled;
  for (std::size_t i = 0; i < members.size(); ++i) {
    std::vector<const DomainDataset*> data;
    for (int id : members[i]) data.push_back(&access.fetch(id));
    const std::uint64_t expert_seed = split_seed(seed, i);
    if (mode == ExpertDataMode::subsample) {
      // Pool, then subsample to an equal share of the total.
      DomainDataset pooled;
      pooled.domain_id = -1;
      long rows = 0;
      for (const auto* d : data) rows += d->num_samples();
      pooled.inputs.resize(rows, data.front()->inputs.cols());
      if (task == TaskKind::classification) pooled.labels.resize(rows);
      else pooled.targets.resize(rows);
      long at = 0;
      for (const auto* d : data) {
        pooled.inputs.middleRows(at, d->num_samples()) = d->inputs;
        if (task == TaskKind::classification) pooled.labels.segment(at, d->num_samples()) = d->labels;
        else pooled.targets.segment(at, d->num_samples()) = d->targets;
        at += d->num_samples();
      }
      const int keep = static_cast<int>(std::min<long>(rows, total / map.num_experts));
      Rng rng(split_seed(expert_seed, 7));
      std::vector<int> idx = sample_without_replacement(static_cast<int>(rows), keep, rng);
      DomainDataset sub;
      sub.domain_id = -1;
      sub.inputs = gather_rows(pooled.inputs, idx);
      if (task == TaskKind::classification) {
        sub.labels.resize(keep);
        for (int k = 0; k < keep; ++k) sub.labels(k) = pooled.labels(idx[static_cast<std::size_t>(k)]);
      } else {
        sub.targets.resize(keep);
        for (int k = 0; k < keep; ++k) sub.targets(k) = pooled.targets(idx[static_cast<std::size_t>(k)]);
      }
      subsampled.push_back(std::move(sub));
      data = {&subsampled.back()};
    }
    bank.experts.push_back(train_expert<Scalar>(cfg, data, task, sc, expert_seed));
    if (mode == ExpertDataMode::subsample) subsampled.clear();
  }
  return bank;
}

// ---------------------------------------------------------------------------
// Warm start

struct PretrainConfig {
  SupervisedConfig student;
  SupervisedConfig aggregator;
};

template <typename Scalar>
struct WarmStart {
  ParamStore<Scalar> phi;
  StudentParams<Scalar> student;
};

/// ERM warm start for the student and (through a temporary classifier on the
/// aggregated feature) for the aggregator. Either part can be skipped, in
/// which case it keeps its fresh initialization. When `mask_map` is given the
/// expert owning a batch's domain is masked, as in meta-training.
template <typename Scalar>
WarmStart<Scalar> pretrain_student_and_aggregator(const Architecture& arch, const DomainAccess& access,
                                                  const std::vector<int>& source_ids,
                                                  const ExpertBank<Scalar>& experts, TaskKind task,
                                                  const PretrainConfig& cfg, std::uint64_t seed,
                                                  bool pretrain_student = true, bool pretrain_aggregator = true,
                                                  const SuperDomainMap* mask_map = nullptr) {
  WarmStart<Scalar> out;
  out.student = init_student<Scalar>(arch.student, phase_seed(seed, SeedStream::student));
  out.phi = init_aggregator<Scalar>(arch.aggregator, phase_seed(seed, SeedStream::aggregator));
  std::vector<const DomainDataset*> data;
  for (int id : source_ids) data.push_back(&access.fetch(id));

  if (pretrain_student) {
    out.student = train_supervised(arch.student, out.student, data, task, cfg.student, split_seed(seed, 11));
  }
  if (!pretrain_aggregator || cfg.aggregator.epochs <= 0 || out.phi.size() == 0) return out;

  // Temporary head on the aggregated feature; discarded afterwards.
  ParamStore<Scalar> head;
  {
    Rng rng(split_seed(seed, 12));
    detail::add_linear(head, "cls", arch.aggregator.resolved_output_dim(), arch.student.num_classes, rng);
  }
  Adam<Scalar> opt_phi;
  Adam<Scalar> opt_head;
  Rng rng(split_seed(seed, 13));
  const int n_exp = arch.aggregator.num_experts;
  for (int epoch = 0; epoch < cfg.aggregator.epochs; ++epoch) {
    const double lr = cfg.aggregator.lr * std::pow(cfg.aggregator.lr_decay, static_cast<double>(epoch));
    for (const auto& refs : detail::make_batches(data, cfg.aggregator.batch_size, true, rng)) {
      const detail::Batch b = detail::gather_batch(data, refs, task);
      const int domain_id = data[refs.front().domain]->domain_id;
      MaskSpec mask;
      if (mask_map != nullptr && mask_map->contains(domain_id)) mask.masked_expert = mask_map->expert_of(domain_id);
      const Matrix<Scalar> x = b.x.cast<Scalar>();
      ParamVars<Scalar> phi = ParamVars<Scalar>::from_store(out.phi, true);
      ParamVars<Scalar> head_vars = ParamVars<Scalar>::from_store(head, true);
      ad::Var<Scalar> tokens = mask_experts(ad::Var<Scalar>::constant(experts.tokens(x)), n_exp, mask);
      ad::Var<Scalar> loss =
          detail::task_loss(task, classify(head_vars, aggregate(arch.aggregator, phi, tokens)), b.labels, b.targets);
      detail::check_finite_loss(static_cast<double>(loss.item()), "pretrain aggregator", epoch, lr);
      std::vector<ad::Var<Scalar>> all = phi.list();
      for (const auto& v : head_vars.list()) all.push_back(v);
      std::vector<ad::Var<Scalar>> grads = ad::grad(loss, all);
      opt_phi.step(out.phi, to_store(out.phi, grads), lr);
      opt_head.step(head, to_store(head, grads, out.phi.size()), lr);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Meta-training

template <typename Scalar>
struct MetaGradients {
  Scalar loss = 0;
  ParamStore<Scalar> phi;
  ParamStore<Scalar> extractor;
  ParamStore<Scalar> classifier;
  std::vector<MaskLogEntry> masks;
  ClassifierAudit audit;
};

/// Accumulated query loss L_B of one meta batch as a differentiable scalar.
///
/// `live_experts`, when given, replaces the frozen bank with differentiable
/// expert extractors (used to verify that masked experts get no gradient).
template <typename Scalar>
ad::Var<Scalar> meta_batch_loss(const Architecture& arch, const ParamVars<Scalar>& phi,
                                const ParamVars<Scalar>& theta_e, const ParamVars<Scalar>& theta_c,
                                const ExpertBank<Scalar>& experts, const std::vector<Episode>& episodes,
                                const SuperDomainMap* super_map, TaskKind task, const MetaConfig& cfg,
                                std::vector<MaskLogEntry>* masks = nullptr, long step = 0,
                                const std::vector<ParamVars<Scalar>>* live_experts = nullptr,
                                ClassifierAudit* audit = nullptr) {
  ad::Var<Scalar> total = ad::Var<Scalar>::constant(Matrix<Scalar>::Zero(1, 1));
  for (const Episode& ep : episodes) {
    MaskSpec mask;
    if (cfg.mask_overlap) {
      if (super_map == nullptr || !super_map->contains(ep.domain_id)) {
        throw std::invalid_argument("meta step: domain " + std::to_string(ep.domain_id) +
                                    " has no super-domain while expert masking is on");
      }
      mask.masked_expert = super_map->expert_of(ep.domain_id);
    }
    if (masks != nullptr && mask.masked_expert) masks->push_back({step, ep.domain_id, *mask.masked_expert});

    const Matrix<Scalar> support = ep.support_x.template cast<Scalar>();
    ad::Var<Scalar> tokens;
    if (live_experts != nullptr) {
      // Scatter each expert's [n x d] block into the stacked token layout.
      const Index n = support.rows();
      const Index count = static_cast<Index>(live_experts->size());
      for (Index e = 0; e < count; ++e) {
        ad::Var<Scalar> f = student_features(experts.config, (*live_experts)[static_cast<std::size_t>(e)],
                                             ad::Var<Scalar>::constant(support));
        Matrix<Scalar> scatter = Matrix<Scalar>::Zero(n * count, n);
        for (Index s = 0; s < n; ++s) scatter(s * count + e, s) = Scalar(1);
        ad::Var<Scalar> placed = ad::matmul(ad::Var<Scalar>::constant(scatter), f);
        tokens = tokens.defined() ? tokens + placed : placed;
      }
    } else {
      tokens = ad::Var<Scalar>::constant(experts.tokens(support));
    }
    const std::uint64_t classifier_before = audit != nullptr ? theta_c.values_store().digest() : 0;
    ParamVars<Scalar> adapted = dist_update(arch, theta_e, phi, theta_c, tokens, ad::Var<Scalar>::constant(support),
                                            mask, cfg.adapt);
    if (audit != nullptr) audit->record(theta_c.values_store().digest() == classifier_before);
    ad::Var<Scalar> outputs =
        student_logits(arch.student, adapted, theta_c, ad::Var<Scalar>::constant(ep.query_x.template cast<Scalar>()));
    total = total + detail::task_loss(task, outputs, ep.query_y, ep.query_targets);
  }
  return total;
}

/// Gradients of L_B with respect to phi, theta_e and theta_c.
template <typename Scalar>
MetaGradients<Scalar> meta_gradients(const Architecture& arch, const ParamStore<Scalar>& phi,
                                     const StudentParams<Scalar>& student, const ExpertBank<Scalar>& experts,
                                     const std::vector<Episode>& episodes, const SuperDomainMap* super_map,
                                     TaskKind task, const MetaConfig& cfg, long step = 0) {
  ad::GradModeGuard record(true);
  ParamVars<Scalar> phi_v = ParamVars<Scalar>::from_store(phi, true);
  ParamVars<Scalar> e_v = ParamVars<Scalar>::from_store(student.extractor, true);
  ParamVars<Scalar> c_v = ParamVars<Scalar>::from_store(student.classifier, true);
  MetaGradients<Scalar> out;
  ad::Var<Scalar> loss =
      meta_batch_loss<Scalar>(arch, phi_v, e_v, c_v, experts, episodes, super_map, task, cfg, &out.masks, step, nullptr,
                      &out.audit);
  out.loss = loss.item();
  std::vector<ad::Var<Scalar>> all = phi_v.list();
  for (const auto& v : e_v.list()) all.push_back(v);
  for (const auto& v : c_v.list()) all.push_back(v);
  std::vector<ad::Var<Scalar>> grads = ad::grad(loss, all);
  out.phi = to_store(phi, grads);
  out.extractor = to_store(student.extractor, grads, phi.size());
  out.classifier = to_store(student.classifier, grads, phi.size() + student.extractor.size());
  return out;
}

/// One outer update from a batch of B episodes. Returns L_B.
template <typename Scalar>
Scalar meta_step(const Architecture& arch, TrainState<Scalar>& state, const std::vector<Episode>& episodes,
                 const SuperDomainMap* super_map, TaskKind task, const MetaConfig& cfg) {
  MetaGradients<Scalar> g =
      meta_gradients(arch, state.phi, state.student, state.experts, episodes, super_map, task, cfg, state.step);
  if (!std::isfinite(static_cast<double>(g.loss))) {
    std::ostringstream msg;
    msg << "meta_step: query loss diverged (" << g.loss << ") at step " << state.step
        << "; reduce beta_s/beta_a or alpha";
    throw std::runtime_error(msg.str());
  }
  const double factor = cfg.decay_factor(state.epoch);
  if (cfg.update_aggregator && state.phi.size() > 0) state.opt_phi.step(state.phi, g.phi, cfg.beta_a * factor);
  if (cfg.update_student) {
    state.opt_extractor.step(state.student.extractor, g.extractor, cfg.beta_s * factor);
    state.opt_classifier.step(state.student.classifier, g.classifier, cfg.beta_s * factor);
  }
  for (const auto& ep : episodes) state.inner_updates.add(ep.domain_id, cfg.adapt.num_inner_steps);
  state.mask_log.insert(state.mask_log.end(), g.masks.begin(), g.masks.end());
  state.classifier_audit.merge(g.audit);
  ++state.step;
  return g.loss;
}

struct CurveRow {
  int epoch = 0;
  double mean_loss = 0;
  double val_metric = 0;
  double beta_a = 0;
  double beta_s = 0;
};

template <typename Scalar>
struct MetaTrainResult {
  TrainState<Scalar> state;
  std::vector<CurveRow> curve;
  int best_epoch = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
};

template <typename Scalar>
using Validator = std::function<double(const TrainState<Scalar>&)>;

template <typename Scalar>
TrainState<Scalar> make_train_state(const WarmStart<Scalar>& warm, ExpertBank<Scalar> experts, std::uint64_t seed) {
  TrainState<Scalar> s;
  s.phi = warm.phi;
  s.student = warm.student;
  s.experts = std::move(experts);
  s.rng = Rng(seed);
  return s;
}

/// Samples B source domains (without replacement while possible) and one
/// episode from each.
template <typename Scalar>
std::vector<Episode> sample_meta_batch(const DomainAccess& access, const std::vector<int>& source_ids,
                                       const MetaConfig& cfg, Rng& rng) {
  std::vector<int> picks;
  const int pool = static_cast<int>(source_ids.size());
  if (cfg.meta_batch <= pool) {
    picks = sample_without_replacement(pool, cfg.meta_batch, rng);
  } else {
    std::uniform_int_distribution<int> any(0, pool - 1);
    for (int b = 0; b < cfg.meta_batch; ++b) picks.push_back(any(rng));
  }
  std::vector<Episode> episodes;
  for (int p : picks) {
    episodes.push_back(
        sample_episode(access.fetch(source_ids[static_cast<std::size_t>(p)]), cfg.adapt.n_support, cfg.n_query, rng));
  }
  return episodes;
}

/// The episodic outer loop. Keeps the state with the best validation metric
/// (higher is better) when a validator is supplied; otherwise the final one.
template <typename Scalar>
MetaTrainResult<Scalar> meta_train(const Architecture& arch, const DomainAccess& access,
                                   const std::vector<int>& source_ids, const SuperDomainMap* super_map,
                                   TaskKind task, const MetaConfig& cfg, TrainState<Scalar> state,
                                   const Validator<Scalar>& validate = {}) {
  cfg.validate();
  if (source_ids.empty()) throw std::invalid_argument("meta_train: no source domains");
  MetaTrainResult<Scalar> result;
  const int steps = cfg.steps_per_epoch > 0
                        ? cfg.steps_per_epoch
                        : (static_cast<int>(source_ids.size()) + cfg.meta_batch - 1) / cfg.meta_batch;
  if (validate) {
    result.best_metric = validate(state);
    result.curve.push_back({0, 0.0, result.best_metric, cfg.beta_a, cfg.beta_s});
  }
  result.state = state;
  int since_best = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    state.epoch = e;
    double loss_sum = 0;
    for (int s = 0; s < steps; ++s) {
      std::vector<Episode> episodes = sample_meta_batch<Scalar>(access, source_ids, cfg, state.rng);
      loss_sum += static_cast<double>(meta_step(arch, state, episodes, super_map, task, cfg));
    }
    CurveRow row{e + 1, loss_sum / steps, 0.0, cfg.beta_a * cfg.decay_factor(e), cfg.beta_s * cfg.decay_factor(e)};
    state.epoch = e + 1;
    if (validate) {
      row.val_metric = validate(state);
      if (row.val_metric > result.best_metric) {
        result.best_metric = row.val_metric;
        result.best_epoch = e + 1;
        result.state = state;
        since_best = 0;
      } else {
        // Keep counters and logs current even when parameters roll back.
        result.state.inner_updates = state.inner_updates;
        result.state.mask_log = state.mask_log;
        result.state.classifier_audit = state.classifier_audit;
        ++since_best;
      }
    } else {
      result.state = state;
      result.best_epoch = e + 1;
    }
    result.curve.push_back(row);
    if (cfg.patience > 0 && since_best >= cfg.patience) break;
  }
  return result;
}

}  // namespace metadmoe

#endif  // METADMOE_METATRAIN_HPP
