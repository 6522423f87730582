// Student network, domain experts and knowledge aggregators.
//
// Batches are row-major in the usual sense: one sample per row. Expert
// features for a batch of n samples and N experts are stacked as an (n*N) x d
// token matrix, sample-major (row s*N + i holds expert i's feature for sample
// s), so every aggregator works on all samples at once.

#ifndef METADMOE_NETS_HPP
#define METADMOE_NETS_HPP

#include "metadmoe/autodiff.hpp"
#include "metadmoe/param_store.hpp"
#include "metadmoe/random.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace metadmoe {

enum class Activation { relu, tanh, linear };
enum class AggregatorKind { transformer, max, avg, mlp_ws, mlp_p };

std::string to_string(Activation a);
std::string to_string(AggregatorKind k);
Activation activation_from_string(const std::string& s);
AggregatorKind aggregator_kind_from_string(const std::string& s);

struct StudentConfig {
  int input_dim = 16;
  std::vector<int> hidden_dims = {64, 64};
  int feature_dim = 32;
  /// Output width of the classifier (1 for regression).
  int num_classes = 5;
  Activation activation = Activation::relu;
  /// Normalize each hidden layer with batch statistics (the ARM-BN student).
  bool feature_norm = false;
  /// Single real-valued output instead of class logits.
  bool regression = false;

  void validate() const {
    if (input_dim < 1) throw std::invalid_argument("StudentConfig: input_dim must be >= 1");
    if (feature_dim < 1) throw std::invalid_argument("StudentConfig: feature_dim must be >= 1");
    if (regression && num_classes != 1) throw std::invalid_argument("StudentConfig: regression heads have one output");
    if (!regression && num_classes < 2) throw std::invalid_argument("StudentConfig: classification needs >= 2 classes");
    for (int h : hidden_dims) {
      if (h < 1) throw std::invalid_argument("StudentConfig: hidden widths must be >= 1");
    }
  }
};

struct AggregatorConfig {
  AggregatorKind kind = AggregatorKind::transformer;
  int num_experts = 5;
  /// Token width d seen by the encoder.
  int token_dim = 32;
  int heads = 4;
  /// 0 selects token_dim / heads.
  int head_dim = 0;
  /// 0 selects 2 * token_dim.
  int inner_dim = 0;
  /// Expert feature width; 0 means equal to token_dim. Any other value adds a
  /// shared linear adapter in front of the encoder.
  int expert_dim = 0;
  /// Width of the aggregated feature; 0 means token_dim. Any other value adds a
  /// trailing layernorm + linear projection.
  int output_dim = 0;
  double ln_eps = 1e-5;

  int resolved_head_dim() const { return head_dim > 0 ? head_dim : token_dim / std::max(heads, 1); }
  int resolved_inner_dim() const { return inner_dim > 0 ? inner_dim : 2 * token_dim; }
  int resolved_expert_dim() const { return expert_dim > 0 ? expert_dim : token_dim; }
  int resolved_output_dim() const { return output_dim > 0 ? output_dim : token_dim; }

  void validate() const {
    if (num_experts < 1) throw std::invalid_argument("AggregatorConfig: num_experts must be >= 1");
    if (token_dim < 1) throw std::invalid_argument("AggregatorConfig: token_dim must be >= 1");
    if (kind == AggregatorKind::transformer) {
      if (heads < 1) throw std::invalid_argument("AggregatorConfig: heads must be >= 1");
      if (head_dim == 0 && token_dim % heads != 0) {
        throw std::invalid_argument("AggregatorConfig: token_dim must be divisible by heads");
      }
      if (static_cast<long>(heads) * resolved_head_dim() > 64L * token_dim) {
        throw std::invalid_argument("AggregatorConfig: heads * head_dim unreasonably large");
      }
    }
  }
};

template <typename Scalar>
struct StudentParams {
  ParamStore<Scalar> extractor;   // theta_e
  ParamStore<Scalar> classifier;  // theta_c
  /// Running normalization statistics (feature_norm students only).
  ParamStore<Scalar> norm_stats;

  std::uint64_t digest() const {
    Fnv1a h;
    for (std::uint64_t d : {extractor.digest(), classifier.digest(), norm_stats.digest()}) h.update(&d, sizeof(d));
    return h.value();
  }

  friend bool operator==(const StudentParams& a, const StudentParams& b) {
    return a.extractor == b.extractor && a.classifier == b.classifier && a.norm_stats == b.norm_stats;
  }

  template <typename Other>
  StudentParams<Other> cast() const {
    return {extractor.template cast<Other>(), classifier.template cast<Other>(), norm_stats.template cast<Other>()};
  }
};

/// Per-layer (mean, variance) rows for feature-normalized students.
template <typename Scalar>
struct NormStats {
  std::vector<Matrix<Scalar>> mean;
  std::vector<Matrix<Scalar>> var;
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> uniform_matrix(Index rows, Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix<Scalar> m(rows, cols);
  // Fill row by row so the draw order matches the row-major flatten order.
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = static_cast<Scalar>(u(rng));
  }
  return m;
}

/// Fan-in scaled uniform init of a weight [in x out] and bias [1 x out].
template <typename Scalar>
void add_linear(ParamStore<Scalar>& store, const std::string& prefix, int in, int out, Rng& rng, bool bias = true) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  store.add(prefix + ".weight", uniform_matrix<Scalar>(in, out, bound, rng));
  if (bias) store.add(prefix + ".bias", uniform_matrix<Scalar>(1, out, bound, rng));
}

template <typename Scalar>
void add_layer_norm(ParamStore<Scalar>& store, const std::string& prefix, int dim) {
  store.add(prefix + ".gamma", Matrix<Scalar>::Ones(1, dim));
  store.add(prefix + ".beta", Matrix<Scalar>::Zero(1, dim));
}

template <typename Scalar>
ad::Var<Scalar> activate(const ad::Var<Scalar>& x, Activation a) {
  switch (a) {
    case Activation::relu:
      return ad::relu(x);
    case Activation::tanh:
      return ad::tanh(x);
    case Activation::linear:
      return x;
  }
  return x;
}

template <typename Scalar>
ad::Var<Scalar> linear(const ParamVars<Scalar>& p, const std::string& prefix, const ad::Var<Scalar>& x) {
  return ad::affine(x, p.at(prefix + ".weight"), p.at(prefix + ".bias"));
}

inline std::string layer_name(std::size_t i) { return "fe." + std::to_string(i); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Initialization

template <typename Scalar>
StudentParams<Scalar> init_student(const StudentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  StudentParams<Scalar> p;
  int in = cfg.input_dim;
  for (std::size_t i = 0; i < cfg.hidden_dims.size(); ++i) {
    detail::add_linear(p.extractor, detail::layer_name(i), in, cfg.hidden_dims[i], rng);
    if (cfg.feature_norm) {
      detail::add_layer_norm(p.extractor, "bn." + std::to_string(i), cfg.hidden_dims[i]);
      p.norm_stats.add("bn." + std::to_string(i) + ".mean", Matrix<Scalar>::Zero(1, cfg.hidden_dims[i]));
      p.norm_stats.add("bn." + std::to_string(i) + ".var", Matrix<Scalar>::Ones(1, cfg.hidden_dims[i]));
    }
    in = cfg.hidden_dims[i];
  }
  detail::add_linear(p.extractor, detail::layer_name(cfg.hidden_dims.size()), in, cfg.feature_dim, rng);
  detail::add_linear(p.classifier, "cls", cfg.feature_dim, cfg.num_classes, rng);
  return p;
}

template <typename Scalar>
ParamStore<Scalar> init_aggregator(const AggregatorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamStore<Scalar> p;
  const int d = cfg.token_dim;
  if (cfg.resolved_expert_dim() != d) detail::add_linear(p, "adapter", cfg.resolved_expert_dim(), d, rng);
  switch (cfg.kind) {
    case AggregatorKind::transformer: {
      const int width = cfg.heads * cfg.resolved_head_dim();
      detail::add_layer_norm(p, "ln1", d);
      detail::add_linear(p, "attn.qkv", d, 3 * width, rng, false);
      detail::add_linear(p, "attn.out", width, d, rng, false);
      detail::add_layer_norm(p, "ln2", d);
      detail::add_linear(p, "mlp.fc1", d, cfg.resolved_inner_dim(), rng);
      detail::add_linear(p, "mlp.fc2", cfg.resolved_inner_dim(), d, rng);
      break;
    }
    case AggregatorKind::mlp_ws:
      detail::add_linear(p, "ws.fc1", d, cfg.resolved_inner_dim(), rng);
      detail::add_linear(p, "ws.fc2", cfg.resolved_inner_dim(), 1, rng);
      break;
    case AggregatorKind::mlp_p:
      detail::add_linear(p, "proj.fc1", cfg.num_experts * d, d, rng);
      detail::add_linear(p, "proj.fc2", d, d, rng);
      break;
    case AggregatorKind::max:
    case AggregatorKind::avg:
      break;
  }
  if (cfg.resolved_output_dim() != d) {
    detail::add_layer_norm(p, "head.ln", d);
    detail::add_linear(p, "head", d, cfg.resolved_output_dim(), rng);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Student

/// Feature extractor f(x; theta_e).
///
/// For feature-normalized students, `stats` selects fixed statistics; when it
/// is null the batch statistics of `x` are used and, if `batch_stats` is
/// given, recorded there.
template <typename Scalar>
ad::Var<Scalar> student_features(const StudentConfig& cfg, const ParamVars<Scalar>& theta_e, const ad::Var<Scalar>& x,
                                 const NormStats<Scalar>* stats = nullptr, NormStats<Scalar>* batch_stats = nullptr) {
  if (x.cols() != cfg.input_dim) {
    throw std::invalid_argument("student_features: input has " + std::to_string(x.cols()) + " columns, expected " +
                                std::to_string(cfg.input_dim));
  }
  ad::Var<Scalar> h = x;
  for (std::size_t i = 0; i < cfg.hidden_dims.size(); ++i) {
    h = detail::linear(theta_e, detail::layer_name(i), h);
    if (cfg.feature_norm) {
      const Index n = h.rows();
      const std::string bn = "bn." + std::to_string(i);
      ad::Var<Scalar> mean_row, var_row;
      if (stats != nullptr) {
        mean_row = ad::Var<Scalar>::constant(stats->mean.at(i));
        var_row = ad::Var<Scalar>::constant(stats->var.at(i));
      } else {
        const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
        mean_row = inv_n * ad::col_sum(h);
        ad::Var<Scalar> centered = h - ad::broadcast_rows(mean_row, n);
        var_row = inv_n * ad::col_sum(ad::cwise_product(centered, centered));
        if (batch_stats != nullptr) {
          batch_stats->mean.push_back(mean_row.value());
          batch_stats->var.push_back(var_row.value());
        }
      }
      ad::Var<Scalar> inv_std = ad::pow(ad::add_scalar(var_row, Scalar(1e-5)), Scalar(-0.5));
      ad::Var<Scalar> normed =
          ad::cwise_product(h - ad::broadcast_rows(mean_row, n), ad::broadcast_rows(inv_std, n));
      h = ad::cwise_product(normed, ad::broadcast_rows(theta_e.at(bn + ".gamma"), n)) +
          ad::broadcast_rows(theta_e.at(bn + ".beta"), n);
    }
    h = detail::activate(h, cfg.activation);
  }
  return detail::linear(theta_e, detail::layer_name(cfg.hidden_dims.size()), h);
}

/// Affine classifier head on top of student features.
template <typename Scalar>
ad::Var<Scalar> classify(const ParamVars<Scalar>& theta_c, const ad::Var<Scalar>& features) {
  return detail::linear(theta_c, "cls", features);
}

template <typename Scalar>
ad::Var<Scalar> student_logits(const StudentConfig& cfg, const ParamVars<Scalar>& theta_e,
                               const ParamVars<Scalar>& theta_c, const ad::Var<Scalar>& x,
                               const NormStats<Scalar>* stats = nullptr) {
  return classify(theta_c, student_features(cfg, theta_e, x, stats));
}

/// Reads the running statistics stored alongside a feature-normalized student.
template <typename Scalar>
NormStats<Scalar> stored_norm_stats(const StudentConfig& cfg, const StudentParams<Scalar>& p) {
  NormStats<Scalar> s;
  for (std::size_t i = 0; i < cfg.hidden_dims.size(); ++i) {
    s.mean.push_back(p.norm_stats.at("bn." + std::to_string(i) + ".mean"));
    s.var.push_back(p.norm_stats.at("bn." + std::to_string(i) + ".var"));
  }
  return s;
}

/// Statistics of each normalized layer computed from the batch `x`.
template <typename Scalar>
NormStats<Scalar> batch_norm_stats(const StudentConfig& cfg, const ParamStore<Scalar>& theta_e, const Matrix<Scalar>& x) {
  ad::NoGradGuard no_grad;
  NormStats<Scalar> s;
  student_features<Scalar>(cfg, ParamVars<Scalar>::from_store(theta_e, false), ad::Var<Scalar>::constant(x), nullptr, &s);
  return s;
}

// ---------------------------------------------------------------------------
// Experts

/// M_e(x): the features an expert produces right before its classifier.
/// Experts are frozen, so this never records a graph.
template <typename Scalar>
Matrix<Scalar> expert_features(const StudentConfig& expert_cfg, const StudentParams<Scalar>& expert,
                               const Matrix<Scalar>& x) {
  ad::NoGradGuard no_grad;
  ParamVars<Scalar> vars = ParamVars<Scalar>::from_store(expert.extractor, false);
  const NormStats<Scalar> stats =
      expert_cfg.feature_norm ? stored_norm_stats(expert_cfg, expert) : NormStats<Scalar>{};
  return student_features(expert_cfg, vars, ad::Var<Scalar>::constant(x), expert_cfg.feature_norm ? &stats : nullptr)
      .value();
}

/// Interleaves per-expert feature blocks [n x d] into the (n*N) x d token
/// layout.
template <typename Scalar>
Matrix<Scalar> stack_tokens(const std::vector<Matrix<Scalar>>& per_expert) {
  if (per_expert.empty()) throw std::invalid_argument("stack_tokens: no experts");
  const Index n = per_expert.front().rows();
  const Index d = per_expert.front().cols();
  const Index count = static_cast<Index>(per_expert.size());
  Matrix<Scalar> tokens(n * count, d);
  for (Index e = 0; e < count; ++e) {
    const Matrix<Scalar>& f = per_expert[static_cast<std::size_t>(e)];
    if (f.rows() != n || f.cols() != d) throw std::invalid_argument("stack_tokens: inconsistent expert feature shapes");
    for (Index s = 0; s < n; ++s) tokens.row(s * count + e) = f.row(s);
  }
  return tokens;
}

/// A frozen bank of experts sharing one architecture.
template <typename Scalar>
struct ExpertBank {
  StudentConfig config;
  std::vector<StudentParams<Scalar>> experts;

  int size() const { return static_cast<int>(experts.size()); }

  std::uint64_t digest() const {
    Fnv1a h;
    for (const auto& e : experts) {
      const std::uint64_t d = e.digest();
      h.update(&d, sizeof(d));
    }
    return h.value();
  }

  /// (n*N) x d token matrix for the batch `x`.
  Matrix<Scalar> tokens(const Matrix<Scalar>& x) const {
    std::vector<Matrix<Scalar>> feats;
    feats.reserve(experts.size());
    for (const auto& e : experts) feats.push_back(expert_features(config, e, x));
    return stack_tokens(feats);
  }

  template <typename Other>
  ExpertBank<Other> cast() const {
    ExpertBank<Other> out{config, {}};
    for (const auto& e : experts) out.experts.push_back(e.template cast<Other>());
    return out;
  }
};

// ---------------------------------------------------------------------------
// Aggregators

namespace detail {

template <typename Scalar>
ad::Var<Scalar> layer_norm(const ParamVars<Scalar>& p, const std::string& prefix, const ad::Var<Scalar>& x,
                           double eps) {
  return ad::layer_norm(x, p.at(prefix + ".gamma"), p.at(prefix + ".beta"), static_cast<Scalar>(eps));
}

template <typename Scalar>
ad::Var<Scalar> multi_head_attention(const AggregatorConfig& cfg, const ParamVars<Scalar>& phi,
                                     const ad::Var<Scalar>& z, Index batch) {
  const Index dk = cfg.resolved_head_dim();
  const Index width = cfg.heads * dk;
  const ad::Var<Scalar> qkv = ad::matmul(z, phi.at("attn.qkv.weight"));
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dk));
  std::vector<ad::Var<Scalar>> heads;
  heads.reserve(static_cast<std::size_t>(cfg.heads));
  for (Index h = 0; h < cfg.heads; ++h) {
    ad::Var<Scalar> q = ad::slice_cols(qkv, h * dk, dk);
    ad::Var<Scalar> k = ad::slice_cols(qkv, width + h * dk, dk);
    ad::Var<Scalar> v = ad::slice_cols(qkv, 2 * width + h * dk, dk);
    ad::Var<Scalar> scores = scale * ad::batched_matmul(q, k, batch, false, true);
    heads.push_back(ad::batched_matmul(ad::softmax_rows(scores), v, batch));
  }
  ad::Var<Scalar> joined = heads.size() == 1 ? heads.front() : ad::concat_cols(heads);
  return ad::matmul(joined, phi.at("attn.out.weight"));
}

}  // namespace detail

/// A(tokens; phi): mixes the N expert tokens of each sample into one feature.
///
/// `tokens` is (n*N) x expert_dim in the stacked layout; the result is n x
/// output_dim.
template <typename Scalar>
ad::Var<Scalar> aggregate(const AggregatorConfig& cfg, const ParamVars<Scalar>& phi, const ad::Var<Scalar>& tokens) {
  const Index n_exp = cfg.num_experts;
  if (tokens.rows() % n_exp != 0) {
    throw std::invalid_argument("aggregate: token rows " + std::to_string(tokens.rows()) +
                                " not a multiple of num_experts " + std::to_string(n_exp));
  }
  if (tokens.cols() != cfg.resolved_expert_dim()) {
    throw std::invalid_argument("aggregate: token width " + std::to_string(tokens.cols()) + " does not match " +
                                std::to_string(cfg.resolved_expert_dim()) + " (configure expert_dim for an adapter)");
  }
  const Index batch = tokens.rows() / n_exp;
  const Index d = cfg.token_dim;
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n_exp);

  ad::Var<Scalar> z = tokens;
  if (phi.contains("adapter.weight")) z = detail::linear(phi, "adapter", z);

  ad::Var<Scalar> pooled;
  switch (cfg.kind) {
    case AggregatorKind::transformer: {
      ad::Var<Scalar> attended = detail::multi_head_attention(cfg, phi, detail::layer_norm(phi, "ln1", z, cfg.ln_eps), batch) + z;
      ad::Var<Scalar> hidden = ad::gelu(detail::linear(phi, "mlp.fc1", detail::layer_norm(phi, "ln2", attended, cfg.ln_eps)));
      ad::Var<Scalar> out = detail::linear(phi, "mlp.fc2", hidden) + attended;
      pooled = inv_n * ad::block_row_sum(out, n_exp);
      break;
    }
    case AggregatorKind::avg:
      pooled = inv_n * ad::block_row_sum(z, n_exp);
      break;
    case AggregatorKind::max: {
      // Route each (sample, column) to its first maximal token.
      const Matrix<Scalar>& v = z.value();
      Matrix<Scalar> select = Matrix<Scalar>::Zero(v.rows(), v.cols());
      for (Index s = 0; s < batch; ++s) {
        for (Index c = 0; c < d; ++c) {
          Index best = 0;
          for (Index e = 1; e < n_exp; ++e) {
            if (v(s * n_exp + e, c) > v(s * n_exp + best, c)) best = e;
          }
          select(s * n_exp + best, c) = Scalar(1);
        }
      }
      pooled = ad::block_row_sum(ad::cwise_product(z, ad::Var<Scalar>::constant(select)), n_exp);
      break;
    }
    case AggregatorKind::mlp_ws: {
      ad::Var<Scalar> score = detail::linear(phi, "ws.fc2", ad::relu(detail::linear(phi, "ws.fc1", z)));
      ad::Var<Scalar> weights = ad::reshape(ad::softmax_rows(ad::reshape(score, batch, n_exp)), batch * n_exp, 1);
      pooled = ad::block_row_sum(ad::cwise_product(z, ad::broadcast_cols(weights, d)), n_exp);
      break;
    }
    case AggregatorKind::mlp_p: {
      ad::Var<Scalar> flat = ad::reshape(z, batch, n_exp * d);
      pooled = detail::linear(phi, "proj.fc2", ad::relu(detail::linear(phi, "proj.fc1", flat)));
      break;
    }
  }
  if (phi.contains("head.weight")) pooled = detail::linear(phi, "head", detail::layer_norm(phi, "head.ln", pooled, cfg.ln_eps));
  return pooled;
}

// ---------------------------------------------------------------------------
// Losses

/// Mean cross-entropy of row logits against integer labels.
template <typename Scalar>
ad::Var<Scalar> cross_entropy(const ad::Var<Scalar>& logits, const Eigen::VectorXi& labels) {
  if (labels.size() != logits.rows()) throw std::invalid_argument("cross_entropy: label count mismatch");
  Matrix<Scalar> onehot = Matrix<Scalar>::Zero(logits.rows(), logits.cols());
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels(i) < 0 || labels(i) >= logits.cols()) throw std::invalid_argument("cross_entropy: label out of range");
    onehot(i, labels(i)) = Scalar(1);
  }
  ad::Var<Scalar> picked = ad::cwise_product(ad::log_softmax_rows(logits), ad::Var<Scalar>::constant(onehot));
  return (Scalar(-1) / static_cast<Scalar>(logits.rows())) * ad::sum(picked);
}

/// Mean squared error of a single-column prediction.
template <typename Scalar>
ad::Var<Scalar> squared_error(const ad::Var<Scalar>& pred, const Eigen::VectorXf& targets) {
  if (pred.cols() != 1 || targets.size() != pred.rows()) throw std::invalid_argument("squared_error: shape mismatch");
  ad::Var<Scalar> diff = pred - ad::Var<Scalar>::constant(targets.cast<Scalar>());
  return ad::mean(ad::cwise_product(diff, diff));
}

}  // namespace metadmoe

#endif  // METADMOE_NETS_HPP
