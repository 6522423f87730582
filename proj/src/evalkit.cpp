#include "metadmoe/evalkit.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace metadmoe {

using nlohmann::json;

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("accuracy: size mismatch");
  if (labels.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels, int num_classes) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("macro_f1: size mismatch");
  if (labels.empty()) throw std::invalid_argument("macro_f1: empty input");
  std::vector<long> tp(static_cast<std::size_t>(num_classes), 0);
  std::vector<long> fp(tp.size(), 0);
  std::vector<long> fn(tp.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i];
    const int y = labels[i];
    if (y < 0 || y >= num_classes || p < 0 || p >= num_classes) throw std::invalid_argument("macro_f1: class out of range");
    if (p == y) {
      ++tp[static_cast<std::size_t>(y)];
    } else {
      ++fp[static_cast<std::size_t>(p)];
      ++fn[static_cast<std::size_t>(y)];
    }
  }
  double total = 0;
  int present = 0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    const long denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    total += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    ++present;
  }
  return total / present;
}

double worst_case_metric(const std::vector<double>& per_group) {
  if (per_group.empty()) throw std::invalid_argument("worst_case_metric: no groups");
  return *std::min_element(per_group.begin(), per_group.end());
}

double pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson_r: size mismatch");
  if (x.size() < 2) throw std::domain_error("pearson_r: needs at least two samples");
  const Eigen::Map<const Eigen::ArrayXd> a(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::Map<const Eigen::ArrayXd> b(y.data(), static_cast<Eigen::Index>(y.size()));
  const Eigen::ArrayXd da = a - a.mean();
  const Eigen::ArrayXd db = b - b.mean();
  const double sa = std::sqrt((da * da).sum());
  const double sb = std::sqrt((db * db).sum());
  if (sa == 0 || sb == 0) throw std::domain_error("pearson_r: zero variance, correlation undefined");
  return std::clamp((da * db).sum() / (sa * sb), -1.0, 1.0);
}

std::string to_string(Method m) {
  switch (m) {
    case Method::meta_dmoe:
      return "meta_dmoe";
    case Method::meta_dmoe_no_adapt:
      return "meta_dmoe_no_adapt";
    case Method::erm:
      return "erm";
    case Method::arm_bn:
      return "arm_bn";
  }
  return "meta_dmoe";
}

Method method_from_string(const std::string& s) {
  if (s == "meta_dmoe") return Method::meta_dmoe;
  if (s == "meta_dmoe_no_adapt") return Method::meta_dmoe_no_adapt;
  if (s == "erm") return Method::erm;
  if (s == "arm_bn") return Method::arm_bn;
  throw std::invalid_argument("unknown method: " + s);
}

namespace detail {

MetricReport summarize(const std::string& method, TaskKind task, int num_classes, const Pooled& pooled,
                       std::vector<DomainMetrics> per_domain, bool groups_missing) {
  MetricReport r;
  r.method = method;
  r.per_domain = std::move(per_domain);
  if (groups_missing) {
    r.warnings.push_back("missing group tags: worst-case metrics fall back to per-domain groups");
    std::cerr << "warning: " << r.warnings.back() << "\n";
  }
  r.num_samples = static_cast<int>(pooled.groups.size());
  if (r.num_samples == 0) return r;

  std::map<int, std::vector<std::size_t>> by_group;
  for (std::size_t i = 0; i < pooled.groups.size(); ++i) by_group[pooled.groups[i]].push_back(i);

  if (task == TaskKind::classification) {
    r.accuracy = accuracy(pooled.predictions, pooled.labels);
    r.macro_f1 = macro_f1(pooled.predictions, pooled.labels, num_classes);
    std::vector<double> group_acc;
    for (const auto& [g, idx] : by_group) {
      std::vector<int> p;
      std::vector<int> y;
      for (std::size_t i : idx) {
        p.push_back(pooled.predictions[i]);
        y.push_back(pooled.labels[i]);
      }
      group_acc.push_back(accuracy(p, y));
    }
    r.worst_case_accuracy = worst_case_metric(group_acc);
  } else {
    try {
      r.pearson_r = pearson_r(pooled.outputs, pooled.targets);
    } catch (const std::domain_error& e) {
      r.warnings.push_back(std::string("pearson r undefined: ") + e.what());
    }
    std::vector<double> group_r;
    for (const auto& [g, idx] : by_group) {
      std::vector<double> p;
      std::vector<double> y;
      for (std::size_t i : idx) {
        p.push_back(pooled.outputs[i]);
        y.push_back(pooled.targets[i]);
      }
      try {
        group_r.push_back(pearson_r(p, y));
      } catch (const std::domain_error&) {
        r.warnings.push_back("group " + std::to_string(g) + " has undefined pearson r");
      }
    }
    if (!group_r.empty()) r.worst_case_pearson_r = worst_case_metric(group_r);
  }
  return r;
}

}  // namespace detail

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_or_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

json MetricReport::to_json() const {
  json domains = json::array();
  for (const auto& d : per_domain) {
    domains.push_back({{"domain_id", d.domain_id},
                       {"num_evaluated", d.num_evaluated},
                       {"accuracy", d.accuracy},
                       {"macro_f1", d.macro_f1},
                       {"pearson_r", number_or_null(d.pearson_r)},
                       {"adaptation_updates", d.adaptation_updates},
                       {"adapted_digest", d.adapted_digest}});
  }
  return json{{"method", method},
              {"num_samples", num_samples},
              {"accuracy", accuracy},
              {"macro_f1", macro_f1},
              {"worst_case_accuracy", worst_case_accuracy},
              {"pearson_r", number_or_null(pearson_r)},
              {"worst_case_pearson_r", number_or_null(worst_case_pearson_r)},
              {"adaptation_updates", adaptation_updates},
              {"classifier_checks", classifier_audit.checks},
              {"classifier_changes", classifier_audit.changes},
              {"per_domain", domains},
              {"skipped_domains", skipped_domains},
              {"warnings", warnings}};
}

MetricReport MetricReport::from_json(const json& j) {
  MetricReport r;
  r.method = j.at("method").get<std::string>();
  r.num_samples = j.at("num_samples").get<int>();
  r.accuracy = j.at("accuracy").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.worst_case_accuracy = j.at("worst_case_accuracy").get<double>();
  r.pearson_r = number_or_nan(j.at("pearson_r"));
  r.worst_case_pearson_r = number_or_nan(j.at("worst_case_pearson_r"));
  r.adaptation_updates = j.at("adaptation_updates").get<long>();
  r.classifier_audit.checks = j.at("classifier_checks").get<long>();
  r.classifier_audit.changes = j.at("classifier_changes").get<long>();
  for (const auto& d : j.at("per_domain")) {
    DomainMetrics m;
    m.domain_id = d.at("domain_id").get<int>();
    m.num_evaluated = d.at("num_evaluated").get<int>();
    m.accuracy = d.at("accuracy").get<double>();
    m.macro_f1 = d.at("macro_f1").get<double>();
    m.pearson_r = number_or_nan(d.at("pearson_r"));
    m.adaptation_updates = d.at("adaptation_updates").get<long>();
    m.adapted_digest = d.at("adapted_digest").get<std::string>();
    r.per_domain.push_back(m);
  }
  r.skipped_domains = j.at("skipped_domains").get<std::vector<int>>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

std::string EmbeddingDump::to_csv() const {
  std::ostringstream out;
  out << "domain_id,label,unadapted_x,unadapted_y,adapted_x,adapted_y\n";
  if (domain_ids.empty()) return out.str();
  const Eigen::Index dim = unadapted.front().size();
  const Eigen::Index rows = static_cast<Eigen::Index>(2 * size());
  Eigen::MatrixXd all(rows, dim);
  for (std::size_t i = 0; i < size(); ++i) {
    all.row(static_cast<Eigen::Index>(i)) = unadapted[i].transpose();
    all.row(static_cast<Eigen::Index>(size() + i)) = adapted[i].transpose();
  }
  const Eigen::RowVectorXd center = all.colwise().mean();
  Eigen::MatrixXd centered = all.rowwise() - center;
  Eigen::MatrixXd axes = Eigen::MatrixXd::Zero(dim, 2);
  if (dim >= 2) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered.transpose() * centered);
    // Eigenvalues come in increasing order.
    axes.col(0) = eig.eigenvectors().col(dim - 1);
    axes.col(1) = eig.eigenvectors().col(dim - 2);
  } else {
    axes(0, 0) = 1;
  }
  const Eigen::MatrixXd proj = centered * axes;
  out << std::setprecision(9);
  for (std::size_t i = 0; i < size(); ++i) {
    const auto a = static_cast<Eigen::Index>(i);
    const auto b = static_cast<Eigen::Index>(size() + i);
    out << domain_ids[i] << ',' << labels[i] << ',' << proj(a, 0) << ',' << proj(a, 1) << ',' << proj(b, 0) << ','
        << proj(b, 1) << '\n';
  }
  return out.str();
}

}  // namespace metadmoe
