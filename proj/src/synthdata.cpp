#include "metadmoe/synthdata.hpp"

#include "metadmoe/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace metadmoe {

using nlohmann::json;

std::string to_string(TaskKind kind) {
  return kind == TaskKind::classification ? "classification" : "regression";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::source:
      return "source";
    case Split::target_val:
      return "target-val";
    case Split::target_test:
      return "target-test";
  }
  return "source";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "regression") return TaskKind::regression;
  throw std::invalid_argument("unknown task kind: " + s);
}

Split split_from_string(const std::string& s) {
  if (s == "source") return Split::source;
  if (s == "target-val") return Split::target_val;
  if (s == "target-test") return Split::target_test;
  throw std::invalid_argument("unknown split: " + s);
}

const DomainDataset& DomainRegistry::domain(int id) const {
  for (const auto& d : domains) {
    if (d.domain_id == id) return d;
  }
  throw std::out_of_range("unknown domain id " + std::to_string(id));
}

std::vector<const DomainDataset*> DomainRegistry::select(const std::vector<int>& ids) const {
  std::vector<const DomainDataset*> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(&domain(id));
  return out;
}

void DomainRegistry::validate() const {
  std::set<int> seen;
  for (const auto& d : domains) {
    if (!seen.insert(d.domain_id).second) throw std::logic_error("duplicate domain id");
    if (d.num_samples() < 1) throw std::logic_error("empty domain");
    if (d.inputs.cols() != spec.input_dim) throw std::logic_error("input_dim mismatch");
    if (spec.task == TaskKind::classification) {
      if (d.labels.size() != d.num_samples()) throw std::logic_error("label count mismatch");
      if (d.labels.minCoeff() < 0 || d.labels.maxCoeff() >= spec.num_classes) {
        throw std::logic_error("label out of range");
      }
    } else if (d.targets.size() != d.num_samples()) {
      throw std::logic_error("target count mismatch");
    }
  }
  std::set<int> src(source_ids.begin(), source_ids.end());
  for (const auto* ids : {&val_ids, &target_ids}) {
    for (int id : *ids) {
      if (src.count(id) != 0) throw std::logic_error("source and target ids overlap");
    }
  }
  for (const auto* ids : {&source_ids, &val_ids, &target_ids}) {
    for (int id : *ids) {
      if (seen.count(id) == 0) throw std::logic_error("id list references a missing domain");
    }
  }
}

namespace {

Eigen::MatrixXf random_rotation(int dim, double angle_std, Rng& rng) {
  Eigen::MatrixXf rot = Eigen::MatrixXf::Identity(dim, dim);
  if (dim < 2 || angle_std <= 0) return rot;
  std::normal_distribution<double> angle(0.0, angle_std);
  std::uniform_int_distribution<int> axis(0, dim - 1);
  for (int k = 0; k < dim; ++k) {
    int i = axis(rng);
    int j = axis(rng);
    while (j == i) j = axis(rng);
    const double a = angle(rng);
    Eigen::MatrixXf givens = Eigen::MatrixXf::Identity(dim, dim);
    givens(i, i) = static_cast<float>(std::cos(a));
    givens(j, j) = static_cast<float>(std::cos(a));
    givens(i, j) = static_cast<float>(-std::sin(a));
    givens(j, i) = static_cast<float>(std::sin(a));
    rot = givens * rot;
  }
  return rot;
}

Eigen::VectorXf gaussian_vector(int dim, double scale, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::VectorXf v(dim);
  for (int i = 0; i < dim; ++i) v(i) = static_cast<float>(scale * n01(rng));
  return v;
}

}  // namespace

DomainRegistry generate_benchmark(const BenchmarkSpec& spec) {
  if (spec.num_source_domains < 1 || spec.num_target_domains < 1 || spec.num_val_domains < 0 ||
      spec.input_dim < 1 || spec.min_samples < 1 || spec.max_samples < spec.min_samples || spec.num_regions < 1) {
    throw std::invalid_argument("generate_benchmark: counts must be >= 1 and min_samples <= max_samples");
  }
  if (spec.task == TaskKind::classification && spec.num_classes < 2) {
    throw std::invalid_argument("generate_benchmark: classification needs at least 2 classes");
  }
  if (spec.shift_strength < 0) throw std::invalid_argument("generate_benchmark: shift_strength must be >= 0");

  const int dim = spec.input_dim;
  const int mixture = spec.task == TaskKind::classification ? spec.num_classes : std::max(2, spec.num_classes);

  Rng shared(split_seed(spec.seed, 0));
  std::vector<Eigen::VectorXf> prototypes;
  for (int c = 0; c < mixture; ++c) prototypes.push_back(gaussian_vector(dim, spec.class_separation, shared));
  std::vector<Eigen::VectorXf> region_centers;
  for (int r = 0; r < spec.num_regions; ++r) {
    region_centers.push_back(gaussian_vector(dim, spec.translation_scale, shared));
  }
  // Regions also share a base rotation so that same-region domains correlate.
  std::vector<Eigen::MatrixXf> region_rotations;
  for (int r = 0; r < spec.num_regions; ++r) {
    region_rotations.push_back(random_rotation(dim, spec.shift_strength * spec.rotation_scale, shared));
  }
  const Eigen::VectorXf response = gaussian_vector(dim, 1.0 / std::sqrt(static_cast<double>(dim)), shared);

  DomainRegistry reg;
  reg.spec = spec;
  const int total = spec.num_source_domains + spec.num_val_domains + spec.num_target_domains;
  for (int id = 0; id < total; ++id) {
    DomainDataset d;
    d.domain_id = id;
    if (id < spec.num_source_domains) {
      d.split = Split::source;
      reg.source_ids.push_back(id);
    } else if (id < spec.num_source_domains + spec.num_val_domains) {
      d.split = Split::target_val;
      reg.val_ids.push_back(id);
    } else {
      d.split = Split::target_test;
      reg.target_ids.push_back(id);
    }

    Rng rng(split_seed(spec.seed, 1000 + static_cast<std::uint64_t>(id)));
    d.region = std::uniform_int_distribution<int>(0, spec.num_regions - 1)(rng);
    const double s = spec.shift_strength;
    Eigen::MatrixXf rotation =
        random_rotation(dim, 0.5 * s * spec.rotation_scale, rng) * region_rotations[static_cast<std::size_t>(d.region)];
    Eigen::VectorXf translation = static_cast<float>(s) * region_centers[static_cast<std::size_t>(d.region)] +
                                  gaussian_vector(dim, 0.5 * s * spec.translation_scale, rng);
    if (s == 0) {
      rotation.setIdentity();
      translation.setZero();
    }
    const float response_shift = static_cast<float>(s * std::normal_distribution<double>(0.0, 1.0)(rng));

    const int n = std::uniform_int_distribution<int>(spec.min_samples, spec.max_samples)(rng);
    d.inputs.resize(n, dim);
    std::uniform_int_distribution<int> pick(0, mixture - 1);
    std::normal_distribution<double> n01(0.0, 1.0);
    if (spec.task == TaskKind::classification) d.labels.resize(n);
    else d.targets.resize(n);
    d.group_tags.assign(static_cast<std::size_t>(n), d.region);
    for (int i = 0; i < n; ++i) {
      const int c = pick(rng);
      Eigen::VectorXf latent = prototypes[static_cast<std::size_t>(c)] + gaussian_vector(dim, spec.noise, rng);
      d.inputs.row(i) = (rotation * latent + translation).transpose();
      if (spec.task == TaskKind::classification) {
        d.labels(i) = c;
      } else {
        d.targets(i) = response.dot(latent) + response_shift + static_cast<float>(0.1 * n01(rng));
      }
    }
    reg.domains.push_back(std::move(d));
  }
  reg.validate();
  return reg;
}

int SuperDomainMap::expert_of(int domain_id) const {
  auto it = assignment.find(domain_id);
  if (it == assignment.end()) throw std::out_of_range("domain " + std::to_string(domain_id) + " has no expert");
  return it->second;
}

std::vector<std::vector<int>> SuperDomainMap::members() const {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(num_experts));
  for (const auto& [id, e] : assignment) out[static_cast<std::size_t>(e)].push_back(id);
  return out;
}

SuperDomainMap cluster_domains(const DomainRegistry& registry, const std::vector<int>& source_ids, int num_experts,
                               ClusterStrategy strategy, const DomainKey& key) {
  const int count = static_cast<int>(source_ids.size());
  if (num_experts < 1 || num_experts > count) {
    throw std::invalid_argument("cluster_domains: need 1 <= N <= number of source domains (N=" +
                                std::to_string(num_experts) + ", sources=" + std::to_string(count) + ")");
  }
  std::vector<int> ids = source_ids;
  std::sort(ids.begin(), ids.end());
  SuperDomainMap map;
  map.num_experts = num_experts;
  if (strategy == ClusterStrategy::round_robin) {
    for (int i = 0; i < count; ++i) map.assignment[ids[static_cast<std::size_t>(i)]] = i % num_experts;
    return map;
  }
  DomainKey k = key ? key : DomainKey([](const DomainDataset& d) { return d.region; });
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return k(registry.domain(a)) < k(registry.domain(b)); });
  // Contiguous chunks whose sizes differ by at most one.
  for (int i = 0; i < count; ++i) {
    map.assignment[ids[static_cast<std::size_t>(i)]] = static_cast<int>((static_cast<long>(i) * num_experts) / count);
  }
  return map;
}

std::vector<int> sample_without_replacement(int n, int count, Rng& rng) {
  if (count < 0 || count > n) throw std::invalid_argument("sample_without_replacement: count out of range");
  std::vector<int> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < count; ++i) {
    const int j = std::uniform_int_distribution<int>(i, n - 1)(rng);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(count));
  return pool;
}

Eigen::MatrixXf gather_rows(const Eigen::MatrixXf& m, const std::vector<int>& indices) {
  Eigen::MatrixXf out(static_cast<Eigen::Index>(indices.size()), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(indices[i]);
  return out;
}

Episode sample_episode(const DomainDataset& domain, int n_support, int n_query, Rng& rng) {
  if (n_support < 1 || n_query < 1) throw std::invalid_argument("sample_episode: n_su and n_q must be >= 1");
  if (n_support + n_query > domain.num_samples()) {
    throw std::invalid_argument("sample_episode: domain " + std::to_string(domain.domain_id) + " has " +
                                std::to_string(domain.num_samples()) + " samples, episode needs " +
                                std::to_string(n_support + n_query));
  }
  std::vector<int> picked = sample_without_replacement(domain.num_samples(), n_support + n_query, rng);
  Episode ep;
  ep.domain_id = domain.domain_id;
  ep.support_indices.assign(picked.begin(), picked.begin() + n_support);
  ep.query_indices.assign(picked.begin() + n_support, picked.end());
  ep.support_x = gather_rows(domain.inputs, ep.support_indices);
  ep.query_x = gather_rows(domain.inputs, ep.query_indices);
  if (domain.labels.size() > 0) {
    ep.query_y.resize(n_query);
    for (int i = 0; i < n_query; ++i) ep.query_y(i) = domain.labels(ep.query_indices[static_cast<std::size_t>(i)]);
  }
  if (domain.targets.size() > 0) {
    ep.query_targets.resize(n_query);
    for (int i = 0; i < n_query; ++i) {
      ep.query_targets(i) = domain.targets(ep.query_indices[static_cast<std::size_t>(i)]);
    }
  }
  return ep;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

json spec_to_json(const BenchmarkSpec& s) {
  return json{{"num_source_domains", s.num_source_domains},
              {"num_val_domains", s.num_val_domains},
              {"num_target_domains", s.num_target_domains},
              {"num_classes", s.num_classes},
              {"input_dim", s.input_dim},
              {"min_samples", s.min_samples},
              {"max_samples", s.max_samples},
              {"shift_strength", s.shift_strength},
              {"seed", s.seed},
              {"task", to_string(s.task)},
              {"class_separation", s.class_separation},
              {"noise", s.noise},
              {"rotation_scale", s.rotation_scale},
              {"translation_scale", s.translation_scale},
              {"num_regions", s.num_regions}};
}

BenchmarkSpec spec_from_json(const json& j) {
  BenchmarkSpec s;
  s.num_source_domains = j.at("num_source_domains").get<int>();
  s.num_val_domains = j.at("num_val_domains").get<int>();
  s.num_target_domains = j.at("num_target_domains").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  s.input_dim = j.at("input_dim").get<int>();
  s.min_samples = j.at("min_samples").get<int>();
  s.max_samples = j.at("max_samples").get<int>();
  s.shift_strength = j.at("shift_strength").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.task = task_kind_from_string(j.at("task").get<std::string>());
  s.class_separation = j.at("class_separation").get<double>();
  s.noise = j.at("noise").get<double>();
  s.rotation_scale = j.at("rotation_scale").get<double>();
  s.translation_scale = j.at("translation_scale").get<double>();
  s.num_regions = j.at("num_regions").get<int>();
  return s;
}

std::string stem(int id) { return "domain_" + std::to_string(id); }

}  // namespace

void save_registry(const DomainRegistry& registry, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json doc;
  doc["format"] = "metadmoe-registry/1";
  doc["spec"] = spec_to_json(registry.spec);
  doc["seed"] = registry.spec.seed;
  doc["source_ids"] = registry.source_ids;
  doc["val_ids"] = registry.val_ids;
  doc["target_ids"] = registry.target_ids;
  json domains = json::array();
  for (const auto& d : registry.domains) {
    json entry{{"domain_id", d.domain_id},
               {"split", to_string(d.split)},
               {"region", d.region},
               {"num_samples", d.num_samples()},
               {"input_dim", d.inputs.cols()},
               {"inputs_file", stem(d.domain_id) + "_x.f32"}};
    // Inputs row-major.
    std::vector<float> x;
    x.reserve(static_cast<std::size_t>(d.inputs.size()));
    for (Eigen::Index r = 0; r < d.inputs.rows(); ++r) {
      for (Eigen::Index c = 0; c < d.inputs.cols(); ++c) x.push_back(d.inputs(r, c));
    }
    io::write_array(dir / (stem(d.domain_id) + "_x.f32"), x);
    if (registry.task() == TaskKind::classification) {
      std::vector<std::int32_t> y(d.labels.data(), d.labels.data() + d.labels.size());
      io::write_array(dir / (stem(d.domain_id) + "_y.i32"), y);
      entry["labels_file"] = stem(d.domain_id) + "_y.i32";
    } else {
      std::vector<float> y(d.targets.data(), d.targets.data() + d.targets.size());
      io::write_array(dir / (stem(d.domain_id) + "_y.f32"), y);
      entry["labels_file"] = stem(d.domain_id) + "_y.f32";
    }
    std::vector<std::int32_t> g(d.group_tags.begin(), d.group_tags.end());
    io::write_array(dir / (stem(d.domain_id) + "_g.i32"), g);
    entry["groups_file"] = stem(d.domain_id) + "_g.i32";
    domains.push_back(std::move(entry));
  }
  doc["domains"] = std::move(domains);
  io::write_text(dir / "registry.json", doc.dump(2) + "\n");
}

DomainRegistry load_registry(const std::filesystem::path& dir) {
  const json doc = json::parse(io::read_text(dir / "registry.json"));
  DomainRegistry reg;
  reg.spec = spec_from_json(doc.at("spec"));
  reg.source_ids = doc.at("source_ids").get<std::vector<int>>();
  reg.val_ids = doc.at("val_ids").get<std::vector<int>>();
  reg.target_ids = doc.at("target_ids").get<std::vector<int>>();
  for (const auto& entry : doc.at("domains")) {
    DomainDataset d;
    d.domain_id = entry.at("domain_id").get<int>();
    d.split = split_from_string(entry.at("split").get<std::string>());
    d.region = entry.at("region").get<int>();
    const int n = entry.at("num_samples").get<int>();
    const int dim = entry.at("input_dim").get<int>();
    std::vector<float> x = io::read_array<float>(dir / entry.at("inputs_file").get<std::string>());
    if (x.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(dim)) {
      throw std::runtime_error("input file size mismatch for domain " + std::to_string(d.domain_id));
    }
    d.inputs.resize(n, dim);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < dim; ++c) d.inputs(r, c) = x[static_cast<std::size_t>(r) * dim + c];
    }
    const std::string labels_file = entry.at("labels_file").get<std::string>();
    if (reg.task() == TaskKind::classification) {
      auto y = io::read_array<std::int32_t>(dir / labels_file);
      d.labels = Eigen::Map<const Eigen::VectorXi>(y.data(), static_cast<Eigen::Index>(y.size()));
    } else {
      auto y = io::read_array<float>(dir / labels_file);
      d.targets = Eigen::Map<const Eigen::VectorXf>(y.data(), static_cast<Eigen::Index>(y.size()));
    }
    auto g = io::read_array<std::int32_t>(dir / entry.at("groups_file").get<std::string>());
    d.group_tags.assign(g.begin(), g.end());
    reg.domains.push_back(std::move(d));
  }
  reg.validate();
  return reg;
}

}  // namespace metadmoe
