#include "metadmoe/io.hpp"
#include "metadmoe/runner.hpp"

#include <set>
#include <stdexcept>

namespace metadmoe {

using nlohmann::json;

namespace {

/// Reads known keys of one config section and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw std::invalid_argument("config: " + path_ + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& field) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: " + path_ + "." + key + ": " + e.what());
    }
  }

  template <typename E, typename Parse>
  void read_enum(const char* key, E& field, Parse parse) {
    std::string name;
    read(key, name);
    if (!name.empty()) field = parse(name);
  }

  Section child(const char* key) {
    used_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (used_.count(key) == 0) throw std::invalid_argument("config: unknown key " + path_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_supervised(Section s, SupervisedConfig& c) {
  s.read("epochs", c.epochs);
  s.read("lr", c.lr);
  s.read("batch_size", c.batch_size);
  s.read("lr_decay", c.lr_decay);
  s.read("per_domain_batches", c.per_domain_batches);
  s.read("norm_momentum", c.norm_momentum);
  s.finish();
}

json supervised_json(const SupervisedConfig& c) {
  return {{"epochs", c.epochs},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"lr_decay", c.lr_decay},
          {"per_domain_batches", c.per_domain_batches},
          {"norm_momentum", c.norm_momentum}};
}

std::string to_string(ClusterStrategy s) { return s == ClusterStrategy::round_robin ? "round_robin" : "metadata_key"; }

ClusterStrategy cluster_strategy_from_string(const std::string& s) {
  if (s == "round_robin") return ClusterStrategy::round_robin;
  if (s == "metadata_key") return ClusterStrategy::metadata_key;
  throw std::invalid_argument("unknown cluster strategy: " + s);
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  data.num_source_domains = 20;
  data.num_val_domains = 3;
  data.num_target_domains = 6;
  data.num_classes = 5;
  data.input_dim = 16;
  data.min_samples = 100;
  data.max_samples = 300;
  data.shift_strength = 1.0;
  data.class_separation = 1.5;

  expert_training.epochs = 20;
  expert_training.lr = 3e-3;
  expert_training.batch_size = 32;

  student.hidden_dims = {64};
  student.feature_dim = 32;
  student.activation = Activation::relu;

  aggregator.kind = AggregatorKind::transformer;
  aggregator.heads = 4;

  adapt.alpha = 0.02;
  adapt.n_support = 24;

  pretrain.student.epochs = 15;
  pretrain.student.lr = 3e-3;
  pretrain.student.batch_size = 32;
  pretrain.aggregator.epochs = 5;
  pretrain.aggregator.lr = 3e-3;
  pretrain.aggregator.batch_size = 32;

  meta.meta_batch = 4;
  meta.beta_s = 1e-3;
  meta.beta_a = 1e-3;
  meta.epochs = 15;
  meta.n_query = 16;

  baseline_training = pretrain.student;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "config");
  root.read("seed", c.seed);
  root.read("strict", c.strict);
  root.read("privacy_fraction", c.privacy_fraction);
  {
    Section s = root.child("data");
    s.read("num_source_domains", c.data.num_source_domains);
    s.read("num_val_domains", c.data.num_val_domains);
    s.read("num_target_domains", c.data.num_target_domains);
    s.read("num_classes", c.data.num_classes);
    s.read("input_dim", c.data.input_dim);
    s.read("min_samples", c.data.min_samples);
    s.read("max_samples", c.data.max_samples);
    s.read("shift_strength", c.data.shift_strength);
    s.read_enum("task", c.data.task, task_kind_from_string);
    s.read("class_separation", c.data.class_separation);
    s.read("noise", c.data.noise);
    s.read("rotation_scale", c.data.rotation_scale);
    s.read("translation_scale", c.data.translation_scale);
    s.read("num_regions", c.data.num_regions);
    s.finish();
  }
  {
    Section s = root.child("experts");
    s.read("num_experts", c.num_experts);
    s.read_enum("cluster", c.cluster, cluster_strategy_from_string);
    s.read_enum("data_mode", c.expert_data, expert_data_mode_from_string);
    read_supervised(s.child("training"), c.expert_training);
    s.finish();
  }
  {
    Section s = root.child("student");
    s.read("hidden_dims", c.student.hidden_dims);
    s.read("feature_dim", c.student.feature_dim);
    s.read_enum("activation", c.student.activation, activation_from_string);
    s.finish();
  }
  {
    Section s = root.child("aggregator");
    s.read_enum("kind", c.aggregator.kind, aggregator_kind_from_string);
    s.read("heads", c.aggregator.heads);
    s.read("head_dim", c.aggregator.head_dim);
    s.read("inner_dim", c.aggregator.inner_dim);
    s.read("ln_eps", c.aggregator.ln_eps);
    s.finish();
  }
  {
    Section s = root.child("adapt");
    s.read("alpha", c.adapt.alpha);
    s.read("num_inner_steps", c.adapt.num_inner_steps);
    s.read_enum("target", c.adapt.target, distill_target_from_string);
    s.read_enum("loss", c.adapt.loss, distill_loss_from_string);
    s.read("second_order", c.adapt.second_order);
    s.read("temperature", c.adapt.temperature);
    s.read("n_support", c.adapt.n_support);
    s.finish();
  }
  {
    Section s = root.child("pretrain");
    read_supervised(s.child("student"), c.pretrain.student);
    read_supervised(s.child("aggregator"), c.pretrain.aggregator);
    s.finish();
  }
  {
    Section s = root.child("meta");
    s.read("meta_batch", c.meta.meta_batch);
    s.read("beta_s", c.meta.beta_s);
    s.read("beta_a", c.meta.beta_a);
    s.read("epochs", c.meta.epochs);
    s.read("lr_decay", c.meta.lr_decay);
    s.read("mask_overlap", c.meta.mask_overlap);
    s.read("n_query", c.meta.n_query);
    s.read("steps_per_epoch", c.meta.steps_per_epoch);
    s.read("patience", c.meta.patience);
    std::string scheme;
    s.read("scheme", scheme);
    if (!scheme.empty()) c.scheme = TrainScheme::parse(scheme);
    s.finish();
  }
  read_supervised(root.child("baselines"), c.baseline_training);
  {
    Section s = root.child("eval");
    s.read("dump_embeddings", c.eval.dump_embeddings);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["strict"] = strict;
  j["privacy_fraction"] = privacy_fraction;
  j["data"] = {{"num_source_domains", data.num_source_domains},
               {"num_val_domains", data.num_val_domains},
               {"num_target_domains", data.num_target_domains},
               {"num_classes", data.num_classes},
               {"input_dim", data.input_dim},
               {"min_samples", data.min_samples},
               {"max_samples", data.max_samples},
               {"shift_strength", data.shift_strength},
               {"task", metadmoe::to_string(data.task)},
               {"class_separation", data.class_separation},
               {"noise", data.noise},
               {"rotation_scale", data.rotation_scale},
               {"translation_scale", data.translation_scale},
               {"num_regions", data.num_regions}};
  j["experts"] = {{"num_experts", num_experts},
                  {"cluster", to_string(cluster)},
                  {"data_mode", metadmoe::to_string(expert_data)},
                  {"training", supervised_json(expert_training)}};
  j["student"] = {{"hidden_dims", student.hidden_dims},
                  {"feature_dim", student.feature_dim},
                  {"activation", metadmoe::to_string(student.activation)}};
  j["aggregator"] = {{"kind", metadmoe::to_string(aggregator.kind)},
                     {"heads", aggregator.heads},
                     {"head_dim", aggregator.head_dim},
                     {"inner_dim", aggregator.inner_dim},
                     {"ln_eps", aggregator.ln_eps}};
  j["adapt"] = {{"alpha", adapt.alpha},
                {"num_inner_steps", adapt.num_inner_steps},
                {"target", metadmoe::to_string(adapt.target)},
                {"loss", metadmoe::to_string(adapt.loss)},
                {"second_order", adapt.second_order},
                {"temperature", adapt.temperature},
                {"n_support", adapt.n_support}};
  j["pretrain"] = {{"student", supervised_json(pretrain.student)},
                   {"aggregator", supervised_json(pretrain.aggregator)}};
  j["meta"] = {{"meta_batch", meta.meta_batch},
               {"beta_s", meta.beta_s},
               {"beta_a", meta.beta_a},
               {"epochs", meta.epochs},
               {"lr_decay", meta.lr_decay},
               {"mask_overlap", meta.mask_overlap},
               {"n_query", meta.n_query},
               {"steps_per_epoch", meta.steps_per_epoch},
               {"patience", meta.patience},
               {"scheme", scheme.name()}};
  j["baselines"] = supervised_json(baseline_training);
  j["eval"] = {{"dump_embeddings", eval.dump_embeddings}};
  return j;
}

std::string ExperimentConfig::canonical() const { return to_json().dump(); }

std::string ExperimentConfig::hash() const {
  Fnv1a h;
  h.update(canonical());
  return hex_digest(h.value());
}

BenchmarkSpec ExperimentConfig::resolved_data() const {
  BenchmarkSpec s = data;
  s.seed = phase_seed(seed, SeedStream::data);
  return s;
}

Architecture ExperimentConfig::architecture() const {
  Architecture a;
  a.student = student;
  a.student.input_dim = data.input_dim;
  a.student.regression = data.task == TaskKind::regression;
  a.student.num_classes = a.student.regression ? 1 : data.num_classes;
  a.student.feature_norm = false;
  a.aggregator = aggregator;
  a.aggregator.num_experts = num_experts;
  a.aggregator.token_dim = student.feature_dim;
  a.aggregator.expert_dim = 0;
  a.aggregator.output_dim = 0;
  return a;
}

MetaConfig ExperimentConfig::resolved_meta() const {
  MetaConfig m = meta;
  m.adapt = adapt;
  m.adapt.strict = strict;
  m.update_aggregator = scheme.aggregator == StageInit::meta;
  m.update_student = scheme.student == StageInit::meta;
  m.seed = phase_seed(seed, SeedStream::meta);
  return m;
}

StudentConfig ExperimentConfig::arm_bn_config() const {
  StudentConfig s = architecture().student;
  s.feature_norm = true;
  return s;
}

void ExperimentConfig::validate() const {
  const Architecture a = architecture();
  a.student.validate();
  a.aggregator.validate();
  resolved_meta().validate();
  if (num_experts < 1 || num_experts > data.num_source_domains) {
    throw std::invalid_argument("config: experts.num_experts must be in [1, data.num_source_domains]");
  }
  if (!(privacy_fraction > 0 && privacy_fraction < 1)) {
    throw std::invalid_argument("config: privacy_fraction must be in (0, 1)");
  }
  for (const SupervisedConfig* s : {&expert_training, &pretrain.student, &pretrain.aggregator, &baseline_training}) {
    if (s->epochs < 0 || s->batch_size < 1 || !(s->lr > 0)) {
      throw std::invalid_argument("config: supervised sections need epochs >= 0, batch_size >= 1, lr > 0");
    }
  }
  if (adapt.n_support + meta.n_query > data.min_samples) {
    throw std::invalid_argument("config: adapt.n_support + meta.n_query exceeds data.min_samples");
  }
}

}  // namespace metadmoe
