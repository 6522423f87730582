#include "metadmoe/runner.hpp"

#include <stdexcept>

namespace metadmoe {

using nlohmann::json;

std::string to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::num_experts:
      return "num_experts";
    case AblationAxis::aggregator_kind:
      return "aggregator_kind";
    case AblationAxis::distill_target:
      return "distill_target";
    case AblationAxis::train_scheme:
      return "train_scheme";
    case AblationAxis::mask_overlap:
      return "mask_overlap";
    case AblationAxis::n_su:
      return "n_su";
  }
  return "num_experts";
}

AblationAxis ablation_axis_from_string(const std::string& s) {
  for (AblationAxis a : {AblationAxis::num_experts, AblationAxis::aggregator_kind, AblationAxis::distill_target,
                         AblationAxis::train_scheme, AblationAxis::mask_overlap, AblationAxis::n_su}) {
    if (to_string(a) == s) return a;
  }
  throw std::invalid_argument("unknown ablation axis: " + s);
}

void AblationSpec::validate() const {
  if (values.empty()) throw std::invalid_argument("AblationSpec: values must be non-empty");
  if (repeats < 1) throw std::invalid_argument("AblationSpec: repeats must be >= 1");
}

AblationSpec AblationSpec::from_json(const json& j) {
  AblationSpec s;
  s.axis = ablation_axis_from_string(j.at("axis").get<std::string>());
  for (const auto& v : j.at("values")) s.values.push_back(v);
  s.repeats = j.value("repeats", 1);
  for (const auto& [key, value] : j.items()) {
    if (key != "axis" && key != "values" && key != "repeats") {
      throw std::invalid_argument("AblationSpec: unknown key " + key);
    }
  }
  s.validate();
  return s;
}

json AblationSpec::to_json() const { return {{"axis", to_string(axis)}, {"values", values}, {"repeats", repeats}}; }

ExperimentConfig apply_axis(const ExperimentConfig& base, AblationAxis axis, const json& value) {
  ExperimentConfig c = base;
  try {
    switch (axis) {
      case AblationAxis::num_experts:
        c.num_experts = value.get<int>();
        break;
      case AblationAxis::aggregator_kind:
        c.aggregator.kind = aggregator_kind_from_string(value.get<std::string>());
        break;
      case AblationAxis::distill_target:
        c.adapt.target = distill_target_from_string(value.get<std::string>());
        break;
      case AblationAxis::train_scheme:
        c.scheme = TrainScheme::parse(value.get<std::string>());
        break;
      case AblationAxis::mask_overlap:
        c.meta.mask_overlap = value.get<bool>();
        break;
      case AblationAxis::n_su:
        c.adapt.n_support = value.get<int>();
        break;
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument("ablation value " + value.dump() + " does not fit axis " + to_string(axis) + ": " +
                                e.what());
  }
  c.validate();
  return c;
}

std::string axis_value_label(const json& value) { return value.is_string() ? value.get<std::string>() : value.dump(); }

AblationResult run_ablation(const AblationSpec& spec, const ExperimentConfig& base, PipelineCache* cache) {
  spec.validate();
  PipelineCache local;
  PipelineCache& c = cache != nullptr ? *cache : local;
  AblationResult result;
  result.spec = spec;
  for (const json& value : spec.values) {
    for (int r = 0; r < spec.repeats; ++r) {
      const std::uint64_t seed = base.seed + static_cast<std::uint64_t>(r);
      try {
        ExperimentConfig cfg = apply_axis(base, spec.axis, value);
        cfg.seed = seed;
        RunRecord rec = run_pipeline(cfg, &c).record;
        rec.axis = to_string(spec.axis);
        rec.axis_value = axis_value_label(value);
        result.records.push_back(std::move(rec));
      } catch (const std::exception& e) {
        result.failures.push_back({axis_value_label(value), seed, e.what()});
      }
    }
  }
  return result;
}

}  // namespace metadmoe
