#include "metadmoe/adapt.hpp"
#include "metadmoe/metatrain.hpp"
#include "metadmoe/nets.hpp"

#include <stdexcept>

namespace metadmoe {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::tanh:
      return "tanh";
    case Activation::linear:
      return "linear";
  }
  return "relu";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "linear") return Activation::linear;
  throw std::invalid_argument("unknown activation: " + s);
}

std::string to_string(AggregatorKind k) {
  switch (k) {
    case AggregatorKind::transformer:
      return "transformer";
    case AggregatorKind::max:
      return "max";
    case AggregatorKind::avg:
      return "avg";
    case AggregatorKind::mlp_ws:
      return "mlp_ws";
    case AggregatorKind::mlp_p:
      return "mlp_p";
  }
  return "transformer";
}

AggregatorKind aggregator_kind_from_string(const std::string& s) {
  if (s == "transformer") return AggregatorKind::transformer;
  if (s == "max") return AggregatorKind::max;
  if (s == "avg") return AggregatorKind::avg;
  if (s == "mlp_ws") return AggregatorKind::mlp_ws;
  if (s == "mlp_p") return AggregatorKind::mlp_p;
  throw std::invalid_argument("unknown aggregator kind: " + s);
}

std::string to_string(DistillTarget t) {
  switch (t) {
    case DistillTarget::features:
      return "features";
    case DistillTarget::logits:
      return "logits";
    case DistillTarget::both:
      return "both";
  }
  return "features";
}

DistillTarget distill_target_from_string(const std::string& s) {
  if (s == "features") return DistillTarget::features;
  if (s == "logits") return DistillTarget::logits;
  if (s == "both") return DistillTarget::both;
  throw std::invalid_argument("unknown distill target: " + s);
}

std::string to_string(DistillLoss l) { return l == DistillLoss::mean_squared ? "mean_squared" : "l2_norm"; }

DistillLoss distill_loss_from_string(const std::string& s) {
  if (s == "mean_squared") return DistillLoss::mean_squared;
  if (s == "l2_norm") return DistillLoss::l2_norm;
  throw std::invalid_argument("unknown distill loss: " + s);
}

std::string to_string(StageInit s) {
  switch (s) {
    case StageInit::random:
      return "random";
    case StageInit::pretrain:
      return "pretrain";
    case StageInit::meta:
      return "meta";
  }
  return "meta";
}

StageInit stage_init_from_string(const std::string& s) {
  if (s == "random") return StageInit::random;
  if (s == "pretrain") return StageInit::pretrain;
  if (s == "meta") return StageInit::meta;
  throw std::invalid_argument("unknown training stage: " + s);
}

TrainScheme TrainScheme::parse(const std::string& s) {
  const auto slash = s.find('/');
  if (slash == std::string::npos) throw std::invalid_argument("train scheme must look like aggregator/student: " + s);
  return {stage_init_from_string(s.substr(0, slash)), stage_init_from_string(s.substr(slash + 1))};
}

std::string to_string(ExpertDataMode m) { return m == ExpertDataMode::redistribute ? "redistribute" : "subsample"; }

ExpertDataMode expert_data_mode_from_string(const std::string& s) {
  if (s == "redistribute") return ExpertDataMode::redistribute;
  if (s == "subsample") return ExpertDataMode::subsample;
  throw std::invalid_argument("unknown expert data mode: " + s);
}

}  // namespace metadmoe
