#include "cirm/models.hpp"

#include <algorithm>
#include <cmath>

#include "cirm/error.hpp"
#include "cirm/nd/checkpoint.hpp"
#include "cirm/nd/losses.hpp"

namespace cirm {

using nlohmann::json;

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::sequential: return "sequential";
    case ModelKind::independent: return "independent";
    case ModelKind::joint: return "joint";
    case ModelKind::cem: return "cem";
    case ModelKind::intcem: return "intcem";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "sequential") return ModelKind::sequential;
  if (s == "independent") return ModelKind::independent;
  if (s == "joint") return ModelKind::joint;
  if (s == "cem") return ModelKind::cem;
  if (s == "intcem") return ModelKind::intcem;
  throw ValueError("unknown model kind '" + s + "'");
}

bool is_cbm(ModelKind kind) {
  return kind == ModelKind::sequential || kind == ModelKind::independent ||
         kind == ModelKind::joint;
}

std::size_t default_hidden_width(std::size_t k) { return std::max<std::size_t>(2 * k, 32); }

std::string to_string(CbmScheme s) {
  switch (s) {
    case CbmScheme::independent: return "independent";
    case CbmScheme::sequential: return "sequential";
    case CbmScheme::joint: return "joint";
  }
  return "?";
}

CbmScheme cbm_scheme_from_string(const std::string& s) {
  if (s == "independent") return CbmScheme::independent;
  if (s == "sequential") return CbmScheme::sequential;
  if (s == "joint") return CbmScheme::joint;
  throw ValueError("unknown training scheme '" + s + "'");
}

namespace {

std::vector<std::size_t> stack_dims(std::size_t in, std::size_t width, std::size_t layers,
                                    std::size_t out) {
  std::vector<std::size_t> dims{in};
  for (std::size_t i = 0; i < layers; ++i) dims.push_back(width);
  dims.push_back(out);
  return dims;
}

void check_dims(std::size_t d, std::size_t k, std::size_t M) {
  if (d == 0 || k == 0 || M == 0) {
    throw ValueError("model dimensions (d, k, M) must all be >= 1");
  }
}

void check_input(std::span<const double> x, std::size_t d) {
  if (x.size() != d) {
    throw ShapeError("input has dim " + std::to_string(x.size()) + ", expected d=" +
                     std::to_string(d));
  }
}

void check_trainable(const ConceptModel& m) {
  if (m.frozen()) throw StateError("model is frozen; unfreeze before training");
}

void check_dataset(const Dataset& data, const std::string& what) {
  if (data.empty()) throw ValueError(what + ": empty dataset");
}

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

}  // namespace

// ----------------------------------------------------------------------------
// CBM

CbmModel::CbmModel(CbmConfig config) : config_(std::move(config)) {
  check_dims(config_.input_dim, config_.num_concepts, config_.num_classes);
  if (config_.hidden_width == 0) config_.hidden_width = default_hidden_width(config_.num_concepts);
  if (!config_.concept_weights.empty() &&
      config_.concept_weights.size() != config_.num_concepts) {
    throw ValueError("concept_weights must hold k entries");
  }
  encoder_ = Mlp("g", stack_dims(config_.input_dim, config_.hidden_width,
                                 config_.hidden_layers, config_.num_concepts));
  head_ = Mlp("f", stack_dims(config_.num_concepts, config_.hidden_width,
                              config_.hidden_layers, config_.num_classes));
}

void CbmModel::init(std::uint64_t seed) {
  Rng rng = make_rng(seed, 11);
  encoder_.init(rng);
  head_.init(rng);
  seed_ = seed;
}

ModelKind CbmModel::kind() const {
  switch (config_.scheme) {
    case CbmScheme::independent: return ModelKind::independent;
    case CbmScheme::sequential: return ModelKind::sequential;
    case CbmScheme::joint: return ModelKind::joint;
  }
  return ModelKind::sequential;
}

Vec CbmModel::concept_probs(std::span<const double> x, MlpCache* cache) const {
  check_input(x, config_.input_dim);
  return sigmoid(encoder_.forward(x, cache));
}

Vec CbmModel::head_logits(std::span<const double> c, MlpCache* cache) const {
  if (c.size() != config_.num_concepts) {
    throw ShapeError("concept vector has dim " + std::to_string(c.size()) +
                     ", expected k=" + std::to_string(config_.num_concepts));
  }
  return head_.forward(c, cache);
}

ConceptPrediction CbmModel::predict_concepts(std::span<const double> x) const {
  return {concept_probs(x), {}, {}};
}

Vec CbmModel::predict_logits(const ConceptPrediction&, std::span<const double> concepts) const {
  return head_logits(concepts);
}

ParamRefs CbmModel::parameters() {
  ParamRefs out = encoder_.parameters();
  for (ParamTensor* p : head_.parameters()) out.push_back(p);
  return out;
}

ConstParamRefs CbmModel::parameters() const {
  ConstParamRefs out = encoder_.parameters();
  for (const ParamTensor* p : head_.parameters()) out.push_back(p);
  return out;
}

json CbmModel::config_json() const {
  return {{"kind", to_string(kind())},
          {"input_dim", config_.input_dim},
          {"num_concepts", config_.num_concepts},
          {"num_classes", config_.num_classes},
          {"hidden_width", config_.hidden_width},
          {"hidden_layers", config_.hidden_layers},
          {"scheme", to_string(config_.scheme)},
          {"concept_loss_weight", config_.concept_loss_weight},
          {"concept_weights", config_.concept_weights}};
}

std::unique_ptr<ConceptModel> CbmModel::clone() const {
  return std::make_unique<CbmModel>(*this);
}

CbmOutput cbm_forward(const CbmModel& model, std::span<const double> x) {
  CbmOutput out;
  out.concepts = model.concept_probs(x);
  out.logits = model.head_logits(out.concepts);
  return out;
}

double cbm_joint_loss(CbmModel& model, const SampleRecord& s, bool accumulate,
                      double grad_scale) {
  const auto& cfg = model.config();
  MlpCache gc, fc;
  const Vec probs = model.concept_probs(s.x, &gc);
  const Vec logits = model.head_logits(probs, &fc);
  const LossGrad task = ce_loss_grad(logits, s.y);
  const LossGrad conc = bce_loss_grad(probs, s.c, cfg.concept_weights);
  const double loss = task.value + cfg.concept_loss_weight * conc.value;
  if (accumulate) {
    Vec dl = task.grad;
    for (double& v : dl) v *= grad_scale;
    Vec dp = model.head().backward(fc, dl);
    for (std::size_t i = 0; i < dp.size(); ++i) {
      dp[i] += grad_scale * cfg.concept_loss_weight * conc.grad[i];
    }
    model.encoder().backward(gc, sigmoid_backward(probs, dp));
  }
  return loss;
}

namespace {

double encoder_loss(CbmModel& model, const SampleRecord& s, bool accumulate, double scale) {
  MlpCache gc;
  const Vec probs = model.concept_probs(s.x, &gc);
  const LossGrad conc = bce_loss_grad(probs, s.c, model.config().concept_weights);
  if (accumulate) {
    Vec dp = conc.grad;
    for (double& v : dp) v *= scale;
    model.encoder().backward(gc, sigmoid_backward(probs, dp));
  }
  return conc.value;
}

double head_loss(CbmModel& model, std::span<const double> input, std::size_t y,
                 bool accumulate, double scale) {
  MlpCache fc;
  const Vec logits = model.head_logits(input, &fc);
  const LossGrad task = ce_loss_grad(logits, y);
  if (accumulate) {
    Vec dl = task.grad;
    for (double& v : dl) v *= scale;
    model.head().backward(fc, dl);
  }
  return task.value;
}

}  // namespace

TrainHistory train_cbm_encoder(CbmModel& model, const Dataset& train, const Dataset& val,
                               const TrainConfig& config, std::uint64_t seed) {
  check_trainable(model);
  check_dataset(train, "train_cbm");
  check_dataset(val, "train_cbm (validation)");
  Rng rng = make_rng(seed, 21);
  TrainHistory history;
  auto batch = [&](std::span<const std::size_t> idx) {
    const double scale = 1.0 / static_cast<double>(idx.size());
    double total = 0.0;
    for (std::size_t i : idx) total += encoder_loss(model, train[i], true, scale);
    return total * scale;
  };
  auto validate = [&] {
    double total = 0.0;
    for (const auto& s : val) total += encoder_loss(model, s, false, 0.0);
    return total / static_cast<double>(val.size());
  };
  run_training("concept-encoder", model.encoder().parameters(), train.size(), batch,
               validate, config, rng, history);
  return history;
}

TrainHistory train_cbm_head(CbmModel& model, const Dataset& train, const Dataset& val,
                            bool use_ground_truth, const CbmTrainOptions& options,
                            std::uint64_t seed) {
  check_trainable(model);
  check_dataset(train, "train_cbm");
  check_dataset(val, "train_cbm (validation)");
  auto inputs_for = [&](const Dataset& data) {
    std::vector<Vec> in;
    in.reserve(data.size());
    for (const auto& s : data) in.push_back(use_ground_truth ? s.c : model.concept_probs(s.x));
    return in;
  };
  const std::vector<Vec> train_in = inputs_for(train);
  const std::vector<Vec> val_in = inputs_for(val);
  Rng rng = make_rng(seed, 22);
  TrainHistory history;
  auto batch = [&](std::span<const std::size_t> idx) {
    const double scale = 1.0 / static_cast<double>(idx.size());
    double total = 0.0;
    for (std::size_t i : idx) {
      if (options.head_input_trace) options.head_input_trace(train_in[i]);
      total += head_loss(model, train_in[i], train[i].y, true, scale);
    }
    return total * scale;
  };
  auto validate = [&] {
    double total = 0.0;
    for (std::size_t i = 0; i < val.size(); ++i) {
      if (options.head_input_trace) options.head_input_trace(val_in[i]);
      total += head_loss(model, val_in[i], val[i].y, false, 0.0);
    }
    return total / static_cast<double>(val.size());
  };
  run_training("label-head", model.head().parameters(), train.size(), batch, validate,
               options.train, rng, history);
  return history;
}

TrainHistory train_cbm(CbmModel& model, const Dataset& train, const Dataset& val,
                       const CbmTrainOptions& options, std::uint64_t seed) {
  check_trainable(model);
  check_dataset(train, "train_cbm");
  check_dataset(val, "train_cbm (validation)");
  model.init(seed);
  TrainHistory history;
  switch (model.config().scheme) {
    case CbmScheme::independent:
    case CbmScheme::sequential: {
      history = train_cbm_encoder(model, train, val, options.train, seed);
      const bool gt = model.config().scheme == CbmScheme::independent;
      const TrainHistory h = train_cbm_head(model, train, val, gt, options, seed);
      history.insert(history.end(), h.begin(), h.end());
      break;
    }
    case CbmScheme::joint: {
      Rng rng = make_rng(seed, 23);
      auto batch = [&](std::span<const std::size_t> idx) {
        const double scale = 1.0 / static_cast<double>(idx.size());
        double total = 0.0;
        for (std::size_t i : idx) total += cbm_joint_loss(model, train[i], true, scale);
        return total * scale;
      };
      auto validate = [&] {
        double total = 0.0;
        for (const auto& s : val) total += cbm_joint_loss(model, s, false);
        return total / static_cast<double>(val.size());
      };
      run_training("joint", model.parameters(), train.size(), batch, validate,
                   options.train, rng, history);
      break;
    }
  }
  return history;
}

// ----------------------------------------------------------------------------
// CEM

CemModel::CemModel(CemConfig config) : config_(std::move(config)) {
  check_dims(config_.input_dim, config_.num_concepts, config_.num_classes);
  if (config_.embedding_width == 0) throw ValueError("embedding_width must be >= 1");
  if (config_.hidden_width == 0) config_.hidden_width = default_hidden_width(config_.num_concepts);
  if (!config_.concept_weights.empty() &&
      config_.concept_weights.size() != config_.num_concepts) {
    throw ValueError("concept_weights must hold k entries");
  }
  const std::size_t k = config_.num_concepts;
  const std::size_t m = config_.embedding_width;
  const std::size_t W = config_.hidden_width;
  backbone_ = Mlp("phi.backbone", {config_.input_dim, W, W});
  for (std::size_t i = 0; i < k; ++i) {
    pos_heads_.emplace_back("phi_pos." + std::to_string(i), W, m);
    neg_heads_.emplace_back("phi_neg." + std::to_string(i), W, m);
  }
  scorer_ = Linear("s", 2 * m, 1);
  head_ = Mlp("f", stack_dims(k * m, W, config_.hidden_layers, config_.num_classes));
  policy_ = Linear("policy", k, k);
}

void CemModel::init(std::uint64_t seed) {
  Rng rng = make_rng(seed, 12);
  backbone_.init(rng);
  for (auto& l : pos_heads_) l.init(rng);
  for (auto& l : neg_heads_) l.init(rng);
  scorer_.init(rng);
  head_.init(rng);
  policy_.init(rng);
  seed_ = seed;
}

ModelKind CemModel::kind() const {
  return config_.intervention_aware ? ModelKind::intcem : ModelKind::cem;
}

ConceptPrediction CemModel::encode(std::span<const double> x, CemEncodeCache* cache) const {
  check_input(x, config_.input_dim);
  const std::size_t k = config_.num_concepts;
  const std::size_t m = config_.embedding_width;
  CemEncodeCache local;
  CemEncodeCache& c = cache ? *cache : local;
  c.latent_pre = backbone_.forward(x, &c.backbone);
  c.latent = relu(c.latent_pre);
  ConceptPrediction pred;
  pred.probs.resize(k);
  pred.c_plus.resize(k * m);
  pred.c_minus.resize(k * m);
  Vec joined(2 * m);
  for (std::size_t i = 0; i < k; ++i) {
    const Vec cp = pos_heads_[i].forward(c.latent);
    const Vec cm = neg_heads_[i].forward(c.latent);
    std::copy(cp.begin(), cp.end(), pred.c_plus.begin() + i * m);
    std::copy(cm.begin(), cm.end(), pred.c_minus.begin() + i * m);
    std::copy(cp.begin(), cp.end(), joined.begin());
    std::copy(cm.begin(), cm.end(), joined.begin() + m);
    pred.probs[i] = sigmoid(scorer_.forward(joined)[0]);
  }
  return pred;
}

void CemModel::encode_backward(const CemEncodeCache& cache, const ConceptPrediction& pred,
                               std::span<const double> d_c_plus,
                               std::span<const double> d_c_minus,
                               std::span<const double> d_probs) {
  const std::size_t k = config_.num_concepts;
  const std::size_t m = config_.embedding_width;
  Vec d_latent(cache.latent.size(), 0.0);
  Vec joined(2 * m);
  Vec dcp(m), dcm(m);
  for (std::size_t i = 0; i < k; ++i) {
    const double p = pred.probs[i];
    const double d_logit = d_probs[i] * p * (1.0 - p);
    std::copy_n(pred.c_plus.begin() + i * m, m, joined.begin());
    std::copy_n(pred.c_minus.begin() + i * m, m, joined.begin() + m);
    const double d_out[1] = {d_logit};
    const Vec d_joined = scorer_.backward(joined, d_out);
    for (std::size_t j = 0; j < m; ++j) {
      dcp[j] = d_c_plus[i * m + j] + d_joined[j];
      dcm[j] = d_c_minus[i * m + j] + d_joined[m + j];
    }
    const Vec a = pos_heads_[i].backward(cache.latent, dcp);
    const Vec b = neg_heads_[i].backward(cache.latent, dcm);
    for (std::size_t j = 0; j < d_latent.size(); ++j) d_latent[j] += a[j] + b[j];
  }
  backbone_.backward(cache.backbone, relu_backward(cache.latent_pre, d_latent));
}

Vec CemModel::head_forward(const ConceptPrediction& pred, std::span<const double> mix_probs,
                           CemHeadCache* cache) const {
  const std::size_t k = config_.num_concepts;
  const std::size_t m = config_.embedding_width;
  if (mix_probs.size() != k) {
    throw ShapeError("mixing probabilities have dim " + std::to_string(mix_probs.size()) +
                     ", expected k=" + std::to_string(k));
  }
  if (pred.c_plus.size() != k * m || pred.c_minus.size() != k * m) {
    throw ShapeError("prediction lacks concept embeddings");
  }
  Vec mixed(k * m);
  for (std::size_t i = 0; i < k; ++i) {
    const double q = mix_probs[i];
    for (std::size_t j = 0; j < m; ++j) {
      mixed[i * m + j] = q * pred.c_plus[i * m + j] + (1.0 - q) * pred.c_minus[i * m + j];
    }
  }
  if (cache) {
    cache->mixed = mixed;
    return head_.forward(mixed, &cache->head);
  }
  return head_.forward(mixed);
}

CemHeadGrads CemModel::head_backward(const CemHeadCache& cache, const ConceptPrediction& pred,
                                     std::span<const double> mix_probs,
                                     std::span<const double> d_logits) {
  const std::size_t k = config_.num_concepts;
  const std::size_t m = config_.embedding_width;
  const Vec d_mixed = head_.backward(cache.head, d_logits);
  CemHeadGrads g{Vec(k * m), Vec(k * m), Vec(k, 0.0)};
  for (std::size_t i = 0; i < k; ++i) {
    const double q = mix_probs[i];
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t at = i * m + j;
      g.d_c_plus[at] = q * d_mixed[at];
      g.d_c_minus[at] = (1.0 - q) * d_mixed[at];
      g.d_mix_probs[i] += d_mixed[at] * (pred.c_plus[at] - pred.c_minus[at]);
    }
  }
  return g;
}

Vec CemModel::policy_scores(std::span<const double> concepts) const {
  if (!config_.policy_head) throw StateError("model has no policy-score head");
  return policy_.forward(concepts);
}

Vec CemModel::policy_backward(std::span<const double> concepts,
                              std::span<const double> d_scores) {
  return policy_.backward(concepts, d_scores);
}

ConceptPrediction CemModel::predict_concepts(std::span<const double> x) const {
  return encode(x, nullptr);
}

Vec CemModel::predict_logits(const ConceptPrediction& pred,
                             std::span<const double> concepts) const {
  return head_forward(pred, concepts, nullptr);
}

ParamRefs CemModel::parameters() {
  ParamRefs out = backbone_.parameters();
  for (auto& l : pos_heads_) l.append_parameters(out);
  for (auto& l : neg_heads_) l.append_parameters(out);
  scorer_.append_parameters(out);
  for (ParamTensor* p : head_.parameters()) out.push_back(p);
  if (config_.policy_head) policy_.append_parameters(out);
  return out;
}

ConstParamRefs CemModel::parameters() const {
  ConstParamRefs out = backbone_.parameters();
  for (const auto& l : pos_heads_) l.append_parameters(out);
  for (const auto& l : neg_heads_) l.append_parameters(out);
  scorer_.append_parameters(out);
  for (const ParamTensor* p : head_.parameters()) out.push_back(p);
  if (config_.policy_head) policy_.append_parameters(out);
  return out;
}

json CemModel::config_json() const {
  return {{"kind", to_string(kind())},
          {"input_dim", config_.input_dim},
          {"num_concepts", config_.num_concepts},
          {"num_classes", config_.num_classes},
          {"embedding_width", config_.embedding_width},
          {"hidden_width", config_.hidden_width},
          {"hidden_layers", config_.hidden_layers},
          {"concept_loss_weight", config_.concept_loss_weight},
          {"concept_weights", config_.concept_weights},
          {"policy_head", config_.policy_head}};
}

std::unique_ptr<ConceptModel> CemModel::clone() const {
  return std::make_unique<CemModel>(*this);
}

Vec cem_mix(double p, std::span<const double> c_plus, std::span<const double> c_minus) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValueError("cem_mix: p must lie in [0, 1]");
  if (c_plus.size() != c_minus.size()) {
    throw ShapeError("cem_mix: embeddings [" + std::to_string(c_plus.size()) + "] and [" +
                     std::to_string(c_minus.size()) + "]");
  }
  Vec out(c_plus.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = p * c_plus[j] + (1.0 - p) * c_minus[j];
  return out;
}

std::vector<ConceptEmbedding> cem_concept_embed(const CemModel& model,
                                                std::span<const double> x) {
  const ConceptPrediction pred = model.encode(x, nullptr);
  const std::size_t m = model.embedding_width();
  std::vector<ConceptEmbedding> out;
  for (std::size_t i = 0; i < model.num_concepts(); ++i) {
    out.push_back({Vec(pred.c_plus.begin() + i * m, pred.c_plus.begin() + (i + 1) * m),
                   Vec(pred.c_minus.begin() + i * m, pred.c_minus.begin() + (i + 1) * m),
                   pred.probs[i]});
  }
  return out;
}

CemOutput cem_forward(const CemModel& model, std::span<const double> x,
                      const std::map<std::size_t, double>& overrides) {
  const ConceptPrediction pred = model.encode(x, nullptr);
  Vec mix = pred.probs;
  for (auto [i, p] : overrides) {
    if (i >= model.num_concepts()) {
      throw ValueError("override index " + std::to_string(i) + " out of range");
    }
    if (!(p >= 0.0 && p <= 1.0)) throw ValueError("override value must lie in [0, 1]");
    mix[i] = p;
  }
  CemHeadCache hc;
  CemOutput out;
  out.logits = model.head_forward(pred, mix, &hc);
  out.mixed = std::move(hc.mixed);
  out.probs = pred.probs;
  return out;
}

double cem_joint_loss(CemModel& model, const SampleRecord& s, bool accumulate,
                      double grad_scale) {
  const auto& cfg = model.config();
  CemEncodeCache ec;
  CemHeadCache hc;
  const ConceptPrediction pred = model.encode(s.x, &ec);
  const Vec logits = model.head_forward(pred, pred.probs, &hc);
  const LossGrad task = ce_loss_grad(logits, s.y);
  const LossGrad conc = bce_loss_grad(pred.probs, s.c, cfg.concept_weights);
  if (accumulate) {
    Vec dl = task.grad;
    for (double& v : dl) v *= grad_scale;
    CemHeadGrads g = model.head_backward(hc, pred, pred.probs, dl);
    for (std::size_t i = 0; i < g.d_mix_probs.size(); ++i) {
      g.d_mix_probs[i] += grad_scale * cfg.concept_loss_weight * conc.grad[i];
    }
    model.encode_backward(ec, pred, g.d_c_plus, g.d_c_minus, g.d_mix_probs);
  }
  return task.value + cfg.concept_loss_weight * conc.value;
}

TrainHistory train_cem(CemModel& model, const Dataset& train, const Dataset& val,
                       const TrainConfig& config, std::uint64_t seed) {
  check_trainable(model);
  check_dataset(train, "train_cem");
  check_dataset(val, "train_cem (validation)");
  model.init(seed);
  model.set_intervention_aware(false);
  Rng rng = make_rng(seed, 24);
  TrainHistory history;
  auto batch = [&](std::span<const std::size_t> idx) {
    const double scale = 1.0 / static_cast<double>(idx.size());
    double total = 0.0;
    for (std::size_t i : idx) total += cem_joint_loss(model, train[i], true, scale);
    return total * scale;
  };
  auto validate = [&] {
    double total = 0.0;
    for (const auto& s : val) total += cem_joint_loss(model, s, false);
    return total / static_cast<double>(val.size());
  };
  run_training("cem", model.parameters(), train.size(), batch, validate, config, rng, history);
  return history;
}

// ----------------------------------------------------------------------------
// IntCEM

json to_json(const IntCemConfig& c) {
  return {{"gamma", c.gamma},
          {"lambda_conc", c.lambda_conc},
          {"lambda_roll", c.lambda_roll},
          {"lengths", c.lengths == LengthDistribution::uniform ? "uniform" : "fixed"},
          {"fixed_length", c.fixed_length}};
}

IntCemConfig intcem_config_from_json(const json& j) {
  IntCemConfig c;
  c.gamma = j.value("gamma", c.gamma);
  c.lambda_conc = j.value("lambda_conc", c.lambda_conc);
  c.lambda_roll = j.value("lambda_roll", c.lambda_roll);
  c.lengths = j.value("lengths", std::string("uniform")) == "fixed" ? LengthDistribution::fixed
                                                                  : LengthDistribution::uniform;
  c.fixed_length = j.value("fixed_length", c.fixed_length);
  return c;
}

double weighted_prediction_loss(double pre, double post, double gamma, std::size_t T) {
  if (!(gamma >= 1.0)) throw ValueError("gamma must be >= 1");
  const double g = std::pow(gamma, static_cast<double>(T));
  return (pre + g * post) / (1.0 + g);
}

std::vector<std::size_t> ucp_training_trajectory(std::span<const double> probs,
                                                 std::span<const double> truth,
                                                 const SelectionUnits& units,
                                                 std::size_t length) {
  if (length > units.size()) throw ValueError("trajectory longer than the unit count");
  Vec current(probs.begin(), probs.end());
  std::vector<char> done(units.size(), 0);
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < length; ++t) {
    const std::size_t u = ucp_select(current, done, units);
    for (std::size_t i : units.members[u]) current[i] = truth[i];
    done[u] = 1;
    out.push_back(u);
  }
  return out;
}

IntCemLoss intcem_loss(CemModel& model, const SampleRecord& s,
                       const std::vector<std::size_t>& trajectory,
                       const SelectionUnits& units, const IntCemConfig& config,
                       bool accumulate, double grad_scale) {
  const std::size_t k = model.num_concepts();
  const std::size_t T = trajectory.size();
  if (T > units.size()) throw ValueError("trajectory length T exceeds the number of concepts");
  if (!(config.gamma >= 1.0)) throw ValueError("gamma must be >= 1");

  CemEncodeCache ec;
  const ConceptPrediction pred = model.encode(s.x, &ec);

  std::vector<char> mask(k, 0);
  std::vector<char> done(units.size(), 0);
  Vec tilde = pred.probs;
  for (std::size_t u : trajectory) {
    if (u >= units.size() || done[u]) throw ValueError("invalid trajectory unit");
    done[u] = 1;
    for (std::size_t i : units.members[u]) {
      mask[i] = 1;
      tilde[i] = s.c[i];
    }
  }

  CemHeadCache pre_cache, post_cache;
  const Vec pre_logits = model.head_forward(pred, pred.probs, &pre_cache);
  const Vec post_logits = model.head_forward(pred, tilde, &post_cache);
  const LossGrad pre_ce = ce_loss_grad(pre_logits, s.y);
  const LossGrad post_ce = ce_loss_grad(post_logits, s.y);
  const double g = std::pow(config.gamma, static_cast<double>(T));
  const double w_pre = 1.0 / (1.0 + g);
  const double w_post = g / (1.0 + g);

  IntCemLoss out;
  out.pred = (pre_ce.value + g * post_ce.value) / (1.0 + g);
  const LossGrad conc = bce_loss_grad(pred.probs, s.c, model.config().concept_weights);
  out.conc = conc.value;

  // Rollout imitation: the open unit whose ground truth most reduces ce.
  std::vector<std::size_t> open;
  for (std::size_t u = 0; u < units.size(); ++u) {
    if (!done[u]) open.push_back(u);
  }
  Vec roll_d_unit;
  Vec roll_scores;
  if (config.lambda_roll > 0.0 && !open.empty()) {
    std::size_t target = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t oi = 0; oi < open.size(); ++oi) {
      Vec probe = tilde;
      for (std::size_t i : units.members[open[oi]]) probe[i] = s.c[i];
      const double ce = ce_loss(model.head_forward(pred, probe, nullptr), s.y);
      if (ce < best) {
        best = ce;
        target = oi;
      }
    }
    roll_scores = model.policy_scores(tilde);
    Vec unit_logits(open.size(), 0.0);
    for (std::size_t oi = 0; oi < open.size(); ++oi) {
      const auto& mem = units.members[open[oi]];
      for (std::size_t i : mem) unit_logits[oi] += roll_scores[i];
      unit_logits[oi] /= static_cast<double>(mem.size());
    }
    const LossGrad roll = ce_loss_grad(unit_logits, target);
    out.roll = roll.value;
    roll_d_unit = roll.grad;
  }
  out.total = out.pred + config.lambda_conc * out.conc + config.lambda_roll * out.roll;

  if (accumulate) {
    Vec d_probs(k, 0.0);
    Vec d_cp(pred.c_plus.size(), 0.0);
    Vec d_cm(pred.c_minus.size(), 0.0);
    auto add_head = [&](const CemHeadCache& hc, std::span<const double> mix,
                        const Vec& grad, double w, bool respect_mask) {
      Vec dl = grad;
      for (double& v : dl) v *= grad_scale * w;
      const CemHeadGrads hg = model.head_backward(hc, pred, mix, dl);
      for (std::size_t j = 0; j < d_cp.size(); ++j) {
        d_cp[j] += hg.d_c_plus[j];
        d_cm[j] += hg.d_c_minus[j];
      }
      for (std::size_t i = 0; i < k; ++i) {
        if (!respect_mask || !mask[i]) d_probs[i] += hg.d_mix_probs[i];
      }
    };
    add_head(pre_cache, pred.probs, pre_ce.grad, w_pre, false);
    add_head(post_cache, tilde, post_ce.grad, w_post, true);
    for (std::size_t i = 0; i < k; ++i) {
      d_probs[i] += grad_scale * config.lambda_conc * conc.grad[i];
    }
    if (!roll_d_unit.empty()) {
      Vec d_scores(k, 0.0);
      for (std::size_t oi = 0; oi < open.size(); ++oi) {
        const auto& mem = units.members[open[oi]];
        for (std::size_t i : mem) {
          d_scores[i] += grad_scale * config.lambda_roll * roll_d_unit[oi] /
                         static_cast<double>(mem.size());
        }
      }
      const Vec d_in = model.policy_backward(tilde, d_scores);
      for (std::size_t i = 0; i < k; ++i) {
        if (!mask[i]) d_probs[i] += d_in[i];
      }
    }
    model.encode_backward(ec, pred, d_cp, d_cm, d_probs);
  }
  return out;
}

std::size_t sample_trajectory_length(const IntCemConfig& config, std::size_t num_units,
                                     Rng& rng) {
  if (config.lengths == LengthDistribution::fixed) {
    if (config.fixed_length > num_units) throw ValueError("fixed trajectory length exceeds k");
    return config.fixed_length;
  }
  std::uniform_int_distribution<std::size_t> pick(0, num_units);
  return pick(rng);
}

TrainHistory train_intcem(CemModel& model, const Dataset& train, const Dataset& val,
                          const IntCemConfig& config, const SelectionUnits& units,
                          const TrainConfig& train_config, std::uint64_t seed) {
  check_trainable(model);
  check_dataset(train, "train_intcem");
  check_dataset(val, "train_intcem (validation)");
  if (!(config.gamma >= 1.0)) throw ValueError("gamma must be >= 1");
  if (config.lambda_roll > 0.0 && !model.config().policy_head) {
    throw ValueError("lambda_roll > 0 needs a model built with policy_head");
  }
  model.init(seed);
  model.set_intervention_aware(true);
  Rng rng = make_rng(seed, 25);
  TrainHistory history;
  auto loss_for = [&](const SampleRecord& s, Rng& r, bool accumulate, double scale) {
    const std::size_t T = sample_trajectory_length(config, units.size(), r);
    const Vec probs = model.predict_concepts(s.x).probs;
    const auto traj = ucp_training_trajectory(probs, s.c, units, T);
    return intcem_loss(model, s, traj, units, config, accumulate, scale).total;
  };
  auto batch = [&](std::span<const std::size_t> idx) {
    const double scale = 1.0 / static_cast<double>(idx.size());
    double total = 0.0;
    for (std::size_t i : idx) total += loss_for(train[i], rng, true, scale);
    return total * scale;
  };
  auto validate = [&] {
    Rng vr = make_rng(seed, 26);
    double total = 0.0;
    for (const auto& s : val) total += loss_for(s, vr, false, 0.0);
    return total / static_cast<double>(val.size());
  };
  run_training("intcem", model.parameters(), train.size(), batch, validate, train_config,
               rng, history);
  return history;
}

// ----------------------------------------------------------------------------
// Persistence

std::unique_ptr<ConceptModel> model_from_config(const json& c) {
  const ModelKind kind = model_kind_from_string(c.at("kind").get<std::string>());
  if (is_cbm(kind)) {
    CbmConfig cfg;
    cfg.input_dim = c.at("input_dim");
    cfg.num_concepts = c.at("num_concepts");
    cfg.num_classes = c.at("num_classes");
    cfg.hidden_width = c.value("hidden_width", std::size_t{0});
    cfg.hidden_layers = c.value("hidden_layers", std::size_t{2});
    cfg.scheme = cbm_scheme_from_string(c.value("scheme", to_string(kind)));
    cfg.concept_loss_weight = c.value("concept_loss_weight", 1.0);
    cfg.concept_weights = c.value("concept_weights", Vec{});
    return std::make_unique<CbmModel>(cfg);
  }
  CemConfig cfg;
  cfg.input_dim = c.at("input_dim");
  cfg.num_concepts = c.at("num_concepts");
  cfg.num_classes = c.at("num_classes");
  cfg.embedding_width = c.value("embedding_width", std::size_t{8});
  cfg.hidden_width = c.value("hidden_width", std::size_t{0});
  cfg.hidden_layers = c.value("hidden_layers", std::size_t{2});
  cfg.concept_loss_weight = c.value("concept_loss_weight", 1.0);
  cfg.concept_weights = c.value("concept_weights", Vec{});
  cfg.policy_head = c.value("policy_head", false);
  cfg.intervention_aware = kind == ModelKind::intcem;
  return std::make_unique<CemModel>(cfg);
}

void save_model(const std::filesystem::path& path, const ConceptModel& model) {
  std::filesystem::path params_path = path;
  params_path += ".params.json";
  const auto params = model.parameters();
  save_params(params_path, params, model.seed());
  write_json_file(path, {{"format", "cirm-model"},
                         {"version", 1},
                         {"kind", to_string(model.kind())},
                         {"config", model.config_json()},
                         {"seed", model.seed()},
                         {"params_file", params_path.filename().string()},
                         {"params_checksum", std::to_string(params_checksum(params))}});
}

std::unique_ptr<ConceptModel> load_model(const std::filesystem::path& path) {
  const json manifest = read_json_file(path);
  if (manifest.value("format", std::string{}) != "cirm-model") {
    throw IoError(path.string() + " is not a model manifest");
  }
  auto model = model_from_config(manifest.at("config"));
  const auto params_path = path.parent_path() / manifest.at("params_file").get<std::string>();
  model->set_seed(load_params(params_path, model->parameters()));
  if (std::to_string(model->checksum()) != manifest.at("params_checksum").get<std::string>()) {
    throw IoError("parameter checksum mismatch for " + path.string());
  }
  return model;
}

double task_accuracy(const ConceptModel& model, const Dataset& data) {
  if (data.empty()) throw ValueError("task_accuracy: empty dataset");
  std::size_t correct = 0;
  for (const auto& s : data) {
    const ConceptPrediction pred = model.predict_concepts(s.x);
    correct += argmax(model.predict_logits(pred, pred.probs)) == s.y;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double concept_bce(const ConceptModel& model, const Dataset& data) {
  if (data.empty()) throw ValueError("concept_bce: empty dataset");
  double total = 0.0;
  for (const auto& s : data) total += bce_loss(model.predict_concepts(s.x).probs, s.c);
  return total / static_cast<double>(data.size());
}

}  // namespace cirm
