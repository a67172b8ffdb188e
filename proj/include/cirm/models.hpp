#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cirm/nd/layers.hpp"
#include "cirm/nd/tensor.hpp"
#include "cirm/policy.hpp"
#include "cirm/train_loop.hpp"
#include "cirm/world.hpp"

namespace cirm {

enum class ModelKind { sequential, independent, joint, cem, intcem };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);
bool is_cbm(ModelKind kind);

/// Concept-level prediction for one input. CEM predictions also carry the
/// per-concept positive/negative embeddings ([k x m] row-major each).
struct ConceptPrediction {
  Vec probs;
  Vec c_plus;
  Vec c_minus;
};

/// Uniform interface over CBMs and CEMs: predict concepts, then predict
/// labels from a (possibly intervened or realigned) concept vector.
class ConceptModel {
 public:
  virtual ~ConceptModel() = default;

  virtual ModelKind kind() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t num_concepts() const = 0;
  virtual std::size_t num_classes() const = 0;

  virtual ConceptPrediction predict_concepts(std::span<const double> x) const = 0;
  /// Class logits when the bottleneck holds `concepts` (CBM: fed to f; CEM:
  /// used as mixing probabilities over the prediction's embeddings).
  virtual Vec predict_logits(const ConceptPrediction& pred,
                             std::span<const double> concepts) const = 0;

  virtual ParamRefs parameters() = 0;
  virtual ConstParamRefs parameters() const = 0;
  virtual nlohmann::json config_json() const = 0;
  virtual std::unique_ptr<ConceptModel> clone() const = 0;

  /// Frozen models reject training; posthoc realignment requires one.
  void freeze() { frozen_ = true; }
  void unfreeze() { frozen_ = false; }
  bool frozen() const { return frozen_; }
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }
  std::uint64_t checksum() const { return params_checksum(parameters()); }

 protected:
  bool frozen_ = false;
  std::uint64_t seed_ = 0;
};

/// Default hidden width for g and f: max(2k, 32).
std::size_t default_hidden_width(std::size_t k);

// ----------------------------------------------------------------------------
// Concept bottleneck models

enum class CbmScheme { independent, sequential, joint };

std::string to_string(CbmScheme s);
CbmScheme cbm_scheme_from_string(const std::string& s);

struct CbmConfig {
  std::size_t input_dim = 0;
  std::size_t num_concepts = 0;
  std::size_t num_classes = 0;
  std::size_t hidden_width = 0;  // 0 = default_hidden_width(k)
  std::size_t hidden_layers = 2;
  CbmScheme scheme = CbmScheme::sequential;
  /// Weight of the concept bce in joint training.
  double concept_loss_weight = 1.0;
  /// Per-concept bce weights; empty = all ones.
  Vec concept_weights;
};

class CbmModel final : public ConceptModel {
 public:
  explicit CbmModel(CbmConfig config);

  void init(std::uint64_t seed);
  const CbmConfig& config() const { return config_; }
  void set_scheme(CbmScheme scheme) { config_.scheme = scheme; }

  ModelKind kind() const override;
  std::size_t input_dim() const override { return config_.input_dim; }
  std::size_t num_concepts() const override { return config_.num_concepts; }
  std::size_t num_classes() const override { return config_.num_classes; }
  ConceptPrediction predict_concepts(std::span<const double> x) const override;
  Vec predict_logits(const ConceptPrediction& pred,
                     std::span<const double> concepts) const override;
  ParamRefs parameters() override;
  ConstParamRefs parameters() const override;
  nlohmann::json config_json() const override;
  std::unique_ptr<ConceptModel> clone() const override;

  /// sigmoid(g(x)).
  Vec concept_probs(std::span<const double> x, MlpCache* cache = nullptr) const;
  /// f(c).
  Vec head_logits(std::span<const double> c, MlpCache* cache = nullptr) const;

  Mlp& encoder() { return encoder_; }
  Mlp& head() { return head_; }
  const Mlp& encoder() const { return encoder_; }
  const Mlp& head() const { return head_; }

 private:
  CbmConfig config_;
  Mlp encoder_;
  Mlp head_;
};

struct CbmOutput {
  Vec concepts;  // c_hat
  Vec logits;    // y_hat
};

CbmOutput cbm_forward(const CbmModel& model, std::span<const double> x);

/// Observes every vector fed to f while f is being trained.
using HeadInputTrace = std::function<void(std::span<const double>)>;

struct CbmTrainOptions {
  TrainConfig train;
  HeadInputTrace head_input_trace;
};

/// Trains according to model.config().scheme. Independent: g on (x, c) and
/// f on ground-truth (c, y). Sequential: g first, then f on g's predictions.
/// Joint: ce(f(c_hat), y) + weight * bce(c_hat, c).
TrainHistory train_cbm(CbmModel& model, const Dataset& train, const Dataset& val,
                       const CbmTrainOptions& options, std::uint64_t seed);

/// Concept encoder stage alone (shared by independent and sequential CBMs).
TrainHistory train_cbm_encoder(CbmModel& model, const Dataset& train,
                               const Dataset& val, const TrainConfig& config,
                               std::uint64_t seed);
/// Label head stage alone; ground-truth concepts when `use_ground_truth`.
TrainHistory train_cbm_head(CbmModel& model, const Dataset& train, const Dataset& val,
                            bool use_ground_truth, const CbmTrainOptions& options,
                            std::uint64_t seed);

/// Per-sample joint objective; accumulates gradients when asked.
double cbm_joint_loss(CbmModel& model, const SampleRecord& s, bool accumulate,
                      double grad_scale = 1.0);

// ----------------------------------------------------------------------------
// Concept embedding models

struct CemConfig {
  std::size_t input_dim = 0;
  std::size_t num_concepts = 0;
  std::size_t num_classes = 0;
  std::size_t embedding_width = 8;  // m
  std::size_t hidden_width = 0;     // 0 = default_hidden_width(k)
  std::size_t hidden_layers = 2;
  double concept_loss_weight = 1.0;
  Vec concept_weights;
  /// Adds the k-way policy-score head used by the rollout loss.
  bool policy_head = false;
  bool intervention_aware = false;
};

struct CemEncodeCache {
  MlpCache backbone;
  Vec latent_pre;
  Vec latent;
};

struct CemHeadCache {
  Vec mixed;
  MlpCache head;
};

struct CemHeadGrads {
  Vec d_c_plus;
  Vec d_c_minus;
  Vec d_mix_probs;
};

class CemModel final : public ConceptModel {
 public:
  explicit CemModel(CemConfig config);

  void init(std::uint64_t seed);
  const CemConfig& config() const { return config_; }
  std::size_t embedding_width() const { return config_.embedding_width; }

  ModelKind kind() const override;
  std::size_t input_dim() const override { return config_.input_dim; }
  std::size_t num_concepts() const override { return config_.num_concepts; }
  std::size_t num_classes() const override { return config_.num_classes; }
  ConceptPrediction predict_concepts(std::span<const double> x) const override;
  Vec predict_logits(const ConceptPrediction& pred,
                     std::span<const double> concepts) const override;
  ParamRefs parameters() override;
  ConstParamRefs parameters() const override;
  nlohmann::json config_json() const override;
  std::unique_ptr<ConceptModel> clone() const override;

  ConceptPrediction encode(std::span<const double> x, CemEncodeCache* cache) const;
  void encode_backward(const CemEncodeCache& cache, const ConceptPrediction& pred,
                       std::span<const double> d_c_plus, std::span<const double> d_c_minus,
                       std::span<const double> d_probs);

  Vec head_forward(const ConceptPrediction& pred, std::span<const double> mix_probs,
                   CemHeadCache* cache) const;
  CemHeadGrads head_backward(const CemHeadCache& cache, const ConceptPrediction& pred,
                             std::span<const double> mix_probs,
                             std::span<const double> d_logits);

  /// k-way scores for the rollout loss; requires config().policy_head.
  Vec policy_scores(std::span<const double> concepts) const;
  Vec policy_backward(std::span<const double> concepts, std::span<const double> d_scores);

  void set_intervention_aware(bool v) { config_.intervention_aware = v; }

 private:
  CemConfig config_;
  Mlp backbone_;
  std::vector<Linear> pos_heads_;
  std::vector<Linear> neg_heads_;
  Linear scorer_;
  Mlp head_;
  Linear policy_;
};

/// p * c_plus + (1 - p) * c_minus; p must lie in [0, 1].
Vec cem_mix(double p, std::span<const double> c_plus, std::span<const double> c_minus);

struct ConceptEmbedding {
  Vec c_plus;
  Vec c_minus;
  double prob = 0.0;
};

std::vector<ConceptEmbedding> cem_concept_embed(const CemModel& model,
                                                std::span<const double> x);

struct CemOutput {
  Vec probs;
  Vec mixed;
  Vec logits;
};

/// Forward pass with ground-truth overrides {i -> p_i} applied in the mix.
CemOutput cem_forward(const CemModel& model, std::span<const double> x,
                      const std::map<std::size_t, double>& overrides = {});

/// ce(f(c_hat), y) + weight * bce(p_hat, c).
double cem_joint_loss(CemModel& model, const SampleRecord& s, bool accumulate,
                      double grad_scale = 1.0);

TrainHistory train_cem(CemModel& model, const Dataset& train, const Dataset& val,
                       const TrainConfig& config, std::uint64_t seed);

// ----------------------------------------------------------------------------
// Intervention-aware CEM

enum class LengthDistribution { uniform, fixed };

struct IntCemConfig {
  double gamma = 1.1;
  double lambda_conc = 1.0;
  double lambda_roll = 0.0;
  LengthDistribution lengths = LengthDistribution::uniform;
  std::size_t fixed_length = 0;
};

nlohmann::json to_json(const IntCemConfig& c);
IntCemConfig intcem_config_from_json(const nlohmann::json& j);

struct IntCemLoss {
  double total = 0.0;
  double pred = 0.0;
  double conc = 0.0;
  double roll = 0.0;
};

/// (a + gamma^T b) / (1 + gamma^T).
double weighted_prediction_loss(double pre, double post, double gamma, std::size_t T);

/// Train-time trajectory: UCP on the current (intervened) concept vector
/// for `length` units.
std::vector<std::size_t> ucp_training_trajectory(std::span<const double> probs,
                                                 std::span<const double> truth,
                                                 const SelectionUnits& units,
                                                 std::size_t length);

/// Intervention-aware objective on one sample and a fixed trajectory of
/// units. L_pred weighs pre- and post-intervention ce by 1 and gamma^T,
/// L_conc is the concept bce, L_roll imitates the greedy-oracle next concept.
IntCemLoss intcem_loss(CemModel& model, const SampleRecord& s,
                       const std::vector<std::size_t>& trajectory,
                       const SelectionUnits& units, const IntCemConfig& config,
                       bool accumulate, double grad_scale = 1.0);

std::size_t sample_trajectory_length(const IntCemConfig& config, std::size_t num_units,
                                     Rng& rng);

TrainHistory train_intcem(CemModel& model, const Dataset& train, const Dataset& val,
                          const IntCemConfig& config, const SelectionUnits& units,
                          const TrainConfig& train_config, std::uint64_t seed);

// ----------------------------------------------------------------------------
// Persistence and helpers

/// Writes `<path>` (manifest) and `<path>.params.json`.
void save_model(const std::filesystem::path& path, const ConceptModel& model);
std::unique_ptr<ConceptModel> load_model(const std::filesystem::path& path);
std::unique_ptr<ConceptModel> model_from_config(const nlohmann::json& config);

/// Fraction of samples whose argmax f(c_hat) equals y.
double task_accuracy(const ConceptModel& model, const Dataset& data);
/// Mean bce of predicted concepts.
double concept_bce(const ConceptModel& model, const Dataset& data);

}  // namespace cirm
