#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cirm/nd/layers.hpp"
#include "cirm/nd/tensor.hpp"
#include "cirm/policy.hpp"
#include "cirm/train_loop.hpp"

namespace cirm {

/// identity has no parameters and returns its input; it is a reference
/// point for reductions and ablations.
enum class RealignerArch { feedforward, recurrent, identity };
/// original: feed c~_t (predictions with ground truth spliced in).
/// previous_output: feed kappa_{t-1} with the interventions re-applied.
enum class RealignerInput { original, previous_output };

std::string to_string(RealignerArch a);
std::string to_string(RealignerInput m);
RealignerArch realigner_arch_from_string(const std::string& s);
RealignerInput realigner_input_from_string(const std::string& s);

struct RealignerConfig {
  RealignerArch arch = RealignerArch::feedforward;
  RealignerInput input_mode = RealignerInput::original;
  std::size_t hidden_layers = 2;
  std::size_t hidden_width = 0;  // 0 = k
  /// v(z) = logit(z) + net(z): the net learns a correction in logit space.
  bool residual = true;
  PolicyKind training_policy = PolicyKind::ucp(PolicySource::updated);
  /// Interventions per training trajectory; unset = every selection unit.
  std::optional<std::size_t> t_train;
  /// Adds the unintervened u(c_hat) term to the posthoc loss.
  bool include_step0 = false;
  TrainConfig train;
};

nlohmann::json to_json(const RealignerConfig& c);
RealignerConfig realigner_config_from_json(const nlohmann::json& j);

/// Bitwise splice: out[i] = values[i] where mask[i], else base[i].
Vec splice(std::span<const double> base, std::span<const double> values,
           const std::vector<char>& mask);

struct RealignerStepCache {
  Vec input;
  std::vector<char> mask;
  bool used_previous = false;
  Vec probs;  // network output before the splice
  LstmCache lstm;
  MlpCache mlp;
};

struct RealignerSequenceGrads {
  /// d loss / d c~_t for every step (entries on and off the mask).
  std::vector<Vec> d_values;
  /// d loss / d (the vector passed to begin()).
  Vec d_initial;
};

/// The concept realigner u: a network v mapping a concept vector to concept
/// probabilities, with intervened entries replaced by their given values.
class Realigner {
 public:
  /// Per-trajectory recurrence: previous output and LSTM state.
  struct Carry {
    Vec prev_kappa;
    RecurrentState lstm;
  };

  Realigner() = default;
  Realigner(std::size_t k, RealignerConfig config);

  void init(std::uint64_t seed);
  std::size_t num_concepts() const { return k_; }
  const RealignerConfig& config() const { return config_; }
  RealignerConfig& mutable_config() { return config_; }
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }

  /// Fresh carry for a trajectory whose unintervened predictions are c_hat.
  Carry begin(std::span<const double> c_hat) const;

  /// sigmoid(v(input)); threads the recurrent state when the arch has one.
  Vec crm_forward(std::span<const double> input, RecurrentState* state = nullptr,
                  RealignerStepCache* cache = nullptr) const;

  /// One trajectory step: builds the input per input_mode, runs v and
  /// splices c~_t back on the mask. Updates carry.
  Vec step(std::span<const double> values, const std::vector<char>& mask, Carry& carry,
           RealignerStepCache* cache = nullptr) const;

  /// Single stateless call u(c~) with mask S (fresh carry).
  Vec realign(std::span<const double> values, const std::vector<char>& mask) const;

  /// Reverse pass over a sequence of step() calls that started from one
  /// begin(). d_kappa[t] is d loss / d kappa of step t.
  RealignerSequenceGrads backward_sequence(const std::vector<RealignerStepCache>& caches,
                                           const std::vector<Vec>& d_kappa);

  ParamRefs parameters();
  ConstParamRefs parameters() const;
  std::uint64_t checksum() const { return params_checksum(parameters()); }

 private:
  std::size_t k_ = 0;
  RealignerConfig config_;
  std::uint64_t seed_ = 0;
  Mlp mlp_;         // feedforward net, or the recurrent readout
  LstmCell lstm_;
};

/// Masked realignment: out[i] = values[i] on S, v(values)[i] elsewhere.
/// Throws ValueError for an index of S out of range.
Vec realign_masked(const Realigner& realigner, std::span<const double> values,
                   const std::set<std::size_t>& S,
                   RecurrentState* state = nullptr);

/// Manifest plus `<path>.params.json`; records the base model checksum the
/// realigner was trained against.
void save_realigner(const std::filesystem::path& path, const Realigner& realigner,
                    std::uint64_t base_checksum);
struct LoadedRealigner {
  Realigner realigner;
  std::uint64_t base_checksum = 0;
};
LoadedRealigner load_realigner(const std::filesystem::path& path);

}  // namespace cirm
