#include "cirm/realigner.hpp"

#include "cirm/error.hpp"
#include "cirm/nd/checkpoint.hpp"

namespace cirm {

using nlohmann::json;

std::string to_string(RealignerArch a) {
  switch (a) {
    case RealignerArch::feedforward: return "feedforward";
    case RealignerArch::recurrent: return "recurrent";
    case RealignerArch::identity: return "identity";
  }
  return "?";
}

std::string to_string(RealignerInput m) {
  return m == RealignerInput::original ? "original" : "previous_output";
}

RealignerArch realigner_arch_from_string(const std::string& s) {
  if (s == "feedforward" || s == "mlp") return RealignerArch::feedforward;
  if (s == "recurrent" || s == "lstm") return RealignerArch::recurrent;
  if (s == "identity") return RealignerArch::identity;
  throw ValueError("unknown realigner arch '" + s + "'");
}

RealignerInput realigner_input_from_string(const std::string& s) {
  if (s == "original") return RealignerInput::original;
  if (s == "previous_output" || s == "previous") return RealignerInput::previous_output;
  throw ValueError("unknown realigner input mode '" + s + "'");
}

json to_json(const RealignerConfig& c) {
  json j{{"arch", to_string(c.arch)},
         {"input_mode", to_string(c.input_mode)},
         {"hidden_layers", c.hidden_layers},
         {"hidden_width", c.hidden_width},
         {"residual", c.residual},
         {"training_policy", to_json(c.training_policy)},
         {"include_step0", c.include_step0},
         {"train", to_json(c.train)}};
  j["t_train"] = c.t_train ? json(*c.t_train) : json(nullptr);
  return j;
}

RealignerConfig realigner_config_from_json(const json& j) {
  RealignerConfig c;
  if (j.contains("arch")) c.arch = realigner_arch_from_string(j["arch"]);
  if (j.contains("input_mode")) c.input_mode = realigner_input_from_string(j["input_mode"]);
  c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
  c.hidden_width = j.value("hidden_width", c.hidden_width);
  c.residual = j.value("residual", c.residual);
  if (j.contains("training_policy")) c.training_policy = policy_from_json(j["training_policy"]);
  if (j.contains("t_train") && !j["t_train"].is_null()) {
    c.t_train = j["t_train"].get<std::size_t>();
  }
  c.include_step0 = j.value("include_step0", c.include_step0);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  return c;
}

Vec splice(std::span<const double> base, std::span<const double> values,
           const std::vector<char>& mask) {
  if (base.size() != values.size() || mask.size() != values.size()) {
    throw ShapeError("splice: sizes " + std::to_string(base.size()) + ", " +
                     std::to_string(values.size()) + ", mask " + std::to_string(mask.size()));
  }
  Vec out(base.begin(), base.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i]) out[i] = values[i];
  }
  return out;
}

Realigner::Realigner(std::size_t k, RealignerConfig config) : k_(k), config_(std::move(config)) {
  if (k_ == 0) throw ValueError("realigner needs k >= 1");
  if (config_.hidden_layers < 1 || config_.hidden_layers > 3) {
    throw ValueError("realigner hidden_layers must be in {1, 2, 3}");
  }
  if (config_.hidden_width == 0) config_.hidden_width = k_;
  const std::size_t w = config_.hidden_width;
  if (config_.arch == RealignerArch::feedforward) {
    std::vector<std::size_t> dims{k_};
    for (std::size_t i = 0; i < config_.hidden_layers; ++i) dims.push_back(w);
    dims.push_back(k_);
    mlp_ = Mlp("v", dims);
  } else if (config_.arch == RealignerArch::recurrent) {
    lstm_ = LstmCell("v.lstm", k_, w);
    std::vector<std::size_t> dims{w};
    for (std::size_t i = 1; i < config_.hidden_layers; ++i) dims.push_back(w);
    dims.push_back(k_);
    mlp_ = Mlp("v.readout", dims);
  }
}

void Realigner::init(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    31u};
  Rng rng(seq);
  if (config_.arch == RealignerArch::recurrent) lstm_.init(rng);
  if (config_.arch != RealignerArch::identity) mlp_.init(rng);
  seed_ = seed;
}

Realigner::Carry Realigner::begin(std::span<const double> c_hat) const {
  if (c_hat.size() != k_) {
    throw ShapeError("concept vector has dim " + std::to_string(c_hat.size()) +
                     ", expected k=" + std::to_string(k_));
  }
  Carry c;
  c.prev_kappa.assign(c_hat.begin(), c_hat.end());
  if (config_.arch == RealignerArch::recurrent) c.lstm = lstm_.zero_state();
  return c;
}

Vec Realigner::crm_forward(std::span<const double> input, RecurrentState* state,
                           RealignerStepCache* cache) const {
  if (input.size() != k_) {
    throw ShapeError("realigner input has dim " + std::to_string(input.size()) +
                     ", expected k=" + std::to_string(k_));
  }
  Vec probs;
  Vec raw;
  switch (config_.arch) {
    case RealignerArch::identity:
      probs.assign(input.begin(), input.end());
      break;
    case RealignerArch::feedforward:
      raw = mlp_.forward(input, cache ? &cache->mlp : nullptr);
      break;
    case RealignerArch::recurrent: {
      const RecurrentState zero = lstm_.zero_state();
      const RecurrentState& prev = state ? *state : zero;
      RecurrentState next = lstm_.step(prev, input, cache ? &cache->lstm : nullptr);
      raw = mlp_.forward(next.hidden, cache ? &cache->mlp : nullptr);
      if (state) *state = std::move(next);
      break;
    }
  }
  if (config_.arch != RealignerArch::identity) {
    if (config_.residual) {
      for (std::size_t i = 0; i < k_; ++i) raw[i] += logit(input[i]);
    }
    probs = sigmoid(raw);
  }
  if (cache) {
    cache->input.assign(input.begin(), input.end());
    cache->probs = probs;
  }
  return probs;
}

Vec Realigner::step(std::span<const double> values, const std::vector<char>& mask,
                    Carry& carry, RealignerStepCache* cache) const {
  if (values.size() != k_ || mask.size() != k_) {
    throw ShapeError("realigner step expects k=" + std::to_string(k_) + " values and mask");
  }
  const bool use_prev =
      config_.input_mode == RealignerInput::previous_output && carry.prev_kappa.size() == k_;
  const Vec input = use_prev ? splice(carry.prev_kappa, values, mask)
                             : Vec(values.begin(), values.end());
  const Vec probs = crm_forward(input, &carry.lstm, cache);
  Vec kappa = splice(probs, values, mask);
  if (cache) {
    cache->mask = mask;
    cache->used_previous = use_prev;
  }
  carry.prev_kappa = kappa;
  return kappa;
}

Vec Realigner::realign(std::span<const double> values, const std::vector<char>& mask) const {
  Carry carry = begin(values);
  return step(values, mask, carry);
}

RealignerSequenceGrads Realigner::backward_sequence(
    const std::vector<RealignerStepCache>& caches, const std::vector<Vec>& d_kappa) {
  if (caches.size() != d_kappa.size()) {
    throw ShapeError("backward_sequence: " + std::to_string(caches.size()) + " caches, " +
                     std::to_string(d_kappa.size()) + " gradients");
  }
  const std::size_t T = caches.size();
  RealignerSequenceGrads out;
  out.d_values.assign(T, Vec(k_, 0.0));
  Vec d_prev(k_, 0.0);
  const std::size_t H = config_.arch == RealignerArch::recurrent ? lstm_.hidden_dim() : 0;
  Vec dh(H, 0.0), dc(H, 0.0);
  for (std::size_t r = 0; r < T; ++r) {
    const std::size_t t = T - 1 - r;
    const auto& cache = caches[t];
    Vec dk = d_kappa[t];
    for (std::size_t i = 0; i < k_; ++i) dk[i] += d_prev[i];
    Vec d_probs(k_, 0.0);
    for (std::size_t i = 0; i < k_; ++i) {
      if (cache.mask[i]) {
        out.d_values[t][i] += dk[i];
      } else {
        d_probs[i] = dk[i];
      }
    }
    Vec d_input;
    const Vec d_raw = config_.arch == RealignerArch::identity
                          ? Vec{}
                          : sigmoid_backward(cache.probs, d_probs);
    switch (config_.arch) {
      case RealignerArch::identity:
        d_input = d_probs;
        break;
      case RealignerArch::feedforward:
        d_input = mlp_.backward(cache.mlp, d_raw);
        break;
      case RealignerArch::recurrent: {
        Vec d_hidden = mlp_.backward(cache.mlp, d_raw);
        for (std::size_t j = 0; j < H; ++j) d_hidden[j] += dh[j];
        LstmCell::StepGrads g = lstm_.backward(cache.lstm, d_hidden, dc);
        dh = std::move(g.d_hidden_prev);
        dc = std::move(g.d_cell_prev);
        d_input = std::move(g.d_input);
        break;
      }
    }
    if (config_.arch != RealignerArch::identity && config_.residual) {
      for (std::size_t i = 0; i < k_; ++i) d_input[i] += d_raw[i] * logit_derivative(cache.input[i]);
    }
    std::fill(d_prev.begin(), d_prev.end(), 0.0);
    for (std::size_t i = 0; i < k_; ++i) {
      if (cache.used_previous && !cache.mask[i]) {
        d_prev[i] = d_input[i];
      } else {
        out.d_values[t][i] += d_input[i];
      }
    }
  }
  out.d_initial = d_prev;
  return out;
}

ParamRefs Realigner::parameters() {
  ParamRefs out;
  if (config_.arch == RealignerArch::recurrent) lstm_.append_parameters(out);
  if (config_.arch != RealignerArch::identity) {
    for (ParamTensor* p : mlp_.parameters()) out.push_back(p);
  }
  return out;
}

ConstParamRefs Realigner::parameters() const {
  ConstParamRefs out;
  if (config_.arch == RealignerArch::recurrent) lstm_.append_parameters(out);
  if (config_.arch != RealignerArch::identity) {
    for (const ParamTensor* p : mlp_.parameters()) out.push_back(p);
  }
  return out;
}

Vec realign_masked(const Realigner& realigner, std::span<const double> values,
                   const std::set<std::size_t>& S, RecurrentState* state) {
  const std::size_t k = realigner.num_concepts();
  std::vector<char> mask(k, 0);
  for (std::size_t i : S) {
    if (i >= k) {
      throw ValueError("intervened index " + std::to_string(i) + " out of range for k=" +
                       std::to_string(k));
    }
    mask[i] = 1;
  }
  return splice(realigner.crm_forward(values, state), values, mask);
}

void save_realigner(const std::filesystem::path& path, const Realigner& realigner,
                    std::uint64_t base_checksum) {
  std::filesystem::path params_path = path;
  params_path += ".params.json";
  save_params(params_path, realigner.parameters(), realigner.seed());
  write_json_file(path, {{"format", "cirm-realigner"},
                         {"version", 1},
                         {"k", realigner.num_concepts()},
                         {"config", to_json(realigner.config())},
                         {"seed", realigner.seed()},
                         {"base_checksum", std::to_string(base_checksum)},
                         {"params_file", params_path.filename().string()},
                         {"params_checksum", std::to_string(realigner.checksum())}});
}

LoadedRealigner load_realigner(const std::filesystem::path& path) {
  const json m = read_json_file(path);
  if (m.value("format", std::string{}) != "cirm-realigner") {
    throw IoError(path.string() + " is not a realigner manifest");
  }
  LoadedRealigner out;
  out.realigner = Realigner(m.at("k").get<std::size_t>(), realigner_config_from_json(m.at("config")));
  const auto params_path = path.parent_path() / m.at("params_file").get<std::string>();
  out.realigner.set_seed(load_params(params_path, out.realigner.parameters()));
  if (std::to_string(out.realigner.checksum()) != m.at("params_checksum").get<std::string>()) {
    throw IoError("parameter checksum mismatch for " + path.string());
  }
  out.base_checksum = std::stoull(m.at("base_checksum").get<std::string>());
  return out;
}

}  // namespace cirm
