#include "cirm/realign_train.hpp"

#include <cmath>
#include <limits>
#include <optional>

#include "cirm/error.hpp"
#include "cirm/nd/losses.hpp"

namespace cirm {

namespace {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

std::size_t pick_unit(const PolicyKind& policy, std::span<const double> c_hat,
                      const Vec& latest, const std::vector<char>& done,
                      const SelectionUnits& units, std::size_t t, Rng& rng) {
  switch (policy.type) {
    case PolicyType::ucp:
      return ucp_select(policy.source == PolicySource::original ? c_hat : std::span<const double>(latest),
                        done, units, policy.group_score);
    case PolicyType::random:
      return random_select(rng, done);
    case PolicyType::manual:
      if (t >= policy.sequence.size()) throw ValueError("manual policy sequence exhausted");
      return policy.sequence[t];
  }
  return 0;
}

// Shared forward/backward for the posthoc objective. Units come from
// `fixed` when given, otherwise from `policy` reading the latest kappa.
double posthoc_core(Realigner& r, std::span<const double> c_hat, std::span<const double> truth,
                    const SelectionUnits& units, const std::vector<std::size_t>* fixed,
                    const PolicyKind* policy, std::size_t T, Rng* rng, bool include_step0,
                    bool accumulate, double grad_scale) {
  const std::size_t k = r.num_concepts();
  if (c_hat.size() != k || truth.size() != k) throw ShapeError("posthoc loss: expected k entries");
  if (T > units.size()) throw ValueError("trajectory longer than the unit count");
  std::vector<char> mask(k, 0), done(units.size(), 0);
  Vec values(c_hat.begin(), c_hat.end());
  Realigner::Carry carry = r.begin(c_hat);
  Vec latest(c_hat.begin(), c_hat.end());
  std::vector<RealignerStepCache> caches(T);
  std::vector<Vec> kappas;
  kappas.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t u = fixed ? (*fixed)[t] : pick_unit(*policy, c_hat, latest, done, units, t, *rng);
    if (u >= units.size() || done[u]) throw ValueError("invalid trajectory unit");
    done[u] = 1;
    for (std::size_t i : units.members[u]) {
      mask[i] = 1;
      values[i] = truth[i];
    }
    latest = r.step(values, mask, carry, accumulate ? &caches[t] : nullptr);
    kappas.push_back(latest);
  }
  const bool step0 = include_step0 || T == 0;
  const double n = static_cast<double>(T + (step0 ? 1 : 0));
  double total = 0.0;
  std::vector<Vec> d_kappa;
  for (const Vec& kappa : kappas) {
    const LossGrad lg = bce_loss_grad(kappa, truth);
    total += lg.value;
    if (accumulate) {
      Vec d = lg.grad;
      for (double& v : d) v *= grad_scale / n;
      d_kappa.push_back(std::move(d));
    }
  }
  if (accumulate && T > 0) r.backward_sequence(caches, d_kappa);
  if (step0) {
    const std::vector<char> none(k, 0);
    Realigner::Carry fresh = r.begin(c_hat);
    std::vector<RealignerStepCache> cache0(1);
    const Vec kappa0 = r.step(c_hat, none, fresh, accumulate ? &cache0[0] : nullptr);
    const LossGrad lg = bce_loss_grad(kappa0, truth);
    total += lg.value;
    if (accumulate) {
      Vec d = lg.grad;
      for (double& v : d) v *= grad_scale / n;
      r.backward_sequence(cache0, {d});
    }
  }
  return total / n;
}

std::vector<Vec> predicted_concepts(const ConceptModel& base, const Dataset& data) {
  std::vector<Vec> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(base.predict_concepts(s.x).probs);
  return out;
}

std::size_t training_length(const RealignerConfig& config, const SelectionUnits& units) {
  const std::size_t T = config.t_train.value_or(units.size());
  if (T > units.size()) {
    throw ValueError("t_train=" + std::to_string(T) + " exceeds the " +
                     std::to_string(units.size()) + " selection units");
  }
  return T;
}

}  // namespace

std::vector<std::size_t> realigner_trajectory(const Realigner& realigner,
                                              std::span<const double> c_hat,
                                              std::span<const double> truth,
                                              const SelectionUnits& units,
                                              const PolicyKind& policy, std::size_t T,
                                              Rng& rng) {
  if (T > units.size()) throw ValueError("trajectory longer than the unit count");
  const std::size_t k = realigner.num_concepts();
  std::vector<char> mask(k, 0), done(units.size(), 0);
  Vec values(c_hat.begin(), c_hat.end());
  Vec latest = values;
  Realigner::Carry carry = realigner.begin(c_hat);
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t u = pick_unit(policy, c_hat, latest, done, units, t, rng);
    done[u] = 1;
    for (std::size_t i : units.members[u]) {
      mask[i] = 1;
      values[i] = truth[i];
    }
    latest = realigner.step(values, mask, carry);
    out.push_back(u);
  }
  return out;
}

double posthoc_loss(Realigner& realigner, std::span<const double> c_hat,
                    std::span<const double> truth, const SelectionUnits& units,
                    const std::vector<std::size_t>& trajectory, bool include_step0,
                    bool accumulate, double grad_scale) {
  return posthoc_core(realigner, c_hat, truth, units, &trajectory, nullptr, trajectory.size(),
                      nullptr, include_step0, accumulate, grad_scale);
}

double posthoc_validation_loss(const Realigner& realigner, const ConceptModel& base,
                               const Dataset& val, const SelectionUnits& units,
                               std::uint64_t seed) {
  if (val.empty()) throw ValueError("posthoc validation: empty dataset");
  const RealignerConfig& cfg = realigner.config();
  const std::size_t T = training_length(cfg, units);
  Realigner copy = realigner;
  Rng rng = make_rng(seed, 42);
  double total = 0.0;
  for (const auto& s : val) {
    const Vec c_hat = base.predict_concepts(s.x).probs;
    total += posthoc_core(copy, c_hat, s.c, units, nullptr, &cfg.training_policy, T, &rng,
                          cfg.include_step0, false, 0.0);
  }
  return total / static_cast<double>(val.size());
}

PosthocResult train_realigner_posthoc(const ConceptModel& base, const Dataset& train,
                                      const Dataset& val, const SelectionUnits& units,
                                      const RealignerConfig& config, std::uint64_t seed) {
  if (!base.frozen()) throw StateError("posthoc realignment requires a frozen base model");
  if (train.empty() || val.empty()) throw ValueError("train_realigner_posthoc: empty dataset");
  if (units.num_concepts != base.num_concepts()) {
    throw ShapeError("selection units do not match the base model's k");
  }
  const std::uint64_t before = base.checksum();
  const std::size_t T = training_length(config, units);
  const std::vector<Vec> train_hat = predicted_concepts(base, train);
  const std::vector<Vec> val_hat = predicted_concepts(base, val);

  PosthocResult out{Realigner(base.num_concepts(), config), {}, before};
  Realigner& r = out.realigner;
  r.init(seed);
  if (config.arch != RealignerArch::identity) {
    Rng rng = make_rng(seed, 41);
    Rng policy_rng = make_rng(seed, 43);
    const PolicyKind& policy = config.training_policy;
    auto batch = [&](std::span<const std::size_t> idx) {
      const double scale = 1.0 / static_cast<double>(idx.size());
      double total = 0.0;
      for (std::size_t i : idx) {
        total += posthoc_core(r, train_hat[i], train[i].c, units, nullptr, &policy, T,
                              &policy_rng, config.include_step0, true, scale);
      }
      return total * scale;
    };
    auto validate = [&] {
      Rng vr = make_rng(seed, 42);
      double total = 0.0;
      for (std::size_t i = 0; i < val.size(); ++i) {
        total += posthoc_core(r, val_hat[i], val[i].c, units, nullptr, &policy, T, &vr,
                              config.include_step0, false, 0.0);
      }
      return total / static_cast<double>(val.size());
    };
    run_training("realigner", r.parameters(), train.size(), batch, validate, config.train,
                 rng, out.history);
  }
  if (base.checksum() != before) {
    throw StateError("base model parameters changed during posthoc training");
  }
  return out;
}

ConcReaLoss conc_rea_loss(std::span<const double> c_hat, std::span<const double> c,
                          std::span<const double> kappa0, std::span<const double> kappaT,
                          double gamma, std::size_t T, std::span<const double> weights) {
  if (!(gamma >= 1.0)) throw ValueError("gamma must be >= 1");
  const double g = std::pow(gamma, static_cast<double>(T));
  const double w0 = 1.0 / (1.0 + g);
  const double wT = g / (1.0 + g);
  const LossGrad a = bce_loss_grad(c_hat, c, weights);
  const LossGrad b = bce_loss_grad(kappa0, c, weights);
  const LossGrad d = bce_loss_grad(kappaT, c, weights);
  ConcReaLoss out;
  out.value = 0.5 * (a.value + (b.value + g * d.value) / (1.0 + g));
  out.d_c_hat = a.grad;
  out.d_kappa0 = b.grad;
  out.d_kappaT = d.grad;
  for (double& v : out.d_c_hat) v *= 0.5;
  for (double& v : out.d_kappa0) v *= 0.5 * w0;
  for (double& v : out.d_kappaT) v *= 0.5 * wT;
  return out;
}

IntCemReaLoss intcem_rea_loss(CemModel& model, Realigner& realigner, const SampleRecord& s,
                              const std::vector<std::size_t>& trajectory,
                              const SelectionUnits& units, const IntCemConfig& config,
                              bool accumulate, double grad_scale) {
  const std::size_t k = model.num_concepts();
  const std::size_t T = trajectory.size();
  if (T > units.size()) throw ValueError("trajectory length T exceeds the number of concepts");
  if (!(config.gamma >= 1.0)) throw ValueError("gamma must be >= 1");
  if (realigner.num_concepts() != k) throw ShapeError("realigner and model disagree on k");

  CemEncodeCache ec;
  const ConceptPrediction pred = model.encode(s.x, &ec);
  const Vec& c_hat = pred.probs;

  // kappa_0: fresh unmasked call.
  const std::vector<char> none(k, 0);
  std::vector<RealignerStepCache> cache0(1);
  Realigner::Carry carry0 = realigner.begin(c_hat);
  const Vec kappa0 = realigner.step(c_hat, none, carry0, &cache0[0]);

  std::vector<char> mask(k, 0), done(units.size(), 0);
  Vec values = c_hat;
  Realigner::Carry carry = realigner.begin(c_hat);
  std::vector<RealignerStepCache> caches(T);
  std::vector<std::vector<char>> masks;
  Vec kappaT = kappa0;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t u = trajectory[t];
    if (u >= units.size() || done[u]) throw ValueError("invalid trajectory unit");
    done[u] = 1;
    for (std::size_t i : units.members[u]) {
      mask[i] = 1;
      values[i] = s.c[i];
    }
    kappaT = realigner.step(values, mask, carry, &caches[t]);
    masks.push_back(mask);
  }

  CemHeadCache pre_cache, post_cache;
  const Vec pre_logits = model.head_forward(pred, c_hat, &pre_cache);
  const Vec post_logits = model.head_forward(pred, kappaT, &post_cache);
  const LossGrad pre_ce = ce_loss_grad(pre_logits, s.y);
  const LossGrad post_ce = ce_loss_grad(post_logits, s.y);
  const double g = std::pow(config.gamma, static_cast<double>(T));
  const double w_pre = 1.0 / (1.0 + g);
  const double w_post = g / (1.0 + g);
  const ConcReaLoss conc =
      conc_rea_loss(c_hat, s.c, kappa0, kappaT, config.gamma, T, model.config().concept_weights);

  IntCemReaLoss out;
  out.pred = (pre_ce.value + g * post_ce.value) / (1.0 + g);
  out.conc = conc.value;

  std::vector<std::size_t> open;
  for (std::size_t u = 0; u < units.size(); ++u) {
    if (!done[u]) open.push_back(u);
  }
  Vec roll_d_unit;
  if (config.lambda_roll > 0.0 && !open.empty()) {
    std::size_t target = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t oi = 0; oi < open.size(); ++oi) {
      Vec probe = kappaT;
      for (std::size_t i : units.members[open[oi]]) probe[i] = s.c[i];
      const double ce = ce_loss(model.head_forward(pred, probe, nullptr), s.y);
      if (ce < best) {
        best = ce;
        target = oi;
      }
    }
    const Vec scores = model.policy_scores(kappaT);
    Vec unit_logits(open.size(), 0.0);
    for (std::size_t oi = 0; oi < open.size(); ++oi) {
      const auto& mem = units.members[open[oi]];
      for (std::size_t i : mem) unit_logits[oi] += scores[i];
      unit_logits[oi] /= static_cast<double>(mem.size());
    }
    const LossGrad roll = ce_loss_grad(unit_logits, target);
    out.roll = roll.value;
    roll_d_unit = roll.grad;
  }
  out.total = out.pred + config.lambda_conc * out.conc + config.lambda_roll * out.roll;
  if (!accumulate) return out;

  Vec d_probs(k, 0.0), d_kappaT(k, 0.0), d_kappa0(k, 0.0);
  Vec d_cp(pred.c_plus.size(), 0.0), d_cm(pred.c_minus.size(), 0.0);
  auto add_head = [&](const CemHeadCache& hc, std::span<const double> mix, const Vec& grad,
                      double w, Vec& d_mix) {
    Vec dl = grad;
    for (double& v : dl) v *= grad_scale * w;
    const CemHeadGrads hg = model.head_backward(hc, pred, mix, dl);
    for (std::size_t j = 0; j < d_cp.size(); ++j) {
      d_cp[j] += hg.d_c_plus[j];
      d_cm[j] += hg.d_c_minus[j];
    }
    for (std::size_t i = 0; i < k; ++i) d_mix[i] += hg.d_mix_probs[i];
  };
  add_head(pre_cache, c_hat, pre_ce.grad, w_pre, d_probs);
  add_head(post_cache, kappaT, post_ce.grad, w_post, d_kappaT);
  const double lc = grad_scale * config.lambda_conc;
  for (std::size_t i = 0; i < k; ++i) {
    d_probs[i] += lc * conc.d_c_hat[i];
    d_kappa0[i] += lc * conc.d_kappa0[i];
    d_kappaT[i] += lc * conc.d_kappaT[i];
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
    const Vec d_in = model.policy_backward(kappaT, d_scores);
    for (std::size_t i = 0; i < k; ++i) d_kappaT[i] += d_in[i];
  }

  if (T == 0) {
    for (std::size_t i = 0; i < k; ++i) d_kappa0[i] += d_kappaT[i];
  } else {
    std::vector<Vec> d_seq(T, Vec(k, 0.0));
    d_seq.back() = d_kappaT;
    const RealignerSequenceGrads sg = realigner.backward_sequence(caches, d_seq);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < k; ++i) {
        if (!masks[t][i]) d_probs[i] += sg.d_values[t][i];
      }
    }
    for (std::size_t i = 0; i < k; ++i) d_probs[i] += sg.d_initial[i];
  }
  const RealignerSequenceGrads g0 = realigner.backward_sequence(cache0, {d_kappa0});
  for (std::size_t i = 0; i < k; ++i) d_probs[i] += g0.d_values[0][i] + g0.d_initial[i];

  model.encode_backward(ec, pred, d_cp, d_cm, d_probs);
  return out;
}

IntCemReaResult train_intcem_rea(const Dataset& train, const Dataset& val,
                                 const CemConfig& model_config,
                                 const RealignerConfig& realigner_config,
                                 const IntCemConfig& config, const SelectionUnits& units,
                                 const TrainConfig& train_config, std::uint64_t seed) {
  if (train.empty() || val.empty()) throw ValueError("train_intcem_rea: empty dataset");
  if (!(config.gamma >= 1.0)) throw ValueError("gamma must be >= 1");
  CemConfig mc = model_config;
  mc.intervention_aware = true;
  if (config.lambda_roll > 0.0) mc.policy_head = true;
  IntCemReaResult out{CemModel(mc), Realigner(mc.num_concepts, realigner_config), {}};
  out.model.init(seed);
  out.realigner.init(seed + 1);
  ParamRefs params = out.model.parameters();
  for (ParamTensor* p : out.realigner.parameters()) params.push_back(p);

  const PolicyKind& policy = realigner_config.training_policy;
  Rng rng = make_rng(seed, 51);
  auto loss_for = [&](const SampleRecord& s, Rng& r, bool accumulate, double scale) {
    const std::size_t T = sample_trajectory_length(config, units.size(), r);
    const Vec c_hat = out.model.predict_concepts(s.x).probs;
    const auto traj = realigner_trajectory(out.realigner, c_hat, s.c, units, policy, T, r);
    return intcem_rea_loss(out.model, out.realigner, s, traj, units, config, accumulate, scale)
        .total;
  };
  auto batch = [&](std::span<const std::size_t> idx) {
    const double scale = 1.0 / static_cast<double>(idx.size());
    double total = 0.0;
    for (std::size_t i : idx) total += loss_for(train[i], rng, true, scale);
    return total * scale;
  };
  auto validate = [&] {
    Rng vr = make_rng(seed, 52);
    double total = 0.0;
    for (const auto& s : val) total += loss_for(s, vr, false, 0.0);
    return total / static_cast<double>(val.size());
  };
  run_training("intcem-rea", params, train.size(), batch, validate, train_config, rng,
               out.history);
  return out;
}

GridResult grid_search_realigner(const ConceptModel& base, const Dataset& train,
                                 const Dataset& val, const SelectionUnits& units,
                                 const RealignerConfig& base_config,
                                 const std::vector<double>& lrs, std::uint64_t seed) {
  if (lrs.empty()) throw ValueError("grid search needs at least one learning rate");
  const std::size_t k = base.num_concepts();
  const std::vector<std::size_t> widths{std::max<std::size_t>(1, k / 2), k, 2 * k};
  std::optional<GridResult> out;
  std::vector<GridRow> rows;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t layers = 1; layers <= 3; ++layers) {
    for (std::size_t width : widths) {
      for (double lr : lrs) {
        RealignerConfig cfg = base_config;
        cfg.hidden_layers = layers;
        cfg.hidden_width = width;
        cfg.train.lr = lr;
        PosthocResult r = train_realigner_posthoc(base, train, val, units, cfg, seed);
        const double loss = posthoc_validation_loss(r.realigner, base, val, units, seed);
        rows.push_back({layers, width, lr, loss});
        if (!out || loss < best) {
          best = loss;
          out = GridResult{std::move(r), cfg, {}};
        }
      }
    }
  }
  out->rows = std::move(rows);
  return std::move(*out);
}

}  // namespace cirm
