#pragma once

// Training pipelines: the adversarial (unbiased) teacher, the domain-aware
// clean teacher, the distilled student and its ablations, plus evaluation.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dtdbd/autodiff.hpp"
#include "dtdbd/data.hpp"
#include "dtdbd/losses.hpp"
#include "dtdbd/metrics.hpp"
#include "dtdbd/models.hpp"
#include "dtdbd/schedule.hpp"

namespace dtdbd {

enum class OptimizerKind { sgd, adam };

enum class TrainMode { ce_baseline, dat, dat_ie, dnd_only, add_only, dtdbd, dtdbd_no_daa };

inline const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::ce_baseline: return "ce_baseline";
    case TrainMode::dat: return "dat";
    case TrainMode::dat_ie: return "dat_ie";
    case TrainMode::dnd_only: return "dnd_only";
    case TrainMode::add_only: return "add_only";
    case TrainMode::dtdbd: return "dtdbd";
    case TrainMode::dtdbd_no_daa: return "dtdbd_no_daa";
  }
  return "?";
}

inline TrainMode train_mode_from_string(const std::string& s) {
  for (auto m : {TrainMode::ce_baseline, TrainMode::dat, TrainMode::dat_ie, TrainMode::dnd_only,
                 TrainMode::add_only, TrainMode::dtdbd, TrainMode::dtdbd_no_daa})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown training mode '" + s + "'");
}

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + s + "'");
}

struct TrainConfig {
  std::size_t epochs = 20;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  /// Epochs without improvement of the selection metric before stopping; 0 disables.
  std::size_t patience = 5;
  TrainMode mode = TrainMode::ce_baseline;
  /// Student runs only: pins (w_add, w_dkd, w_s) for every epoch.
  std::optional<LossWeights> fixed_weights;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("learning_rate must be finite and non-negative");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  }
};

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerState {
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m, v;
};

/// SGD: p -= lr * g. Adam: bias-corrected first/second moments. Parameters
/// without a gradient are left untouched.
inline void optimizer_step(ModelParams& params, const ad::Gradients& grads, OptimizerState& state,
                           const TrainConfig& cfg) {
  for (const auto& [name, g] : grads) {
    if (!params.tensors.count(name)) throw ContractError("gradient for unknown parameter '" + name + "'");
    if (!g.all_finite()) throw DivergenceError("non-finite gradient for parameter '" + name + "'");
  }
  ++state.step;
  const double lr = cfg.learning_rate;
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    auto& p = params.tensors.at(name);
    if (p.shape() != g.shape()) throw ShapeError("gradient shape mismatch for '" + name + "'");
    if (cfg.optimizer == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
      continue;
    }
    auto& m = state.m.try_emplace(name, g.shape(), 0.0).first->second;
    auto& v = state.v.try_emplace(name, g.shape(), 0.0).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
      v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Batches and inference

inline void check_compatible(const EncoderConfig& cfg, const Dataset& ds) {
  if (ds.feature_size() != cfg.input_size())
    throw ShapeError("dataset features have " + std::to_string(ds.feature_size()) +
                     " values per sample; encoder expects " + std::to_string(cfg.input_size()));
  if (ds.layout == Layout::matrix && cfg.kind == EncoderKind::conv && ds.embed_dim != cfg.embed_dim)
    throw ShapeError("dataset token width does not match encoder embed_dim");
}

/// [B, L, E] for conv, [B, E] for mlp.
inline Tensor batch_input(const EncoderConfig& cfg, const Dataset& ds, const std::vector<std::size_t>& idx) {
  check_compatible(cfg, ds);
  const std::size_t width = cfg.input_size();
  std::vector<double> buf;
  buf.reserve(idx.size() * width);
  for (auto i : idx) {
    const auto& f = ds.samples.at(i).features;
    buf.insert(buf.end(), f.begin(), f.end());
  }
  if (cfg.kind == EncoderKind::conv) return Tensor({idx.size(), cfg.seq_len, cfg.embed_dim}, std::move(buf));
  return Tensor({idx.size(), width}, std::move(buf));
}

inline std::vector<int> gather(const std::vector<int>& v, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

inline Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
  const std::size_t cols = t.dim(1);
  Tensor out({idx.size(), cols}, 0.0);
  for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(&t[idx[r] * cols], cols, &out[r * cols]);
  return out;
}

struct ForwardOutputs {
  Tensor features;  // [N, F]
  Tensor logits;    // [N, 2]
};

/// Frozen forward pass over a whole dataset in fixed-size chunks.
inline ForwardOutputs forward_all(const ModelParams& params, const Dataset& ds, std::size_t chunk = 256) {
  check_compatible(params.config, ds);
  BoundParams bp(params, false);
  const std::size_t n = ds.size(), f = params.config.feature_dim();
  ForwardOutputs out{Tensor({std::max<std::size_t>(n, 1), f}, 0.0), Tensor({std::max<std::size_t>(n, 1), 2}, 0.0)};
  const auto domains = ds.domains();
  for (std::size_t s = 0; s < n; s += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = s; i < std::min(n, s + chunk); ++i) idx.push_back(i);
    auto feats = encode(bp, ad::Var::constant(batch_input(params.config, ds, idx)));
    auto logits = label_logits(bp, feats, gather(domains, idx));
    std::copy(feats.value().data().begin(), feats.value().data().end(), &out.features[s * f]);
    std::copy(logits.value().data().begin(), logits.value().data().end(), &out.logits[s * 2]);
  }
  return out;
}

/// Argmax of the label logits; ties predict real (0).
inline std::vector<int> predict(const ModelParams& params, const Dataset& ds) {
  const auto out = forward_all(params, ds);
  std::vector<int> pred(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) pred[i] = out.logits.at(i, 1) > out.logits.at(i, 0) ? 1 : 0;
  return pred;
}

inline MetricsReport evaluate(const ModelParams& params, const Dataset& ds) {
  return bias_report(confusion_by_domain(predict(params, ds), ds.labels(), ds.domains(), ds.num_domains));
}

// ---------------------------------------------------------------------------
// Per-step objectives

struct StepLosses {
  ad::Var total;
  double ce = 0.0;
  double add = 0.0;
  double dkd = 0.0;
  double domain_ce = 0.0;
  double entropy = 0.0;
};

/// Adversarial teacher objective for one batch. Gradient reversal (scale
/// alpha) sits between the encoder and the trainable domain head; the entropy
/// term reads the unreversed features through a frozen copy of the head.
inline StepLosses adversarial_objective(const BoundParams& bp, const Tensor& input,
                                        const std::vector<int>& labels, const std::vector<int>& domains,
                                        const DistillConfig& dcfg) {
  auto f = encode(bp, ad::Var::constant(input));
  auto ly = label_logits(bp, f, domains);
  auto ld = domain_logits(bp, ad::grad_reverse(f, dcfg.alpha));
  const auto& p = bp.params();
  auto le = classify(ad::Var::constant(p.at(param_names::domain_weight)),
                     ad::Var::constant(p.at(param_names::domain_bias)), f);
  auto t = dat_ie_loss(ly, ld, le, labels, domains, dcfg);
  return {t.total, t.label_ce.item(), 0.0, 0.0, t.domain_ce.item(), t.entropy.item()};
}

/// Student objective for one batch. `teacher_features` and `clean_logits` are
/// read as constants regardless of how they were produced.
inline StepLosses distill_objective(const BoundParams& student, const Tensor& input,
                                    const std::vector<int>& labels, const std::vector<int>& domains,
                                    const ad::Var& teacher_features, const ad::Var& clean_logits,
                                    const LossWeights& w, const DistillConfig& dcfg) {
  auto f = encode(student, ad::Var::constant(input));
  auto ly = label_logits(student, f, domains);
  auto l_ce = cross_entropy(ly, labels);
  auto m_s = pairwise_sq_distances(f);
  auto m_t = pairwise_sq_distances(ad::detach(teacher_features));
  auto l_add = add_loss(m_t, m_s, dcfg);
  auto l_dkd = dkd_loss(ad::detach(clean_logits), ly, dcfg.tau, dcfg.kl_direction);
  auto total = overall_loss(l_add, l_dkd, l_ce, w);
  return {total, l_ce.item(), l_add.item(), l_dkd.item(), 0.0, 0.0};
}

// ---------------------------------------------------------------------------
// Generic loop

struct EpochRecord {
  std::size_t epoch = 0;
  double loss_total = 0.0, loss_ce = 0.0, loss_add = 0.0, loss_dkd = 0.0, loss_domain = 0.0,
         loss_entropy = 0.0;
  double omega_add = 0.0, omega_dkd = 0.0;
  double val_f1 = 0.0, val_fned = 0.0, val_fped = 0.0, val_total = 0.0;
  std::uint64_t param_checksum = 0;
  std::vector<double> step_losses;
};

struct TrainResult {
  ModelParams best;
  ModelParams last;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
};

enum class Selection { best_f1, best_total, total_then_f1 };

namespace detail {

inline bool improves(Selection sel, const MetricsReport& cand, const MetricsReport& best) {
  switch (sel) {
    case Selection::best_f1: return cand.overall_f1 > best.overall_f1;
    case Selection::best_total: return cand.total < best.total;
    case Selection::total_then_f1:
      return cand.total < best.total || (cand.total == best.total && cand.overall_f1 > best.overall_f1);
  }
  return false;
}

using StepFn = std::function<StepLosses(const BoundParams&, const std::vector<std::size_t>&, std::size_t epoch)>;
using EpochHook = std::function<void(EpochRecord&, const MetricsReport& val)>;
using EpochStart = std::function<void(EpochRecord&)>;

inline TrainResult run_loop(ModelParams params, const Dataset& train, const Dataset& val,
                            const TrainConfig& cfg, Selection sel, const StepFn& step,
                            const EpochStart& on_start = {}, const EpochHook& on_end = {}) {
  cfg.validate();
  check_compatible(params.config, train);
  if (!val.empty()) check_compatible(params.config, val);
  OptimizerState opt;
  TrainResult res{params, params, 0, {}};
  std::optional<MetricsReport> best;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    if (on_start) on_start(rec);
    const auto plan = batches(train, cfg.batch_size, cfg.seed, epoch);
    double n_seen = 0.0;
    for (const auto& idx : plan) {
      BoundParams bp(params, true);
      auto l = step(bp, idx, epoch);
      const double value = l.total.item();
      if (!std::isfinite(value))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch));
      auto grads = ad::backward(l.total);
      optimizer_step(params, grads, opt, cfg);
      const double w = static_cast<double>(idx.size());
      n_seen += w;
      rec.step_losses.push_back(value);
      rec.loss_total += w * value;
      rec.loss_ce += w * l.ce;
      rec.loss_add += w * l.add;
      rec.loss_dkd += w * l.dkd;
      rec.loss_domain += w * l.domain_ce;
      rec.loss_entropy += w * l.entropy;
    }
    for (double* v : {&rec.loss_total, &rec.loss_ce, &rec.loss_add, &rec.loss_dkd, &rec.loss_domain,
                      &rec.loss_entropy})
      *v /= std::max(n_seen, 1.0);
    rec.param_checksum = params.checksum();
    MetricsReport vr = val.empty() ? MetricsReport{} : evaluate(params, val);
    rec.val_f1 = vr.overall_f1;
    rec.val_fned = vr.fned;
    rec.val_fped = vr.fped;
    rec.val_total = vr.total;
    if (on_end) on_end(rec, vr);
    res.history.push_back(rec);
    if (!best || improves(sel, vr, *best)) {
      best = vr;
      res.best = params;
      res.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  res.last = std::move(params);
  return res;
}

}  // namespace detail

/// Plain cross-entropy training of any model; selects the best validation F1.
inline TrainResult train_ce(ModelParams init, const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
  const auto labels = train.labels();
  const auto domains = train.domains();
  const auto& ecfg = init.config;
  return detail::run_loop(std::move(init), train, val, cfg, Selection::best_f1,
                          [&](const BoundParams& bp, const std::vector<std::size_t>& idx, std::size_t) {
                            auto f = encode(bp, ad::Var::constant(batch_input(ecfg, train, idx)));
                            auto l = cross_entropy(label_logits(bp, f, gather(domains, idx)), gather(labels, idx));
                            return StepLosses{l, l.item()};
                          });
}

/// Student-architecture model trained with CE only.
inline TrainResult train_ce_baseline(const EncoderConfig& student, const Dataset& train, const Dataset& val,
                                     const TrainConfig& cfg) {
  return train_ce(init_params(student, train.num_domains, cfg.seed), train, val, cfg);
}

/// Domain-adversarial teacher (mode dat_ie, or dat without the entropy term).
/// Selects the best validation Total.
inline TrainResult train_unbiased_teacher(const EncoderConfig& encoder, const Dataset& train,
                                          const Dataset& val, const TrainConfig& cfg, DistillConfig dcfg) {
  if (cfg.mode != TrainMode::dat_ie && cfg.mode != TrainMode::dat)
    throw ConfigError("unbiased teacher requires mode dat_ie or dat");
  if (train.num_domains < 2) throw ConfigError("adversarial training needs at least two domains");
  if (cfg.mode == TrainMode::dat) dcfg.beta_override = 0.0;
  dcfg.validate();
  const auto labels = train.labels();
  const auto domains = train.domains();
  return detail::run_loop(init_params(encoder, train.num_domains, cfg.seed), train, val, cfg,
                          Selection::best_total,
                          [&](const BoundParams& bp, const std::vector<std::size_t>& idx, std::size_t) {
                            return adversarial_objective(bp, batch_input(encoder, train, idx),
                                                         gather(labels, idx), gather(domains, idx), dcfg);
                          });
}

/// Domain-aware teacher (see clean_teacher_config) trained with CE.
inline TrainResult train_clean_teacher(const EncoderConfig& student, const Dataset& train, const Dataset& val,
                                       const TrainConfig& cfg) {
  if (train.num_domains < 2) throw ConfigError("clean teacher needs at least two domains");
  return train_ce(init_params(clean_teacher_config(student), train.num_domains, cfg.seed), train, val, cfg);
}

/// Loss weights a student mode starts from.
inline LossWeights initial_weights(TrainMode mode, const DaaConfig& daa) {
  switch (mode) {
    case TrainMode::add_only: return {1.0, 0.0, daa.omega_s};
    case TrainMode::dnd_only: return {0.0, 1.0, daa.omega_s};
    case TrainMode::dtdbd:
    case TrainMode::dtdbd_no_daa: {
      auto s = DistillState::initial(daa);
      return {s.omega_add, s.omega_dkd, s.omega_s};
    }
    default: throw ConfigError(std::string("mode ") + to_string(mode) + " is not a student distillation mode");
  }
}

/// Dual-teacher distillation of a freshly initialised student. Teacher
/// outputs are precomputed once (the teachers are frozen) and sliced per
/// batch, so M_T is built on exactly the student's mini-batch. In mode dtdbd
/// the weights are re-balanced after every epoch from validation F1/Total.
inline TrainResult train_student_dtdbd(const EncoderConfig& student, const Dataset& train, const Dataset& val,
                                       const ModelParams& unbiased_teacher, const ModelParams& clean_teacher,
                                       const TrainConfig& cfg, const DistillConfig& dcfg, const DaaConfig& daa) {
  dcfg.validate();
  daa.validate();
  if (!unbiased_teacher.config.same_encoder(student) || unbiased_teacher.config.domain_embedding != 0)
    throw ConfigError("unbiased teacher must share the student's encoder configuration");
  check_compatible(clean_teacher.config, train);
  const bool adaptive = cfg.mode == TrainMode::dtdbd && !cfg.fixed_weights;
  DistillState state = DistillState::initial(daa);
  LossWeights w = cfg.fixed_weights ? *cfg.fixed_weights : initial_weights(cfg.mode, daa);
  if (adaptive) w = {state.omega_add, state.omega_dkd, state.omega_s};

  const Tensor teacher_feats = forward_all(unbiased_teacher, train).features;
  const Tensor clean_logits = forward_all(clean_teacher, train).logits;
  const auto labels = train.labels();
  const auto domains = train.domains();

  return detail::run_loop(
      init_params(student, train.num_domains, cfg.seed), train, val, cfg, Selection::total_then_f1,
      [&](const BoundParams& bp, const std::vector<std::size_t>& idx, std::size_t) {
        return distill_objective(bp, batch_input(student, train, idx), gather(labels, idx), gather(domains, idx),
                                 ad::Var::constant(gather_rows(teacher_feats, idx)),
                                 ad::Var::constant(gather_rows(clean_logits, idx)), w, dcfg);
      },
      [&](EpochRecord& rec) {
        rec.omega_add = w.add;
        rec.omega_dkd = w.dkd;
      },
      [&](EpochRecord&, const MetricsReport& vr) {
        if (!adaptive) return;
        state.history.push_back({vr.overall_f1, vr.total});
        if (auto d = compute_deltas(state.history)) {
          state = update_distill_weights(state, *d, daa, train.num_domains);
          w = {state.omega_add, state.omega_dkd, state.omega_s};
        }
      });
}

// ---------------------------------------------------------------------------
// Logs

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline const char* kMetricsCsvHeader =
    "epoch,split,f1,fned,fped,total,omega_add,omega_dkd,loss_total,loss_ce,loss_add,loss_dkd,loss_domain,loss_entropy\n";

/// Per-epoch validation rows, optionally followed by a final test row.
inline std::string metrics_csv(const TrainResult& r, const MetricsReport* test = nullptr) {
  std::string out = kMetricsCsvHeader;
  for (const auto& e : r.history) {
    out += std::to_string(e.epoch) + ",val," + fmt17(e.val_f1) + "," + fmt17(e.val_fned) + "," +
           fmt17(e.val_fped) + "," + fmt17(e.val_total) + "," + fmt17(e.omega_add) + "," + fmt17(e.omega_dkd) +
           "," + fmt17(e.loss_total) + "," + fmt17(e.loss_ce) + "," + fmt17(e.loss_add) + "," +
           fmt17(e.loss_dkd) + "," + fmt17(e.loss_domain) + "," + fmt17(e.loss_entropy) + "\n";
  }
  if (test) {
    const auto& b = r.history.empty() ? EpochRecord{} : r.history[r.best_epoch];
    out += std::to_string(r.best_epoch) + ",test," + fmt17(test->overall_f1) + "," + fmt17(test->fned) + "," +
           fmt17(test->fped) + "," + fmt17(test->total) + "," + fmt17(b.omega_add) + "," + fmt17(b.omega_dkd) +
           ",,,,,,\n";
  }
  return out;
}

/// Weight trajectory: epoch, omega_add, omega_dkd, val_f1, val_total.
inline std::string trajectory_csv(const TrainResult& r) {
  std::string out = "epoch,omega_add,omega_dkd,val_f1,val_total\n";
  for (const auto& e : r.history)
    out += std::to_string(e.epoch) + "," + fmt17(e.omega_add) + "," + fmt17(e.omega_dkd) + "," + fmt17(e.val_f1) +
           "," + fmt17(e.val_total) + "\n";
  return out;
}

}  // namespace dtdbd
