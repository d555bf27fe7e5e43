#pragma once

// Momentum-based re-balancing of the two distillation weights between epochs.

#include <algorithm>
#include <optional>
#include <vector>

#include "dtdbd/errors.hpp"

namespace dtdbd {

struct DaaConfig {
  double momentum = 0.9;
  double initial_omega_add = 0.5;
  double omega_s = 1.0;
  double omega_min = 0.05;
  double omega_max = 0.95;
  /// Negates the (dBias - dF1) term.
  bool sign_flip = false;
  /// Divide dBias by 2|D| before the update.
  bool normalize_bias = false;

  void validate() const {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(omega_min <= omega_max && omega_min >= 0.0 && omega_max <= 1.0))
      throw ConfigError("omega bounds must satisfy 0 <= min <= max <= 1");
    if (!(omega_s >= 0.0)) throw ConfigError("omega_s must be non-negative");
  }
};

struct EpochMetrics {
  double f1 = 0.0;
  double total = 0.0;
};

struct DistillState {
  double omega_add = 0.5;
  double omega_dkd = 0.5;
  double omega_s = 1.0;
  std::vector<EpochMetrics> history;

  static DistillState initial(const DaaConfig& cfg) {
    cfg.validate();
    const double w = std::clamp(cfg.initial_omega_add, cfg.omega_min, cfg.omega_max);
    return DistillState{w, 1.0 - w, cfg.omega_s, {}};
  }
};

struct Deltas {
  double f1 = 0.0;
  double bias = 0.0;
};

/// Change in validation F1 and Total between the two most recent epochs;
/// nullopt until two epochs have been recorded.
inline std::optional<Deltas> compute_deltas(const std::vector<EpochMetrics>& history) {
  if (history.size() < 2) return std::nullopt;
  const auto& last = history[history.size() - 1];
  const auto& prev = history[history.size() - 2];
  return Deltas{last.f1 - prev.f1, last.total - prev.total};
}

/// omega_add <- clamp(m * omega_add - (1 - m) * s * (dBias - dF1)), omega_dkd = 1 - omega_add.
/// `num_domains` is only consulted when normalize_bias is set.
inline DistillState update_distill_weights(DistillState state, const Deltas& d, const DaaConfig& cfg,
                                           std::size_t num_domains = 1) {
  cfg.validate();
  double bias = d.bias;
  if (cfg.normalize_bias) bias /= 2.0 * static_cast<double>(std::max<std::size_t>(num_domains, 1));
  const double s = cfg.sign_flip ? -1.0 : 1.0;
  const double m = cfg.momentum;
  const double raw = m * state.omega_add - (1.0 - m) * s * (bias - d.f1);
  state.omega_add = std::clamp(raw, cfg.omega_min, cfg.omega_max);
  state.omega_dkd = 1.0 - state.omega_add;
  return state;
}

}  // namespace dtdbd
