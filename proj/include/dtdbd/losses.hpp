#pragma once

// Training objectives: supervised cross-entropy, the domain-entropy
// regularizer, the adversarial teacher objective, relational (pairwise
// distance) distillation, logit distillation, and their weighted sum.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dtdbd/autodiff.hpp"
#include "dtdbd/models.hpp"

namespace dtdbd {

enum class KlDirection {
  /// D_KL(P_teacher || P_student): teacher distribution is the target.
  teacher_as_target,
  /// D_KL(P_student || P_teacher): the operand order of a kl_div(log P_T, P_S) call.
  literal_paper_order,
};

inline const char* to_string(KlDirection d) {
  return d == KlDirection::teacher_as_target ? "teacher_as_target" : "literal_paper_order";
}

inline KlDirection kl_direction_from_string(const std::string& s) {
  if (s == "teacher_as_target") return KlDirection::teacher_as_target;
  if (s == "literal_paper_order") return KlDirection::literal_paper_order;
  throw ConfigError("unknown kl_direction '" + s + "'");
}

struct DistillConfig {
  double tau = 4.0;
  /// Weight of the domain cross-entropy; also the gradient-reversal scale.
  double alpha = 1.0;
  /// Entropy weight. Unset means 0.2 * alpha.
  std::optional<double> beta_override;
  bool include_diagonal = true;
  KlDirection kl_direction = KlDirection::teacher_as_target;

  double beta() const { return beta_override ? *beta_override : 0.2 * alpha; }

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
    if (!(beta() >= 0.0)) throw ConfigError("beta must be non-negative");
  }
};

inline void check_labels(const std::vector<int>& labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows)
    throw ShapeError("label count " + std::to_string(labels.size()) + " != batch " + std::to_string(rows));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw InputError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

/// Mean over the batch of -log softmax(logits)[label].
inline ad::Var cross_entropy(const ad::Var& logits, const std::vector<int>& labels) {
  if (logits.value().rank() != 2) throw ShapeError("cross_entropy: logits must be [B, C]");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  check_labels(labels, b, c);
  Tensor mask({b, c}, 0.0);
  for (std::size_t i = 0; i < b; ++i) mask.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  auto picked = ad::sum(ad::mul(ad::log_softmax_rows(logits), ad::Var::constant(std::move(mask))));
  return ad::scale(picked, -1.0 / static_cast<double>(b));
}

/// Mean over the batch of sum_k p_k log p_k with p = softmax(row). Lies in
/// [-log K, 0]; an underflowed p_k = 0 contributes exactly 0.
inline ad::Var information_entropy_loss(const ad::Var& domain_logits) {
  if (domain_logits.value().rank() != 2 || domain_logits.dim(1) < 2)
    throw ShapeError("information_entropy_loss: expected [B, K] with K >= 2");
  auto p = ad::softmax_rows(domain_logits);
  auto logp = ad::log_softmax_rows(domain_logits);
  return ad::scale(ad::sum(ad::mul(p, logp)), 1.0 / static_cast<double>(domain_logits.dim(0)));
}

struct DatIeTerms {
  ad::Var total;
  ad::Var label_ce;
  ad::Var domain_ce;
  ad::Var entropy;
};

/// L = CE(label) + alpha * CE(domain) + beta * IE.
///
/// `domain_logits_reversed` should come from encoder features passed through
/// grad_reverse into the trainable domain head. `entropy_logits` should come
/// from the unreversed features through a frozen copy of the domain head, so
/// the entropy term acts on the encoder only.
inline DatIeTerms dat_ie_loss(const ad::Var& label_logits, const ad::Var& domain_logits_reversed,
                              const ad::Var& entropy_logits, const std::vector<int>& labels,
                              const std::vector<int>& domains, const DistillConfig& cfg) {
  cfg.validate();
  DatIeTerms t;
  t.label_ce = cross_entropy(label_logits, labels);
  t.domain_ce = cross_entropy(domain_logits_reversed, domains);
  t.entropy = information_entropy_loss(entropy_logits);
  t.total = ad::add(ad::add(t.label_ce, ad::scale(t.domain_ce, cfg.alpha)),
                    ad::scale(t.entropy, cfg.beta()));
  return t;
}

/// [B, F] features -> [B, B] squared Euclidean distances.
inline ad::Var pairwise_sq_distances(const ad::Var& features) {
  if (features.value().rank() != 2) throw ShapeError("pairwise_sq_distances: expected [B, F]");
  if (features.dim(0) < 2) throw InputError("pairwise_sq_distances: batch needs at least 2 samples");
  return ad::sq_dist_matrix(features);
}

namespace detail {

inline constexpr double kMasked = -1e30;

/// Row-mean KL between softmax(teacher_logits) and softmax(student_logits).
/// The teacher side is always treated as a constant.
inline ad::Var kl_rows(const ad::Var& teacher_logits, const ad::Var& student_logits,
                       KlDirection dir) {
  const std::size_t rows = student_logits.dim(0);
  const Tensor& t = teacher_logits.value();
  const Tensor log_pt = ad::log_softmax_rows(t);
  if (dir == KlDirection::teacher_as_target) {
    const Tensor pt = ad::softmax_rows(t);
    double self = 0.0;
    for (std::size_t i = 0; i < pt.size(); ++i)
      if (pt[i] > 0.0) self += pt[i] * log_pt[i];
    auto cross = ad::sum(ad::mul(ad::Var::constant(pt), ad::log_softmax_rows(student_logits)));
    auto kl = ad::sub(ad::Var::constant(Tensor::scalar(self)), cross);
    return ad::scale(kl, 1.0 / static_cast<double>(rows));
  }
  auto ps = ad::softmax_rows(student_logits);
  auto diff = ad::sub(ad::log_softmax_rows(student_logits), ad::Var::constant(log_pt));
  return ad::scale(ad::sum(ad::mul(ps, diff)), 1.0 / static_cast<double>(rows));
}

}  // namespace detail

/// tau^2 * mean_rows KL over softmax(M / tau) rows of the teacher and student
/// distance matrices. Gradients reach the student matrix only.
inline ad::Var add_loss(const ad::Var& teacher_dist, const ad::Var& student_dist,
                        const DistillConfig& cfg) {
  cfg.validate();
  if (teacher_dist.shape() != student_dist.shape() || student_dist.value().rank() != 2 ||
      student_dist.dim(0) != student_dist.dim(1))
    throw ShapeError("add_loss: expected matching square matrices, got " +
                     shape_str(teacher_dist.shape()) + " and " + shape_str(student_dist.shape()));
  const double inv_tau = 1.0 / cfg.tau;
  Tensor t = teacher_dist.value();
  for (auto& v : t.data()) v *= inv_tau;
  auto s = ad::scale(student_dist, inv_tau);
  if (!cfg.include_diagonal) {
    const std::size_t b = t.dim(0);
    Tensor mask({b, b}, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
      mask.at(i, i) = detail::kMasked;
      t.at(i, i) = detail::kMasked;
    }
    s = ad::add(s, ad::Var::constant(std::move(mask)));
  }
  return ad::scale(detail::kl_rows(ad::Var::constant(std::move(t)), s, cfg.kl_direction),
                   cfg.tau * cfg.tau);
}

/// tau^2 * mean_batch KL(softmax(teacher / tau) || softmax(student / tau)).
inline ad::Var dkd_loss(const ad::Var& teacher_logits, const ad::Var& student_logits, double tau,
                        KlDirection dir = KlDirection::teacher_as_target) {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (teacher_logits.shape() != student_logits.shape() || student_logits.value().rank() != 2)
    throw ShapeError("dkd_loss: logits shapes differ " + shape_str(teacher_logits.shape()) + " vs " +
                     shape_str(student_logits.shape()));
  Tensor t = teacher_logits.value();
  for (auto& v : t.data()) v /= tau;
  auto s = ad::scale(student_logits, 1.0 / tau);
  return ad::scale(detail::kl_rows(ad::Var::constant(std::move(t)), s, dir), tau * tau);
}

struct LossWeights {
  double add = 0.0;
  double dkd = 0.0;
  double student = 1.0;
};

/// w_add * L_add + w_dkd * L_dkd + w_s * L_ce.
inline ad::Var overall_loss(const ad::Var& l_add, const ad::Var& l_dkd, const ad::Var& l_ce,
                            const LossWeights& w) {
  for (double v : {w.add, w.dkd, w.student})
    if (!std::isfinite(v) || v < 0.0)
      throw ContractError("overall_loss: weights must be finite and non-negative");
  return ad::add(ad::add(ad::scale(l_add, w.add), ad::scale(l_dkd, w.dkd)),
                 ad::scale(l_ce, w.student));
}

}  // namespace dtdbd
