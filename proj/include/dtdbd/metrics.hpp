#pragma once

// Per-domain error rates and the equality-difference bias measures.
// Label 1 is fake (positive), 0 is real.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "dtdbd/errors.hpp"

namespace dtdbd {

struct Confusion {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t support() const { return tp + fp + tn + fn; }
  std::uint64_t positives() const { return tp + fn; }
  std::uint64_t negatives() const { return fp + tn; }

  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct DomainConfusion {
  std::vector<Confusion> per_domain;
  Confusion overall;
};

inline DomainConfusion confusion_by_domain(const std::vector<int>& predictions,
                                           const std::vector<int>& labels,
                                           const std::vector<int>& domains, std::size_t num_domains) {
  if (predictions.size() != labels.size() || labels.size() != domains.size())
    throw InputError("confusion_by_domain: predictions, labels and domains differ in length");
  DomainConfusion out;
  out.per_domain.assign(num_domains, {});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], y = labels[i], d = domains[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1))
      throw InputError("confusion_by_domain: labels and predictions must be 0 or 1");
    if (d < 0 || static_cast<std::size_t>(d) >= num_domains)
      throw InputError("confusion_by_domain: domain " + std::to_string(d) + " out of range");
    auto& c = out.per_domain[static_cast<std::size_t>(d)];
    if (y == 1)
      (p == 1 ? c.tp : c.fn)++;
    else
      (p == 1 ? c.fp : c.tn)++;
  }
  for (const auto& c : out.per_domain) out.overall += c;
  return out;
}

/// Macro average of the fake-class and real-class F1. A class that is neither
/// present nor predicted scores 1.
inline double macro_f1(const Confusion& c) {
  auto f1 = [](std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
    const std::uint64_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  };
  return 0.5 * (f1(c.tp, c.fp, c.fn) + f1(c.tn, c.fn, c.fp));
}

struct DomainMetrics {
  double fnr = 0.0;
  double fpr = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  /// False when the domain had no positives (no negatives); the rate then
  /// mirrors the overall rate.
  bool fnr_defined = true;
  bool fpr_defined = true;
  bool empty = false;
};

struct MetricsReport {
  std::vector<DomainMetrics> per_domain;
  double overall_f1 = 0.0;
  double overall_fnr = 0.0;
  double overall_fpr = 0.0;
  double fned = 0.0;
  double fped = 0.0;
  double total = 0.0;
  std::vector<std::string> warnings;
};

/// FNED = sum_d |FNR - FNR_d|, FPED = sum_d |FPR - FPR_d|, Total = FNED + FPED.
/// Empty domains are excluded; a domain missing one class uses the overall
/// rate for that class and is flagged.
inline MetricsReport bias_report(const DomainConfusion& counts) {
  auto ratio = [](std::uint64_t a, std::uint64_t b) {
    return static_cast<double>(a) / static_cast<double>(b);
  };
  MetricsReport r;
  const auto& all = counts.overall;
  r.overall_f1 = macro_f1(all);
  r.overall_fnr = all.positives() ? ratio(all.fn, all.positives()) : 0.0;
  r.overall_fpr = all.negatives() ? ratio(all.fp, all.negatives()) : 0.0;
  if (!all.positives()) r.warnings.push_back("no positive samples overall; FNR set to 0");
  if (!all.negatives()) r.warnings.push_back("no negative samples overall; FPR set to 0");
  for (std::size_t d = 0; d < counts.per_domain.size(); ++d) {
    const auto& c = counts.per_domain[d];
    DomainMetrics m;
    m.support = c.support();
    if (m.support == 0) {
      m.empty = true;
      m.fnr_defined = m.fpr_defined = false;
      m.fnr = r.overall_fnr;
      m.fpr = r.overall_fpr;
      r.warnings.push_back("domain " + std::to_string(d) + " is empty; excluded");
      r.per_domain.push_back(m);
      continue;
    }
    m.f1 = macro_f1(c);
    if (c.positives()) {
      m.fnr = ratio(c.fn, c.positives());
    } else {
      m.fnr = r.overall_fnr;
      m.fnr_defined = false;
      r.warnings.push_back("domain " + std::to_string(d) + " has no positives; FNR undefined");
    }
    if (c.negatives()) {
      m.fpr = ratio(c.fp, c.negatives());
    } else {
      m.fpr = r.overall_fpr;
      m.fpr_defined = false;
      r.warnings.push_back("domain " + std::to_string(d) + " has no negatives; FPR undefined");
    }
    r.fned += std::abs(r.overall_fnr - m.fnr);
    r.fped += std::abs(r.overall_fpr - m.fpr);
    r.per_domain.push_back(m);
  }
  r.total = r.fned + r.fped;
  return r;
}

struct PairCheck {
  std::size_t i = 0, j = 0;
  double fnr_gap = 0.0;
  double fpr_gap = 0.0;
  bool pass = true;
};

/// Checks |FNR_i - FNR_j| <= eps and |FPR_i - FPR_j| <= eps for every pair of
/// non-empty domains.
inline std::vector<PairCheck> disparate_mistreatment_check(const MetricsReport& report, double epsilon) {
  std::vector<PairCheck> out;
  const auto& pd = report.per_domain;
  for (std::size_t i = 0; i < pd.size(); ++i)
    for (std::size_t j = i + 1; j < pd.size(); ++j) {
      if (pd[i].empty || pd[j].empty) continue;
      PairCheck p{i, j, std::abs(pd[i].fnr - pd[j].fnr), std::abs(pd[i].fpr - pd[j].fpr), true};
      p.pass = p.fnr_gap <= epsilon && p.fpr_gap <= epsilon;
      out.push_back(p);
    }
  return out;
}

}  // namespace dtdbd
