#pragma once

// Binary classification metrics: ROC / PR curves and areas, confusion-based
// scores and decision-curve net benefit.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <vector>

#include "vtwin/error.hpp"

namespace vtwin::metrics {

struct EvalSet {
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t size() const { return scores.size(); }

  void validate() const {
    if (scores.empty() || scores.size() != labels.size()) {
      throw Error("EvalSet: scores and labels must have equal length >= 1");
    }
    for (double s : scores) {
      if (!std::isfinite(s) || s < 0.0 || s > 1.0) throw Error("EvalSet: scores must be finite in [0, 1]");
    }
    for (int l : labels) {
      if (l != 0 && l != 1) throw Error("EvalSet: labels must be 0 or 1");
    }
  }
  std::size_t positives() const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1)); }
  double prevalence() const { return static_cast<double>(positives()) / static_cast<double>(size()); }
};

namespace detail {

/// Indices sorted by descending score, stable on index.
inline std::vector<std::size_t> order_desc(const EvalSet& e) {
  std::vector<std::size_t> idx(e.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return e.scores[a] > e.scores[b]; });
  return idx;
}

struct Step {
  double threshold;
  std::size_t tp, fp;
};

/// Cumulative (TP, FP) after each tie group in descending score order.
inline std::vector<Step> sweep(const EvalSet& e) {
  const auto idx = order_desc(e);
  std::vector<Step> out;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const double s = e.scores[idx[i]];
    while (i < idx.size() && e.scores[idx[i]] == s) {
      (e.labels[idx[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    out.push_back({s, tp, fp});
  }
  return out;
}

}  // namespace detail

/// Mann-Whitney AUROC with tied pairs counted 1/2 (average ranks).
inline double auroc(const EvalSet& e) {
  e.validate();
  const std::size_t pos = e.positives(), neg = e.size() - pos;
  if (pos == 0 || neg == 0) throw Error("auroc: both classes must be present");
  std::vector<std::size_t> idx(e.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return e.scores[a] < e.scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && e.scores[idx[j]] == e.scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t m = i; m < j; ++m) {
      if (e.labels[idx[m]] == 1) rank_sum += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

/// Step-wise area under the precision-recall curve (average precision).
inline double auprc(const EvalSet& e) {
  e.validate();
  const std::size_t pos = e.positives();
  if (pos == 0) throw Error("auprc: no positive cases");
  double area = 0.0, prev_recall = 0.0;
  for (const auto& s : detail::sweep(e)) {
    const double recall = static_cast<double>(s.tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

/// Predict positive when score >= threshold.
inline Confusion confusion_metrics(const EvalSet& e, double threshold = 0.5) {
  e.validate();
  Confusion c;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const bool pred = e.scores[i] >= threshold;
    const bool act = e.labels[i] == 1;
    if (pred && act) ++c.tp;
    else if (pred) ++c.fp;
    else if (act) ++c.fn;
    else ++c.tn;
  }
  c.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(e.size());
  const std::size_t denom = 2 * c.tp + c.fp + c.fn;
  c.f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
  return c;
}

struct NetBenefit {
  double model = 0.0;
  double treat_all = 0.0;
  double treat_none = 0.0;
};

/// NB(pt) = TP/n - FP/n * pt / (1 - pt), positive when score >= pt.
inline NetBenefit net_benefit(const EvalSet& e, double pt) {
  e.validate();
  if (!(pt > 0.0 && pt < 1.0)) throw Error("net_benefit: threshold probability must be in (0, 1)");
  const auto c = confusion_metrics(e, pt);
  const double n = static_cast<double>(e.size());
  const double odds = pt / (1.0 - pt);
  const double prev = e.prevalence();
  return {static_cast<double>(c.tp) / n - static_cast<double>(c.fp) / n * odds, prev - (1.0 - prev) * odds, 0.0};
}

struct RocPoint {
  double threshold, fpr, tpr;
};
struct PrPoint {
  double threshold, recall, precision;
};

inline std::vector<RocPoint> roc_curve(const EvalSet& e) {
  e.validate();
  const double pos = static_cast<double>(e.positives());
  const double neg = static_cast<double>(e.size()) - pos;
  std::vector<RocPoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  for (const auto& s : detail::sweep(e)) {
    out.push_back({s.threshold, neg > 0 ? static_cast<double>(s.fp) / neg : 0.0,
                   pos > 0 ? static_cast<double>(s.tp) / pos : 0.0});
  }
  return out;
}

inline std::vector<PrPoint> pr_curve(const EvalSet& e) {
  e.validate();
  const double pos = static_cast<double>(e.positives());
  std::vector<PrPoint> out;
  for (const auto& s : detail::sweep(e)) {
    out.push_back({s.threshold, pos > 0 ? static_cast<double>(s.tp) / pos : 0.0,
                   static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp)});
  }
  return out;
}

/// Decision-curve grid pt = 0.01, 0.02, ..., 0.99.
inline std::vector<double> decision_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 99; ++i) g.push_back(i / 100.0);
  return g;
}

inline void write_roc_csv(std::ostream& out, const EvalSet& e) {
  out << "threshold,fpr,tpr\n";
  for (const auto& p : roc_curve(e)) out << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
}

inline void write_pr_csv(std::ostream& out, const EvalSet& e) {
  out << "threshold,recall,precision\n";
  for (const auto& p : pr_curve(e)) out << p.threshold << ',' << p.recall << ',' << p.precision << '\n';
}

inline void write_decision_curve_csv(std::ostream& out, const EvalSet& e) {
  out << "pt,model,treat_all,treat_none\n";
  for (double pt : decision_grid()) {
    const auto nb = net_benefit(e, pt);
    out << pt << ',' << nb.model << ',' << nb.treat_all << ',' << nb.treat_none << '\n';
  }
}

}  // namespace vtwin::metrics
