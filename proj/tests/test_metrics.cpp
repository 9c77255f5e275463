#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "vtwin/metrics.hpp"

using namespace vtwin;
using namespace vtwin::metrics;

namespace {

const EvalSet kFour{{0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}};

double brute_auroc(const EvalSet& e) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    for (std::size_t j = 0; j < e.size(); ++j) {
      if (e.labels[i] != 1 || e.labels[j] != 0) continue;
      pairs += 1;
      wins += e.scores[i] > e.scores[j] ? 1.0 : (e.scores[i] == e.scores[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

/// Average precision by enumerating every distinct threshold.
double brute_auprc(const EvalSet& e) {
  std::vector<double> th(e.scores);
  std::sort(th.begin(), th.end(), std::greater<>());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  double pos = 0;
  for (int l : e.labels) pos += l;
  double area = 0, prev = 0;
  for (double t : th) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (e.scores[i] >= t) (e.labels[i] ? tp : fp) += 1;
    }
    area += (tp / pos - prev) * tp / (tp + fp);
    prev = tp / pos;
  }
  return area;
}

}  // namespace

TEST(Auroc, Examples) {
  EXPECT_EQ(auroc({{0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}}), 1.0);
  EXPECT_DOUBLE_EQ(auroc(kFour), 0.75);
  EXPECT_EQ(auroc({{0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}}), 0.5);
  EXPECT_THROW(auroc({{0.1, 0.2}, {1, 1}}), Error);
}

TEST(Auroc, MonotoneTransformInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  EvalSet e;
  for (int i = 0; i < 200; ++i) {
    e.scores.push_back(u(rng));
    e.labels.push_back(u(rng) < 0.4);
  }
  EvalSet t = e;
  for (auto& s : t.scores) s = std::pow(s, 3.0);
  EXPECT_DOUBLE_EQ(auroc(e), auroc(t));
  EvalSet flip = e;
  for (auto& l : flip.labels) l = 1 - l;
  EXPECT_NEAR(auroc(e) + auroc(flip), 1.0, 1e-12);
}

TEST(Auprc, Examples) {
  EXPECT_EQ(auprc({{0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}}), 1.0);
  EXPECT_NEAR(auprc(kFour), brute_auprc(kFour), 1e-12);
  EXPECT_NEAR(auprc(kFour), 5.0 / 6.0, 1e-12);
  EXPECT_THROW(auprc({{0.1, 0.2}, {0, 0}}), Error);
}

TEST(Auprc, RandomScoresApproachPrevalence) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  EvalSet e;
  for (int i = 0; i < 10000; ++i) {
    e.scores.push_back(u(rng));
    e.labels.push_back(u(rng) < 0.3);
  }
  EXPECT_NEAR(auprc(e), e.prevalence(), 0.05);
}

TEST(Confusion, Examples) {
  const auto all = confusion_metrics({{0.9, 0.1, 0.7}, {1, 0, 1}});
  EXPECT_EQ(all.accuracy, 1.0);
  EXPECT_EQ(all.f1, 1.0);
  const auto neg = confusion_metrics({{0.1, 0.2, 0.3}, {1, 0, 1}});
  EXPECT_EQ(neg.f1, 0.0);
  const auto c = confusion_metrics(kFour, 0.5);
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(c.tn, 2u);
  EXPECT_EQ(c.fp, 0u);
  EXPECT_EQ(c.accuracy, 0.75);
  EXPECT_EQ(confusion_metrics({{0.1, 0.2}, {0, 0}}).f1, 0.0);
}

TEST(NetBenefit, Examples) {
  EvalSet e;
  for (int i = 0; i < 10; ++i) {
    e.labels.push_back(i < 3);
    e.scores.push_back(i < 3 ? 0.9 : 0.1);
  }
  const auto nb = net_benefit(e, 0.2);
  EXPECT_EQ(nb.treat_none, 0.0);
  EXPECT_NEAR(nb.treat_all, 0.3 - 0.7 * 0.25, 1e-15);
  EXPECT_NEAR(nb.treat_all, 0.125, 1e-15);
  // every case flagged for 0.1 < pt <= 0.9, none above
  for (double pt : decision_grid()) {
    if (pt > 0.1 && pt <= 0.9) EXPECT_NEAR(net_benefit(e, pt).model, 0.3, 1e-15);
    if (pt > 0.9) EXPECT_EQ(net_benefit(e, pt).model, 0.0);
  }
  EXPECT_THROW(net_benefit(e, 0.0), Error);
  EXPECT_THROW(net_benefit(e, 1.0), Error);
}

TEST(NetBenefit, BoundedByPrevalence) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  EvalSet e;
  for (int i = 0; i < 300; ++i) {
    e.scores.push_back(u(rng));
    e.labels.push_back(u(rng) < 0.25);
  }
  for (double pt : decision_grid()) EXPECT_LE(net_benefit(e, pt).model, e.prevalence() + 1e-15);
}

TEST(EvalSet, Validation) {
  EXPECT_THROW(EvalSet({}, {}).validate(), Error);
  EXPECT_THROW(EvalSet({0.5}, {2}).validate(), Error);
  EXPECT_THROW(EvalSet({1.5}, {1}).validate(), Error);
  EXPECT_THROW(EvalSet({0.5, 0.2}, {1}).validate(), Error);
}

TEST(MetricsCsv, HeadersAndRows) {
  std::ostringstream roc, pr, dc;
  write_roc_csv(roc, kFour);
  write_pr_csv(pr, kFour);
  write_decision_curve_csv(dc, kFour);
  EXPECT_EQ(roc.str().substr(0, 18), "threshold,fpr,tpr\n");
  EXPECT_EQ(pr.str().rfind("threshold,recall,precision\n", 0), 0u);
  const std::string decision = dc.str();
  EXPECT_EQ(decision.rfind("pt,model,treat_all,treat_none\n", 0), 0u);
  EXPECT_EQ(std::count(decision.begin(), decision.end(), '\n'), 100);
  const auto curve = roc_curve(kFour);
  EXPECT_EQ(curve.front().fpr, 0.0);
  EXPECT_EQ(curve.back().tpr, 1.0);
  EXPECT_EQ(curve.back().fpr, 1.0);
}

TEST(Metrics, ExhaustiveSmallDatasets) {
  const std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t checked = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::size_t combos = 1;
    for (std::size_t i = 0; i < n; ++i) combos *= grid.size() * 2;
    for (std::size_t code = 0; code < combos; ++code) {
      EvalSet e;
      std::size_t c = code;
      for (std::size_t i = 0; i < n; ++i) {
        e.scores.push_back(grid[c % grid.size()]);
        c /= grid.size();
        e.labels.push_back(int(c % 2));
        c /= 2;
      }
      const auto pos = e.positives();
      if (pos > 0 && pos < n) EXPECT_NEAR(auroc(e), brute_auroc(e), 1e-12);
      if (pos > 0) EXPECT_NEAR(auprc(e), brute_auprc(e), 1e-12);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 10u + 100u + 1000u + 10000u);
}
