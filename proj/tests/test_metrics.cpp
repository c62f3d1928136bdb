#include "nb/metrics.hpp"
#include "nb/ranking.hpp"
#include "nb/rng.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace nb;
using namespace nb::metrics;

TEST(BalancedAccuracy, Examples) {
  const std::vector<int> y{0, 0, 1, 1}, p{0, 1, 1, 1};
  EXPECT_DOUBLE_EQ(balanced_accuracy(y, p), 0.75);
  const std::vector<int> maj{0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(balanced_accuracy(y, maj), 0.5);
  EXPECT_DOUBLE_EQ(balanced_accuracy(y, y), 1.0);
  EXPECT_THROW(balanced_accuracy(std::vector<int>{}, std::vector<int>{}), ValidationError);
}

TEST(BalancedAccuracy, InvariantUnderRelabeling) {
  Rng rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    const int K = 2 + static_cast<int>(rng.uniform_index(5));
    std::vector<int> perm(K);
    for (int k = 0; k < K; ++k) perm[k] = k;
    rng.shuffle(perm);
    std::vector<int> y, p, yp, pp;
    for (int i = 0; i < 30; ++i) {
      y.push_back(static_cast<int>(rng.uniform_index(K)));
      p.push_back(static_cast<int>(rng.uniform_index(K)));
      yp.push_back(perm[y.back()]);
      pp.push_back(perm[p.back()]);
    }
    EXPECT_NEAR(balanced_accuracy(y, p), balanced_accuracy(yp, pp), 1e-12);
  }
}

TEST(MacroF1, Examples) {
  // Label 0: P=1, R=0.5. Label 1: P=0.5, R=1.
  const std::vector<std::vector<std::uint8_t>> y{{1, 1}, {1, 0}}, p{{1, 1}, {0, 1}};
  EXPECT_NEAR(macro_f1(y, p), 2.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(macro_f1(y, y), 1.0);
  const std::vector<std::vector<std::uint8_t>> never{{1, 0}, {1, 0}};
  EXPECT_DOUBLE_EQ(macro_f1(y, never), 0.5 * (1.0 + 0.0));
}

TEST(Pearson, Examples) {
  const std::vector<double> y{1, 2, 3}, p{1, 3, 2};
  EXPECT_NEAR(pearson_r(y, p).value, 0.5, 1e-12);
  std::vector<double> lin, neg;
  for (double v : y) {
    lin.push_back(2 * v + 3);
    neg.push_back(-v);
  }
  EXPECT_NEAR(pearson_r(y, lin).value, 1.0, 1e-12);
  EXPECT_NEAR(pearson_r(y, neg).value, -1.0, 1e-12);
  const std::vector<double> flat{2, 2, 2};
  const auto d = pearson_r(y, flat);
  EXPECT_TRUE(d.degenerate);
  EXPECT_EQ(d.value, 0.0);
  EXPECT_FALSE(std::signbit(d.value));
}

TEST(Topk, Examples) {
  std::vector<std::vector<double>> cand;
  for (int i = 0; i < 10; ++i) {
    std::vector<double> e(10, 0.0);
    e[i] = 1.0;
    cand.push_back(e);
  }
  std::vector<std::size_t> truth{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  const auto perfect = topk_accuracy(cand, cand, truth, 5);
  EXPECT_DOUBLE_EQ(perfect.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(perfect.median_rank, 1.0);

  Rng rng(1);
  std::vector<std::vector<double>> noisy(1, cand[7]);
  for (auto& v : noisy[0]) v += 0.02 * rng.normal();
  const std::vector<std::size_t> t7{7};
  EXPECT_EQ(topk_accuracy(noisy, cand, t7, 1).ranks[0], 1u);

  std::vector<std::vector<double>> random_q(10, std::vector<double>(10));
  for (auto& q : random_q)
    for (auto& v : q) v = rng.normal();
  EXPECT_DOUBLE_EQ(topk_accuracy(random_q, cand, truth, 10).accuracy, 1.0);
}

TEST(Topk, InvariantToPositiveRescaling) {
  Rng rng(2);
  std::vector<std::vector<double>> q(12, std::vector<double>(6)), c(12, std::vector<double>(6)), qs;
  for (auto& v : q)
    for (auto& x : v) x = rng.normal();
  for (auto& v : c)
    for (auto& x : v) x = rng.normal();
  for (const auto& v : q) {
    const double s = rng.uniform(0.1, 10.0);
    std::vector<double> w;
    for (double x : v) w.push_back(s * x);
    qs.push_back(w);
  }
  std::vector<std::size_t> truth(12);
  for (std::size_t i = 0; i < 12; ++i) truth[i] = i;
  EXPECT_EQ(topk_accuracy(q, c, truth, 3).ranks, topk_accuracy(qs, c, truth, 3).ranks);
}

// 1,000 random small instances per metric against the brute-force oracles.
TEST(MetricOracles, RandomInstances) {
  Rng rng(20240901);
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = 2 + rng.uniform_index(31);
    const int K = 2 + static_cast<int>(rng.uniform_index(5));

    std::vector<int> y(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.uniform_index(K));
      p[i] = static_cast<int>(rng.uniform_index(K));
    }
    ASSERT_NEAR(balanced_accuracy(y, p), oracle::balanced_accuracy(y, p), 1e-9);

    std::vector<std::vector<std::uint8_t>> ly(n, std::vector<std::uint8_t>(K)), lp = ly;
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < K; ++k) {
        ly[i][k] = rng.bernoulli(0.4);
        lp[i][k] = rng.bernoulli(0.4);
      }
    ASSERT_NEAR(macro_f1(ly, lp), oracle::macro_f1(ly, lp), 1e-9);

    std::vector<double> ry(n), rp(n);
    for (std::size_t i = 0; i < n; ++i) {
      ry[i] = rng.normal();
      rp[i] = 0.5 * ry[i] + rng.normal();
    }
    ASSERT_NEAR(pearson_r(ry, rp).value, oracle::pearson(ry, rp), 1e-9);

    const std::size_t D = 2 + rng.uniform_index(6);
    const std::size_t n_cand = std::max<std::size_t>(n, 6);
    std::vector<std::vector<double>> cand(n_cand, std::vector<double>(D)), q(n, std::vector<double>(D));
    std::vector<std::size_t> truth(n);
    for (auto& v : cand)
      for (auto& x : v) x = rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = rng.uniform_index(n_cand);
      for (std::size_t d = 0; d < D; ++d) q[i][d] = cand[truth[i]][d] + rng.normal();
    }
    const std::size_t k = 1 + rng.uniform_index(5);
    ASSERT_NEAR(topk_accuracy(q, cand, truth, k).accuracy, oracle::topk(q, cand, truth, k), 1e-9);

    // Small integer ranks so ties occur often.
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<double>(rng.uniform_index(K + 2));
      b[i] = static_cast<double>(rng.uniform_index(K + 2));
    }
    const double ref = oracle::kendall_tau_b(a, b);
    const auto got = ranking::kendall_tau(a, b).tau;
    if (std::isnan(ref)) ASSERT_TRUE(std::isnan(got));
    else ASSERT_NEAR(got, ref, 1e-9);
  }
}

TEST(Normalize, EndpointsAndAffineEquivariance) {
  EXPECT_DOUBLE_EQ(normalize_score(0.5, 0.5, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(normalize_score(1.0, 0.5, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(normalize_score(0.75, 0.5, 1.0), 0.5);
  EXPECT_LT(normalize_score(0.25, 0.5, 1.0), 0.0);
  EXPECT_THROW(normalize_score(0.3, 1.0, 1.0), ValidationError);
  EXPECT_DOUBLE_EQ(normalize_max(0.9, 0.5, 0.9), 1.0);
  EXPECT_DOUBLE_EQ(normalize_max(0.7, 0.5, 0.9), 0.5);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const double s = rng.normal(), d = rng.normal(), pf = d + rng.uniform(0.1, 2.0);
    const double a = rng.uniform(0.1, 5.0), b = rng.normal();
    EXPECT_NEAR(normalize_score(a * s + b, a * d + b, a * pf + b), normalize_score(s, d, pf), 1e-9);
  }
}

TEST(Sem, Examples) {
  EXPECT_DOUBLE_EQ(sem_across_seeds(std::vector<double>{1, 1, 1}), 0.0);
  EXPECT_NEAR(sem_across_seeds(std::vector<double>{0, 1}), 0.5, 1e-12);
  EXPECT_THROW(sem_across_seeds(std::vector<double>{1}), ValidationError);
}

TEST(Registry, PerfectValuesAndDefaults) {
  for (auto obj : {ObjectiveKind::BinaryClassification, ObjectiveKind::MulticlassClassification,
                   ObjectiveKind::MultilabelClassification, ObjectiveKind::Regression, ObjectiveKind::Retrieval})
    EXPECT_EQ(metric_info(default_metric(obj)).perfect, 1.0);
  EXPECT_EQ(metric_info("RMSE").perfect, 0.0);
  EXPECT_THROW(metric_info("nope"), ValidationError);
  EXPECT_TRUE(metric_supports(default_metric(ObjectiveKind::Retrieval), ObjectiveKind::Retrieval));
  EXPECT_TRUE(metric_supports(default_metric(ObjectiveKind::Regression), ObjectiveKind::Regression));
}
