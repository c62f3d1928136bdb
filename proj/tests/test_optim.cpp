#include "nb/metrics.hpp"
#include "nb/optim.hpp"
#include "nb/split.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace nb;
using namespace nb::optim;

namespace {

std::vector<std::vector<double>> rows(const Mat& m) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)].push_back(m(i, j));
  return out;
}

Mat random_mat(Rng& rng, long r, long c) {
  Mat m(r, c);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

config::TaskSpec binary_task() {
  config::TaskSpec t;
  t.task_id = "separable";
  t.objective = ObjectiveKind::BinaryClassification;
  t.loss_name = "CrossEntropyLoss";
  t.metric_names = {"BalancedAcc"};
  t.n_outputs = 2;
  t.trainer.lr = 1e-2;
  t.trainer.max_epochs = 30;
  t.trainer.patience = 5;
  t.trainer.batch_size = 32;
  return t;
}

} // namespace

TEST(CrossEntropy, Examples) {
  const std::vector<double> equal{0.3, 0.3, 0.3, 0.3};
  EXPECT_NEAR(cross_entropy_single(equal, 2), std::log(4.0), 1e-12);
  const std::vector<double> margin{50.0, 0.0};
  EXPECT_LT(cross_entropy_single(margin, 0), 1e-20);
  const std::vector<double> logits{0.2, -0.7};
  const std::vector<double> w{2.0, 1.0};
  EXPECT_NEAR(cross_entropy_single(logits, 0, w), 2.0 * cross_entropy_single(logits, 0), 1e-12);

  // Batch gradient against central differences.
  Rng rng(4);
  Mat x = random_mat(rng, 5, 3);
  const std::vector<int> y{0, 2, 1, 1, 0};
  const std::vector<double> cw{1.0, 2.0, 0.5};
  const auto r = loss_cross_entropy(x, y, cw);
  const double h = 1e-6;
  for (long i = 0; i < x.rows(); ++i)
    for (long j = 0; j < x.cols(); ++j) {
      Mat xp = x, xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      const double fd = (loss_cross_entropy(xp, y, cw).value - loss_cross_entropy(xm, y, cw).value) / (2 * h);
      EXPECT_NEAR(r.grad(i, j), fd, 1e-8);
    }
}

TEST(Bce, Examples) {
  Mat z = Mat::Zero(1, 3), y = Mat::Ones(1, 3);
  EXPECT_NEAR(loss_bce_multilabel(z, y).value, std::log(2.0), 1e-12);
  Mat big(1, 2);
  big << 40.0, -40.0;
  Mat lab(1, 2);
  lab << 1.0, 0.0;
  EXPECT_LT(loss_bce_multilabel(big, lab).value, 1e-15);
}

TEST(Mse, Example) {
  Mat p(1, 2), t(1, 2);
  p << 1.0, 3.0;
  t << 0.0, 1.0;
  const auto r = loss_mse(p, t);
  EXPECT_DOUBLE_EQ(r.value, 2.5);
  EXPECT_DOUBLE_EQ(r.grad(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(r.grad(0, 1), 2.0);
}

TEST(Clip, SingleRowIsZero) {
  Rng rng(7);
  for (int i = 0; i < 10; ++i) {
    const Mat p = random_mat(rng, 1, 8), t = random_mat(rng, 1, 8);
    EXPECT_LE(std::abs(loss_clip(p, t).value), 1e-12);
  }
}

TEST(Clip, OrthonormalPair) {
  Mat e = Mat::Identity(2, 2);
  EXPECT_NEAR(loss_clip(e, e).value, -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-12);
  EXPECT_NEAR(loss_clip(e, e).value, 0.31326, 1e-5);
}

TEST(Clip, MatchesDirectEvaluation) {
  Rng rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    const long B = 1 + static_cast<long>(rng.uniform_index(8)), D = 1 + static_cast<long>(rng.uniform_index(16));
    const Mat p = random_mat(rng, B, D), t = random_mat(rng, B, D);
    for (double tau : {1.0, 0.1}) EXPECT_NEAR(loss_clip(p, t, tau).value, oracle::clip_loss(rows(p), rows(t), tau), 1e-10);
  }
}

// Max relative error, measured as max|g - fd| / max|fd| per instance.
TEST(Clip, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  for (int rep = 0; rep < 10; ++rep) {
    const long B = 2 + static_cast<long>(rng.uniform_index(7)), D = 2 + static_cast<long>(rng.uniform_index(15));
    const Mat p = random_mat(rng, B, D), t = random_mat(rng, B, D);
    const Mat g = loss_clip(p, t).grad;
    const double h = 1e-5;
    double err = 0, scale = 0;
    for (long i = 0; i < B; ++i)
      for (long j = 0; j < D; ++j) {
        Mat pp = p, pm = p;
        pp(i, j) += h;
        pm(i, j) -= h;
        const double fd = (loss_clip(pp, t).value - loss_clip(pm, t).value) / (2 * h);
        err = std::max(err, std::abs(g(i, j) - fd));
        scale = std::max(scale, std::abs(fd));
      }
    EXPECT_LE(err / scale, 1e-6) << "B=" << B << " D=" << D;
  }
}

TEST(Clip, InvariantToRowRescaling) {
  Rng rng(10);
  for (int rep = 0; rep < 10; ++rep) {
    const Mat p = random_mat(rng, 6, 5), t = random_mat(rng, 6, 5);
    Mat ps = p, ts = t;
    for (long i = 0; i < 6; ++i) {
      ps.row(i) *= rng.uniform(0.01, 100.0);
      ts.row(i) *= rng.uniform(0.01, 100.0);
    }
    EXPECT_NEAR(loss_clip(ps, ts).value, loss_clip(p, t).value, 1e-9);
  }
}

TEST(Clip, ZeroRowRejected) {
  Mat p = Mat::Zero(2, 3), t = Mat::Ones(2, 3);
  EXPECT_THROW(loss_clip(p, t), ValidationError);
}

TEST(AdamW, SingleStepByHand) {
  std::vector<double> theta{1.0};
  const std::vector<double> g{1.0};
  AdamWState st;
  adamw_step(theta, g, st, 0.1, 0.05);
  // m_hat = v_hat = 1 after bias correction.
  const double expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8)) - 0.1 * 0.05 * 1.0;
  EXPECT_NEAR(theta[0], expected, 1e-10);
  EXPECT_NEAR(theta[0], 0.895, 1e-8);
}

TEST(AdamW, ZeroGradientNoDecayIsIdentity) {
  std::vector<double> theta{0.5, -2.0};
  const std::vector<double> g{0.0, 0.0};
  AdamWState st;
  for (int i = 0; i < 5; ++i) adamw_step(theta, g, st, 0.1, 0.0);
  EXPECT_EQ(theta[0], 0.5);
  EXPECT_EQ(theta[1], -2.0);
}

TEST(AdamW, QuadraticConverges) {
  std::vector<double> theta{1.0};
  AdamWState st;
  for (int i = 0; i < 500; ++i) {
    const std::vector<double> g{theta[0]};
    adamw_step(theta, g, st, 0.05, 0.0);
  }
  EXPECT_LT(std::abs(theta[0]), 1e-3);
}

TEST(Schedule, CosineWithWarmup) {
  EXPECT_EQ(cosine_warmup_lr(0, 100, 1e-3), 0.0);
  EXPECT_DOUBLE_EQ(cosine_warmup_lr(10, 100, 1e-3), 1e-3);
  EXPECT_NEAR(cosine_warmup_lr(100, 100, 1e-3), 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(cosine_warmup_lr(5, 100, 1e-3), 5e-4);
  double prev = cosine_warmup_lr(10, 100, 1e-3);
  for (int s = 11; s <= 100; ++s) {
    const double lr = cosine_warmup_lr(s, 100, 1e-3);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(LinearDecoder, SeparableTaskAndDeterminism) {
  auto es = test::make_separable(400, 4, 12, 0.8, 11);
  es = split::split_random(es, 0.2, 0.2, std::string("description"), 3);
  const auto task = binary_task();
  const auto a = train_linear_decoder(task, es, task.trainer, 5);
  const auto b = train_linear_decoder(task, es, task.trainer, 5);
  EXPECT_EQ(a.decoder.weight, b.decoder.weight);
  EXPECT_EQ(a.decoder.bias, b.decoder.bias);
  EXPECT_EQ(history_jsonl(a.history), history_jsonl(b.history));

  const auto test_idx = es.indices_of(SplitLabel::Test);
  const auto preds = to_predictions(a.decoder.forward(make_features(es, test_idx, InputMode::Flatten)), task.objective);
  const double ba = metrics::evaluate("BalancedAcc", task.objective, subset(es, test_idx), preds).value;
  EXPECT_GE(ba, 0.9);
}

TEST(LinearDecoder, PatienceZeroStopsAtFirstNonImprovement) {
  auto es = test::make_separable(200, 2, 8, 0.3, 12);
  es = split::split_random(es, 0.2, 0.2, std::nullopt, 4);
  auto task = binary_task();
  task.trainer.patience = 0;
  task.trainer.max_epochs = 40;
  const auto r = train_linear_decoder(task, es, task.trainer, 1);
  ASSERT_FALSE(r.history.empty());
  for (std::size_t i = 1; i + 1 < r.history.size(); ++i)
    EXPECT_GT(r.history[i].valid_metric, r.history[i - 1].valid_metric);
  if (r.history.size() < 40u && r.history.size() >= 2)
    EXPECT_LE(r.history.back().valid_metric, r.best_metric);
}

TEST(LinearDecoder, PooledFeaturesAverageBins) {
  ExampleSet es = test::make_separable(2, 1, 16, 0.0, 1);
  for (std::size_t t = 0; t < 16; ++t) es.windows[t] = static_cast<float>(t);
  const std::vector<std::size_t> idx{0};
  const Mat f = make_features(es, idx, InputMode::Pooled);
  ASSERT_EQ(f.cols(), static_cast<long>(kPoolBins));
  for (std::size_t b = 0; b < kPoolBins; ++b) EXPECT_DOUBLE_EQ(f(0, static_cast<long>(b)), 2.0 * b + 0.5);
}
