#include "nb/optim.hpp"

#include "nb/metrics.hpp"
#include "nb/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace nb::optim {

namespace {

double log_sum_exp(const double* x, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - mx);
  return mx + std::log(s);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

} // namespace

double cross_entropy_single(std::span<const double> logits, int target, std::span<const double> w) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size())
    throw ValidationError("cross-entropy target out of range");
  const double l = log_sum_exp(logits.data(), logits.size()) - logits[static_cast<std::size_t>(target)];
  return (w.empty() ? 1.0 : w[static_cast<std::size_t>(target)]) * l;
}

LossResult loss_cross_entropy(const Mat& logits, std::span<const int> targets, std::span<const double> w) {
  const auto B = static_cast<std::size_t>(logits.rows());
  const auto C = static_cast<std::size_t>(logits.cols());
  if (targets.size() != B) throw ValidationError("cross-entropy: batch size mismatch");
  if (!w.empty() && w.size() != C) throw ValidationError("cross-entropy: class weight count mismatch");
  LossResult r;
  r.grad = Mat::Zero(logits.rows(), logits.cols());
  double wsum = 0.0, total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    const int y = targets[i];
    if (y < 0 || static_cast<std::size_t>(y) >= C) throw ValidationError("cross-entropy target out of range");
    const double wi = w.empty() ? 1.0 : w[static_cast<std::size_t>(y)];
    const double* row = logits.data() + i * C;
    const double lse = log_sum_exp(row, C);
    total += wi * (lse - row[y]);
    wsum += wi;
    for (std::size_t c = 0; c < C; ++c) r.grad(static_cast<long>(i), static_cast<long>(c)) = wi * std::exp(row[c] - lse);
    r.grad(static_cast<long>(i), y) -= wi;
  }
  r.value = total / wsum;
  r.grad /= wsum;
  return r;
}

LossResult loss_bce_multilabel(const Mat& logits, const Mat& labels) {
  if (logits.rows() != labels.rows() || logits.cols() != labels.cols())
    throw ValidationError("bce: shape mismatch");
  const double n = static_cast<double>(logits.size());
  LossResult r;
  r.grad.resize(logits.rows(), logits.cols());
  double total = 0.0;
  for (long i = 0; i < logits.rows(); ++i)
    for (long j = 0; j < logits.cols(); ++j) {
      const double x = logits(i, j), y = labels(i, j);
      total += softplus(x) - y * x;
      r.grad(i, j) = (sigmoid(x) - y) / n;
    }
  r.value = total / n;
  return r;
}

LossResult loss_mse(const Mat& pred, const Mat& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ValidationError("mse: shape mismatch");
  const double n = static_cast<double>(pred.size());
  LossResult r;
  const Mat diff = pred - target;
  r.value = diff.squaredNorm() / n;
  r.grad = 2.0 * diff / n;
  return r;
}

LossResult loss_clip(const Mat& pred, const Mat& target, double tau) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ValidationError("clip: shape mismatch");
  const long B = pred.rows();
  if (B < 1) throw ValidationError("clip: empty batch");
  Vec pn(B), tn(B);
  for (long i = 0; i < B; ++i) {
    pn(i) = pred.row(i).norm();
    tn(i) = target.row(i).norm();
    if (pn(i) == 0.0 || tn(i) == 0.0) throw ValidationError("clip: zero-norm row " + std::to_string(i));
  }
  const Mat u = pred.array().colwise() / pn.array();
  const Mat v = target.array().colwise() / tn.array();
  const Mat s = (u * v.transpose()) / tau; // [B x B]
  Mat ds(B, B);
  double total = 0.0;
  for (long i = 0; i < B; ++i) {
    const double lse = log_sum_exp(s.data() + i * B, static_cast<std::size_t>(B));
    total += lse - s(i, i);
    for (long j = 0; j < B; ++j) ds(i, j) = std::exp(s(i, j) - lse) / static_cast<double>(B);
    ds(i, i) -= 1.0 / static_cast<double>(B);
  }
  LossResult r;
  r.value = total / static_cast<double>(B);
  const Mat gu = (ds * v) / tau; // d loss / d u
  r.grad.resize(pred.rows(), pred.cols());
  for (long i = 0; i < B; ++i) {
    const double proj = gu.row(i).dot(u.row(i));
    r.grad.row(i) = (gu.row(i) - proj * u.row(i)) / pn(i);
  }
  return r;
}

void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& st, double lr, double wd) {
  if (params.size() != grads.size()) throw ValidationError("adamw: parameter/gradient size mismatch");
  if (st.m.empty()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
  }
  if (st.m.size() != params.size()) throw ValidationError("adamw: state size mismatch");
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
    const double m_hat = st.m[i] / bc1;
    const double v_hat = st.v[i] / bc2;
    params[i] = params[i] - lr * m_hat / (std::sqrt(v_hat) + st.eps) - lr * wd * params[i];
  }
}

double cosine_warmup_lr(double step, double total, double base_lr, double warmup_fraction) {
  const double warmup = warmup_fraction * total;
  if (step < warmup) return base_lr * step / warmup;
  if (total <= warmup) return base_lr;
  const double progress = std::clamp((step - warmup) / (total - warmup), 0.0, 1.0);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Mat make_features(const ExampleSet& es, std::span<const std::size_t> idx, InputMode mode) {
  const std::size_t C = es.n_channels, T = es.n_times;
  if (mode == InputMode::Flatten) {
    Mat x(static_cast<long>(idx.size()), static_cast<long>(C * T));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto w = es.window(idx[r]);
      for (std::size_t k = 0; k < w.size(); ++k) x(static_cast<long>(r), static_cast<long>(k)) = w[k];
    }
    return x;
  }
  const std::size_t bins = std::min(kPoolBins, T);
  Mat x(static_cast<long>(idx.size()), static_cast<long>(C * bins));
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t b = 0; b < bins; ++b) {
        const std::size_t t0 = b * T / bins, t1 = (b + 1) * T / bins;
        double s = 0.0;
        for (std::size_t t = t0; t < t1; ++t) s += es.at(idx[r], c, t);
        x(static_cast<long>(r), static_cast<long>(c * bins + b)) = s / static_cast<double>(t1 - t0);
      }
  return x;
}

Mat LinearDecoder::forward(const Mat& x) const {
  Mat out = x * weight.transpose();
  out.rowwise() += bias.transpose();
  return out;
}

LinearDecoder init_decoder(std::size_t d_in, std::size_t d_out, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "decoder_init"));
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  LinearDecoder dec;
  dec.weight.resize(static_cast<long>(d_out), static_cast<long>(d_in));
  dec.bias.resize(static_cast<long>(d_out));
  for (long i = 0; i < dec.weight.size(); ++i) dec.weight.data()[i] = rng.uniform(-bound, bound);
  for (long i = 0; i < dec.bias.size(); ++i) dec.bias(i) = rng.uniform(-bound, bound);
  return dec;
}

std::vector<Prediction> to_predictions(const Mat& out, ObjectiveKind objective) {
  std::vector<Prediction> preds;
  preds.reserve(static_cast<std::size_t>(out.rows()));
  for (long i = 0; i < out.rows(); ++i) {
    std::vector<double> row(out.row(i).data(), out.row(i).data() + out.cols());
    switch (objective) {
    case ObjectiveKind::BinaryClassification:
    case ObjectiveKind::MulticlassClassification: {
      const double lse = log_sum_exp(row.data(), row.size());
      for (auto& x : row) x = std::exp(x - lse);
      preds.emplace_back(ClassProbabilities{std::move(row)});
      break;
    }
    case ObjectiveKind::MultilabelClassification:
      for (auto& x : row) x = sigmoid(x);
      preds.emplace_back(LabelProbabilities{std::move(row)});
      break;
    case ObjectiveKind::Regression: preds.emplace_back(ScalarPrediction{row.at(0)}); break;
    case ObjectiveKind::Retrieval: preds.emplace_back(EmbeddingPrediction{std::move(row)}); break;
    }
  }
  return preds;
}

namespace {

std::size_t resolve_outputs(const config::TaskSpec& task, const ExampleSet& es) {
  if (task.n_outputs > 0) return task.n_outputs;
  if (es.targets.empty()) throw ValidationError("cannot resolve n_outputs from an empty example set");
  if (std::holds_alternative<ClassIndex>(es.targets.front())) {
    int mx = 0;
    for (const auto& t : es.targets) mx = std::max(mx, std::get<ClassIndex>(t).value);
    return static_cast<std::size_t>(mx) + 1;
  }
  return target_dimension(es.targets.front());
}

LossResult batch_loss(const config::TaskSpec& task, const Mat& out, const ExampleSet& es,
                      std::span<const std::size_t> idx) {
  const long B = static_cast<long>(idx.size());
  switch (task.objective) {
  case ObjectiveKind::BinaryClassification:
  case ObjectiveKind::MulticlassClassification: {
    std::vector<int> y(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) y[i] = std::get<ClassIndex>(es.targets[idx[i]]).value;
    return loss_cross_entropy(out, y, task.class_weights);
  }
  case ObjectiveKind::MultilabelClassification: {
    Mat y(B, out.cols());
    for (long i = 0; i < B; ++i) {
      const auto& v = std::get<LabelVector>(es.targets[idx[static_cast<std::size_t>(i)]]).values;
      for (long j = 0; j < out.cols(); ++j) y(i, j) = v[static_cast<std::size_t>(j)];
    }
    return loss_bce_multilabel(out, y);
  }
  case ObjectiveKind::Regression: {
    Mat y(B, 1);
    for (long i = 0; i < B; ++i) y(i, 0) = std::get<ScalarTarget>(es.targets[idx[static_cast<std::size_t>(i)]]).value;
    return loss_mse(out, y);
  }
  case ObjectiveKind::Retrieval: {
    Mat y(B, out.cols());
    for (long i = 0; i < B; ++i) {
      const auto& v = std::get<EmbeddingTarget>(es.targets[idx[static_cast<std::size_t>(i)]]).values;
      for (long j = 0; j < out.cols(); ++j) y(i, j) = v[static_cast<std::size_t>(j)];
    }
    return loss_clip(out, y, 1.0);
  }
  }
  throw ValidationError("unsupported objective");
}

} // namespace

TrainResult train_linear_decoder(const config::TaskSpec& task, const ExampleSet& es,
                                 const config::TrainerSpec& tr, std::uint64_t seed, InputMode mode) {
  const auto train_idx = es.indices_of(SplitLabel::Train);
  const auto valid_idx = es.indices_of(SplitLabel::Valid);
  if (train_idx.empty() || valid_idx.empty())
    throw ValidationError("training needs non-empty train and valid splits");
  if (task.metric_names.empty()) throw ValidationError("no metric to monitor");
  const std::string& monitor = task.metric_names.front();
  const bool higher_better = metrics::metric_info(monitor).higher_better;

  const Mat x_train = make_features(es, train_idx, mode);
  const Mat x_valid = make_features(es, valid_idx, mode);
  const ExampleSet valid_set = subset(es, valid_idx);
  const std::size_t d_out = resolve_outputs(task, es);

  TrainResult result;
  LinearDecoder dec = init_decoder(static_cast<std::size_t>(x_train.cols()), d_out, seed);
  AdamWState state;
  Rng shuffle_rng(derive_seed(seed, "batch_order"));

  const std::size_t n = train_idx.size();
  const auto bs = static_cast<std::size_t>(tr.batch_size);
  const std::size_t batches = (n + bs - 1) / bs;
  const double total_steps = static_cast<double>(batches) * tr.max_epochs;
  long step = 0;

  std::vector<std::size_t> order(n);
  std::vector<double> params(static_cast<std::size_t>(dec.weight.size() + dec.bias.size()));
  std::vector<double> grads(params.size());
  auto pack = [&](const LinearDecoder& d, std::vector<double>& dst) {
    std::copy(d.weight.data(), d.weight.data() + d.weight.size(), dst.begin());
    std::copy(d.bias.data(), d.bias.data() + d.bias.size(), dst.begin() + d.weight.size());
  };
  auto unpack = [&](const std::vector<double>& src, LinearDecoder& d) {
    std::copy(src.begin(), src.begin() + d.weight.size(), d.weight.data());
    std::copy(src.begin() + d.weight.size(), src.end(), d.bias.data());
  };

  bool have_best = false;
  int bad_epochs = 0;
  for (int epoch = 1; epoch <= tr.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * bs, hi = std::min(n, lo + bs);
      std::vector<std::size_t> rows(order.begin() + static_cast<long>(lo), order.begin() + static_cast<long>(hi));
      std::vector<std::size_t> ex(rows.size());
      Mat xb(static_cast<long>(rows.size()), x_train.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        xb.row(static_cast<long>(i)) = x_train.row(static_cast<long>(rows[i]));
        ex[i] = train_idx[rows[i]];
      }
      const Mat out = dec.forward(xb);
      const LossResult loss = batch_loss(task, out, es, ex);
      if (!std::isfinite(loss.value))
        throw Error("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                    " (lr " + std::to_string(lr) + ")");
      loss_sum += loss.value * static_cast<double>(rows.size());
      const Mat gw = loss.grad.transpose() * xb;
      const Vec gb = loss.grad.colwise().sum().transpose();
      std::copy(gw.data(), gw.data() + gw.size(), grads.begin());
      std::copy(gb.data(), gb.data() + gb.size(), grads.begin() + gw.size());
      if (tr.grad_clip) {
        double norm = 0.0;
        for (double g : grads) norm += g * g;
        norm = std::sqrt(norm);
        if (norm > *tr.grad_clip)
          for (double& g : grads) g *= *tr.grad_clip / norm;
      }
      ++step;
      lr = cosine_warmup_lr(static_cast<double>(step), total_steps, tr.lr, tr.warmup_fraction);
      pack(dec, params);
      adamw_step(params, grads, state, lr, tr.weight_decay);
      unpack(params, dec);
    }

    const auto preds = to_predictions(dec.forward(x_valid), task.objective);
    const double metric = metrics::evaluate(monitor, task.objective, valid_set, preds).value;
    result.history.push_back({epoch, loss_sum / static_cast<double>(n), metric, lr});
    const bool improved = !have_best || (higher_better ? metric > result.best_metric : metric < result.best_metric);
    if (improved) {
      have_best = true;
      result.best_metric = metric;
      result.best_epoch = epoch;
      result.decoder = dec;
      bad_epochs = 0;
    } else if (++bad_epochs > tr.patience) {
      break;
    }
  }
  return result;
}

std::string history_jsonl(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const auto& h : history) {
    nlohmann::json line = {{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"valid_metric", h.valid_metric}, {"lr", h.lr}};
    out += line.dump() + "\n";
  }
  return out;
}

} // namespace nb::optim
