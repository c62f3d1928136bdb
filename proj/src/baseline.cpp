#include "nb/baseline.hpp"

#include "nb/metrics.hpp"
#include "nb/optim.hpp"
#include "nb/rng.hpp"

#include <ceres/ceres.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

namespace nb::baseline {

// ---------------------------------------------------------------- reference predictors

std::vector<Prediction> dummy_fit_predict(const ExampleSet& es, ObjectiveKind objective, std::size_t n_outputs,
                                          std::uint64_t seed) {
  std::vector<std::size_t> fit;
  for (std::size_t i = 0; i < es.n_examples; ++i)
    if (es.split_labels.at(i) == SplitLabel::Train || es.split_labels[i] == SplitLabel::Valid) fit.push_back(i);
  if (fit.empty()) throw ValidationError("dummy baseline needs training examples");
  const auto test = es.indices_of(SplitLabel::Test);
  std::vector<Prediction> out;
  out.reserve(test.size());
  switch (objective) {
  case ObjectiveKind::BinaryClassification:
  case ObjectiveKind::MulticlassClassification: {
    std::vector<std::size_t> counts(n_outputs, 0);
    for (auto i : fit) ++counts.at(static_cast<std::size_t>(std::get<ClassIndex>(es.targets[i]).value));
    const auto majority = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    std::vector<double> p(n_outputs, 0.0);
    p[majority] = 1.0;
    for (std::size_t k = 0; k < test.size(); ++k) out.emplace_back(ClassProbabilities{p});
    break;
  }
  case ObjectiveKind::MultilabelClassification: {
    std::vector<double> freq(n_outputs, 0.0);
    for (auto i : fit) {
      const auto& v = std::get<LabelVector>(es.targets[i]).values;
      for (std::size_t l = 0; l < n_outputs; ++l) freq[l] += v.at(l);
    }
    for (auto& f : freq) f /= static_cast<double>(fit.size());
    Rng rng(derive_seed(seed, "dummy_multilabel"));
    for (std::size_t k = 0; k < test.size(); ++k) {
      std::vector<double> p(n_outputs);
      for (std::size_t l = 0; l < n_outputs; ++l) p[l] = rng.bernoulli(freq[l]) ? 1.0 : 0.0;
      out.emplace_back(LabelProbabilities{std::move(p)});
    }
    break;
  }
  case ObjectiveKind::Regression: {
    double mean = 0.0;
    for (auto i : fit) mean += std::get<ScalarTarget>(es.targets[i]).value;
    mean /= static_cast<double>(fit.size());
    for (std::size_t k = 0; k < test.size(); ++k) out.emplace_back(ScalarPrediction{mean});
    break;
  }
  case ObjectiveKind::Retrieval: {
    std::vector<double> mean(n_outputs, 0.0);
    for (auto i : fit) {
      const auto& v = std::get<EmbeddingTarget>(es.targets[i]).values;
      for (std::size_t d = 0; d < n_outputs; ++d) mean[d] += v.at(d);
    }
    for (auto& m : mean) m /= static_cast<double>(fit.size());
    for (std::size_t k = 0; k < test.size(); ++k) out.emplace_back(EmbeddingPrediction{mean});
    break;
  }
  }
  return out;
}

std::vector<Prediction> chance_predict(const ExampleSet& es, ObjectiveKind objective, std::size_t n_outputs,
                                       std::uint64_t seed) {
  const auto test = es.indices_of(SplitLabel::Test);
  const auto x = optim::make_features(es, test, optim::InputMode::Flatten);
  const auto dec = optim::init_decoder(static_cast<std::size_t>(x.cols()), n_outputs, derive_seed(seed, "chance"));
  return optim::to_predictions(dec.forward(x), objective);
}

// ---------------------------------------------------------------- SPD geometry

Mat covariance(const Mat& x) {
  if (x.cols() < 2) throw ValidationError("covariance needs at least two samples");
  const Mat centered = x.colwise() - x.rowwise().mean();
  Mat s = centered * centered.transpose() / static_cast<double>(x.cols() - 1);
  return 0.5 * (s + s.transpose());
}

double ledoit_wolf_gamma(const Mat& x) {
  const Mat xc = (x.colwise() - x.rowwise().mean()).transpose(); // [n x p]
  const double n = static_cast<double>(xc.rows());
  const double p = static_cast<double>(xc.cols());
  const Mat x2 = xc.array().square().matrix();
  const double emp_trace = x2.sum() / n;
  const double mu = emp_trace / p;
  const double beta_ = x2.rowwise().sum().squaredNorm();
  const double delta_ = (xc.transpose() * xc).squaredNorm() / (n * n);
  double delta = (delta_ - 2.0 * mu * emp_trace + p * mu * mu) / p;
  double beta = (beta_ / n - delta_) / (p * n);
  beta = std::min(beta, delta);
  if (!(delta > 0.0) || beta <= 0.0) return 0.0;
  return beta / delta;
}

Mat shrink(const Mat& s, double gamma) {
  const double g = std::clamp(gamma, kMinShrinkage, 1.0);
  const double mu = std::max(s.trace() / static_cast<double>(s.rows()), kTraceFloor);
  Mat out = (1.0 - g) * s;
  out.diagonal().array() += g * mu;
  return out;
}

Mat shrunk_covariance(const Mat& x) { return shrink(covariance(x), ledoit_wolf_gamma(x)); }

namespace {

Mat sym(const Mat& m) { return 0.5 * (m + m.transpose()); }

} // namespace

Mat riemannian_mean(const std::vector<Mat>& mats, const KarcherOptions& opt) {
  if (mats.empty()) throw ValidationError("riemannian_mean: empty input");
  Mat m = Mat::Zero(mats[0].rows(), mats[0].cols());
  for (const auto& p : mats) m += p;
  m /= static_cast<double>(mats.size());
  double norm = 0.0;
  for (int it = 0; it < opt.max_iter; ++it) {
    const Mat m_half = spd_apply(m, [](double v) { return std::sqrt(v); });
    const Mat m_ihalf = spd_apply(m, [](double v) { return 1.0 / std::sqrt(v); });
    Mat t = Mat::Zero(m.rows(), m.cols());
    for (const auto& p : mats) t += spd_apply(sym(m_ihalf * p * m_ihalf), [](double v) { return std::log(v); });
    t /= static_cast<double>(mats.size());
    norm = t.norm();
    if (norm <= opt.tol) return m;
    m = sym(m_half * spd_apply(sym(opt.step * t), [](double v) { return std::exp(v); }) * m_half);
  }
  throw Error("Karcher mean did not converge after " + std::to_string(opt.max_iter) +
              " iterations (gradient norm " + std::to_string(norm) + ")");
}

Vec tangent_project(const Mat& p, const Mat& ref) {
  const Mat r_ihalf = spd_apply(ref, [](double v) {
    if (!(v > 0.0)) throw Error("reference matrix is not positive definite");
    return 1.0 / std::sqrt(v);
  });
  const Mat l = spd_apply(sym(r_ihalf * p * r_ihalf), [](double v) {
    if (!(v > 0.0)) throw Error("matrix is not positive definite");
    return std::log(v);
  });
  const long c = l.rows();
  Vec out(c * (c + 1) / 2);
  long k = 0;
  for (long i = 0; i < c; ++i)
    for (long j = i; j < c; ++j) out(k++) = i == j ? l(i, j) : std::numbers::sqrt2 * l(i, j);
  return out;
}

double riemannian_distance(const Mat& a, const Mat& b) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> ges(b, a);
  if (ges.info() != Eigen::Success) throw Error("eigendecomposition failed");
  return std::sqrt(ges.eigenvalues().array().log().square().sum());
}

// ---------------------------------------------------------------- xDAWN

XdawnModel xdawn_filters(const std::vector<Mat>& epochs, std::span<const int> labels, int n_filters) {
  if (epochs.size() != labels.size()) throw ValidationError("xdawn: epochs/labels size mismatch");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  if (by_class.size() < 2) throw ValidationError("xdawn needs at least two classes");
  for (const auto& [k, idx] : by_class)
    if (idx.size() < 2) throw ValidationError("xdawn needs at least two epochs per class");
  const long C = epochs[0].rows(), T = epochs[0].cols();
  const long nf = std::min<long>(n_filters, C);

  Mat all(C, T * static_cast<long>(epochs.size()));
  for (std::size_t i = 0; i < epochs.size(); ++i) all.middleCols(static_cast<long>(i) * T, T) = epochs[i];
  const Mat sigma = shrunk_covariance(all);

  XdawnModel model;
  model.stacked.resize(nf * static_cast<long>(by_class.size()), C);
  long row = 0;
  for (const auto& [k, idx] : by_class) {
    Mat proto = Mat::Zero(C, T);
    for (auto i : idx) proto += epochs[i];
    proto /= static_cast<double>(idx.size());
    const Mat evoked = covariance(proto);
    Eigen::GeneralizedSelfAdjointEigenSolver<Mat> ges(sym(evoked), sigma);
    if (ges.info() != Eigen::Success) throw Error("xdawn: generalized eigenproblem failed");
    Mat f(C, nf);
    for (long j = 0; j < nf; ++j) {
      Vec w = ges.eigenvectors().col(C - 1 - j);
      w.normalize();
      long arg = 0;
      w.cwiseAbs().maxCoeff(&arg);
      if (w(arg) < 0) w = -w;
      f.col(j) = w;
    }
    model.filters.push_back(f);
    model.prototypes.push_back(f.transpose() * proto);
    model.stacked.middleRows(row, nf) = f.transpose();
    row += nf;
  }
  return model;
}

Mat xdawn_augment(const XdawnModel& model, const Mat& epoch) {
  const long nf_total = model.stacked.rows();
  Mat out(2 * nf_total, epoch.cols());
  long row = 0;
  for (const auto& p : model.prototypes) {
    out.middleRows(row, p.rows()) = p;
    row += p.rows();
  }
  out.middleRows(row, nf_total) = model.stacked * epoch;
  return out;
}

// ---------------------------------------------------------------- spectral features

namespace {

std::size_t segment_length(double sfreq) { return static_cast<std::size_t>(std::llround(sfreq)); }

std::vector<std::size_t> select_bins(double sfreq, const std::vector<std::array<double, 2>>& bands) {
  const std::size_t nper = segment_length(sfreq);
  const double df = sfreq / static_cast<double>(nper);
  std::set<std::size_t> bins;
  for (const auto& [lo, hi] : bands) {
    if (!(lo >= 0.0) || !(hi <= sfreq / 2.0) || lo > hi)
      throw ValidationError("co-spectra band [" + std::to_string(lo) + ", " + std::to_string(hi) + "] outside [0, Nyquist]");
    for (std::size_t k = 0; k <= nper / 2; ++k) {
      const double f = static_cast<double>(k) * df;
      if (f >= lo && f <= hi) bins.insert(k);
    }
  }
  if (bins.empty()) throw ValidationError("co-spectra bands select no frequency bin");
  return {bins.begin(), bins.end()};
}

} // namespace

std::vector<double> cospectra_bins(double sfreq, const std::vector<std::array<double, 2>>& bands) {
  std::vector<double> out;
  const double df = sfreq / static_cast<double>(segment_length(sfreq));
  for (auto k : select_bins(sfreq, bands)) out.push_back(static_cast<double>(k) * df);
  return out;
}

Vec cospectra_features(const Mat& epoch, double sfreq, const std::vector<std::array<double, 2>>& bands) {
  const std::size_t nper = segment_length(sfreq);
  const auto T = static_cast<std::size_t>(epoch.cols());
  const long C = epoch.rows();
  if (T < nper) throw ValidationError("window shorter than one Welch segment");
  const auto bins = select_bins(sfreq, bands);
  const std::size_t step = nper - nper / 2;
  const std::size_t n_seg = (T - nper) / step + 1;

  std::vector<double> win(nper);
  double wsum2 = 0.0;
  for (std::size_t t = 0; t < nper; ++t) {
    win[t] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(nper));
    wsum2 += win[t] * win[t];
  }
  const long per_bin = C * (C + 1) / 2;
  Vec out(per_bin * static_cast<long>(bins.size()));
  for (std::size_t b = 0; b < bins.size(); ++b) {
    const std::size_t k = bins[b];
    Mat re = Mat::Zero(C, n_seg), im = Mat::Zero(C, n_seg);
    for (std::size_t s = 0; s < n_seg; ++s) {
      const std::size_t t0 = s * step;
      for (long c = 0; c < C; ++c) {
        double mean = 0.0;
        for (std::size_t t = 0; t < nper; ++t) mean += epoch(c, static_cast<long>(t0 + t));
        mean /= static_cast<double>(nper);
        double sr = 0.0, si = 0.0;
        for (std::size_t t = 0; t < nper; ++t) {
          const double v = (epoch(c, static_cast<long>(t0 + t)) - mean) * win[t];
          const double ang = 2.0 * std::numbers::pi * static_cast<double>(k * t % nper) / static_cast<double>(nper);
          sr += v * std::cos(ang);
          si -= v * std::sin(ang);
        }
        re(c, static_cast<long>(s)) = sr;
        im(c, static_cast<long>(s)) = si;
      }
    }
    const bool edge = k == 0 || (nper % 2 == 0 && k == nper / 2);
    const double scale = (edge ? 1.0 : 2.0) / (sfreq * wsum2 * static_cast<double>(n_seg));
    // Re(X_c conj(X_d)) = re_c re_d + im_c im_d
    const Mat csd = (re * re.transpose() + im * im.transpose()) * scale;
    long idx = static_cast<long>(b) * per_bin;
    for (long i = 0; i < C; ++i)
      for (long j = i; j < C; ++j) out(idx++) = i == j ? std::log1p(csd(i, j)) : csd(i, j);
  }
  return out;
}

// ---------------------------------------------------------------- linear heads

void StandardScaler::fit(const Mat& x) {
  const double n = static_cast<double>(x.rows());
  mean = x.colwise().mean().transpose();
  scale.resize(x.cols());
  for (long j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - mean(j)).square().sum() / n;
    scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
}

Mat StandardScaler::transform(const Mat& x) const {
  return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

std::vector<double> ridge_grid() {
  std::vector<double> g;
  for (int i = 0; i < 5; ++i) g.push_back(std::pow(10.0, -3.0 + 1.5 * i));
  return g;
}

namespace {

void check_finite(const Mat& x) {
  if (!x.allFinite()) throw ValidationError("non-finite feature values");
}

class LogisticObjective final : public ceres::FirstOrderFunction {
public:
  LogisticObjective(const Mat& x, std::vector<int> y, int k, double c)
      : x_(x), y_(std::move(y)), k_(k), c_(c) {}

  int NumParameters() const override { return static_cast<int>((rows() ) * (x_.cols() + 1)); }

  bool Evaluate(const double* params, double* cost, double* gradient) const override {
    const long d = x_.cols();
    const long r = rows();
    const double n = static_cast<double>(x_.rows());
    Eigen::Map<const Mat> w(params, d, r); // column j = class j weights
    Eigen::Map<const Vec> b(params + d * r, r);
    Mat z = x_ * w;
    z.rowwise() += b.transpose();
    Mat dz(z.rows(), r);
    double loss = 0.0;
    if (k_ == 2) {
      for (long i = 0; i < z.rows(); ++i) {
        const double v = z(i, 0), y = y_[static_cast<std::size_t>(i)];
        loss += (v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v))) - y * v;
        const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        dz(i, 0) = (s - y) / n;
      }
    } else {
      for (long i = 0; i < z.rows(); ++i) {
        const double mx = z.row(i).maxCoeff();
        double se = 0.0;
        for (long j = 0; j < r; ++j) se += std::exp(z(i, j) - mx);
        const double lse = mx + std::log(se);
        const int y = y_[static_cast<std::size_t>(i)];
        loss += lse - z(i, y);
        for (long j = 0; j < r; ++j) dz(i, j) = std::exp(z(i, j) - lse) / n;
        dz(i, y) -= 1.0 / n;
      }
    }
    const double lambda = 1.0 / (c_ * n);
    *cost = loss / n + 0.5 * lambda * w.squaredNorm();
    if (gradient) {
      Eigen::Map<Mat> gw(gradient, d, r);
      Eigen::Map<Vec> gb(gradient + d * r, r);
      gw = x_.transpose() * dz + lambda * w;
      gb = dz.colwise().sum().transpose();
    }
    return true;
  }

private:
  long rows() const { return k_ == 2 ? 1 : k_; }
  const Mat& x_;
  std::vector<int> y_;
  int k_;
  double c_;
};

std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> y, std::size_t n_folds, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> folds(n_folds);
  std::size_t pos = 0;
  for (auto& [k, idx] : by_class) {
    rng.shuffle(idx);
    for (auto i : idx) folds[pos++ % n_folds].push_back(i);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

std::vector<std::vector<std::size_t>> plain_folds(std::size_t n, std::size_t n_folds, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  std::vector<std::vector<std::size_t>> folds(n_folds);
  for (std::size_t p = 0; p < n; ++p) folds[p % n_folds].push_back(idx[p]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

Mat rows_of(const Mat& x, const std::vector<std::size_t>& idx) {
  Mat out(static_cast<long>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<long>(i)) = x.row(static_cast<long>(idx[i]));
  return out;
}

std::vector<std::size_t> complement(std::size_t n, const std::vector<std::size_t>& idx) {
  std::vector<bool> in(n, false);
  for (auto i : idx) in[i] = true;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i)
    if (!in[i]) out.push_back(i);
  return out;
}

constexpr std::size_t kFolds = 5;

} // namespace

Mat LogisticModel::predict_proba(const Mat& x) const {
  const Mat xs = scaler.transform(x);
  Mat z = xs * weight.transpose();
  z.rowwise() += bias.transpose();
  Mat p(z.rows(), n_classes);
  for (long i = 0; i < z.rows(); ++i) {
    if (n_classes == 2) {
      const double v = z(i, 0);
      const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      p(i, 0) = 1.0 - s;
      p(i, 1) = s;
    } else {
      const double mx = z.row(i).maxCoeff();
      double se = 0.0;
      for (long j = 0; j < n_classes; ++j) se += std::exp(z(i, j) - mx);
      for (long j = 0; j < n_classes; ++j) p(i, j) = std::exp(z(i, j) - mx) / se;
    }
  }
  return p;
}

LogisticModel logistic_fit(const Mat& x, std::span<const int> y, int n_classes, double c) {
  check_finite(x);
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw ValidationError("logistic: size mismatch");
  std::set<int> present(y.begin(), y.end());
  if (present.size() < 2) throw ValidationError("logistic regression needs at least two classes");
  for (int v : y)
    if (v < 0 || v >= n_classes) throw ValidationError("logistic: label out of range");
  LogisticModel m;
  m.n_classes = n_classes;
  m.c = c;
  m.scaler.fit(x);
  const Mat xs = m.scaler.transform(x);
  const long r = n_classes == 2 ? 1 : n_classes;
  std::vector<double> params(static_cast<std::size_t>(r * (xs.cols() + 1)), 0.0);

  auto* objective = new LogisticObjective(xs, std::vector<int>(y.begin(), y.end()), n_classes, c);
  ceres::GradientProblem problem(objective);
  ceres::GradientProblemSolver::Options opts;
  opts.line_search_direction_type = ceres::LBFGS;
  opts.max_num_iterations = 5000;
  opts.gradient_tolerance = 1e-7;
  opts.function_tolerance = 1e-16;
  opts.parameter_tolerance = 1e-16;
  opts.logging_type = ceres::SILENT;
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(opts, problem, params.data(), &summary);

  std::vector<double> grad(params.size());
  double cost = 0.0;
  objective->Evaluate(params.data(), &cost, grad.data());
  m.grad_norm = 0.0;
  for (double g : grad) m.grad_norm = std::max(m.grad_norm, std::abs(g));

  const long d = xs.cols();
  m.weight = Eigen::Map<const Mat>(params.data(), d, r).transpose();
  m.bias = Eigen::Map<const Vec>(params.data() + d * r, r);
  return m;
}

LogisticModel logistic_fit_cv(const Mat& x, std::span<const int> y, int n_classes, std::uint64_t seed,
                              const std::vector<double>& grid, CvResult* cv) {
  check_finite(x);
  const auto folds = stratified_folds(y, kFolds, seed);
  std::vector<double> scores(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double total = 0.0;
    int used = 0;
    for (const auto& held : folds) {
      if (held.empty()) continue;
      const auto keep = complement(y.size(), held);
      std::vector<int> y_fit, y_held;
      for (auto i : keep) y_fit.push_back(y[i]);
      for (auto i : held) y_held.push_back(y[i]);
      if (std::set<int>(y_fit.begin(), y_fit.end()).size() < 2) continue;
      const auto model = logistic_fit(rows_of(x, keep), y_fit, n_classes, grid[g]);
      const Mat p = model.predict_proba(rows_of(x, held));
      std::vector<int> pred(held.size());
      for (long i = 0; i < p.rows(); ++i) p.row(i).maxCoeff(&pred[static_cast<std::size_t>(i)]);
      total += metrics::balanced_accuracy(y_held, pred);
      ++used;
    }
    scores[g] = used ? total / used : 0.0;
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (scores[g] > scores[best]) best = g;
  if (cv) *cv = {grid[best], scores};
  return logistic_fit(x, y, n_classes, grid[best]);
}

Mat RidgeModel::predict(const Mat& x) const {
  Mat out = scaler.transform(x) * coef;
  out.rowwise() += y_mean.transpose();
  return out;
}

RidgeModel ridge_fit(const Mat& x, const Mat& y, double alpha) {
  check_finite(x);
  if (x.rows() != y.rows() || x.rows() < 2) throw ValidationError("ridge: need >= 2 matching samples");
  RidgeModel m;
  m.alpha = alpha;
  m.scaler.fit(x);
  const Mat xs = m.scaler.transform(x);
  m.y_mean = y.colwise().mean().transpose();
  const Mat yc = y.rowwise() - m.y_mean.transpose();
  if (xs.cols() <= xs.rows()) {
    Mat a = xs.transpose() * xs;
    a.diagonal().array() += alpha;
    m.coef = a.ldlt().solve(xs.transpose() * yc);
  } else {
    Mat k = xs * xs.transpose();
    k.diagonal().array() += alpha;
    m.coef = xs.transpose() * k.ldlt().solve(yc);
  }
  return m;
}

RidgeModel ridge_fit_cv(const Mat& x, const Mat& y, std::uint64_t seed, const std::vector<double>& grid, CvResult* cv) {
  check_finite(x);
  const auto n = static_cast<std::size_t>(x.rows());
  const auto folds = plain_folds(n, std::min(kFolds, n), seed);
  std::vector<double> scores(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double total = 0.0;
    int used = 0;
    for (const auto& held : folds) {
      const auto keep = complement(n, held);
      if (held.empty() || keep.size() < 2) continue;
      const auto model = ridge_fit(rows_of(x, keep), rows_of(y, keep), grid[g]);
      total += (model.predict(rows_of(x, held)) - rows_of(y, held)).squaredNorm() /
               static_cast<double>(held.size() * static_cast<std::size_t>(y.cols()));
      ++used;
    }
    scores[g] = used ? total / used : 0.0;
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (scores[g] < scores[best]) best = g;
  if (cv) *cv = {grid[best], scores};
  return ridge_fit(x, y, grid[best]);
}

// ---------------------------------------------------------------- pipelines

std::string_view to_string(Pipeline p) {
  switch (p) {
  case Pipeline::XdawnTsLR: return "XdawnTsLR";
  case Pipeline::CovTsLR: return "CovTsLR";
  case Pipeline::CoSpectraLogLR: return "CoSpectraLogLR";
  case Pipeline::CovTsRidge: return "CovTsRidge";
  }
  return "CovTsLR";
}

Pipeline route(const config::TaskSpec& task) {
  if (task.objective == ObjectiveKind::Regression || task.objective == ObjectiveKind::Retrieval)
    return Pipeline::CovTsRidge;
  const bool single = is_single_label_classification(task.objective);
  if (single && (task.category == "evoked" || task.category == "p300")) return Pipeline::XdawnTsLR;
  if (task.category == "ssvep") return Pipeline::CoSpectraLogLR;
  return Pipeline::CovTsLR;
}

Mat window_matrix(const ExampleSet& es, std::size_t i) {
  Mat m(static_cast<long>(es.n_channels), static_cast<long>(es.n_times));
  for (std::size_t c = 0; c < es.n_channels; ++c)
    for (std::size_t t = 0; t < es.n_times; ++t) m(static_cast<long>(c), static_cast<long>(t)) = es.at(i, c, t);
  return m;
}

namespace {

Mat tangent_features(const std::vector<Mat>& covs, const Mat& ref) {
  const long c = ref.rows();
  Mat out(static_cast<long>(covs.size()), c * (c + 1) / 2);
  for (std::size_t i = 0; i < covs.size(); ++i) out.row(static_cast<long>(i)) = tangent_project(covs[i], ref).transpose();
  return out;
}

std::vector<Prediction> classify(const config::TaskSpec& task, const ExampleSet& es, const Mat& x_fit,
                                 const std::vector<std::size_t>& fit, const Mat& x_test, std::size_t n_outputs,
                                 std::uint64_t seed) {
  std::vector<Prediction> out;
  if (task.objective == ObjectiveKind::MultilabelClassification) {
    Mat proba(x_test.rows(), static_cast<long>(n_outputs));
    for (std::size_t l = 0; l < n_outputs; ++l) {
      std::vector<int> y;
      for (auto i : fit) y.push_back(std::get<LabelVector>(es.targets[i]).values.at(l));
      const int positives = std::accumulate(y.begin(), y.end(), 0);
      if (positives == 0 || positives == static_cast<int>(y.size())) {
        proba.col(static_cast<long>(l)).setConstant(static_cast<double>(positives) / static_cast<double>(y.size()));
        continue;
      }
      const auto model = logistic_fit_cv(x_fit, y, 2, derive_seed(seed, "cv/label" + std::to_string(l)));
      proba.col(static_cast<long>(l)) = model.predict_proba(x_test).col(1);
    }
    for (long i = 0; i < proba.rows(); ++i)
      out.emplace_back(LabelProbabilities{std::vector<double>(proba.row(i).data(), proba.row(i).data() + proba.cols())});
    return out;
  }
  std::vector<int> y;
  for (auto i : fit) y.push_back(std::get<ClassIndex>(es.targets[i]).value);
  const auto model = logistic_fit_cv(x_fit, y, static_cast<int>(n_outputs), derive_seed(seed, "cv"));
  const Mat p = model.predict_proba(x_test);
  for (long i = 0; i < p.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(p.cols()));
    for (long j = 0; j < p.cols(); ++j) row[static_cast<std::size_t>(j)] = p(i, j);
    out.emplace_back(ClassProbabilities{std::move(row)});
  }
  return out;
}

} // namespace

HandcraftedResult run_handcrafted(const config::TaskSpec& task, const ExampleSet& es, std::size_t n_outputs,
                                  std::uint64_t seed) {
  std::vector<std::size_t> fit;
  for (std::size_t i = 0; i < es.n_examples; ++i)
    if (es.split_labels.at(i) != SplitLabel::Test) fit.push_back(i);
  const auto test = es.indices_of(SplitLabel::Test);
  HandcraftedResult result{route(task), {}};

  auto windows = [&](const std::vector<std::size_t>& idx) {
    std::vector<Mat> w;
    w.reserve(idx.size());
    for (auto i : idx) w.push_back(window_matrix(es, i));
    return w;
  };
  auto cov_all = [](const std::vector<Mat>& w) {
    std::vector<Mat> c;
    c.reserve(w.size());
    for (const auto& m : w) c.push_back(shrunk_covariance(m));
    return c;
  };

  switch (result.pipeline) {
  case Pipeline::XdawnTsLR: {
    const auto w_fit = windows(fit), w_test = windows(test);
    std::vector<int> y;
    for (auto i : fit) y.push_back(std::get<ClassIndex>(es.targets[i]).value);
    const auto model = xdawn_filters(w_fit, y, task.handcrafted.xdawn_filters);
    std::vector<Mat> a_fit, a_test;
    for (const auto& m : w_fit) a_fit.push_back(xdawn_augment(model, m));
    for (const auto& m : w_test) a_test.push_back(xdawn_augment(model, m));
    const auto c_fit = cov_all(a_fit), c_test = cov_all(a_test);
    const Mat ref = riemannian_mean(c_fit);
    result.predictions =
        classify(task, es, tangent_features(c_fit, ref), fit, tangent_features(c_test, ref), n_outputs, seed);
    break;
  }
  case Pipeline::CovTsLR:
  case Pipeline::CovTsRidge: {
    const auto c_fit = cov_all(windows(fit)), c_test = cov_all(windows(test));
    const Mat ref = riemannian_mean(c_fit);
    const Mat x_fit = tangent_features(c_fit, ref), x_test = tangent_features(c_test, ref);
    if (result.pipeline == Pipeline::CovTsLR) {
      result.predictions = classify(task, es, x_fit, fit, x_test, n_outputs, seed);
      break;
    }
    Mat y(static_cast<long>(fit.size()), static_cast<long>(n_outputs));
    for (std::size_t r = 0; r < fit.size(); ++r) {
      const Target& t = es.targets[fit[r]];
      if (const auto* s = std::get_if<ScalarTarget>(&t)) y(static_cast<long>(r), 0) = s->value;
      else {
        const auto& v = std::get<EmbeddingTarget>(t).values;
        for (std::size_t d = 0; d < n_outputs; ++d) y(static_cast<long>(r), static_cast<long>(d)) = v.at(d);
      }
    }
    const auto model = ridge_fit_cv(x_fit, y, derive_seed(seed, "cv"));
    const Mat p = model.predict(x_test);
    for (long i = 0; i < p.rows(); ++i) {
      if (task.objective == ObjectiveKind::Regression) result.predictions.emplace_back(ScalarPrediction{p(i, 0)});
      else result.predictions.emplace_back(EmbeddingPrediction{std::vector<double>(p.row(i).data(), p.row(i).data() + p.cols())});
    }
    break;
  }
  case Pipeline::CoSpectraLogLR: {
    const auto& bands = task.handcrafted.freq_bands;
    if (bands.empty()) throw ValidationError("CoSpectraLogLR needs handcrafted.freq_bands");
    auto feats = [&](const std::vector<std::size_t>& idx) {
      Mat x;
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const Vec f = cospectra_features(window_matrix(es, idx[r]), es.sfreq, bands);
        if (r == 0) x.resize(static_cast<long>(idx.size()), f.size());
        x.row(static_cast<long>(r)) = f.transpose();
      }
      return x;
    };
    result.predictions = classify(task, es, feats(fit), fit, feats(test), n_outputs, seed);
    break;
  }
  }
  return result;
}

} // namespace nb::baseline
