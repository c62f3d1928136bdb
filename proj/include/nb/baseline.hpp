#pragma once

#include "nb/config.hpp"
#include "nb/domain.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace nb::baseline {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// ---------------------------------------------------------------- reference predictors

// Fits on Train + Valid targets, predicts every Test example (in index order).
std::vector<Prediction> dummy_fit_predict(const ExampleSet& es, ObjectiveKind objective, std::size_t n_outputs,
                                          std::uint64_t seed);

// Untrained, randomly initialized linear decoder on the flattened window.
std::vector<Prediction> chance_predict(const ExampleSet& es, ObjectiveKind objective, std::size_t n_outputs,
                                       std::uint64_t seed);

// ---------------------------------------------------------------- SPD geometry

inline constexpr double kMinShrinkage = 1e-3;
inline constexpr double kTraceFloor = 1e-10;

// X is [C x T]; channel means are removed, normalization by T - 1.
Mat covariance(const Mat& x);

// Ledoit-Wolf shrinkage intensity for the centered samples of X [C x T].
double ledoit_wolf_gamma(const Mat& x);

// (1 - g) S + g (tr(S)/C) I with g >= kMinShrinkage and tr(S)/C >= kTraceFloor.
Mat shrink(const Mat& s, double gamma);

Mat shrunk_covariance(const Mat& x);

// Applies f to the eigenvalues of a symmetric matrix.
template <typename F>
Mat spd_apply(const Mat& p, F f) {
  Eigen::SelfAdjointEigenSolver<Mat> es(p);
  if (es.info() != Eigen::Success) throw Error("eigendecomposition failed");
  Vec d = es.eigenvalues();
  for (long i = 0; i < d.size(); ++i) d(i) = f(d(i));
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

struct KarcherOptions {
  double tol = 1e-7;
  int max_iter = 50;
  double step = 1.0;
};

// Affine-invariant mean via fixed-point iteration from the arithmetic mean.
// Throws Error when the tangent-mean norm stays above tol after max_iter.
Mat riemannian_mean(const std::vector<Mat>& mats, const KarcherOptions& opt = {});

// Upper triangle (row-major) of logm(ref^-1/2 P ref^-1/2), off-diagonals * sqrt(2).
Vec tangent_project(const Mat& p, const Mat& ref);

double riemannian_distance(const Mat& a, const Mat& b);

// ---------------------------------------------------------------- xDAWN

struct XdawnModel {
  std::vector<Mat> filters;    // per class [C x n_filters]
  std::vector<Mat> prototypes; // per class, filtered class mean [n_filters x T]
  Mat stacked;                 // all filters as rows [(K * n_filters) x C]
};

// epochs: [C x T] each. Needs >= 2 classes with >= 2 epochs each.
XdawnModel xdawn_filters(const std::vector<Mat>& epochs, std::span<const int> labels, int n_filters = 4);

// Stacks the filtered prototypes above the filtered epoch.
Mat xdawn_augment(const XdawnModel& model, const Mat& epoch);

// ---------------------------------------------------------------- spectral features

// Welch cross-spectral density (Hann, 1 s segments, 50% overlap); for each bin
// inside a band, the upper triangle of the real part with log1p on the diagonal.
Vec cospectra_features(const Mat& epoch, double sfreq, const std::vector<std::array<double, 2>>& bands);

// Frequencies (Hz) of the bins selected by `bands` at this rate.
std::vector<double> cospectra_bins(double sfreq, const std::vector<std::array<double, 2>>& bands);

// ---------------------------------------------------------------- linear heads

struct StandardScaler {
  Vec mean, scale;
  void fit(const Mat& x);
  Mat transform(const Mat& x) const;
};

inline const std::vector<double> kLogisticGrid = {1e-2, 1e-1, 1.0, 1e1, 1e2};
std::vector<double> ridge_grid(); // 5 log-spaced points over [1e-3, 1e3]

struct LogisticModel {
  StandardScaler scaler;
  int n_classes = 0;
  double c = 1.0;
  Mat weight; // [n_classes x d], or [1 x d] for two classes
  Vec bias;
  double grad_norm = 0.0; // final gradient max-norm of the training objective

  Mat predict_proba(const Mat& x) const; // [n x n_classes]
};

// Minimizes mean log-loss + ||W||^2 / (2 C n) on standardized features.
LogisticModel logistic_fit(const Mat& x, std::span<const int> y, int n_classes, double c);

struct CvResult {
  double selected = 0.0;
  std::vector<double> scores; // mean fold score per grid point
};

// 5-fold stratified CV by balanced accuracy (ties -> smaller C), then refit.
LogisticModel logistic_fit_cv(const Mat& x, std::span<const int> y, int n_classes, std::uint64_t seed,
                              const std::vector<double>& grid = kLogisticGrid, CvResult* cv = nullptr);

struct RidgeModel {
  StandardScaler scaler;
  double alpha = 1.0;
  Mat coef;    // [d x k]
  Vec y_mean;  // [k]
  Mat predict(const Mat& x) const; // [n x k]
};

RidgeModel ridge_fit(const Mat& x, const Mat& y, double alpha);

// 5-fold CV by mean squared error (ties -> smaller alpha), then refit.
RidgeModel ridge_fit_cv(const Mat& x, const Mat& y, std::uint64_t seed, const std::vector<double>& grid = ridge_grid(),
                        CvResult* cv = nullptr);

// ---------------------------------------------------------------- pipelines

enum class Pipeline { XdawnTsLR, CovTsLR, CoSpectraLogLR, CovTsRidge };
std::string_view to_string(Pipeline p);

Pipeline route(const config::TaskSpec& task);

struct HandcraftedResult {
  Pipeline pipeline;
  std::vector<Prediction> predictions; // one per Test example
};

// Fits on Train + Valid and predicts Test.
HandcraftedResult run_handcrafted(const config::TaskSpec& task, const ExampleSet& es, std::size_t n_outputs,
                                  std::uint64_t seed);

Mat window_matrix(const ExampleSet& es, std::size_t i); // [C x T]

} // namespace nb::baseline
