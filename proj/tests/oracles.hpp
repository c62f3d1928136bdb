#pragma once
// Independent reference implementations used as test oracles. They favour
// directness over speed and share no code with the library.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <numbers>
#include <set>
#include <vector>

namespace nb::oracle {

inline double balanced_accuracy(const std::vector<int>& y, const std::vector<int>& p) {
  std::map<int, std::pair<int, int>> per_class; // class -> (hits, total)
  for (std::size_t i = 0; i < y.size(); ++i) {
    auto& [hits, total] = per_class[y[i]];
    total += 1;
    hits += (p[i] == y[i]);
  }
  double sum = 0;
  for (const auto& [cls, ht] : per_class) sum += static_cast<double>(ht.first) / ht.second;
  return sum / static_cast<double>(per_class.size());
}

inline double macro_f1(const std::vector<std::vector<std::uint8_t>>& y,
                       const std::vector<std::vector<std::uint8_t>>& p) {
  const std::size_t L = y.front().size();
  double sum = 0;
  for (std::size_t l = 0; l < L; ++l) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      tp += y[i][l] && p[i][l];
      fp += !y[i][l] && p[i][l];
      fn += y[i][l] && !p[i][l];
    }
    sum += (tp == 0) ? 0.0 : 2 * tp / (2 * tp + fp + fn);
  }
  return sum / static_cast<double>(L);
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<long double>(x.size());
  long double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const long double mx = sx / n, my = sy / n;
  long double cxy = 0, cxx = 0, cyy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cxy += (x[i] - mx) * (y[i] - my);
    cxx += (x[i] - mx) * (x[i] - mx);
    cyy += (y[i] - my) * (y[i] - my);
  }
  if (cxx == 0 || cyy == 0) return 0.0;
  return static_cast<double>(cxy / std::sqrt(cxx * cyy));
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  long double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return static_cast<double>(ab / std::sqrt(aa * bb));
}

// Fraction of queries whose true candidate is among the k most similar.
inline double topk(const std::vector<std::vector<double>>& q, const std::vector<std::vector<double>>& cand,
                   const std::vector<std::size_t>& truth, std::size_t k) {
  double hits = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double s_true = cosine(q[i], cand[truth[i]]);
    std::size_t better = 0;
    for (std::size_t j = 0; j < cand.size(); ++j) {
      const double s = cosine(q[i], cand[j]);
      if (s > s_true || (s == s_true && j < truth[i])) ++better;
    }
    hits += (better < k);
  }
  return hits / static_cast<double>(q.size());
}

// Tau-b by explicit pair enumeration.
inline double kendall_tau_b(const std::vector<double>& a, const std::vector<double>& b) {
  long long concordant = 0, discordant = 0, tie_a = 0, tie_b = 0, pairs = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      ++pairs;
      const double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0) ++tie_a;
      if (db == 0) ++tie_b;
      if (da == 0 || db == 0) continue;
      ((da > 0) == (db > 0) ? concordant : discordant) += 1;
    }
  const double denom = std::sqrt(static_cast<double>(pairs - tie_a) * static_cast<double>(pairs - tie_b));
  return static_cast<double>(concordant - discordant) / denom;
}

// Contrastive loss over cosine similarities, evaluated term by term.
inline double clip_loss(const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& target,
                        double tau) {
  const std::size_t B = pred.size();
  long double total = 0;
  for (std::size_t i = 0; i < B; ++i) {
    long double denom = 0;
    for (std::size_t j = 0; j < B; ++j) denom += std::exp(static_cast<long double>(cosine(pred[i], target[j])) / tau);
    total -= std::log(std::exp(static_cast<long double>(cosine(pred[i], target[i])) / tau) / denom);
  }
  return static_cast<double>(total / B);
}

// |sum_n x[n] exp(-2 pi i f n / fs)|: one DFT coefficient at an arbitrary frequency.
inline double dft_magnitude(const std::vector<double>& x, double freq, double fs) {
  std::complex<long double> acc = 0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const long double ph = -2.0L * std::numbers::pi_v<long double> * freq * static_cast<long double>(n) / fs;
    acc += static_cast<long double>(x[n]) * std::complex<long double>(std::cos(ph), std::sin(ph));
  }
  return static_cast<double>(std::abs(acc));
}

// Sinusoid amplitude at `freq` via least squares on sin/cos regressors.
inline double sine_amplitude(const std::vector<double>& x, double freq, double fs, std::size_t skip = 0) {
  long double ss = 0, cc = 0, sc = 0, xs = 0, xc = 0;
  for (std::size_t n = skip; n + skip < x.size(); ++n) {
    const long double t = static_cast<long double>(n) / fs;
    const long double s = std::sin(2 * std::numbers::pi_v<long double> * freq * t);
    const long double c = std::cos(2 * std::numbers::pi_v<long double> * freq * t);
    ss += s * s;
    cc += c * c;
    sc += s * c;
    xs += x[n] * s;
    xc += x[n] * c;
  }
  const long double det = ss * cc - sc * sc;
  const long double a = (xs * cc - xc * sc) / det;
  const long double b = (xc * ss - xs * sc) / det;
  return static_cast<double>(std::sqrt(a * a + b * b));
}

} // namespace nb::oracle
