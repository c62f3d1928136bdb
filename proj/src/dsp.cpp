#include "nb/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <sstream>

namespace nb::dsp {

namespace {

constexpr double kPi = std::numbers::pi;

std::string fmt_hz(double f) {
  std::ostringstream os;
  os << f;
  return os.str();
}

// Pairs the analog poles of an order-N Butterworth prototype into conjugate
// pairs (upper half plane only). N must be even.
std::vector<std::complex<double>> prototype_pole_pairs(int order) {
  std::vector<std::complex<double>> poles;
  for (int k = 1; k <= order / 2; ++k) {
    const double theta = kPi * (2.0 * k + order - 1) / (2.0 * order);
    poles.emplace_back(std::cos(theta), std::sin(theta));
  }
  return poles;
}

void check_design(int order, double cutoff_hz, double sfreq) {
  if (order <= 0 || order % 2 != 0) throw ValidationError("filter order must be positive and even");
  if (!(sfreq > 0.0)) throw ValidationError("sfreq must be positive");
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < sfreq / 2.0))
    throw ValidationError("cutoff " + fmt_hz(cutoff_hz) + " Hz must lie in (0, Nyquist=" +
                          fmt_hz(sfreq / 2.0) + ")");
}

} // namespace

Sos butterworth_lowpass(int order, double cutoff_hz, double sfreq) {
  check_design(order, cutoff_hz, sfreq);
  const double fs2 = 2.0 * sfreq;
  const double warped = fs2 * std::tan(kPi * cutoff_hz / sfreq);
  Sos sos;
  for (const auto& p : prototype_pole_pairs(order)) {
    const std::complex<double> s = warped * p;
    const std::complex<double> z = (fs2 + s) / (fs2 - s);
    const double a1 = -2.0 * z.real();
    const double a2 = std::norm(z);
    const double g = (1.0 + a1 + a2) / 4.0; // unit gain at DC
    sos.push_back({g, 2.0 * g, g, a1, a2});
  }
  return sos;
}

Sos butterworth_highpass(int order, double cutoff_hz, double sfreq) {
  check_design(order, cutoff_hz, sfreq);
  const double fs2 = 2.0 * sfreq;
  const double warped = fs2 * std::tan(kPi * cutoff_hz / sfreq);
  Sos sos;
  for (const auto& p : prototype_pole_pairs(order)) {
    const std::complex<double> s = warped / p;
    const std::complex<double> z = (fs2 + s) / (fs2 - s);
    const double a1 = -2.0 * z.real();
    const double a2 = std::norm(z);
    const double g = (1.0 - a1 + a2) / 4.0; // unit gain at Nyquist
    sos.push_back({g, -2.0 * g, g, a1, a2});
  }
  return sos;
}

Biquad iir_notch(double freq_hz, double quality, double sfreq) {
  if (!(freq_hz > 0.0) || !(freq_hz < sfreq / 2.0))
    throw ValidationError("notch frequency " + fmt_hz(freq_hz) + " Hz outside (0, Nyquist)");
  if (!(quality > 0.0)) throw ValidationError("notch quality must be positive");
  const double w0 = 2.0 * kPi * freq_hz / sfreq;
  const double bw = w0 / quality;
  const double g = 1.0 / (1.0 + std::tan(bw / 2.0));
  const double c = std::cos(w0);
  return {g, -2.0 * g * c, g, -2.0 * g * c, 2.0 * g - 1.0};
}

double sos_gain(const Sos& sos, double freq_hz, double sfreq) {
  const std::complex<double> z1 = std::polar(1.0, -2.0 * kPi * freq_hz / sfreq);
  const std::complex<double> z2 = z1 * z1;
  std::complex<double> h{1.0, 0.0};
  for (const auto& s : sos) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return std::abs(h);
}

namespace {

// Direct form II transposed, in place, with steady-state initial conditions
// scaled by the first input sample.
void sosfilt_inplace(const Sos& sos, std::vector<double>& x) {
  if (x.empty()) return;
  double level = x.front();
  for (const auto& s : sos) {
    const double dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    const double y_ss = dc * level;
    double z1 = y_ss - s.b0 * level;
    double z2 = s.b2 * level - s.a2 * y_ss;
    for (double& v : x) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
    level = y_ss;
  }
}

} // namespace

std::vector<double> sosfiltfilt(const Sos& sos, std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  std::size_t pad = 3 * (2 * sos.size() + 1);
  pad = std::min(pad, n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  sosfilt_inplace(sos, ext);
  std::reverse(ext.begin(), ext.end());
  sosfilt_inplace(sos, ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad),
          ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

namespace {

Recording apply_per_channel(const Recording& rec, const Sos& sos) {
  Recording out = rec;
  std::vector<double> buf(rec.n_samples());
  for (std::size_t c = 0; c < rec.n_channels(); ++c) {
    auto in = rec.channel(c);
    std::copy(in.begin(), in.end(), buf.begin());
    auto filtered = sosfiltfilt(sos, buf);
    auto dst = out.channel(c);
    for (std::size_t i = 0; i < filtered.size(); ++i) dst[i] = static_cast<float>(filtered[i]);
  }
  return out;
}

} // namespace

void validate(const PreprocSpec& spec) {
  if (spec.bandpass_enabled && !(spec.band_low > 0.0 && spec.band_low < spec.band_high))
    throw ValidationError("preprocessing band must satisfy 0 < low < high");
  if (spec.resample_enabled && !(spec.target_sfreq > 0.0))
    throw ValidationError("preprocessing target_sfreq must be positive");
  if (spec.clamp_enabled && !(spec.clamp > 0.0))
    throw ValidationError("preprocessing clamp must be positive");
  if (spec.notch_enabled && !(spec.notch_quality > 0.0))
    throw ValidationError("preprocessing notch quality must be positive");
  for (double f : spec.notch_freqs)
    if (!(f > 0.0)) throw ValidationError("notch frequencies must be positive");
}

Recording bandpass(const Recording& rec, double low_hz, double high_hz) {
  const double nyquist = rec.sfreq / 2.0;
  if (!(low_hz > 0.0) || !(low_hz < high_hz) || !(high_hz < nyquist))
    throw ValidationError("invalid band [" + fmt_hz(low_hz) + ", " + fmt_hz(high_hz) +
                          "] Hz at sfreq " + fmt_hz(rec.sfreq));
  Sos sos = butterworth_highpass(kButterworthOrder, low_hz, rec.sfreq);
  Sos lp = butterworth_lowpass(kButterworthOrder, high_hz, rec.sfreq);
  sos.insert(sos.end(), lp.begin(), lp.end());
  return apply_per_channel(rec, sos);
}

Recording notch(const Recording& rec, std::span<const double> freqs, double quality,
                std::vector<std::string>* log) {
  const double nyquist = rec.sfreq / 2.0;
  Sos sos;
  for (double f : freqs) {
    if (!(f < nyquist)) {
      if (log) log->push_back("notch: skipped " + fmt_hz(f) + " Hz (>= Nyquist " + fmt_hz(nyquist) + " Hz)");
      continue;
    }
    sos.push_back(iir_notch(f, quality, rec.sfreq));
  }
  if (sos.empty()) return rec;
  return apply_per_channel(rec, sos);
}

namespace {

double bessel_i0(double x) {
  double sum = 1.0;
  double term = 1.0;
  const double half = x / 2.0;
  for (int k = 1; k < 200; ++k) {
    term *= (half / k) * (half / k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

struct Ratio {
  std::int64_t up;
  std::int64_t down;
};

Ratio rational_ratio(double sfreq, double target) {
  const auto num = static_cast<std::int64_t>(std::llround(target * 1000.0));
  const auto den = static_cast<std::int64_t>(std::llround(sfreq * 1000.0));
  if (num <= 0 || den <= 0) throw ValidationError("resample rates must be positive");
  const std::int64_t g = std::gcd(num, den);
  Ratio r{num / g, den / g};
  if (r.up > 4096 || r.down > 4096)
    throw ValidationError("resample ratio " + fmt_hz(target) + "/" + fmt_hz(sfreq) +
                          " has no small rational form");
  return r;
}

constexpr double kKaiserBeta = 8.0;
constexpr double kCutoffFraction = 0.9;

std::vector<double> design_resample_filter(const Ratio& r) {
  // Filter runs at the upsampled rate; frequencies normalized to it.
  const double max_factor = static_cast<double>(std::max(r.up, r.down));
  const double cutoff = kCutoffFraction / (2.0 * max_factor); // cycles/sample
  const double transition = 0.1 / (2.0 * max_factor);
  const double atten_db = 80.0; // approximately what beta = 8 delivers
  auto half = static_cast<std::int64_t>(
      std::ceil((atten_db - 8.0) / (2.285 * 2.0 * kPi * transition) / 2.0));
  half = std::max<std::int64_t>(half, 8);
  const std::int64_t len = 2 * half + 1;
  std::vector<double> h(static_cast<std::size_t>(len));
  const double norm = bessel_i0(kKaiserBeta);
  for (std::int64_t n = 0; n < len; ++n) {
    const double m = static_cast<double>(n - half);
    const double x = 2.0 * cutoff * m;
    const double sinc = (m == 0.0) ? 1.0 : std::sin(kPi * x) / (kPi * x);
    const double ratio = m / static_cast<double>(half);
    const double w = bessel_i0(kKaiserBeta * std::sqrt(std::max(0.0, 1.0 - ratio * ratio))) / norm;
    h[static_cast<std::size_t>(n)] = 2.0 * cutoff * sinc * w * static_cast<double>(r.up);
  }
  return h;
}

// Even reflection about the signal edges, repeated for long filters.
double reflected(std::span<const double> x, std::int64_t idx) {
  const auto n = static_cast<std::int64_t>(x.size());
  if (n == 1) return x[0];
  const std::int64_t period = 2 * (n - 1);
  idx %= period;
  if (idx < 0) idx += period;
  if (idx >= n) idx = period - idx;
  return x[static_cast<std::size_t>(idx)];
}

} // namespace

std::vector<double> resample_signal(std::span<const double> x, double sfreq, double target_sfreq) {
  if (!(target_sfreq > 0.0)) throw ValidationError("target sfreq must be positive");
  const Ratio r = rational_ratio(sfreq, target_sfreq);
  if (r.up == r.down) return {x.begin(), x.end()};
  if (x.empty()) return {};
  const auto h = design_resample_filter(r);
  const auto half = static_cast<std::int64_t>(h.size() / 2);
  const auto n_in = static_cast<std::int64_t>(x.size());
  const std::int64_t n_out = (n_in * r.up + r.down - 1) / r.down;
  std::vector<double> y(static_cast<std::size_t>(n_out));
  for (std::int64_t m = 0; m < n_out; ++m) {
    const std::int64_t p = m * r.down; // position on the upsampled grid
    // Input samples j with j*up in [p - half, p + half].
    std::int64_t j_lo = p - half;
    j_lo = (j_lo >= 0) ? (j_lo + r.up - 1) / r.up : -((-j_lo) / r.up);
    const std::int64_t j_hi_num = p + half;
    const std::int64_t j_hi = (j_hi_num >= 0) ? j_hi_num / r.up : -((-j_hi_num + r.up - 1) / r.up);
    double acc = 0.0;
    for (std::int64_t j = j_lo; j <= j_hi; ++j) {
      const std::int64_t k = p - j * r.up + half;
      acc += h[static_cast<std::size_t>(k)] * reflected(x, j);
    }
    y[static_cast<std::size_t>(m)] = acc;
  }
  return y;
}

Recording resample(const Recording& rec, double target_sfreq) {
  const Ratio r = rational_ratio(rec.sfreq, target_sfreq);
  if (r.up == r.down) {
    Recording out = rec;
    out.sfreq = target_sfreq;
    return out;
  }
  Recording out = rec;
  out.sfreq = target_sfreq;
  out.data.clear();
  std::vector<double> buf(rec.n_samples());
  std::vector<std::vector<double>> channels;
  for (std::size_t c = 0; c < rec.n_channels(); ++c) {
    auto in = rec.channel(c);
    std::copy(in.begin(), in.end(), buf.begin());
    channels.push_back(resample_signal(buf, rec.sfreq, target_sfreq));
  }
  for (const auto& ch : channels)
    for (double v : ch) out.data.push_back(static_cast<float>(v));
  // Resampling may move the last sample boundary slightly; keep events inside.
  const double dur = out.duration();
  for (auto& ev : out.events) ev.onset = std::min(ev.onset, dur);
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

RobustScaleResult robust_scale(const Recording& rec) {
  RobustScaleResult res{rec, {}};
  std::vector<double> buf(rec.n_samples());
  for (std::size_t c = 0; c < rec.n_channels(); ++c) {
    auto in = rec.channel(c);
    if (in.empty()) continue;
    std::copy(in.begin(), in.end(), buf.begin());
    std::sort(buf.begin(), buf.end());
    auto q = [&](double p) {
      const double pos = p * static_cast<double>(buf.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const auto hi = std::min(lo + 1, buf.size() - 1);
      return buf[lo] + (buf[hi] - buf[lo]) * (pos - static_cast<double>(lo));
    };
    const double median = q(0.5);
    double iqr = q(0.75) - q(0.25);
    if (!(iqr > 0.0)) {
      iqr = 1.0;
      res.flat_channels.push_back(c);
    }
    auto dst = res.recording.channel(c);
    for (std::size_t i = 0; i < in.size(); ++i)
      dst[i] = static_cast<float>((static_cast<double>(in[i]) - median) / iqr);
  }
  return res;
}

Recording clamp(const Recording& rec, double bound) {
  if (!(bound > 0.0)) throw ValidationError("clamp bound must be positive");
  Recording out = rec;
  const auto b = static_cast<float>(bound);
  for (float& v : out.data) v = std::clamp(v, -b, b);
  return out;
}

ExampleSet baseline_correct(const ExampleSet& es, double t0, double t1) {
  const auto i0 = std::llround(t0 * es.sfreq);
  const auto i1 = std::llround(t1 * es.sfreq);
  if (i0 < 0 || i1 > static_cast<long long>(es.n_times) || t0 < 0.0 || t1 > es.duration + 1e-9)
    throw ValidationError("baseline interval [" + fmt_hz(t0) + ", " + fmt_hz(t1) +
                          "] s lies outside the " + fmt_hz(es.duration) + " s window");
  if (i1 <= i0)
    throw ValidationError("baseline interval [" + fmt_hz(t0) + ", " + fmt_hz(t1) +
                          "] s covers no samples");
  ExampleSet out = es;
  const auto count = static_cast<double>(i1 - i0);
  for (std::size_t e = 0; e < es.n_examples; ++e) {
    auto w = out.window(e);
    for (std::size_t c = 0; c < es.n_channels; ++c) {
      float* row = w.data() + c * es.n_times;
      double sum = 0.0;
      for (auto t = i0; t < i1; ++t) sum += row[t];
      const double mean = sum / count;
      for (std::size_t t = 0; t < es.n_times; ++t)
        row[t] = static_cast<float>(static_cast<double>(row[t]) - mean);
    }
  }
  return out;
}

std::vector<double> expand_notch_freqs(const PreprocSpec& spec, double sfreq,
                                       std::vector<double>* skipped) {
  const double nyquist = sfreq / 2.0;
  std::vector<double> out;
  for (double base : spec.notch_freqs) {
    if (!(base < nyquist)) {
      if (skipped) skipped->push_back(base);
      continue;
    }
    for (int h = 1;; ++h) {
      const double f = base * h;
      if (!(f < nyquist)) {
        if (skipped && h > 1) skipped->push_back(f);
        break;
      }
      if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(f);
      if (!spec.notch_harmonics) break;
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

PreprocResult preprocess(const Recording& rec, const PreprocSpec& spec) {
  validate(spec);
  validate_recording(rec);
  PreprocResult res{rec, {}, {}};
  auto& log = res.log;

  if (spec.bandpass_enabled) {
    const double nyquist = res.recording.sfreq / 2.0;
    double high = spec.band_high;
    if (!(high < nyquist)) {
      high = 0.99 * nyquist;
      log.push_back("bandpass: high edge " + fmt_hz(spec.band_high) + " Hz clipped to " +
                    fmt_hz(high) + " Hz (Nyquist " + fmt_hz(nyquist) + " Hz)");
    }
    res.recording = bandpass(res.recording, spec.band_low, high);
    log.push_back("bandpass: [" + fmt_hz(spec.band_low) + ", " + fmt_hz(high) + "] Hz");
  }
  if (spec.notch_enabled) {
    std::vector<double> skipped;
    auto freqs = expand_notch_freqs(spec, res.recording.sfreq, &skipped);
    for (double f : skipped)
      log.push_back("notch: skipped " + fmt_hz(f) + " Hz (>= Nyquist " +
                    fmt_hz(res.recording.sfreq / 2.0) + " Hz)");
    res.recording = notch(res.recording, freqs, spec.notch_quality, &log);
    std::string applied;
    for (double f : freqs) applied += (applied.empty() ? "" : ", ") + fmt_hz(f);
    log.push_back("notch: {" + applied + "} Hz");
  }
  if (spec.resample_enabled) {
    const double from = res.recording.sfreq;
    res.recording = resample(res.recording, spec.target_sfreq);
    log.push_back("resample: " + fmt_hz(from) + " -> " + fmt_hz(spec.target_sfreq) + " Hz");
  }
  if (spec.robust_scale_enabled) {
    auto scaled = robust_scale(res.recording);
    res.recording = std::move(scaled.recording);
    res.flat_channels = std::move(scaled.flat_channels);
    for (auto c : res.flat_channels)
      log.push_back("robust_scale: channel '" + res.recording.channels[c] + "' has zero IQR");
    log.push_back("robust_scale: per-channel median/IQR");
  }
  if (spec.clamp_enabled) {
    res.recording = clamp(res.recording, spec.clamp);
    log.push_back("clamp: +-" + fmt_hz(spec.clamp));
  }
  return res;
}

} // namespace nb::dsp
