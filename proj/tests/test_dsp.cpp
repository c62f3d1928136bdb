#include "nb/dsp.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace nb;
using namespace nb::dsp;

namespace {

Recording single_channel(const std::vector<double>& x, double sfreq) {
  Recording r;
  r.recording_id = "r";
  r.subject_id = "s";
  r.session_id = "1";
  r.sfreq = sfreq;
  r.channels = {"c0"};
  r.data.assign(x.begin(), x.end());
  return r;
}

std::vector<double> channel0(const Recording& r) {
  const auto c = r.channel(0);
  return {c.begin(), c.end()};
}

// Gain in dB at `f` of the zero-phase filter `apply`, from the DFT of its
// response to a centred unit impulse.
template <typename F>
double impulse_gain_db(F apply, double sfreq, double seconds, double f) {
  std::vector<double> x(static_cast<std::size_t>(sfreq * seconds), 0.0);
  x[x.size() / 2] = 1.0;
  const auto y = channel0(apply(single_channel(x, sfreq)));
  return 20.0 * std::log10(oracle::dft_magnitude(y, f, sfreq));
}

std::vector<double> sine(double f, double sfreq, double seconds, double amp = 1.0) {
  std::vector<double> x(static_cast<std::size_t>(sfreq * seconds));
  for (std::size_t n = 0; n < x.size(); ++n)
    x[n] = amp * std::sin(2 * std::numbers::pi * f * static_cast<double>(n) / sfreq);
  return x;
}

} // namespace

TEST(Notch, AttenuationFromImpulseResponse) {
  const double fs = 500;
  for (double f0 : {50.0, 60.0}) {
    const std::vector<double> freqs{f0};
    auto apply = [&](const Recording& r) { return notch(r, freqs); };
    EXPECT_LE(impulse_gain_db(apply, fs, 20, f0), -30.0) << f0;
    EXPECT_GT(impulse_gain_db(apply, fs, 20, f0 - 5), -1.0) << f0;
    EXPECT_GT(impulse_gain_db(apply, fs, 20, f0 + 5), -1.0) << f0;
  }
}

TEST(Notch, SinusoidExamples) {
  const double fs = 500;
  const std::vector<double> freqs{50.0};
  const auto y50 = channel0(notch(single_channel(sine(50, fs, 10), fs), freqs));
  EXPECT_LE(oracle::sine_amplitude(y50, 50, fs, 1000), 1.0 / 31.6);
  const auto y45 = channel0(notch(single_channel(sine(45, fs, 10), fs), freqs));
  const double a45 = oracle::sine_amplitude(y45, 45, fs, 1000);
  EXPECT_LT(std::abs(20 * std::log10(a45)), 1.0);
}

TEST(Notch, AboveNyquistSkippedAndLogged) {
  std::vector<std::string> log;
  const std::vector<double> freqs{50.0, 100.0};
  const auto x = sine(10, 120, 2);
  const auto out = notch(single_channel(x, 120), freqs, 30.0, &log);
  ASSERT_EQ(log.size(), 1u);
  EXPECT_NE(log[0].find("100"), std::string::npos);
}

TEST(Bandpass, ImpulseResponsePostconditions) {
  const double fs = 500, low = 0.1, high = 75.0;
  auto apply = [&](const Recording& r) { return bandpass(r, low, high); };
  const double seconds = 400; // resolves the response at low/4
  EXPECT_LE(impulse_gain_db(apply, fs, seconds, low / 4), -20.0);
  EXPECT_LE(impulse_gain_db(apply, fs, seconds, std::min(2 * high, 0.99 * fs / 2)), -20.0);
  for (double f = 2 * low; f <= 0.8 * high; f *= 1.5) {
    const double g = impulse_gain_db(apply, fs, seconds, f);
    EXPECT_LT(std::abs(g), 3.0) << f;
  }
}

TEST(Bandpass, SinusoidAndDrift) {
  const double fs = 500;
  const auto y = channel0(bandpass(single_channel(sine(30, fs, 10), fs), 0.1, 75));
  EXPECT_LT(std::abs(20 * std::log10(oracle::sine_amplitude(y, 30, fs, 500))), 3.0);

  // 0.01 Hz drift over 200 s: amplitude measured over the central window.
  const auto drift = sine(0.01, 50, 400);
  const auto yd = channel0(bandpass(single_channel(drift, 50), 0.1, 20));
  EXPECT_LE(20 * std::log10(oracle::sine_amplitude(yd, 0.01, 50)), -20.0);

  EXPECT_THROW(bandpass(single_channel(sine(1, fs, 1), fs), 75, 0.1), ValidationError);
  EXPECT_THROW(bandpass(single_channel(sine(1, fs, 1), fs), 0.1, 300), ValidationError);
}

TEST(Resample, InBandAmplitudeWithinOnePercent) {
  const double fs = 500, target = 120;
  for (double f : {5.0, 10.0, 20.0, 40.0}) {
    const auto x = sine(f, fs, 10);
    const auto y = resample_signal(x, fs, target);
    const double a = oracle::sine_amplitude(y, f, target, 60);
    EXPECT_LT(std::abs(a - 1.0), 0.01) << f;
    // Also no phase drift: fit against the exact reference.
    const auto ref = sine(f, target, 10);
    double worst = 0;
    for (std::size_t n = 60; n + 60 < y.size(); ++n) worst = std::max(worst, std::abs(y[n] - ref[n]));
    EXPECT_LT(worst, 0.01) << f;
  }
}

TEST(Resample, LengthIdentityAndEvents) {
  const auto x = sine(10, 500, 1);
  EXPECT_NEAR(static_cast<double>(resample_signal(x, 500, 120).size()), 120.0, 1.0);
  Recording r = single_channel(sine(3, 120, 2), 120);
  r.events.push_back({0.75, "Stimulus", "a", std::nullopt, std::nullopt});
  const auto same = resample(r, 120);
  EXPECT_EQ(same.data, r.data);
  Recording r500 = single_channel(sine(3, 500, 4), 500);
  r500.events.push_back({1.25, "Stimulus", "a", std::nullopt, std::nullopt});
  const auto down = resample(r500, 120);
  EXPECT_EQ(down.events[0].onset, 1.25);
  EXPECT_NEAR(down.duration(), r500.duration(), 1.0 / 120);
}

TEST(RobustScale, TiledRampAndConstant) {
  std::vector<double> ramp;
  for (int k = 0; k < 20; ++k)
    for (int v = 0; v < 5; ++v) ramp.push_back(v);
  EXPECT_DOUBLE_EQ(quantile(ramp, 0.5), 2.0);
  EXPECT_DOUBLE_EQ(quantile(ramp, 0.75) - quantile(ramp, 0.25), 2.0);
  Recording r = single_channel(ramp, 100);
  r.channels.push_back("flat");
  r.data.insert(r.data.end(), ramp.size(), 3.0f);
  const auto out = robust_scale(r);
  const auto c0 = out.recording.channel(0);
  EXPECT_FLOAT_EQ(c0[2], 0.0f);
  EXPECT_FLOAT_EQ(c0[4], 1.0f);
  ASSERT_EQ(out.flat_channels, std::vector<std::size_t>{1});
  for (float v : out.recording.channel(1)) EXPECT_EQ(v, 0.0f);
}

TEST(Clamp, Bounds) {
  Recording r = single_channel({25.0, -25.0, 3.5, -19.0}, 10);
  const auto out = clamp(r, 20.0);
  EXPECT_EQ(out.data, (std::vector<float>{20.0f, -20.0f, 3.5f, -19.0f}));
  Recording in = single_channel({1.0, -2.0}, 10);
  EXPECT_EQ(clamp(in).data, in.data);
}

TEST(BaselineCorrect, Examples) {
  ExampleSet es;
  es.n_examples = 2;
  es.n_channels = 1;
  es.n_times = 100;
  es.sfreq = 100;
  es.window_start = -0.2;
  es.duration = 1.0;
  es.windows.resize(200);
  for (std::size_t t = 0; t < 100; ++t) {
    es.windows[t] = 4.0f;
    // Ten samples of a full sine period in [0, 0.1) s of the window.
    es.windows[100 + t] = static_cast<float>(1.5 + std::sin(2 * std::numbers::pi * static_cast<double>(t) / 10.0));
  }
  const auto out = baseline_correct(es, 0.0, 0.1);
  for (std::size_t t = 0; t < 100; ++t) {
    EXPECT_NEAR(out.windows[t], 0.0f, 1e-6);
    EXPECT_NEAR(out.windows[100 + t], std::sin(2 * std::numbers::pi * static_cast<double>(t) / 10.0), 1e-6);
  }
  EXPECT_THROW(baseline_correct(es, 2.0, 3.0), ValidationError);
  EXPECT_THROW(baseline_correct(es, 0.1, 0.1), ValidationError);
}

TEST(Preprocess, NotchListSkipsAboveNyquist) {
  PreprocSpec spec;
  std::vector<double> skipped;
  const auto kept = expand_notch_freqs(spec, 120.0, &skipped);
  for (double f : kept) EXPECT_LT(f, 60.0);
  EXPECT_FALSE(skipped.empty());
}
