#pragma once

#include "nb/domain.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace nb::dsp {

// One second-order section, a0 normalized to 1.
struct Biquad {
  double b0, b1, b2;
  double a1, a2;
};

using Sos = std::vector<Biquad>;

Sos butterworth_lowpass(int order, double cutoff_hz, double sfreq);
Sos butterworth_highpass(int order, double cutoff_hz, double sfreq);
Biquad iir_notch(double freq_hz, double quality, double sfreq);

// Complex frequency response magnitude of a cascade at `freq_hz`.
double sos_gain(const Sos& sos, double freq_hz, double sfreq);

// Forward-backward application with odd-extension padding and steady-state
// initial conditions. Output has zero phase and squared magnitude response.
std::vector<double> sosfiltfilt(const Sos& sos, std::span<const double> x);

struct PreprocSpec {
  bool bandpass_enabled = true;
  double band_low = 0.1;
  double band_high = 75.0;
  bool notch_enabled = true;
  std::vector<double> notch_freqs = {50.0, 60.0};
  bool notch_harmonics = true;
  double notch_quality = 30.0;
  bool resample_enabled = true;
  double target_sfreq = 120.0;
  bool robust_scale_enabled = true;
  bool clamp_enabled = true;
  double clamp = 20.0;
};

// Throws ValidationError on a broken invariant.
void validate(const PreprocSpec& spec);

constexpr int kButterworthOrder = 4;

// Throws ValidationError unless 0 < low < high < sfreq/2.
Recording bandpass(const Recording& rec, double low_hz, double high_hz);

// Frequencies at or above Nyquist are skipped and reported through `log`.
Recording notch(const Recording& rec, std::span<const double> freqs, double quality = 30.0,
                std::vector<std::string>* log = nullptr);

Recording resample(const Recording& rec, double target_sfreq);

// Resample a single signal; exposed for filter-response tests.
std::vector<double> resample_signal(std::span<const double> x, double sfreq, double target_sfreq);

struct RobustScaleResult {
  Recording recording;
  std::vector<std::size_t> flat_channels; // channels with IQR == 0, divided by 1
};

RobustScaleResult robust_scale(const Recording& rec);

Recording clamp(const Recording& rec, double bound = 20.0);

// Linear-interpolation quantile (q in [0,1]) of an unsorted sample.
double quantile(std::vector<double> values, double q);

// Subtracts the per-example, per-channel mean over [t0, t1) seconds from the
// epoch start. Throws ValidationError on an empty or out-of-window interval.
ExampleSet baseline_correct(const ExampleSet& es, double t0, double t1);

struct PreprocResult {
  Recording recording;
  std::vector<std::string> log;
  std::vector<std::size_t> flat_channels;
};

// bandpass -> notch -> resample -> robust_scale -> clamp
PreprocResult preprocess(const Recording& rec, const PreprocSpec& spec);

// Notch frequency list (with harmonics when requested) strictly below
// Nyquist at `sfreq`; dropped frequencies are reported through `skipped`.
std::vector<double> expand_notch_freqs(const PreprocSpec& spec, double sfreq,
                                       std::vector<double>* skipped = nullptr);

} // namespace nb::dsp
