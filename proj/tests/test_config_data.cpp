#include "nb/config.hpp"
#include "nb/data.hpp"
#include "nb/dsp.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

using namespace nb;
using namespace nb::config;

namespace {

constexpr const char* kListing = R"(data:
  study:
    source.name: Mne2013SampleEeg
    split:
      name: SklearnSplit
      valid_split_ratio: 0.2
      test_split_ratio: 0.2
      stratify_by: description
  neuro.baseline: [0.0, 0.2]
  target:
    name: LabelEncoder
    event_types: Stimulus
    event_field: description
    return_one_hot: true
  trigger_event_type: Stimulus
  start: -0.2
  duration: 1.0
loss.name: CrossEntropyLoss
metrics: BalancedAcc
)";

void expect_message(const std::function<void()>& f, const std::string& needle) {
  try {
    f();
    ADD_FAILURE() << "no exception, expected '" << needle << "'";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

} // namespace

TEST(Domain, ValidateExampleSet) {
  auto es = test::make_set({}, 2, 1);
  es.split_labels.assign(es.n_examples, SplitLabel::Train);
  EXPECT_TRUE(validate_example_set(es).empty());
  auto missing = es;
  missing.split_labels[3] = SplitLabel::Unassigned;
  EXPECT_EQ(validate_example_set(missing).size(), 1u);
  auto nan = es;
  nan.windows[5] = std::nanf("");
  EXPECT_EQ(validate_example_set(nan).size(), 1u);
}

TEST(Domain, HashConfig) {
  EXPECT_EQ(hash_config("a: 1"), hash_config("a: 1"));
  // FNV-1a reference values.
  EXPECT_EQ(hash_config(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(hash_config("a"), 0xaf63dc4c8601ec8cull);
  std::set<std::uint64_t> seen;
  Rng rng(1);
  for (int i = 0; i < 100000; ++i) {
    const std::string text = "{\"lr\":" + std::to_string(rng.uniform()) + ",\"k\":" + std::to_string(i) + "}";
    seen.insert(hash_config(text));
  }
  EXPECT_EQ(seen.size(), 100000u);
  EXPECT_EQ(from_hex(to_hex(0x0123456789abcdefull)), 0x0123456789abcdefull);
}

TEST(Config, ParsesTheAudiovisualListing) {
  const auto spec = parse_task_config(kListing);
  EXPECT_DOUBLE_EQ(spec.start, -0.2);
  EXPECT_DOUBLE_EQ(spec.duration, 1.0);
  ASSERT_TRUE(spec.baseline.has_value());
  EXPECT_DOUBLE_EQ((*spec.baseline)[0], 0.0);
  EXPECT_DOUBLE_EQ((*spec.baseline)[1], 0.2);
  EXPECT_EQ(spec.loss_name, "CrossEntropyLoss");
  EXPECT_EQ(spec.metric_names, std::vector<std::string>{"BalancedAcc"});
  EXPECT_EQ(spec.split.kind, SplitKind::Random);
  EXPECT_DOUBLE_EQ(spec.split.test_ratio, 0.2);
  EXPECT_DOUBLE_EQ(spec.split.valid_ratio, 0.2);
  EXPECT_EQ(spec.split.stratify_by, std::optional<std::string>("description"));
  EXPECT_EQ(spec.target.kind, TargetCodecKind::LabelEncoder);
  EXPECT_EQ(spec.trigger_event_type, "Stimulus");
  EXPECT_EQ(spec.source_name, "Mne2013SampleEeg");
}

TEST(Config, Errors) {
  expect_message([] { parse_task_config(""); }, "required");
  std::string bad = kListing;
  bad.replace(bad.find("test_split_ratio: 0.2"), 21, "test_split_ratio: 1.5");
  expect_message([&] { parse_task_config(bad); }, "test_split_ratio");
  expect_message([] { parse_task_config(std::string(kListing) + "bogus_key: 1\n"); }, "bogus_key");
  EXPECT_THROW(parse_task_config("data: [unclosed"), ParseError);
}

TEST(Config, Overrides) {
  const auto spec = parse_task_config(kListing);
  EXPECT_DOUBLE_EQ(apply_overrides(spec, {"data.start=-0.1"}).start, -0.1);
  EXPECT_THROW(apply_overrides(spec, {"loss.name=MSELoss"}), ValidationError);
  EXPECT_THROW(apply_overrides(spec, {"data.nope=1"}), ValidationError);
  EXPECT_THROW(apply_overrides(spec, {"data.start=abc"}), ValidationError);
  EXPECT_EQ(config_hash(apply_overrides(spec, {})), config_hash(spec));
}

TEST(Config, WhitespaceDoesNotChangeHash) {
  std::string spaced = kListing;
  spaced.replace(spaced.find("start: -0.2"), 11, "start:    -0.2   ");
  EXPECT_EQ(config_hash(parse_task_config(spaced)), config_hash(parse_task_config(kListing)));
}

TEST(Config, RegistryCoversObjectivesAndRoundTrips) {
  std::set<ObjectiveKind> kinds;
  for (const auto& t : builtin_task_registry()) {
    kinds.insert(t.objective);
    const auto text = serialize_task_config(t);
    const auto parsed = parse_task_config(text);
    EXPECT_EQ(canonical_text(parsed), canonical_text(t)) << t.task_id;
    EXPECT_EQ(serialize_task_config(parsed), text) << t.task_id;
  }
  EXPECT_EQ(kinds.size(), 5u);
  EXPECT_EQ(find_task("image_synthetic").objective, ObjectiveKind::Retrieval);
  EXPECT_EQ(find_task("image_synthetic").n_outputs, 1536u);
  EXPECT_EQ(find_task("artifact_synthetic").objective, ObjectiveKind::MultilabelClassification);
  EXPECT_EQ(find_task("artifact_synthetic").n_outputs, 5u);
  expect_message([] { find_task("nope"); }, "p300_synthetic");
  for (auto k : {ObjectiveKind::BinaryClassification, ObjectiveKind::MulticlassClassification,
                 ObjectiveKind::MultilabelClassification, ObjectiveKind::Regression, ObjectiveKind::Retrieval})
    EXPECT_FALSE(default_loss(k).empty());
}

TEST(Synthetic, FrequencyTagPeak) {
  auto p = data::synthetic_profile("ssvep");
  p.n_subjects = 1;
  p.n_events_per_subject = 6;
  const auto ds = data::generate_synthetic(p);
  const auto& tag = std::get<data::FrequencyTag>(p.effect);
  const auto& rec = ds.recordings.front();
  for (const auto& ev : rec.events) {
    std::size_t k = 0;
    while (p.class_names[k] != ev.description) ++k;
    const std::size_t ch = tag.tagged_channels[k].front();
    const auto start = static_cast<std::size_t>(ev.onset * rec.sfreq);
    const auto n = static_cast<std::size_t>(tag.length * rec.sfreq);
    const auto x = rec.channel(ch);
    std::vector<double> w(x.begin() + static_cast<long>(start), x.begin() + static_cast<long>(start + n));
    double best_f = 0, best = -1;
    for (double f = 1.0; f < rec.sfreq / 2; f += 0.25) {
      const double m = oracle::dft_magnitude(w, f, rec.sfreq);
      if (m > best) {
        best = m;
        best_f = f;
      }
    }
    EXPECT_NEAR(best_f, tag.freqs[k], 0.5);
  }
}

TEST(Synthetic, NoiselessEvokedAmplitudeAndDeterminism) {
  auto p = data::synthetic_profile("p300");
  p.n_subjects = 1;
  p.n_events_per_subject = 4;
  p.noise_std = 0.0;
  p.subject_gain_spread = 0.0;
  auto& fx = std::get<data::EvokedDeflection>(p.effect);
  fx.patterns = {std::vector<double>(p.n_channels, 0.0), std::vector<double>(p.n_channels, 1.0)};
  const auto ds = data::generate_synthetic(p);
  const auto& rec = ds.recordings.front();
  for (const auto& ev : rec.events) {
    const std::size_t k = ev.description == p.class_names[1] ? 1 : 0;
    const auto t0 = static_cast<std::size_t>(std::ceil((ev.onset + fx.latency) * rec.sfreq));
    const auto t1 = static_cast<std::size_t>(std::floor((ev.onset + fx.latency + fx.width) * rec.sfreq));
    double mean = 0;
    for (std::size_t t = t0; t < t1; ++t) mean += rec.channel(0)[t];
    mean /= static_cast<double>(t1 - t0);
    EXPECT_NEAR(mean, k == 1 ? fx.amplitude : 0.0, 1e-6);
  }
  const auto again = data::generate_synthetic(p);
  EXPECT_EQ(again.recordings.front().data, rec.data);
}

TEST(Recording, DiskRoundTripAndErrors) {
  test::TempDir dir("recording");
  Recording r;
  r.recording_id = "sub-1_ses-1";
  r.subject_id = "1";
  r.session_id = "1";
  r.sfreq = 100;
  r.channels = {"a", "b"};
  r.data = {1, 2, 3, 4, 5, 6};
  r.events.push_back({0.01, "Stimulus", "x", std::nullopt, std::nullopt});
  data::write_recording(dir.path(), r);
  const auto back = data::load_recording(dir.path(), r.recording_id);
  EXPECT_EQ(back.data, r.data);
  EXPECT_EQ(back.channels, r.channels);
  EXPECT_EQ(back.events, r.events);

  std::filesystem::resize_file(dir / (r.recording_id + ".bin"), 6 * 4 - 4);
  expect_message([&] { data::load_recording(dir.path(), r.recording_id); }, "length");

  Recording zero = r;
  zero.recording_id = "zero";
  data::write_recording(dir.path(), r);
  std::ifstream in(dir / (r.recording_id + ".json"));
  auto sidecar = nlohmann::json::parse(in);
  sidecar["sfreq"] = 0.0;
  std::ofstream(dir / "zero.json") << sidecar.dump();
  std::filesystem::copy_file(dir / (r.recording_id + ".bin"), dir / "zero.bin");
  EXPECT_THROW(data::load_recording(dir.path(), "zero"), ValidationError);
}

TEST(Epoch, WindowsAndDrops) {
  Recording r;
  r.recording_id = "r";
  r.subject_id = "1";
  r.session_id = "1";
  r.sfreq = 120;
  r.channels = {"a"};
  r.data.assign(120 * 20, 0.5f);
  for (double onset : {0.05, 2.0, 4.0, 6.0, 8.0, 10.0}) r.events.push_back({onset, "Stimulus", "x", {}, {}});
  r.events.push_back({12.0, "Other", "y", {}, {}});
  auto spec = parse_task_config(kListing);
  const auto res = data::epoch(r, spec);
  EXPECT_EQ(res.examples.n_examples, 5u);
  EXPECT_EQ(res.examples.n_times, 120u);
  EXPECT_EQ(res.dropped, 1u);
  spec.trigger_event_type = "Missing";
  EXPECT_THROW(data::epoch(r, spec), ValidationError);
}

TEST(Cache, RoundTripChecksumAndVersion) {
  test::TempDir dir("cache");
  auto es = test::make_set({}, 3, 2);
  es.split_labels.assign(es.n_examples, SplitLabel::Test);
  const auto file = dir / "x.nbc";
  data::write_cache(es, file, {{"k", 1}});
  nlohmann::json meta;
  EXPECT_EQ(data::read_cache(file, &meta), es);
  EXPECT_EQ(meta.at("k"), 1);

  std::string bytes;
  {
    std::ifstream in(file, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  std::ofstream(dir / "flip.nbc", std::ios::binary) << flipped;
  expect_message([&] { data::read_cache(dir / "flip.nbc"); }, "checksum");

  auto newer = bytes;
  newer[4] = static_cast<char>(data::kCacheVersion + 1);
  std::ofstream(dir / "new.nbc", std::ios::binary) << newer;
  expect_message([&] { data::read_cache(dir / "new.nbc"); }, "version 2");
}
