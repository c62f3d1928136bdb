#include "nb/baseline.hpp"
#include "nb/config.hpp"
#include "nb/data.hpp"
#include "nb/protocol.hpp"
#include "nb/split.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace nb;
using namespace nb::protocol;
using nlohmann::json;

namespace {

// Regression (or multilabel) example set with its cache and split manifest on disk.
struct Fixture {
  test::TempDir dir{"protocol"};
  ExampleSet es;
  config::TaskSpec spec;
  std::size_t n_outputs = 1;
  OfferManifest manifest;

  explicit Fixture(ObjectiveKind objective) {
    es = test::make_set({4, 10, 2, 4, 1, 0}, 2, 9);
    Rng rng(4);
    if (objective == ObjectiveKind::Regression) {
      spec = config::find_task("reaction_time_synthetic");
      for (auto& t : es.targets) t = ScalarTarget{rng.normal(0.4, 0.1)};
    } else if (objective == ObjectiveKind::MultilabelClassification) {
      spec = config::find_task("artifact_synthetic");
      n_outputs = 5;
      for (auto& t : es.targets) {
        LabelVector v;
        for (std::size_t k = 0; k < 5; ++k) v.values.push_back(rng.bernoulli(0.3 + 0.1 * static_cast<double>(k)));
        t = v;
      }
    } else {
      spec = config::find_task("video_synthetic");
      n_outputs = 4;
      for (auto& t : es.targets) t = EmbeddingTarget{{rng.normal(), rng.normal(), rng.normal(), rng.normal()}};
    }
    es = split::split_cross_subject(es, 0.25, 0.25, std::nullopt, 2);
    manifest.cache_path = dir / "set.nbc";
    manifest.split_manifest_path = dir / "set.split.json";
    manifest.split_hash = split::split_hash(es);
    manifest.seed = 1;
    data::write_cache(es, manifest.cache_path);
    std::ofstream(manifest.split_manifest_path) << split::split_manifest(es).dump();
  }

  std::size_t n_test() const { return es.indices_of(SplitLabel::Test).size(); }
};

std::vector<std::string> runner(const std::string& mode, bool deviate = false) {
  std::vector<std::string> argv{NB_FAKE_RUNNER, "--mode", mode};
  if (deviate) argv.push_back("--deviate");
  return argv;
}

// Transcript with seq removed and file paths replaced by placeholders.
std::string normalized(const std::vector<TranscriptLine>& lines) {
  std::ostringstream out;
  for (const auto& l : lines) {
    json j = json::parse(l.line);
    j.erase("seq");
    if (j.contains("payload")) {
      auto& p = j["payload"];
      if (p.contains("cache_path")) p["cache_path"] = "<cache>";
      if (p.contains("split_manifest_path")) p["split_manifest_path"] = "<manifest>";
    }
    out << (l.outgoing ? "> " : "< ") << j.dump() << "\n";
  }
  return out.str();
}

// Compares against tests/golden/<name>.ndjson; NB_UPDATE_GOLDEN=1 rewrites it.
void expect_golden(const std::string& name, const std::vector<TranscriptLine>& lines) {
  const std::filesystem::path file = std::filesystem::path(NB_GOLDEN_DIR) / (name + ".ndjson");
  const std::string got = normalized(lines);
  if (const char* update = std::getenv("NB_UPDATE_GOLDEN"); update && std::string(update) == "1") {
    std::ofstream(file, std::ios::binary) << got;
    return;
  }
  std::ifstream in(file, std::ios::binary);
  ASSERT_TRUE(in) << "missing golden transcript " << file;
  const std::string want{std::istreambuf_iterator<char>(in), {}};
  EXPECT_EQ(got, want) << name;
}

template <typename E>
std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  }
  return "<no error>";
}

} // namespace

TEST(Messages, RoundTripEveryKind) {
  for (auto kind : {Kind::Hello, Kind::Capabilities, Kind::TaskOffer, Kind::DataManifest, Kind::TrainRequest,
                    Kind::PredictRequest, Kind::Predictions, Kind::Progress, Kind::Error, Kind::Bye}) {
    const Message m{kVersion, kind, 17, {{"x", {1, 2.5, "s"}}, {"nested", {{"a", nullptr}}}}};
    EXPECT_EQ(parse(serialize(m)), m);
    EXPECT_EQ(kind_from_string(to_string(kind)), kind);
  }
}

TEST(Messages, MalformedInput) {
  EXPECT_THROW(parse("not json"), ProtocolError);
  EXPECT_THROW(parse(R"({"v":1,"kind":"teleport","seq":1,"payload":{}})"), ProtocolError);
  EXPECT_THROW(parse(R"({"v":1,"kind":"hello","payload":{}})"), ProtocolError);
  EXPECT_THROW(parse(R"([1,2])"), ProtocolError);
  EXPECT_EQ(kDefaultTimeout, std::chrono::seconds(30));
  const std::string huge(kMaxMessageBytes + 1, ' ');
  EXPECT_THROW(parse(huge), ProtocolError);
}

TEST(Predictions, DecodeErrors) {
  EXPECT_EQ(error_of<ProtocolError>([] { decode_prediction(json(nullptr), 3, ObjectiveKind::Regression, 1); }),
            "non-finite value at example 3");
  EXPECT_EQ(error_of<ProtocolError>([] { decode_prediction(json("NaN"), 0, ObjectiveKind::Regression, 1); }),
            "non-finite value at example 0");
  EXPECT_NE(error_of<ProtocolError>([] { decode_prediction(json({1.0, 2.0}), 0, ObjectiveKind::Retrieval, 3); })
                .find("expected n_outputs = 3"),
            std::string::npos);
  const Prediction p = EmbeddingPrediction{{1.0, -2.0}};
  const auto back = decode_prediction(encode_prediction(p), 0, ObjectiveKind::Retrieval, 2);
  EXPECT_EQ(std::get<EmbeddingPrediction>(back).values, std::get<EmbeddingPrediction>(p).values);
}

TEST(Runner, EchoDummyMatchesInternalDummy) {
  for (auto objective : {ObjectiveKind::Regression, ObjectiveKind::MultilabelClassification, ObjectiveKind::Retrieval}) {
    Fixture fx(objective);
    ProcessTransport t(runner("echo-dummy", true));
    RunnerClient client(t, std::chrono::seconds(10));
    const auto caps = client.handshake();
    EXPECT_EQ(caps.name, "fake-echo-dummy");
    EXPECT_EQ(caps.objectives.size(), 5u);
    ASSERT_TRUE(client.offer_task(fx.spec, fx.n_outputs, fx.manifest).accepted);
    client.train();
    const auto got = client.collect_predictions(SplitLabel::Test, fx.n_test(), objective, fx.n_outputs);
    client.bye();
    EXPECT_EQ(t.terminate(), 0);
    EXPECT_EQ(got.deviations.at("lr"), "1e-05");

    const auto want = baseline::dummy_fit_predict(fx.es, objective, fx.n_outputs, fx.manifest.seed);
    ASSERT_EQ(got.predictions.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i)
      EXPECT_EQ(encode_prediction(got.predictions[i]), encode_prediction(want[i])) << i;

    if (objective == ObjectiveKind::Regression) expect_golden("session_regression", client.transcript());
    if (objective == ObjectiveKind::MultilabelClassification) expect_golden("session_multilabel", client.transcript());
  }
}

TEST(Runner, VersionMismatch) {
  ProcessTransport t(runner("v2"));
  RunnerClient client(t, std::chrono::seconds(10));
  EXPECT_EQ(error_of<VersionMismatch>([&] { client.handshake(); }),
            "protocol version mismatch: runner speaks v2, engine speaks v1");
  expect_golden("version_mismatch", client.transcript());
}

TEST(Runner, SilentRunnerTimesOut) {
  ProcessTransport t(runner("silent"));
  RunnerClient client(t, std::chrono::milliseconds(300));
  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_THROW(client.handshake(), TimeoutError);
  EXPECT_GE(std::chrono::steady_clock::now() - t0, std::chrono::milliseconds(290));
}

TEST(Runner, DeclinesRetrieval) {
  Fixture fx(ObjectiveKind::Retrieval);
  ProcessTransport t(runner("decline"));
  RunnerClient client(t, std::chrono::seconds(10));
  client.handshake();
  const auto r = client.offer_task(fx.spec, fx.n_outputs, fx.manifest);
  EXPECT_FALSE(r.accepted);
  EXPECT_EQ(r.reason, "unsupported objective: retrieval");
  client.bye();
  expect_golden("decline_retrieval", client.transcript());
}

TEST(Runner, MissingManifestFailsBeforeSending) {
  Fixture fx(ObjectiveKind::Regression);
  auto m = fx.manifest;
  m.split_manifest_path = fx.dir / "absent.json";
  ProcessTransport t(runner("echo-dummy"));
  RunnerClient client(t, std::chrono::seconds(10));
  client.handshake();
  const auto before = client.transcript().size();
  EXPECT_THROW(client.offer_task(fx.spec, fx.n_outputs, m), ValidationError);
  EXPECT_EQ(client.transcript().size(), before);
}

TEST(Runner, ShortAndNanPredictions) {
  Fixture fx(ObjectiveKind::Regression);
  {
    ProcessTransport t(runner("short"));
    RunnerClient client(t, std::chrono::seconds(10));
    client.handshake();
    client.offer_task(fx.spec, 1, fx.manifest);
    client.train();
    const auto n = fx.n_test();
    EXPECT_EQ(error_of<ProtocolError>([&] { client.collect_predictions(SplitLabel::Test, n, fx.spec.objective, 1); }),
              "prediction count mismatch: expected " + std::to_string(n) + ", got " + std::to_string(n - 1));
    expect_golden("short_predictions", client.transcript());
  }
  {
    ProcessTransport t(runner("nan"));
    RunnerClient client(t, std::chrono::seconds(10));
    client.handshake();
    client.offer_task(fx.spec, 1, fx.manifest);
    client.train();
    EXPECT_EQ(error_of<ProtocolError>(
                  [&] { client.collect_predictions(SplitLabel::Test, fx.n_test(), fx.spec.objective, 1); }),
              "non-finite value at example 0");
  }
}

TEST(Runner, CrashIsReported) {
  Fixture fx(ObjectiveKind::Regression);
  ProcessTransport t(runner("crash"));
  RunnerClient client(t, std::chrono::seconds(10));
  client.handshake();
  client.offer_task(fx.spec, 1, fx.manifest);
  const auto msg = error_of<RunnerExited>([&] { client.train(); });
  EXPECT_NE(msg.find("3"), std::string::npos) << msg;
}

TEST(Runner, MissingExecutable) {
  EXPECT_THROW(
      {
        ProcessTransport t({"/nonexistent/runner"});
        RunnerClient client(t, std::chrono::seconds(5));
        client.handshake();
      },
      ProtocolError);
}
