#pragma once

#include "nb/config.hpp"
#include "nb/domain.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

// Runner wire protocol, version 1. See docs/protocol.md.
namespace nb::protocol {

inline constexpr int kVersion = 1;
inline constexpr std::size_t kMaxMessageBytes = 16u << 20;
inline constexpr std::chrono::milliseconds kDefaultTimeout{30'000};

class ProtocolError : public Error {
public:
  using Error::Error;
};
class TimeoutError : public ProtocolError {
public:
  using ProtocolError::ProtocolError;
};
class VersionMismatch : public ProtocolError {
public:
  using ProtocolError::ProtocolError;
};
class RunnerExited : public ProtocolError {
public:
  using ProtocolError::ProtocolError;
};

enum class Kind {
  Hello,
  Capabilities,
  TaskOffer,
  DataManifest,
  TrainRequest,
  PredictRequest,
  Predictions,
  Progress,
  Error,
  Bye,
};

std::string_view to_string(Kind kind);
Kind kind_from_string(std::string_view name); // throws ProtocolError

struct Message {
  int v = kVersion;
  Kind kind = Kind::Hello;
  std::uint64_t seq = 0;
  nlohmann::json payload = nlohmann::json::object();

  bool operator==(const Message&) const = default;
};

// One NDJSON line without the trailing newline.
std::string serialize(const Message& m);
// Does not check the version; callers decide how to treat a mismatch.
Message parse(std::string_view line);

// Line-oriented duplex channel.
class Transport {
public:
  virtual ~Transport() = default;
  virtual void send_line(const std::string& line) = 0;
  // Throws TimeoutError or RunnerExited.
  virtual std::string receive_line(std::chrono::milliseconds timeout) = 0;
};

// Child process speaking the protocol on stdin/stdout. stderr is discarded
// unless `stderr_file` is set.
class ProcessTransport final : public Transport {
public:
  explicit ProcessTransport(const std::vector<std::string>& argv,
                            const std::optional<std::filesystem::path>& stderr_file = std::nullopt);
  ~ProcessTransport() override;
  ProcessTransport(const ProcessTransport&) = delete;
  ProcessTransport& operator=(const ProcessTransport&) = delete;

  void send_line(const std::string& line) override;
  std::string receive_line(std::chrono::milliseconds timeout) override;

  // Waits up to `grace` for exit, then kills. Returns the wait status.
  int terminate(std::chrono::milliseconds grace = std::chrono::milliseconds{500});

private:
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::optional<int> status_;
};

struct Capabilities {
  std::string name;
  std::vector<ObjectiveKind> objectives;
  std::size_t max_embedding_dim = 0;
  std::string preprocessing = "engine"; // "engine" or "raw"
};

// Files handed to the runner; bulk tensors never travel inline.
struct OfferManifest {
  std::filesystem::path cache_path;
  std::filesystem::path split_manifest_path;
  std::uint64_t split_hash = 0;
  std::uint64_t seed = 0;
};

struct OfferResult {
  bool accepted = false;
  std::string reason;
};

struct Collected {
  std::vector<Prediction> predictions;
  std::map<std::string, std::string> deviations;
};

struct TranscriptLine {
  bool outgoing = false; // engine -> runner
  std::string line;
};

// Engine side of one runner connection. Messaging is strictly sequential.
class RunnerClient {
public:
  explicit RunnerClient(Transport& transport, std::chrono::milliseconds timeout = kDefaultTimeout);

  Capabilities handshake();
  // Throws ValidationError before sending when a manifest file is missing.
  OfferResult offer_task(const config::TaskSpec& spec, std::size_t n_outputs, const OfferManifest& manifest);
  // Returns after the runner reports training done; collects declared deviations.
  void train();
  Collected collect_predictions(SplitLabel split, std::size_t expected, ObjectiveKind objective,
                                std::size_t n_outputs);
  void bye();

  const std::vector<TranscriptLine>& transcript() const { return transcript_; }
  const std::map<std::string, std::string>& deviations() const { return deviations_; }

private:
  void send(Kind kind, nlohmann::json payload);
  Message receive();
  [[noreturn]] void fail_on_error(const Message& m, std::string_view during);

  Transport& transport_;
  std::chrono::milliseconds timeout_;
  std::uint64_t out_seq_ = 0;
  std::optional<std::uint64_t> in_seq_;
  std::vector<TranscriptLine> transcript_;
  std::map<std::string, std::string> deviations_;
};

// Decodes one predictions payload entry for the given objective. Throws
// ProtocolError naming `index` on shape or finiteness violations.
Prediction decode_prediction(const nlohmann::json& value, std::size_t index, ObjectiveKind objective,
                             std::size_t n_outputs);
nlohmann::json encode_prediction(const Prediction& p);

// Recipe fields sent with every offer.
nlohmann::json recipe_json(const config::TrainerSpec& trainer);

} // namespace nb::protocol
