#include "nb/protocol.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <thread>

namespace nb::protocol {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::array<std::pair<Kind, std::string_view>, 10> kKinds = {{
    {Kind::Hello, "hello"},
    {Kind::Capabilities, "capabilities"},
    {Kind::TaskOffer, "task_offer"},
    {Kind::DataManifest, "data_manifest"},
    {Kind::TrainRequest, "train_request"},
    {Kind::PredictRequest, "predict_request"},
    {Kind::Predictions, "predictions"},
    {Kind::Progress, "progress"},
    {Kind::Error, "error"},
    {Kind::Bye, "bye"},
}};

} // namespace

std::string_view to_string(Kind kind) {
  for (const auto& [k, name] : kKinds)
    if (k == kind) return name;
  return "error";
}

Kind kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKinds)
    if (n == name) return k;
  throw ProtocolError("unknown message kind '" + std::string(name) + "'");
}

std::string serialize(const Message& m) {
  const json j = {{"v", m.v}, {"kind", std::string(to_string(m.kind))}, {"seq", m.seq}, {"payload", m.payload}};
  std::string line = j.dump();
  if (line.size() + 1 > kMaxMessageBytes) throw ProtocolError("message exceeds the 16 MiB cap");
  return line;
}

Message parse(std::string_view line) {
  if (line.size() + 1 > kMaxMessageBytes) throw ProtocolError("message exceeds the 16 MiB cap");
  const json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ProtocolError("malformed message: not a JSON object");
  try {
    Message m;
    m.v = j.at("v").get<int>();
    m.kind = kind_from_string(j.at("kind").get<std::string>());
    m.seq = j.at("seq").get<std::uint64_t>();
    m.payload = j.contains("payload") ? j["payload"] : json::object();
    if (!m.payload.is_object()) throw ProtocolError("malformed message: payload is not an object");
    return m;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed message: ") + e.what());
  }
}

// ---------------------------------------------------------------- process transport

ProcessTransport::ProcessTransport(const std::vector<std::string>& argv,
                                   const std::optional<std::filesystem::path>& stderr_file) {
  if (argv.empty()) throw ValidationError("runner command is empty");
  // A dead runner must surface as EPIPE, not terminate the engine.
  ::signal(SIGPIPE, SIG_IGN);
  int in_pipe[2], out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw Error(std::string("pipe: ") + std::strerror(errno));
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw Error(std::string("pipe: ") + std::strerror(errno));
  }
  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  const std::string err_path = stderr_file ? stderr_file->string() : "/dev/null";

  pid_ = ::fork();
  if (pid_ < 0) throw Error(std::string("fork: ") + std::strerror(errno));
  if (pid_ == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    const int err = ::open(err_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (err >= 0) ::dup2(err, STDERR_FILENO);
    ::execvp(args[0], args.data());
    _exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
}

ProcessTransport::~ProcessTransport() { terminate(std::chrono::milliseconds{200}); }

void ProcessTransport::send_line(const std::string& line) {
  if (to_child_ < 0) throw RunnerExited("runner input already closed");
  std::string data = line + "\n";
  std::string_view rest = data;
  while (!rest.empty()) {
    const ssize_t w = ::write(to_child_, rest.data(), rest.size());
    if (w < 0) {
      if (errno == EINTR) continue;
      if (errno == EPIPE) throw RunnerExited("runner closed its input");
      throw ProtocolError(std::string("write to runner failed: ") + std::strerror(errno));
    }
    rest.remove_prefix(static_cast<std::size_t>(w));
  }
}

std::string ProcessTransport::receive_line(std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    if (buffer_.size() >= kMaxMessageBytes) throw ProtocolError("runner message exceeds the 16 MiB cap");
    if (from_child_ < 0) throw RunnerExited("runner output closed");
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0)
      throw TimeoutError("runner did not respond within " + std::to_string(timeout.count() / 1000.0) + " s");
    pollfd pfd{from_child_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1000)));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("poll: ") + std::strerror(errno));
    }
    if (rc == 0) continue;
    char chunk[65536];
    const ssize_t r = ::read(from_child_, chunk, sizeof chunk);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("read from runner failed: ") + std::strerror(errno));
    }
    if (r == 0) {
      ::close(from_child_);
      from_child_ = -1;
      const int status = terminate(std::chrono::milliseconds{1000});
      std::string how = WIFEXITED(status)     ? "exit status " + std::to_string(WEXITSTATUS(status))
                        : WIFSIGNALED(status) ? "signal " + std::to_string(WTERMSIG(status))
                                              : "unknown status";
      throw RunnerExited("runner exited (" + how + ") before responding");
    }
    buffer_.append(chunk, static_cast<std::size_t>(r));
  }
}

int ProcessTransport::terminate(std::chrono::milliseconds grace) {
  if (to_child_ >= 0) {
    ::close(to_child_);
    to_child_ = -1;
  }
  if (pid_ > 0 && !status_) {
    int status = 0;
    const auto deadline = Clock::now() + grace;
    for (;;) {
      const pid_t r = ::waitpid(pid_, &status, WNOHANG);
      if (r == pid_ || (r < 0 && errno != EINTR)) break;
      if (Clock::now() >= deadline) {
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds{5});
    }
    status_ = status;
  }
  if (from_child_ >= 0) {
    ::close(from_child_);
    from_child_ = -1;
  }
  return status_.value_or(0);
}

// ---------------------------------------------------------------- predictions

json encode_prediction(const Prediction& p) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ScalarPrediction>) return v.value;
        else return v.values;
      },
      p);
}

Prediction decode_prediction(const json& value, std::size_t index, ObjectiveKind objective, std::size_t n_outputs) {
  const std::string where = " at example " + std::to_string(index);
  auto number = [&](const json& x) {
    if (x.is_string()) {
      const auto s = x.get<std::string>();
      if (s == "NaN" || s == "nan" || s == "Infinity" || s == "-Infinity") throw ProtocolError("non-finite value" + where);
    }
    if (!x.is_number()) throw ProtocolError(x.is_null() ? "non-finite value" + where : "non-numeric value" + where);
    const double d = x.get<double>();
    if (!std::isfinite(d)) throw ProtocolError("non-finite value" + where);
    return d;
  };
  std::vector<double> values;
  if (value.is_array()) {
    for (const auto& x : value) values.push_back(number(x));
  } else {
    values.push_back(number(value));
  }
  if (values.size() != n_outputs)
    throw ProtocolError("prediction" + where + " has " + std::to_string(values.size()) + " values, expected n_outputs = " +
                        std::to_string(n_outputs));
  Prediction p;
  switch (objective) {
  case ObjectiveKind::BinaryClassification:
  case ObjectiveKind::MulticlassClassification: p = ClassProbabilities{std::move(values)}; break;
  case ObjectiveKind::MultilabelClassification: p = LabelProbabilities{std::move(values)}; break;
  case ObjectiveKind::Regression: p = ScalarPrediction{values[0]}; break;
  case ObjectiveKind::Retrieval: p = EmbeddingPrediction{std::move(values)}; break;
  }
  if (const auto problem = check_prediction(p); !problem.empty()) throw ProtocolError("invalid prediction" + where + ": " + problem);
  return p;
}

json recipe_json(const config::TrainerSpec& t) {
  json j = {{"lr", t.lr},           {"weight_decay", t.weight_decay}, {"warmup_fraction", t.warmup_fraction},
            {"max_epochs", t.max_epochs}, {"patience", t.patience}, {"batch_size", t.batch_size}};
  j["grad_clip"] = t.grad_clip ? json(*t.grad_clip) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------- client

RunnerClient::RunnerClient(Transport& transport, std::chrono::milliseconds timeout)
    : transport_(transport), timeout_(timeout) {}

void RunnerClient::send(Kind kind, json payload) {
  Message m{kVersion, kind, ++out_seq_, std::move(payload)};
  const std::string line = serialize(m);
  transcript_.push_back({true, line});
  transport_.send_line(line);
}

Message RunnerClient::receive() {
  const std::string line = transport_.receive_line(timeout_);
  transcript_.push_back({false, line});
  Message m = parse(line);
  if (m.v != kVersion)
    throw VersionMismatch("protocol version mismatch: runner speaks v" + std::to_string(m.v) + ", engine speaks v" +
                          std::to_string(kVersion));
  if (in_seq_ && m.seq <= *in_seq_)
    throw ProtocolError("runner seq " + std::to_string(m.seq) + " does not increase (previous " +
                        std::to_string(*in_seq_) + ")");
  in_seq_ = m.seq;
  return m;
}

void RunnerClient::fail_on_error(const Message& m, std::string_view during) {
  if (m.kind == Kind::Error)
    throw ProtocolError("runner error during " + std::string(during) + ": " + m.payload.value("message", m.payload.value("reason", std::string("unspecified"))));
  throw ProtocolError("unexpected '" + std::string(to_string(m.kind)) + "' during " + std::string(during));
}

Capabilities RunnerClient::handshake() {
  send(Kind::Hello, {{"engine", "nb"}, {"versions", {kVersion}}});
  const Message m = receive();
  if (m.kind != Kind::Capabilities) fail_on_error(m, "handshake");
  Capabilities caps;
  try {
    caps.name = m.payload.value("name", "");
    for (const auto& o : m.payload.at("objectives")) caps.objectives.push_back(objective_from_string(o.get<std::string>()));
    caps.max_embedding_dim = m.payload.value("max_embedding_dim", std::size_t{0});
    caps.preprocessing = m.payload.value("preprocessing", "engine");
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed capabilities: ") + e.what());
  } catch (const ValidationError& e) {
    throw ProtocolError(std::string("malformed capabilities: ") + e.what());
  }
  if (caps.preprocessing != "engine" && caps.preprocessing != "raw")
    throw ProtocolError("malformed capabilities: preprocessing must be 'engine' or 'raw'");
  return caps;
}

OfferResult RunnerClient::offer_task(const config::TaskSpec& spec, std::size_t n_outputs, const OfferManifest& manifest) {
  for (const auto& p : {manifest.cache_path, manifest.split_manifest_path})
    if (!std::filesystem::exists(p)) throw ValidationError("manifest file missing on disk: " + p.string());
  send(Kind::TaskOffer, {{"task_id", spec.task_id},
                         {"objective", std::string(to_string(spec.objective))},
                         {"n_outputs", n_outputs},
                         {"metrics", spec.metric_names},
                         {"loss", spec.loss_name},
                         {"seed", manifest.seed},
                         {"recipe", recipe_json(spec.trainer)}});
  Message m = receive();
  if (m.kind == Kind::Error && m.payload.value("code", "") == "declined")
    return {false, m.payload.value("reason", std::string("declined without reason"))};
  if (m.kind != Kind::Progress || !m.payload.value("accepted", false)) fail_on_error(m, "task offer");
  send(Kind::DataManifest, {{"cache_path", manifest.cache_path.string()},
                            {"split_manifest_path", manifest.split_manifest_path.string()},
                            {"split_hash", to_hex(manifest.split_hash)}});
  m = receive();
  if (m.kind != Kind::Progress || !m.payload.value("ready", false)) fail_on_error(m, "data manifest");
  return {true, ""};
}

namespace {

void merge_deviations(std::map<std::string, std::string>& into, const json& payload) {
  if (!payload.contains("deviations") || !payload["deviations"].is_object()) return;
  for (const auto& [k, v] : payload["deviations"].items()) into[k] = v.is_string() ? v.get<std::string>() : v.dump();
}

} // namespace

void RunnerClient::train() {
  send(Kind::TrainRequest, json::object());
  for (;;) {
    const Message m = receive();
    if (m.kind != Kind::Progress) fail_on_error(m, "training");
    merge_deviations(deviations_, m.payload);
    if (m.payload.value("done", false)) return;
  }
}

Collected RunnerClient::collect_predictions(SplitLabel split, std::size_t expected, ObjectiveKind objective,
                                            std::size_t n_outputs) {
  send(Kind::PredictRequest, {{"split", std::string(to_string(split))}});
  Message m = receive();
  while (m.kind == Kind::Progress) {
    merge_deviations(deviations_, m.payload);
    m = receive();
  }
  if (m.kind != Kind::Predictions) fail_on_error(m, "prediction");
  const json& values = m.payload.contains("values") ? m.payload["values"] : json();
  if (!values.is_array()) throw ProtocolError("predictions payload lacks a 'values' array");
  if (values.size() != expected)
    throw ProtocolError("prediction count mismatch: expected " + std::to_string(expected) + ", got " +
                        std::to_string(values.size()));
  merge_deviations(deviations_, m.payload);
  Collected out;
  out.predictions.reserve(expected);
  for (std::size_t i = 0; i < values.size(); ++i)
    out.predictions.push_back(decode_prediction(values[i], i, objective, n_outputs));
  out.deviations = deviations_;
  return out;
}

void RunnerClient::bye() {
  send(Kind::Bye, json::object());
  try {
    const Message m = receive();
    if (m.kind != Kind::Bye) fail_on_error(m, "shutdown");
  } catch (const RunnerExited&) {
    // Exiting without echoing bye is tolerated.
  }
}

} // namespace nb::protocol
