// Protocol test double. Speaks protocol v1 on stdio and misbehaves on request:
//   echo-dummy  training-statistics predictor (majority class / mean target)
//   v2          answers the handshake with protocol version 2
//   silent      never answers
//   short       returns one prediction too few
//   nan         returns a non-finite value for the first example
//   crash       exits with status 3 when asked to train
//   decline     declines retrieval offers
// --deviate adds a declared learning-rate deviation to the training report.
#include "nb/data.hpp"
#include "nb/protocol.hpp"
#include "nb/rng.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>

using nlohmann::json;
using namespace nb;

namespace {

struct State {
  std::string mode = "echo-dummy";
  bool deviate = false;
  std::uint64_t seq = 0;
  ObjectiveKind objective = ObjectiveKind::MulticlassClassification;
  std::size_t n_outputs = 0;
  std::uint64_t seed = 0;
  ExampleSet es;
  std::map<std::string, std::string> labels; // example id -> split
  json fitted;
};

void reply(State& s, protocol::Kind kind, json payload, int version = protocol::kVersion) {
  protocol::Message m{version, kind, ++s.seq, std::move(payload)};
  std::cout << protocol::serialize(m) << "\n" << std::flush;
}

bool in_fit(const State& s, std::size_t i) {
  const auto& l = s.labels.at(s.es.example_ids[i]);
  return l == "train" || l == "valid";
}

// Statistics of the Train + Valid targets, accumulated in example order.
void fit(State& s) {
  const std::size_t n = s.es.n_examples;
  std::vector<double> acc(s.n_outputs, 0.0);
  double count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!in_fit(s, i)) continue;
    count += 1;
    const Target& t = s.es.targets[i];
    if (const auto* c = std::get_if<ClassIndex>(&t)) acc.at(static_cast<std::size_t>(c->value)) += 1;
    else if (const auto* l = std::get_if<LabelVector>(&t))
      for (std::size_t k = 0; k < s.n_outputs; ++k) acc[k] += l->values.at(k);
    else if (const auto* r = std::get_if<ScalarTarget>(&t)) acc[0] += r->value;
    else {
      const auto& e = std::get<EmbeddingTarget>(t).values;
      for (std::size_t k = 0; k < s.n_outputs; ++k) acc[k] += e.at(k);
    }
  }
  if (s.objective == ObjectiveKind::BinaryClassification || s.objective == ObjectiveKind::MulticlassClassification) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < acc.size(); ++k)
      if (acc[k] > acc[best]) best = k;
    std::vector<double> onehot(s.n_outputs, 0.0);
    onehot[best] = 1.0;
    s.fitted = onehot;
  } else {
    for (auto& a : acc) a /= count;
    s.fitted = acc;
  }
}

json predict(State& s, const std::string& split) {
  json values = json::array();
  Rng rng(derive_seed(s.seed, "dummy_multilabel"));
  for (std::size_t i = 0; i < s.es.n_examples; ++i) {
    if (s.labels.at(s.es.example_ids[i]) != split) continue;
    if (s.objective == ObjectiveKind::MultilabelClassification) {
      json row = json::array();
      for (std::size_t k = 0; k < s.n_outputs; ++k) row.push_back(rng.bernoulli(s.fitted[k].get<double>()) ? 1.0 : 0.0);
      values.push_back(row);
    } else if (s.objective == ObjectiveKind::Regression) {
      values.push_back(s.fitted[0]);
    } else {
      values.push_back(s.fitted);
    }
  }
  if (s.mode == "short" && !values.empty()) values.erase(values.size() - 1);
  if (s.mode == "nan" && !values.empty()) {
    if (values[0].is_array()) values[0][0] = std::numeric_limits<double>::quiet_NaN();
    else values[0] = std::numeric_limits<double>::quiet_NaN();
  }
  return values;
}

} // namespace

int main(int argc, char** argv) {
  State s;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--mode" && i + 1 < argc) s.mode = argv[++i];
    else if (a == "--deviate") s.deviate = true;
  }
  std::string line;
  while (std::getline(std::cin, line)) {
    if (s.mode == "silent") continue;
    protocol::Message m;
    try {
      m = protocol::parse(line);
    } catch (const std::exception& e) {
      reply(s, protocol::Kind::Error, {{"code", "malformed"}, {"message", e.what()}});
      continue;
    }
    try {
      switch (m.kind) {
      case protocol::Kind::Hello:
        reply(s, protocol::Kind::Capabilities,
              {{"name", "fake-" + s.mode},
               {"objectives", {"binary_classification", "multiclass_classification", "multilabel_classification",
                               "regression", "retrieval"}},
               {"max_embedding_dim", 4096},
               {"preprocessing", "engine"}},
              s.mode == "v2" ? 2 : protocol::kVersion);
        break;
      case protocol::Kind::TaskOffer:
        s.objective = objective_from_string(m.payload.at("objective").get<std::string>());
        s.n_outputs = m.payload.at("n_outputs").get<std::size_t>();
        s.seed = m.payload.at("seed").get<std::uint64_t>();
        if (s.mode == "decline" && s.objective == ObjectiveKind::Retrieval)
          reply(s, protocol::Kind::Error, {{"code", "declined"}, {"reason", "unsupported objective: retrieval"}});
        else
          reply(s, protocol::Kind::Progress, {{"stage", "offer"}, {"accepted", true}});
        break;
      case protocol::Kind::DataManifest: {
        s.es = data::read_cache(m.payload.at("cache_path").get<std::string>());
        std::ifstream in(m.payload.at("split_manifest_path").get<std::string>());
        s.labels = json::parse(in).get<std::map<std::string, std::string>>();
        reply(s, protocol::Kind::Progress, {{"stage", "manifest"}, {"ready", true}, {"n_examples", s.es.n_examples}});
        break;
      }
      case protocol::Kind::TrainRequest: {
        if (s.mode == "crash") std::_Exit(3);
        fit(s);
        reply(s, protocol::Kind::Progress, {{"stage", "train"}, {"epoch", 1}});
        json done = {{"stage", "train"}, {"done", true}};
        if (s.deviate) done["deviations"] = {{"lr", "1e-05"}};
        reply(s, protocol::Kind::Progress, done);
        break;
      }
      case protocol::Kind::PredictRequest: {
        const auto split = m.payload.at("split").get<std::string>();
        reply(s, protocol::Kind::Predictions, {{"split", split}, {"values", predict(s, split)}});
        break;
      }
      case protocol::Kind::Bye:
        reply(s, protocol::Kind::Bye, json::object());
        return 0;
      default:
        reply(s, protocol::Kind::Error, {{"code", "unexpected"}, {"message", "unexpected " + std::string(protocol::to_string(m.kind))}});
      }
    } catch (const std::exception& e) {
      reply(s, protocol::Kind::Error, {{"code", "internal"}, {"message", e.what()}});
    }
  }
  return 0;
}
