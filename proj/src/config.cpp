#include "nb/config.hpp"
#include "nb/metrics.hpp"

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace nb::config {

using json = nlohmann::json;
using FlatMap = std::map<std::string, json>;

std::string_view to_string(SplitKind kind) {
  switch (kind) {
  case SplitKind::Predefined: return "PredefinedSplit";
  case SplitKind::LeaveConceptOut: return "LeaveConceptOutSplit";
  case SplitKind::CrossSubject: return "CrossSubjectSplit";
  case SplitKind::WithinSubject: return "WithinSubjectSplit";
  case SplitKind::Random: return "SklearnSplit";
  }
  return "SklearnSplit";
}

namespace {

SplitKind split_kind_from_string(const std::string& name) {
  static const std::map<std::string, SplitKind> names = {
      {"SklearnSplit", SplitKind::Random},
      {"RandomSplit", SplitKind::Random},
      {"PredefinedSplit", SplitKind::Predefined},
      {"LeaveConceptOutSplit", SplitKind::LeaveConceptOut},
      {"CrossSubjectSplit", SplitKind::CrossSubject},
      {"WithinSubjectSplit", SplitKind::WithinSubject},
  };
  auto it = names.find(name);
  if (it == names.end()) throw ValidationError("data.study.split.name: unknown split '" + name + "'");
  return it->second;
}

TargetCodecKind codec_from_string(const std::string& name) {
  if (name == "LabelEncoder") return TargetCodecKind::LabelEncoder;
  if (name == "MultiLabelEncoder") return TargetCodecKind::MultiLabelEncoder;
  if (name == "ScalarTarget") return TargetCodecKind::Scalar;
  if (name == "EmbeddingTarget") return TargetCodecKind::Embedding;
  throw ValidationError("data.target.name: unknown target codec '" + name + "'");
}

} // namespace

std::string_view to_string(TargetCodecKind kind) {
  switch (kind) {
  case TargetCodecKind::LabelEncoder: return "LabelEncoder";
  case TargetCodecKind::MultiLabelEncoder: return "MultiLabelEncoder";
  case TargetCodecKind::Scalar: return "ScalarTarget";
  case TargetCodecKind::Embedding: return "EmbeddingTarget";
  }
  return "LabelEncoder";
}

std::vector<std::string> TaskSpec::datasets() const {
  std::vector<std::string> out{source_name};
  out.insert(out.end(), extra_datasets.begin(), extra_datasets.end());
  return out;
}

std::string_view default_loss(ObjectiveKind objective) {
  switch (objective) {
  case ObjectiveKind::BinaryClassification:
  case ObjectiveKind::MulticlassClassification: return "CrossEntropyLoss";
  case ObjectiveKind::MultilabelClassification: return "BCEWithLogitsLoss";
  case ObjectiveKind::Regression: return "MSELoss";
  case ObjectiveKind::Retrieval: return "ClipLoss";
  }
  return "CrossEntropyLoss";
}

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "task_id",
      "modality",
      "category",
      "objective",
      "n_outputs",
      "data.study.source.name",
      "data.study.source.root",
      "data.study.source.extra_datasets",
      "data.study.split.name",
      "data.study.split.valid_split_ratio",
      "data.study.split.test_split_ratio",
      "data.study.split.stratify_by",
      "data.study.split.holdout",
      "data.study.split.seed",
      "data.neuro.baseline",
      "data.target.name",
      "data.target.event_types",
      "data.target.event_field",
      "data.target.return_one_hot",
      "data.target.classes",
      "data.target.file",
      "data.trigger_event_type",
      "data.start",
      "data.duration",
      "data.preprocessing.bandpass",
      "data.preprocessing.band",
      "data.preprocessing.notch",
      "data.preprocessing.notch_freqs",
      "data.preprocessing.notch_harmonics",
      "data.preprocessing.notch_quality",
      "data.preprocessing.resample",
      "data.preprocessing.sfreq",
      "data.preprocessing.robust_scale",
      "data.preprocessing.clamp_enabled",
      "data.preprocessing.clamp",
      "loss.name",
      "loss.class_weights",
      "metrics",
      "trainer.lr",
      "trainer.weight_decay",
      "trainer.warmup_fraction",
      "trainer.max_epochs",
      "trainer.patience",
      "trainer.batch_size",
      "trainer.grad_clip",
      "trainer.seeds",
      "handcrafted.freq_bands",
      "handcrafted.xdawn_filters",
  };
  return keys;
}

const std::vector<std::string> kRequiredKeys = {
    "data.study.source.name", "data.target.name", "data.trigger_event_type",
    "data.start",             "data.duration",    "loss.name",
    "metrics",
};

json scalar_to_json(const YAML::Node& node) {
  const std::string& text = node.Scalar();
  if (node.Tag() == "!") return text; // quoted
  if (text == "~" || text == "null" || text == "Null" || text == "NULL") return nullptr;
  if (text == "true" || text == "True" || text == "TRUE") return true;
  if (text == "false" || text == "False" || text == "FALSE") return false;
  {
    std::int64_t iv = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), iv);
    if (ec == std::errc() && ptr == text.data() + text.size()) return iv;
  }
  {
    std::string t = text;
    if (!t.empty() && t.front() == '+') t.erase(0, 1);
    if (t == ".inf" || t == ".Inf") return std::numeric_limits<double>::infinity();
    if (t == "-.inf" || t == "-.Inf") return -std::numeric_limits<double>::infinity();
    double dv = 0.0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), dv);
    if (ec == std::errc() && ptr == t.data() + t.size() && !t.empty()) return dv;
  }
  return text;
}

json node_to_json(const YAML::Node& node, const std::string& path) {
  switch (node.Type()) {
  case YAML::NodeType::Null: return nullptr;
  case YAML::NodeType::Scalar: return scalar_to_json(node);
  case YAML::NodeType::Sequence: {
    json arr = json::array();
    for (const auto& item : node) arr.push_back(node_to_json(item, path));
    return arr;
  }
  case YAML::NodeType::Map:
    throw ValidationError("'" + path + "': mappings are not allowed inside lists or as values here");
  default: return nullptr;
  }
}

void flatten(const YAML::Node& node, const std::string& prefix, FlatMap& out) {
  for (const auto& kv : node) {
    const std::string key = kv.first.as<std::string>();
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (kv.second.IsMap()) {
      flatten(kv.second, path, out);
    } else {
      if (out.count(path)) throw ValidationError("duplicate key '" + path + "'");
      out[path] = node_to_json(kv.second, path);
    }
  }
}

FlatMap parse_flat(std::string_view text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw ParseError(std::string("malformed YAML: ") + e.what());
  }
  FlatMap flat;
  if (root.IsNull()) return flat;
  if (!root.IsMap()) throw ParseError("task config must be a YAML mapping");
  flatten(root, "", flat);
  return flat;
}

class Reader {
public:
  explicit Reader(const FlatMap& flat) : flat_(flat) {}

  bool has(const std::string& key) const {
    auto it = flat_.find(key);
    return it != flat_.end() && !it->second.is_null();
  }

  std::string str(const std::string& key) const {
    const auto& v = at(key);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number() || v.is_boolean()) return v.dump();
    throw mismatch(key, "a string");
  }

  double num(const std::string& key) const {
    const auto& v = at(key);
    if (!v.is_number()) throw mismatch(key, "a number");
    return v.get<double>();
  }

  std::int64_t integer(const std::string& key) const {
    const auto& v = at(key);
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (std::floor(d) == d) return static_cast<std::int64_t>(d);
    }
    throw mismatch(key, "an integer");
  }

  bool boolean(const std::string& key) const {
    const auto& v = at(key);
    if (!v.is_boolean()) throw mismatch(key, "a boolean");
    return v.get<bool>();
  }

  std::vector<std::string> str_list(const std::string& key) const {
    const auto& v = at(key);
    std::vector<std::string> out;
    if (v.is_string()) {
      out.push_back(v.get<std::string>());
      return out;
    }
    if (!v.is_array()) throw mismatch(key, "a string or list of strings");
    for (const auto& item : v) {
      if (item.is_string()) out.push_back(item.get<std::string>());
      else if (item.is_number()) out.push_back(item.dump());
      else throw mismatch(key, "a list of strings");
    }
    return out;
  }

  std::vector<double> num_list(const std::string& key) const {
    const auto& v = at(key);
    std::vector<double> out;
    if (v.is_number()) {
      out.push_back(v.get<double>());
      return out;
    }
    if (!v.is_array()) throw mismatch(key, "a list of numbers");
    for (const auto& item : v) {
      if (!item.is_number()) throw mismatch(key, "a list of numbers");
      out.push_back(item.get<double>());
    }
    return out;
  }

  std::array<double, 2> pair(const std::string& key) const {
    auto v = num_list(key);
    if (v.size() != 2) throw mismatch(key, "a [low, high] pair");
    return {v[0], v[1]};
  }

  std::vector<std::array<double, 2>> pair_list(const std::string& key) const {
    const auto& v = at(key);
    if (!v.is_array()) throw mismatch(key, "a list of [low, high] pairs");
    std::vector<std::array<double, 2>> out;
    for (const auto& item : v) {
      if (!item.is_array() || item.size() != 2 || !item[0].is_number() || !item[1].is_number())
        throw mismatch(key, "a list of [low, high] pairs");
      out.push_back({item[0].get<double>(), item[1].get<double>()});
    }
    return out;
  }

private:
  const json& at(const std::string& key) const { return flat_.at(key); }

  static ValidationError mismatch(const std::string& key, const char* expected) {
    return ValidationError("type mismatch for '" + key + "': expected " + expected);
  }

  const FlatMap& flat_;
};

ObjectiveKind infer_objective(const std::string& loss, std::size_t n_outputs) {
  if (loss == "CrossEntropyLoss")
    return n_outputs == 2 ? ObjectiveKind::BinaryClassification
                          : ObjectiveKind::MulticlassClassification;
  if (loss == "BCEWithLogitsLoss") return ObjectiveKind::MultilabelClassification;
  if (loss == "MSELoss") return ObjectiveKind::Regression;
  if (loss == "ClipLoss") return ObjectiveKind::Retrieval;
  throw ValidationError("loss.name: unknown loss '" + loss + "'");
}

TaskSpec from_flat(const FlatMap& flat) {
  std::vector<std::string> unknown;
  for (const auto& [key, value] : flat)
    if (!known_keys().count(key)) unknown.push_back(key);
  if (!unknown.empty()) {
    std::string msg = "unknown key(s):";
    for (const auto& k : unknown) msg += " " + k;
    throw ValidationError(msg);
  }
  Reader r(flat);
  std::vector<std::string> missing;
  for (const auto& key : kRequiredKeys)
    if (!r.has(key)) missing.push_back(key);
  if (!missing.empty()) {
    std::string msg = "missing required key(s):";
    for (const auto& k : missing) msg += " " + k;
    throw ValidationError(msg);
  }

  TaskSpec s;
  if (r.has("task_id")) s.task_id = r.str("task_id");
  if (r.has("modality")) s.modality = r.str("modality");
  if (r.has("category")) s.category = r.str("category");
  s.source_name = r.str("data.study.source.name");
  if (r.has("data.study.source.root")) s.source_root = r.str("data.study.source.root");
  if (r.has("data.study.source.extra_datasets"))
    s.extra_datasets = r.str_list("data.study.source.extra_datasets");

  if (r.has("data.study.split.name")) s.split.kind = split_kind_from_string(r.str("data.study.split.name"));
  if (r.has("data.study.split.valid_split_ratio"))
    s.split.valid_ratio = r.num("data.study.split.valid_split_ratio");
  if (r.has("data.study.split.test_split_ratio"))
    s.split.test_ratio = r.num("data.study.split.test_split_ratio");
  if (r.has("data.study.split.stratify_by")) s.split.stratify_by = r.str("data.study.split.stratify_by");
  if (r.has("data.study.split.holdout")) s.split.holdout_spec = r.str("data.study.split.holdout");
  if (r.has("data.study.split.seed")) {
    const auto seed = r.integer("data.study.split.seed");
    if (seed < 0) throw ValidationError("data.study.split.seed must be non-negative");
    s.split.seed = static_cast<std::uint64_t>(seed);
  }

  if (r.has("data.neuro.baseline")) s.baseline = r.pair("data.neuro.baseline");
  s.target.kind = codec_from_string(r.str("data.target.name"));
  if (r.has("data.target.event_types")) s.target.event_types = r.str_list("data.target.event_types");
  if (r.has("data.target.event_field")) s.target.event_field = r.str("data.target.event_field");
  if (r.has("data.target.return_one_hot")) s.target.return_one_hot = r.boolean("data.target.return_one_hot");
  if (r.has("data.target.classes")) s.target.classes = r.str_list("data.target.classes");
  if (r.has("data.target.file")) s.target.embedding_file = r.str("data.target.file");
  s.trigger_event_type = r.str("data.trigger_event_type");
  s.start = r.num("data.start");
  s.duration = r.num("data.duration");

  auto& pp = s.preprocessing;
  if (r.has("data.preprocessing.bandpass")) pp.bandpass_enabled = r.boolean("data.preprocessing.bandpass");
  if (r.has("data.preprocessing.band")) {
    auto band = r.pair("data.preprocessing.band");
    pp.band_low = band[0];
    pp.band_high = band[1];
  }
  if (r.has("data.preprocessing.notch")) pp.notch_enabled = r.boolean("data.preprocessing.notch");
  if (r.has("data.preprocessing.notch_freqs")) pp.notch_freqs = r.num_list("data.preprocessing.notch_freqs");
  if (r.has("data.preprocessing.notch_harmonics"))
    pp.notch_harmonics = r.boolean("data.preprocessing.notch_harmonics");
  if (r.has("data.preprocessing.notch_quality")) pp.notch_quality = r.num("data.preprocessing.notch_quality");
  if (r.has("data.preprocessing.resample")) pp.resample_enabled = r.boolean("data.preprocessing.resample");
  if (r.has("data.preprocessing.sfreq")) pp.target_sfreq = r.num("data.preprocessing.sfreq");
  if (r.has("data.preprocessing.robust_scale"))
    pp.robust_scale_enabled = r.boolean("data.preprocessing.robust_scale");
  if (r.has("data.preprocessing.clamp_enabled")) pp.clamp_enabled = r.boolean("data.preprocessing.clamp_enabled");
  if (r.has("data.preprocessing.clamp")) pp.clamp = r.num("data.preprocessing.clamp");

  s.loss_name = r.str("loss.name");
  if (r.has("loss.class_weights")) s.class_weights = r.num_list("loss.class_weights");
  s.metric_names = r.str_list("metrics");

  if (r.has("n_outputs")) {
    const auto n = r.integer("n_outputs");
    if (n < 0) throw ValidationError("n_outputs must be non-negative");
    s.n_outputs = static_cast<std::size_t>(n);
  } else if (!s.target.classes.empty()) {
    s.n_outputs = s.target.classes.size();
  } else if (s.target.kind == TargetCodecKind::Scalar) {
    s.n_outputs = 1;
  }
  s.objective = r.has("objective") ? objective_from_string(r.str("objective"))
                                   : infer_objective(s.loss_name, s.n_outputs);

  auto& t = s.trainer;
  if (r.has("trainer.lr")) t.lr = r.num("trainer.lr");
  if (r.has("trainer.weight_decay")) t.weight_decay = r.num("trainer.weight_decay");
  if (r.has("trainer.warmup_fraction")) t.warmup_fraction = r.num("trainer.warmup_fraction");
  if (r.has("trainer.max_epochs")) t.max_epochs = static_cast<int>(r.integer("trainer.max_epochs"));
  if (r.has("trainer.patience")) t.patience = static_cast<int>(r.integer("trainer.patience"));
  if (r.has("trainer.batch_size")) t.batch_size = static_cast<int>(r.integer("trainer.batch_size"));
  if (r.has("trainer.grad_clip")) t.grad_clip = r.num("trainer.grad_clip");
  if (r.has("trainer.seeds")) t.n_seeds = static_cast<int>(r.integer("trainer.seeds"));

  if (r.has("handcrafted.freq_bands")) s.handcrafted.freq_bands = r.pair_list("handcrafted.freq_bands");
  if (r.has("handcrafted.xdawn_filters"))
    s.handcrafted.xdawn_filters = static_cast<int>(r.integer("handcrafted.xdawn_filters"));

  validate(s);
  return s;
}

FlatMap to_flat(const TaskSpec& s) {
  FlatMap f;
  if (!s.task_id.empty()) f["task_id"] = s.task_id;
  f["modality"] = s.modality;
  if (!s.category.empty()) f["category"] = s.category;
  f["objective"] = std::string(to_string(s.objective));
  f["n_outputs"] = s.n_outputs;
  f["data.study.source.name"] = s.source_name;
  if (s.source_root) f["data.study.source.root"] = *s.source_root;
  if (!s.extra_datasets.empty()) f["data.study.source.extra_datasets"] = s.extra_datasets;
  f["data.study.split.name"] = std::string(to_string(s.split.kind));
  f["data.study.split.valid_split_ratio"] = s.split.valid_ratio;
  f["data.study.split.test_split_ratio"] = s.split.test_ratio;
  if (s.split.stratify_by) f["data.study.split.stratify_by"] = *s.split.stratify_by;
  if (s.split.holdout_spec) f["data.study.split.holdout"] = *s.split.holdout_spec;
  f["data.study.split.seed"] = s.split.seed;
  if (s.baseline) f["data.neuro.baseline"] = json::array({(*s.baseline)[0], (*s.baseline)[1]});
  f["data.target.name"] = std::string(to_string(s.target.kind));
  if (!s.target.event_types.empty()) f["data.target.event_types"] = s.target.event_types;
  f["data.target.event_field"] = s.target.event_field;
  f["data.target.return_one_hot"] = s.target.return_one_hot;
  if (!s.target.classes.empty()) f["data.target.classes"] = s.target.classes;
  if (!s.target.embedding_file.empty()) f["data.target.file"] = s.target.embedding_file;
  f["data.trigger_event_type"] = s.trigger_event_type;
  f["data.start"] = s.start;
  f["data.duration"] = s.duration;
  const auto& pp = s.preprocessing;
  f["data.preprocessing.bandpass"] = pp.bandpass_enabled;
  f["data.preprocessing.band"] = json::array({pp.band_low, pp.band_high});
  f["data.preprocessing.notch"] = pp.notch_enabled;
  f["data.preprocessing.notch_freqs"] = pp.notch_freqs;
  f["data.preprocessing.notch_harmonics"] = pp.notch_harmonics;
  f["data.preprocessing.notch_quality"] = pp.notch_quality;
  f["data.preprocessing.resample"] = pp.resample_enabled;
  f["data.preprocessing.sfreq"] = pp.target_sfreq;
  f["data.preprocessing.robust_scale"] = pp.robust_scale_enabled;
  f["data.preprocessing.clamp_enabled"] = pp.clamp_enabled;
  f["data.preprocessing.clamp"] = pp.clamp;
  f["loss.name"] = s.loss_name;
  if (!s.class_weights.empty()) f["loss.class_weights"] = s.class_weights;
  f["metrics"] = s.metric_names;
  f["trainer.lr"] = s.trainer.lr;
  f["trainer.weight_decay"] = s.trainer.weight_decay;
  f["trainer.warmup_fraction"] = s.trainer.warmup_fraction;
  f["trainer.max_epochs"] = s.trainer.max_epochs;
  f["trainer.patience"] = s.trainer.patience;
  f["trainer.batch_size"] = s.trainer.batch_size;
  if (s.trainer.grad_clip) f["trainer.grad_clip"] = *s.trainer.grad_clip;
  f["trainer.seeds"] = s.trainer.n_seeds;
  if (!s.handcrafted.freq_bands.empty()) {
    json bands = json::array();
    for (const auto& b : s.handcrafted.freq_bands) bands.push_back(json::array({b[0], b[1]}));
    f["handcrafted.freq_bands"] = bands;
  }
  f["handcrafted.xdawn_filters"] = s.handcrafted.xdawn_filters;
  return f;
}

std::string yaml_scalar(const json& v) {
  if (v.is_string()) {
    // Double-quoted JSON strings are valid YAML and always parse back as strings.
    return v.dump();
  }
  if (v.is_number_float()) {
    std::string text = v.dump();
    if (text.find_first_of(".eE") == std::string::npos && text.find("inf") == std::string::npos)
      text += ".0";
    return text;
  }
  if (v.is_array()) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + yaml_scalar(v[i]);
    return out + "]";
  }
  return v.dump();
}

} // namespace

void validate(const TaskSpec& s) {
  if (s.source_name.empty()) throw ValidationError("data.study.source.name must be non-empty");
  if (s.trigger_event_type.empty()) throw ValidationError("data.trigger_event_type must be non-empty");
  if (!(s.duration > 0.0)) throw ValidationError("data.duration must be > 0");
  if (!std::isfinite(s.start)) throw ValidationError("data.start must be finite");
  if (s.baseline) {
    const auto [t0, t1] = *s.baseline;
    if (!(t0 >= 0.0) || !(t1 <= s.duration) || !(t0 < t1))
      throw ValidationError("data.neuro.baseline must satisfy 0 <= t0 < t1 <= duration");
  }
  const auto& sp = s.split;
  if (!(sp.test_ratio > 0.0 && sp.test_ratio < 1.0))
    throw ValidationError("data.study.split.test_split_ratio must lie in (0, 1)");
  if (!(sp.valid_ratio > 0.0 && sp.valid_ratio < 1.0))
    throw ValidationError("data.study.split.valid_split_ratio must lie in (0, 1)");
  if (!(sp.test_ratio + sp.valid_ratio < 1.0))
    throw ValidationError("data.study.split: test_split_ratio + valid_split_ratio must be < 1");
  if (sp.kind == SplitKind::WithinSubject && !sp.holdout_spec)
    throw ValidationError("data.study.split.holdout is required for WithinSubjectSplit");

  if (s.metric_names.empty()) throw ValidationError("metrics must be non-empty");
  for (const auto& m : s.metric_names) {
    if (!metrics::metric_supports(m, s.objective))
      throw ValidationError("metric '" + m + "' does not apply to objective " +
                            std::string(to_string(s.objective)));
  }
  if (s.loss_name != default_loss(s.objective))
    throw ValidationError("loss '" + s.loss_name + "' incompatible with objective " +
                          std::string(to_string(s.objective)) + " (expected " +
                          std::string(default_loss(s.objective)) + ")");

  const bool codec_ok = [&] {
    switch (s.target.kind) {
    case TargetCodecKind::LabelEncoder: return is_single_label_classification(s.objective);
    case TargetCodecKind::MultiLabelEncoder: return s.objective == ObjectiveKind::MultilabelClassification;
    case TargetCodecKind::Scalar: return s.objective == ObjectiveKind::Regression;
    case TargetCodecKind::Embedding: return s.objective == ObjectiveKind::Retrieval;
    }
    return false;
  }();
  if (!codec_ok)
    throw ValidationError("target codec " + std::string(to_string(s.target.kind)) +
                          " incompatible with objective " + std::string(to_string(s.objective)));
  if (s.objective == ObjectiveKind::BinaryClassification && s.n_outputs != 0 && s.n_outputs != 2)
    throw ValidationError("binary classification requires n_outputs = 2");
  if (s.objective == ObjectiveKind::Regression && s.n_outputs != 1)
    throw ValidationError("regression requires n_outputs = 1");
  if (s.objective == ObjectiveKind::MultilabelClassification && s.n_outputs == 0)
    throw ValidationError("multilabel tasks must declare n_outputs or data.target.classes");
  if (s.objective == ObjectiveKind::Retrieval && s.n_outputs == 0)
    throw ValidationError("retrieval tasks must declare n_outputs (embedding dimension)");
  if (!s.target.classes.empty() && s.n_outputs != s.target.classes.size())
    throw ValidationError("n_outputs does not match the number of data.target.classes");
  if (!s.class_weights.empty()) {
    if (!is_single_label_classification(s.objective))
      throw ValidationError("loss.class_weights only apply to single-label classification");
    if (s.n_outputs != 0 && s.class_weights.size() != s.n_outputs)
      throw ValidationError("loss.class_weights must have n_outputs entries");
    for (double w : s.class_weights)
      if (!(w > 0.0)) throw ValidationError("loss.class_weights must be positive");
  }

  const auto& t = s.trainer;
  if (!(t.lr > 0.0)) throw ValidationError("trainer.lr must be > 0");
  if (!(t.weight_decay >= 0.0)) throw ValidationError("trainer.weight_decay must be >= 0");
  if (!(t.warmup_fraction >= 0.0 && t.warmup_fraction < 1.0))
    throw ValidationError("trainer.warmup_fraction must lie in [0, 1)");
  if (t.max_epochs <= 0) throw ValidationError("trainer.max_epochs must be > 0");
  if (t.patience < 0) throw ValidationError("trainer.patience must be >= 0");
  if (t.batch_size <= 0) throw ValidationError("trainer.batch_size must be > 0");
  if (t.grad_clip && !(*t.grad_clip > 0.0)) throw ValidationError("trainer.grad_clip must be > 0");
  if (t.n_seeds <= 0) throw ValidationError("trainer.seeds must be > 0");
  if (s.handcrafted.xdawn_filters <= 0) throw ValidationError("handcrafted.xdawn_filters must be > 0");
  for (const auto& b : s.handcrafted.freq_bands)
    if (!(b[0] >= 0.0 && b[0] <= b[1])) throw ValidationError("handcrafted.freq_bands must be [low, high] with 0 <= low <= high");
  dsp::validate(s.preprocessing);
}

TaskSpec parse_task_config(std::string_view yaml_text) { return from_flat(parse_flat(yaml_text)); }

TaskSpec apply_overrides(const TaskSpec& spec, const std::vector<std::string>& overrides) {
  if (overrides.empty()) return spec;
  FlatMap flat = to_flat(spec);
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ValidationError("override '" + ov + "' must have the form a.b.c=value");
    const std::string path = ov.substr(0, eq);
    if (!known_keys().count(path)) throw ValidationError("unknown override path '" + path + "'");
    YAML::Node node;
    try {
      node = YAML::Load(ov.substr(eq + 1));
    } catch (const YAML::Exception& e) {
      throw ValidationError("override '" + ov + "': " + e.what());
    }
    if (node.IsMap()) throw ValidationError("override '" + ov + "': value must be a scalar or list");
    json value = node.IsNull() ? json(nullptr) : node_to_json(node, path);
    if (value.is_null()) flat.erase(path);
    else flat[path] = value;
    // A new class list re-derives n_outputs unless that is overridden too.
    if (path == "data.target.classes") flat.erase("n_outputs");
  }
  return from_flat(flat);
}

std::string serialize_task_config(const TaskSpec& spec) {
  std::string out;
  for (const auto& [key, value] : to_flat(spec)) out += key + ": " + yaml_scalar(value) + "\n";
  return out;
}

std::string canonical_text(const TaskSpec& spec) {
  json obj = json::object();
  for (const auto& [key, value] : to_flat(spec)) obj[key] = value;
  return obj.dump();
}

std::uint64_t config_hash(const TaskSpec& spec) { return hash_config(canonical_text(spec)); }

namespace {

const char* const kRegistryYaml[] = {
    R"(task_id: audiovisual_stimulus_synthetic
category: evoked
n_outputs: 4
data:
  study:
    source.name: synthetic:audiovisual
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
)",
    R"(task_id: p300_synthetic
category: evoked
n_outputs: 2
data:
  study:
    source.name: synthetic:p300
    source.extra_datasets: [synthetic:p300_b, synthetic:p300_c, synthetic:p300_d, synthetic:p300_e]
    split:
      name: CrossSubjectSplit
      valid_split_ratio: 0.2
      test_split_ratio: 0.2
  neuro.baseline: [0.0, 0.2]
  target:
    name: LabelEncoder
    event_field: description
  trigger_event_type: Stimulus
  start: -0.2
  duration: 1.0
loss.name: CrossEntropyLoss
metrics: BalancedAcc
trainer.lr: 0.001
)",
    R"(task_id: ssvep_synthetic
category: ssvep
n_outputs: 4
data:
  study:
    source.name: synthetic:ssvep
    split:
      name: CrossSubjectSplit
      valid_split_ratio: 0.2
      test_split_ratio: 0.2
  target:
    name: LabelEncoder
    event_field: description
  trigger_event_type: Stimulus
  start: 0.0
  duration: 2.0
loss.name: CrossEntropyLoss
metrics: BalancedAcc
handcrafted:
  freq_bands: [[7.5, 8.5], [9.5, 10.5], [11.5, 12.5], [14.5, 15.5]]
)",
    R"(task_id: motor_imagery_synthetic
category: bci
n_outputs: 2
data:
  study:
    source.name: synthetic:motor_imagery
    split:
      name: WithinSubjectSplit
      valid_split_ratio: 0.2
      test_split_ratio: 0.2
      holdout: last 1 sessions
  target:
    name: LabelEncoder
    event_field: description
  trigger_event_type: Stimulus
  start: 0.0
  duration: 2.0
loss.name: CrossEntropyLoss
metrics: BalancedAcc
)",
    R"(task_id: artifact_synthetic
category: artifact
n_outputs: 5
data:
  study:
    source.name: synthetic:artifact
    split:
      name: CrossSubjectSplit
      valid_split_ratio: 0.2
      test_split_ratio: 0.2
  target:
    name: MultiLabelEncoder
    event_field: description
    classes: [eye, muscle, chewing, shiver, electrode]
  trigger_event_type: Stimulus
  start: 0.0
  duration: 1.0
loss.name: BCEWithLogitsLoss
metrics: MacroF1
trainer.lr: 0.001
)",
    R"(task_id: reaction_time_synthetic
category: reaction_time
data:
  study:
    source.name: synthetic:reaction_time
    split:
      name: CrossSubjectSplit
      valid_split_ratio: 0.2
      test_split_ratio: 0.2
  target:
    name: ScalarTarget
    event_field: description
  trigger_event_type: Stimulus
  start: 0.0
  duration: 0.5
loss.name: MSELoss
metrics: [PearsonR, RMSE]
trainer.lr: 0.001
)",
    R"(task_id: video_synthetic
category: cognitive
n_outputs: 32
data:
  study:
    source.name: synthetic:video
    split:
      name: LeaveConceptOutSplit
      valid_split_ratio: 0.2
      test_split_ratio: 0.2
  target:
    name: EmbeddingTarget
    file: embeddings.json
  trigger_event_type: Stimulus
  start: 0.0
  duration: 0.5
loss.name: ClipLoss
metrics: [Top5Acc, MedianRank]
trainer.lr: 0.001
)",
    R"(task_id: image_synthetic
category: cognitive
n_outputs: 1536
data:
  study:
    source.name: synthetic:image
    split:
      name: PredefinedSplit
      valid_split_ratio: 0.2
      test_split_ratio: 0.2
      holdout: session=test
  target:
    name: EmbeddingTarget
    file: embeddings.json
  trigger_event_type: Stimulus
  start: 0.0
  duration: 0.5
loss.name: ClipLoss
metrics: [Top5Acc, MedianRank]
trainer.lr: 0.001
)",
};

} // namespace

const std::vector<TaskSpec>& builtin_task_registry() {
  static const std::vector<TaskSpec> registry = [] {
    std::vector<TaskSpec> out;
    for (const char* text : kRegistryYaml) out.push_back(parse_task_config(text));
    return out;
  }();
  return registry;
}

const TaskSpec& find_task(std::string_view task_id) {
  for (const auto& t : builtin_task_registry())
    if (t.task_id == task_id) return t;
  std::string ids;
  for (const auto& t : builtin_task_registry()) ids += (ids.empty() ? "" : ", ") + t.task_id;
  throw ValidationError("unknown task '" + std::string(task_id) + "' (valid: " + ids + ")");
}

} // namespace nb::config
