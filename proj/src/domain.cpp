#include "nb/domain.hpp"
#include "nb/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

namespace nb {

std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
  std::string text = to_hex(base);
  text += '/';
  text += label;
  return hash_config(text);
}

std::string_view to_string(ObjectiveKind kind) {
  switch (kind) {
  case ObjectiveKind::BinaryClassification: return "binary_classification";
  case ObjectiveKind::MulticlassClassification: return "multiclass_classification";
  case ObjectiveKind::MultilabelClassification: return "multilabel_classification";
  case ObjectiveKind::Regression: return "regression";
  case ObjectiveKind::Retrieval: return "retrieval";
  }
  return "unknown";
}

ObjectiveKind objective_from_string(std::string_view name) {
  for (auto kind : {ObjectiveKind::BinaryClassification, ObjectiveKind::MulticlassClassification,
                    ObjectiveKind::MultilabelClassification, ObjectiveKind::Regression,
                    ObjectiveKind::Retrieval}) {
    if (to_string(kind) == name) return kind;
  }
  throw ValidationError("unknown objective '" + std::string(name) + "'");
}

bool is_single_label_classification(ObjectiveKind kind) {
  return kind == ObjectiveKind::BinaryClassification ||
         kind == ObjectiveKind::MulticlassClassification;
}

void validate_recording(const Recording& rec) {
  if (!(rec.sfreq > 0.0) || !std::isfinite(rec.sfreq))
    throw ValidationError("recording '" + rec.recording_id + "': sfreq must be positive");
  if (rec.channels.empty())
    throw ValidationError("recording '" + rec.recording_id + "': no channels");
  if (rec.data.size() % rec.channels.size() != 0)
    throw ValidationError("recording '" + rec.recording_id +
                          "': data size is not a multiple of the channel count");
  std::set<std::string> seen;
  for (const auto& name : rec.channels) {
    if (!seen.insert(name).second)
      throw ValidationError("recording '" + rec.recording_id + "': duplicate channel '" + name +
                            "'");
  }
  for (std::size_t i = 0; i < rec.data.size(); ++i) {
    if (!std::isfinite(rec.data[i]))
      throw ValidationError("recording '" + rec.recording_id + "': non-finite sample at index " +
                            std::to_string(i));
  }
  const double duration = rec.duration();
  for (const auto& ev : rec.events) {
    if (!(ev.onset >= 0.0) || ev.onset > duration)
      throw ValidationError("recording '" + rec.recording_id + "': event onset " +
                            std::to_string(ev.onset) + " outside [0, " +
                            std::to_string(duration) + "]");
  }
}

std::size_t target_dimension(const Target& target) {
  return std::visit(
      [](const auto& t) -> std::size_t {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, ClassIndex> || std::is_same_v<T, ScalarTarget>) {
          return 1;
        } else {
          return t.values.size();
        }
      },
      target);
}

std::string check_prediction(const Prediction& p) {
  auto all_finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (const auto* cp = std::get_if<ClassProbabilities>(&p)) {
    if (cp->values.empty()) return "empty class probability vector";
    if (!all_finite(cp->values)) return "non-finite class probability";
    double sum = 0.0;
    for (double v : cp->values) {
      if (v < 0.0 || v > 1.0) return "class probability outside [0,1]";
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) return "class probabilities do not sum to 1";
  } else if (const auto* lp = std::get_if<LabelProbabilities>(&p)) {
    if (!all_finite(lp->values)) return "non-finite label probability";
    for (double v : lp->values)
      if (v < 0.0 || v > 1.0) return "label probability outside [0,1]";
  } else if (const auto* sp = std::get_if<ScalarPrediction>(&p)) {
    if (!std::isfinite(sp->value)) return "non-finite scalar prediction";
  } else if (const auto* ep = std::get_if<EmbeddingPrediction>(&p)) {
    if (!all_finite(ep->values)) return "non-finite embedding prediction";
  }
  return {};
}

std::string_view to_string(SplitLabel label) {
  switch (label) {
  case SplitLabel::Unassigned: return "unassigned";
  case SplitLabel::Train: return "train";
  case SplitLabel::Valid: return "valid";
  case SplitLabel::Test: return "test";
  }
  return "unassigned";
}

SplitLabel split_label_from_string(std::string_view name) {
  if (name == "train") return SplitLabel::Train;
  if (name == "valid") return SplitLabel::Valid;
  if (name == "test") return SplitLabel::Test;
  if (name == "unassigned") return SplitLabel::Unassigned;
  throw ValidationError("unknown split label '" + std::string(name) + "'");
}

std::vector<std::size_t> ExampleSet::indices_of(SplitLabel label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split_labels.size(); ++i)
    if (split_labels[i] == label) out.push_back(i);
  return out;
}

ExampleSet subset(const ExampleSet& es, std::span<const std::size_t> indices) {
  ExampleSet out;
  out.n_examples = indices.size();
  out.n_channels = es.n_channels;
  out.n_times = es.n_times;
  out.channels = es.channels;
  out.sfreq = es.sfreq;
  out.window_start = es.window_start;
  out.duration = es.duration;
  out.windows.reserve(indices.size() * es.window_size());
  auto pick = [&](const auto& src, auto& dst) {
    if (src.empty()) return;
    dst.reserve(indices.size());
    for (auto i : indices) dst.push_back(src[i]);
  };
  for (auto i : indices) {
    auto w = es.window(i);
    out.windows.insert(out.windows.end(), w.begin(), w.end());
  }
  pick(es.targets, out.targets);
  pick(es.example_ids, out.example_ids);
  pick(es.subject_ids, out.subject_ids);
  pick(es.session_ids, out.session_ids);
  pick(es.recording_ids, out.recording_ids);
  pick(es.run_ids, out.run_ids);
  pick(es.concept_ids, out.concept_ids);
  pick(es.descriptions, out.descriptions);
  pick(es.split_labels, out.split_labels);
  return out;
}

std::vector<std::string> validate_example_set(const ExampleSet& es) {
  std::vector<std::string> violations;
  const std::size_t n = es.n_examples;
  if (es.windows.size() != n * es.n_channels * es.n_times)
    violations.push_back("windows size " + std::to_string(es.windows.size()) +
                         " does not match n_examples*n_channels*n_times");
  if (!es.channels.empty() && es.channels.size() != es.n_channels)
    violations.push_back("channel name count does not match n_channels");

  auto check_len = [&](std::size_t size, const char* name, bool optional) {
    if (optional && size == 0) return;
    if (size != n)
      violations.push_back(std::string(name) + " has " + std::to_string(size) +
                           " entries, expected " + std::to_string(n));
  };
  check_len(es.targets.size(), "targets", false);
  check_len(es.example_ids.size(), "example_ids", true);
  check_len(es.subject_ids.size(), "subject_ids", false);
  check_len(es.session_ids.size(), "session_ids", true);
  check_len(es.recording_ids.size(), "recording_ids", true);
  check_len(es.run_ids.size(), "run_ids", true);
  check_len(es.concept_ids.size(), "concept_ids", true);
  check_len(es.descriptions.size(), "descriptions", true);
  check_len(es.split_labels.size(), "split_labels", true);

  std::size_t non_finite = 0;
  for (float v : es.windows)
    if (!std::isfinite(v)) ++non_finite;
  if (non_finite > 0)
    violations.push_back(std::to_string(non_finite) + " non-finite samples in windows");

  std::size_t unassigned = 0;
  for (auto label : es.split_labels)
    if (label == SplitLabel::Unassigned) ++unassigned;
  if (unassigned > 0)
    violations.push_back(std::to_string(unassigned) + " examples lack a split label");

  if (!es.targets.empty()) {
    const std::size_t dim = target_dimension(es.targets.front());
    const auto kind = es.targets.front().index();
    std::size_t mismatched = 0;
    std::size_t bad_values = 0;
    for (const auto& t : es.targets) {
      if (t.index() != kind || target_dimension(t) != dim) ++mismatched;
      if (const auto* e = std::get_if<EmbeddingTarget>(&t)) {
        for (double v : e->values)
          if (!std::isfinite(v)) {
            ++bad_values;
            break;
          }
      } else if (const auto* s = std::get_if<ScalarTarget>(&t)) {
        if (!std::isfinite(s->value)) ++bad_values;
      }
    }
    if (mismatched > 0)
      violations.push_back(std::to_string(mismatched) + " targets differ in kind or dimension");
    if (bad_values > 0)
      violations.push_back(std::to_string(bad_values) + " targets hold non-finite values");
  }
  if (!(es.sfreq > 0.0)) violations.push_back("sfreq must be positive");
  if (!(es.duration > 0.0)) violations.push_back("duration must be positive");
  return violations;
}

std::string_view to_string(RunStatus status) {
  switch (status) {
  case RunStatus::Ok: return "ok";
  case RunStatus::Failed: return "failed";
  case RunStatus::Declined: return "declined";
  }
  return "failed";
}

RunStatus run_status_from_string(std::string_view name) {
  if (name == "ok") return RunStatus::Ok;
  if (name == "failed") return RunStatus::Failed;
  if (name == "declined") return RunStatus::Declined;
  throw ValidationError("unknown run status '" + std::string(name) + "'");
}

std::uint64_t hash_config(std::string_view canonical_text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

std::uint64_t from_hex(std::string_view text) {
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value, 16);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ValidationError("invalid hex value '" + std::string(text) + "'");
  return value;
}

} // namespace nb
