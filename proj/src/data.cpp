#include "nb/data.hpp"

#include "nb/dsp.hpp"
#include "nb/rng.hpp"

#include <boost/crc.hpp>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <unistd.h>

namespace nb::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string zero_pad(std::size_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, v);
  return buf;
}

std::size_t n_classes_of(const SyntheticProfile& p) {
  switch (p.objective) {
  case ObjectiveKind::BinaryClassification:
  case ObjectiveKind::MulticlassClassification:
  case ObjectiveKind::MultilabelClassification: return p.class_names.size();
  case ObjectiveKind::Regression: return 1;
  case ObjectiveKind::Retrieval: return p.embedding_dim;
  }
  return 0;
}

std::vector<double> unit_normal_vector(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

} // namespace

void validate(const SyntheticProfile& p) {
  auto fail = [&](const std::string& what) {
    throw ValidationError("synthetic profile '" + p.name + "': " + what);
  };
  if (p.n_subjects == 0 || p.n_channels == 0 || p.session_names.empty() || p.n_runs == 0)
    fail("counts must be positive");
  if (!(p.sfreq > 0.0)) fail("sfreq must be positive");
  if (!(p.noise_std >= 0.0)) fail("noise_std must be non-negative");
  if (!(p.event_spacing > 0.0)) fail("event_spacing must be positive");
  const bool classification = p.objective == ObjectiveKind::BinaryClassification ||
                              p.objective == ObjectiveKind::MulticlassClassification ||
                              p.objective == ObjectiveKind::MultilabelClassification;
  if (classification && p.class_names.size() < 2) fail("need at least two classes");
  if (p.objective == ObjectiveKind::BinaryClassification && p.class_names.size() != 2)
    fail("binary profiles have exactly two classes");
  if (p.objective == ObjectiveKind::Retrieval && (p.embedding_dim == 0 || p.n_concepts < 2))
    fail("retrieval needs embedding_dim > 0 and at least two concepts");
  if (p.objective != ObjectiveKind::Retrieval && p.n_events_per_subject < p.session_names.size())
    fail("need at least one event per session");
  const std::size_t k = n_classes_of(p);
  if (const auto* fx = std::get_if<FrequencyTag>(&p.effect)) {
    if (!classification || p.objective == ObjectiveKind::MultilabelClassification)
      fail("FrequencyTag needs a single-label classification objective");
    if (fx->freqs.size() != k || fx->tagged_channels.size() != k)
      fail("FrequencyTag needs one frequency and one channel list per class");
    for (double f : fx->freqs)
      if (!(f > 0.0 && f < p.sfreq / 2.0)) fail("frequencies must lie in (0, sfreq/2)");
    for (const auto& chans : fx->tagged_channels)
      for (auto c : chans)
        if (c >= p.n_channels) fail("tagged channel out of range");
  } else if (const auto* ev = std::get_if<EvokedDeflection>(&p.effect)) {
    if (!classification) fail("EvokedDeflection needs a classification objective");
    if (!ev->patterns.empty()) {
      if (ev->patterns.size() != k) fail("one pattern per class required");
      for (const auto& pat : ev->patterns)
        if (pat.size() != p.n_channels) fail("pattern length must equal n_channels");
    }
    if (!(ev->width > 0.0) || !(ev->latency >= 0.0)) fail("invalid latency/width");
  } else {
    const auto& mix = std::get<LinearEmbeddingMix>(p.effect);
    if (p.objective != ObjectiveKind::Regression && p.objective != ObjectiveKind::Retrieval)
      fail("LinearEmbeddingMix needs a regression or retrieval objective");
    if (mix.n_basis == 0 || !(mix.span > 0.0)) fail("invalid basis");
  }
}

double mix_basis(const LinearEmbeddingMix& mix, std::size_t b, double t_rel) {
  const double step = mix.span / static_cast<double>(mix.n_basis);
  const double center = (static_cast<double>(b) + 0.5) * step;
  const double d = std::abs(t_rel - center);
  if (d >= step) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * d / step));
}

SyntheticDataset generate_synthetic(const SyntheticProfile& p) {
  validate(p);
  SyntheticDataset out;
  const std::size_t C = p.n_channels;
  const std::size_t K = n_classes_of(p);
  Rng model_rng(derive_seed(p.rng_seed, "model"));

  if (const auto* ev = std::get_if<EvokedDeflection>(&p.effect)) {
    out.patterns = ev->patterns;
    if (out.patterns.empty()) {
      for (std::size_t k = 0; k < K; ++k) {
        std::vector<double> pat(C);
        double peak = 0.0;
        for (auto& x : pat) {
          x = model_rng.normal();
          peak = std::max(peak, std::abs(x));
        }
        for (auto& x : pat) x /= peak;
        out.patterns.push_back(std::move(pat));
      }
    }
  }
  std::vector<std::string> concepts;
  if (p.objective == ObjectiveKind::Retrieval) {
    for (std::size_t i = 0; i < p.n_concepts; ++i) {
      concepts.push_back("c" + zero_pad(i, 4));
      out.embeddings[concepts.back()] = unit_normal_vector(model_rng, p.embedding_dim);
    }
  }
  if (const auto* mix = std::get_if<LinearEmbeddingMix>(&p.effect)) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(K));
    out.mixing.assign(C * mix->n_basis, std::vector<double>(K));
    for (auto& row : out.mixing)
      for (auto& a : row) a = model_rng.normal() * scale;
  }

  const std::size_t n_sessions = p.session_names.size();
  for (std::size_t s = 0; s < p.n_subjects; ++s) {
    const std::string subject = "sub-" + zero_pad(s + 1, 2);
    Rng subject_rng(derive_seed(p.rng_seed, subject));
    const double gain = 1.0 + p.subject_gain_spread * (2.0 * subject_rng.uniform() - 1.0);

    // Per-subject event labels, spread across sessions in order.
    std::vector<std::size_t> order; // class index or concept index
    if (p.objective == ObjectiveKind::Retrieval) {
      for (std::size_t r = 0; r < p.concept_repeats; ++r)
        for (std::size_t c = 0; c < p.n_concepts; ++c) order.push_back(c);
      subject_rng.shuffle(order);
    } else if (p.objective == ObjectiveKind::BinaryClassification ||
               p.objective == ObjectiveKind::MulticlassClassification) {
      for (std::size_t i = 0; i < p.n_events_per_subject; ++i) order.push_back(i % K);
      subject_rng.shuffle(order);
    } else {
      order.assign(p.n_events_per_subject, 0);
    }

    const std::size_t n_total = order.size();
    for (std::size_t ses = 0; ses < n_sessions; ++ses) {
      const std::size_t begin = n_total * ses / n_sessions;
      const std::size_t end = n_total * (ses + 1) / n_sessions;
      const std::size_t n_ev = end - begin;
      Recording rec;
      rec.subject_id = subject;
      rec.session_id = p.session_names[ses];
      rec.recording_id = subject + "_ses-" + rec.session_id;
      rec.sfreq = p.sfreq;
      for (std::size_t c = 0; c < C; ++c) rec.channels.push_back("ch" + zero_pad(c + 1, 2));

      const auto lead = static_cast<std::size_t>(std::llround(1.0 * p.sfreq));
      const auto spacing = static_cast<std::size_t>(std::llround(p.event_spacing * p.sfreq));
      const std::size_t n_samples = 2 * lead + n_ev * spacing;
      std::vector<double> buf(C * n_samples);
      Rng rec_rng(derive_seed(p.rng_seed, rec.recording_id));
      if (p.noise_std > 0.0)
        for (auto& x : buf) x = rec_rng.normal(0.0, p.noise_std);

      for (std::size_t e = 0; e < n_ev; ++e) {
        const std::size_t idx = order[begin + e];
        const std::size_t onset = lead + e * spacing;
        Event ev;
        ev.onset = static_cast<double>(onset) / p.sfreq;
        ev.event_type = "Stimulus";
        if (p.n_runs > 1) ev.run_id = std::to_string(1 + e * p.n_runs / n_ev);

        std::vector<double> z; // LinearEmbeddingMix latent
        std::vector<std::size_t> active; // classes / labels driving the effect
        switch (p.objective) {
        case ObjectiveKind::BinaryClassification:
        case ObjectiveKind::MulticlassClassification:
          ev.description = p.class_names[idx];
          active.push_back(idx);
          break;
        case ObjectiveKind::MultilabelClassification: {
          std::string desc;
          for (std::size_t k = 0; k < K; ++k) {
            if (rec_rng.bernoulli(p.label_rate)) {
              active.push_back(k);
              desc += (desc.empty() ? "" : "|") + p.class_names[k];
            }
          }
          ev.description = desc.empty() ? "none" : desc;
          break;
        }
        case ObjectiveKind::Regression: {
          const double u = rec_rng.normal();
          ev.description = format_double(p.target_mean + p.target_std * u);
          z = {u};
          break;
        }
        case ObjectiveKind::Retrieval:
          ev.description = concepts[idx];
          ev.concept_id = concepts[idx];
          z = out.embeddings.at(concepts[idx]);
          break;
        }

        if (const auto* fx = std::get_if<EvokedDeflection>(&p.effect)) {
          const auto s0 = onset + static_cast<std::size_t>(std::llround(fx->latency * p.sfreq));
          const auto len = static_cast<std::size_t>(std::llround(fx->width * p.sfreq));
          for (auto k : active)
            for (std::size_t c = 0; c < C; ++c) {
              const double v = gain * fx->amplitude * out.patterns[k][c];
              for (std::size_t t = s0; t < std::min(s0 + len, n_samples); ++t) buf[c * n_samples + t] += v;
            }
        } else if (const auto* fx = std::get_if<FrequencyTag>(&p.effect)) {
          const auto len = static_cast<std::size_t>(std::llround(fx->length * p.sfreq));
          for (auto k : active) {
            const double phase = 2.0 * std::numbers::pi * rec_rng.uniform();
            const double w = 2.0 * std::numbers::pi * fx->freqs[k] / p.sfreq;
            for (auto c : fx->tagged_channels[k])
              for (std::size_t t = 0; t < len && onset + t < n_samples; ++t)
                buf[c * n_samples + onset + t] +=
                    gain * fx->amplitude * std::sin(w * static_cast<double>(t) + phase);
          }
        } else {
          const auto& mix = std::get<LinearEmbeddingMix>(p.effect);
          const auto len = static_cast<std::size_t>(std::ceil(mix.span * p.sfreq));
          std::vector<double> proj(C * mix.n_basis, 0.0);
          for (std::size_t r = 0; r < proj.size(); ++r)
            for (std::size_t d = 0; d < K; ++d) proj[r] += out.mixing[r][d] * z[d];
          for (std::size_t t = 0; t < len && onset + t < n_samples; ++t) {
            const double t_rel = static_cast<double>(t) / p.sfreq;
            for (std::size_t b = 0; b < mix.n_basis; ++b) {
              const double g = mix_basis(mix, b, t_rel);
              if (g == 0.0) continue;
              for (std::size_t c = 0; c < C; ++c)
                buf[c * n_samples + onset + t] += gain * mix.gain * g * proj[c * mix.n_basis + b];
            }
          }
        }
        rec.events.push_back(std::move(ev));
      }
      rec.data.assign(buf.begin(), buf.end());
      out.recordings.push_back(std::move(rec));
    }
  }
  return out;
}

namespace {

SyntheticProfile base_profile(const std::string& base) {
  SyntheticProfile p;
  p.name = base;
  if (base == "audiovisual") {
    p.objective = ObjectiveKind::MulticlassClassification;
    p.class_names = {"auditory/left", "auditory/right", "visual/left", "visual/right"};
    p.n_events_per_subject = 48;
    p.effect = EvokedDeflection{1.0, 0.3, 0.2, {}};
    p.rng_seed = 101;
  } else if (base == "p300") {
    p.objective = ObjectiveKind::BinaryClassification;
    p.class_names = {"nontarget", "target"};
    p.n_events_per_subject = 200;
    p.sfreq = 240.0;
    EvokedDeflection fx{2.0, 0.3, 0.2, {}};
    Rng rng(7);
    std::vector<double> pat(p.n_channels);
    for (auto& x : pat) x = rng.uniform(0.2, 1.0);
    fx.patterns = {std::vector<double>(p.n_channels, 0.0), pat};
    p.effect = fx;
    p.rng_seed = 202;
  } else if (base == "ssvep") {
    p.objective = ObjectiveKind::MulticlassClassification;
    p.class_names = {"8Hz", "10Hz", "12Hz", "15Hz"};
    p.n_events_per_subject = 40;
    p.event_spacing = 3.0;
    p.effect = FrequencyTag{0.7, 2.0, {8.0, 10.0, 12.0, 15.0},
                            std::vector<std::vector<std::size_t>>(4, {0, 1, 2, 3})};
    p.rng_seed = 303;
  } else if (base == "motor_imagery") {
    p.objective = ObjectiveKind::BinaryClassification;
    p.class_names = {"left_hand", "right_hand"};
    p.n_subjects = 4;
    p.session_names = {"1", "2", "3"};
    p.n_events_per_subject = 60;
    p.event_spacing = 3.0;
    p.effect = FrequencyTag{1.0, 2.0, {10.0, 10.0}, {{0, 1}, {2, 3}}};
    p.rng_seed = 404;
  } else if (base == "artifact") {
    p.objective = ObjectiveKind::MultilabelClassification;
    p.class_names = {"eye", "muscle", "chewing", "shiver", "electrode"};
    p.n_events_per_subject = 60;
    p.effect = EvokedDeflection{1.5, 0.2, 0.6, {}};
    p.rng_seed = 505;
  } else if (base == "reaction_time") {
    p.objective = ObjectiveKind::Regression;
    p.n_events_per_subject = 60;
    p.event_spacing = 1.0;
    p.target_mean = 0.45;
    p.target_std = 0.1;
    p.effect = LinearEmbeddingMix{4, 0.5, 1.0};
    p.rng_seed = 606;
  } else if (base == "video") {
    p.objective = ObjectiveKind::Retrieval;
    p.n_subjects = 2;
    p.n_channels = 16;
    p.embedding_dim = 32;
    p.n_concepts = 500;
    p.event_spacing = 1.0;
    p.effect = LinearEmbeddingMix{4, 0.5, 1.5};
    p.rng_seed = 707;
  } else if (base == "image") {
    p.objective = ObjectiveKind::Retrieval;
    p.n_subjects = 2;
    p.session_names = {"train", "test"};
    p.embedding_dim = 1536;
    p.n_concepts = 40;
    p.event_spacing = 1.0;
    p.effect = LinearEmbeddingMix{4, 0.5, 1.0};
    p.rng_seed = 808;
  } else {
    std::string names;
    for (const auto& n : synthetic_profile_names()) names += (names.empty() ? "" : ", ") + n;
    throw ValidationError("unknown synthetic profile '" + base + "' (known: " + names + ")");
  }
  return p;
}

} // namespace

std::vector<std::string> synthetic_profile_names() {
  return {"audiovisual", "p300", "ssvep", "motor_imagery", "artifact", "reaction_time", "video", "image"};
}

SyntheticProfile synthetic_profile(const std::string& name) {
  // "<base>_<letter>" variants share the construction with their own seed and
  // effect strength, standing in for additional datasets of one task.
  const auto us = name.rfind('_');
  if (us != std::string::npos && name.size() == us + 2 && name[us + 1] >= 'b' && name[us + 1] <= 'z') {
    const std::string base = name.substr(0, us);
    const auto names = synthetic_profile_names();
    if (std::find(names.begin(), names.end(), base) != names.end()) {
      SyntheticProfile p = base_profile(base);
      const int variant = name[us + 1] - 'a';
      p.name = name;
      p.rng_seed = derive_seed(p.rng_seed, name);
      const double scale = 1.0 - 0.1 * variant;
      std::visit([&](auto& fx) {
        using T = std::decay_t<decltype(fx)>;
        if constexpr (std::is_same_v<T, LinearEmbeddingMix>) fx.gain *= scale;
        else fx.amplitude *= scale;
      }, p.effect);
      return p;
    }
  }
  return base_profile(name);
}

// ---------------------------------------------------------------- disk format

void write_recording(const fs::path& dir, const Recording& rec) {
  validate_recording(rec);
  fs::create_directories(dir);
  json events = json::array();
  for (const auto& ev : rec.events) {
    json e = {{"onset", ev.onset}, {"event_type", ev.event_type}, {"description", ev.description}};
    if (ev.concept_id) e["concept_id"] = *ev.concept_id;
    if (ev.run_id) e["run_id"] = *ev.run_id;
    events.push_back(std::move(e));
  }
  json header = {
      {"format", "nb-recording"},
      {"version", 1},
      {"recording_id", rec.recording_id},
      {"subject_id", rec.subject_id},
      {"session_id", rec.session_id},
      {"sfreq", rec.sfreq},
      {"channels", rec.channels},
      {"dtype", "float32le"},
      {"shape", {rec.n_channels(), rec.n_samples()}},
      {"events", events},
  };
  {
    std::ofstream bin(dir / (rec.recording_id + ".bin"), std::ios::binary | std::ios::trunc);
    bin.write(reinterpret_cast<const char*>(rec.data.data()),
              static_cast<std::streamsize>(rec.data.size() * sizeof(float)));
    if (!bin) throw Error("cannot write payload for recording '" + rec.recording_id + "'");
  }
  std::ofstream js(dir / (rec.recording_id + ".json"), std::ios::trunc);
  js << header.dump(1) << "\n";
  if (!js) throw Error("cannot write header for recording '" + rec.recording_id + "'");
}

Recording load_recording(const fs::path& dir, const std::string& recording_id) {
  const fs::path header_path = dir / (recording_id + ".json");
  const fs::path payload_path = dir / (recording_id + ".bin");
  if (!fs::exists(header_path)) throw Error("missing header file " + header_path.string());
  if (!fs::exists(payload_path)) throw Error("missing payload file " + payload_path.string());
  json h;
  try {
    std::ifstream in(header_path);
    h = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("malformed header " + header_path.string() + ": " + e.what());
  }
  Recording rec;
  try {
    if (h.at("dtype").get<std::string>() != "float32le")
      throw ValidationError("unsupported dtype '" + h.at("dtype").get<std::string>() + "'");
    rec.recording_id = h.at("recording_id").get<std::string>();
    rec.subject_id = h.at("subject_id").get<std::string>();
    rec.session_id = h.at("session_id").get<std::string>();
    rec.sfreq = h.at("sfreq").get<double>();
    rec.channels = h.at("channels").get<std::vector<std::string>>();
    const auto shape = h.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != rec.channels.size())
      throw ValidationError("header shape does not match the channel list");
    for (const auto& e : h.at("events")) {
      Event ev;
      ev.onset = e.at("onset").get<double>();
      ev.event_type = e.at("event_type").get<std::string>();
      ev.description = e.value("description", "");
      if (e.contains("concept_id")) ev.concept_id = e["concept_id"].get<std::string>();
      if (e.contains("run_id")) ev.run_id = e["run_id"].get<std::string>();
      rec.events.push_back(std::move(ev));
    }
    const std::uintmax_t expected = shape[0] * shape[1] * sizeof(float);
    const std::uintmax_t actual = fs::file_size(payload_path);
    if (actual != expected)
      throw ValidationError("payload length mismatch for '" + recording_id + "': expected " +
                            std::to_string(expected) + " bytes, found " + std::to_string(actual));
    rec.data.resize(shape[0] * shape[1]);
  } catch (const json::exception& e) {
    throw ValidationError("invalid header " + header_path.string() + ": " + e.what());
  }
  std::ifstream bin(payload_path, std::ios::binary);
  bin.read(reinterpret_cast<char*>(rec.data.data()),
           static_cast<std::streamsize>(rec.data.size() * sizeof(float)));
  if (!bin) throw Error("cannot read payload " + payload_path.string());
  validate_recording(rec);
  return rec;
}

std::vector<std::string> list_recordings(const fs::path& dir) {
  std::vector<std::string> ids;
  if (!fs::is_directory(dir)) return ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto& p = entry.path();
    if (p.extension() == ".json" && fs::exists(fs::path(p).replace_extension(".bin")))
      ids.push_back(p.stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

void write_embeddings(const fs::path& file, const std::map<std::string, std::vector<double>>& embeddings) {
  json obj = json::object();
  for (const auto& [k, v] : embeddings) obj[k] = v;
  std::ofstream out(file, std::ios::trunc);
  out << obj.dump() << "\n";
  if (!out) throw Error("cannot write embeddings to " + file.string());
}

std::map<std::string, std::vector<double>> load_embeddings(const fs::path& file) {
  if (!fs::exists(file)) throw Error("missing embedding file " + file.string());
  std::ifstream in(file);
  json obj;
  try {
    obj = json::parse(in);
    return obj.get<std::map<std::string, std::vector<double>>>();
  } catch (const json::exception& e) {
    throw ValidationError("malformed embedding file " + file.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- epoching

EpochResult epoch(const Recording& rec, const config::TaskSpec& spec) {
  const auto& types = spec.target.event_types;
  const auto n_times = static_cast<std::size_t>(std::llround(spec.duration * rec.sfreq));
  const long long offset = std::llround(spec.start * rec.sfreq);
  const auto n_samples = static_cast<long long>(rec.n_samples());
  const std::size_t C = rec.n_channels();

  EpochResult out;
  ExampleSet& es = out.examples;
  es.n_channels = C;
  es.n_times = n_times;
  es.channels = rec.channels;
  es.sfreq = rec.sfreq;
  es.window_start = spec.start;
  es.duration = spec.duration;

  std::size_t matched = 0;
  for (std::size_t e = 0; e < rec.events.size(); ++e) {
    const Event& ev = rec.events[e];
    if (ev.event_type != spec.trigger_event_type) continue;
    if (!types.empty() && std::find(types.begin(), types.end(), ev.event_type) == types.end()) continue;
    ++matched;
    const long long s0 = std::llround(ev.onset * rec.sfreq) + offset;
    if (s0 < 0 || s0 + static_cast<long long>(n_times) > n_samples) {
      ++out.dropped;
      continue;
    }
    for (std::size_t c = 0; c < C; ++c) {
      const auto ch = rec.channel(c);
      es.windows.insert(es.windows.end(), ch.begin() + s0, ch.begin() + s0 + static_cast<long long>(n_times));
    }
    es.example_ids.push_back(rec.recording_id + "/" + std::to_string(e));
    es.subject_ids.push_back(rec.subject_id);
    es.session_ids.push_back(rec.session_id);
    es.recording_ids.push_back(rec.recording_id);
    es.run_ids.push_back(ev.run_id.value_or(""));
    es.concept_ids.push_back(ev.concept_id.value_or(""));
    es.descriptions.push_back(ev.description);
    ++es.n_examples;
  }
  if (matched == 0)
    throw ValidationError("recording '" + rec.recording_id + "': no events of type '" +
                          spec.trigger_event_type + "'");
  return out;
}

ExampleSet concat(const std::vector<ExampleSet>& parts) {
  ExampleSet out;
  bool first = true;
  for (const auto& p : parts) {
    if (first) {
      out.n_channels = p.n_channels;
      out.n_times = p.n_times;
      out.channels = p.channels;
      out.sfreq = p.sfreq;
      out.window_start = p.window_start;
      out.duration = p.duration;
      first = false;
    } else if (p.n_channels != out.n_channels || p.n_times != out.n_times || p.channels != out.channels ||
               p.sfreq != out.sfreq) {
      throw ValidationError("cannot concatenate example sets with different layouts");
    }
    auto append = [](auto& dst, const auto& src) { dst.insert(dst.end(), src.begin(), src.end()); };
    append(out.windows, p.windows);
    append(out.targets, p.targets);
    append(out.example_ids, p.example_ids);
    append(out.subject_ids, p.subject_ids);
    append(out.session_ids, p.session_ids);
    append(out.recording_ids, p.recording_ids);
    append(out.run_ids, p.run_ids);
    append(out.concept_ids, p.concept_ids);
    append(out.descriptions, p.descriptions);
    append(out.split_labels, p.split_labels);
    out.n_examples += p.n_examples;
  }
  return out;
}

EncodedTargets encode_targets(ExampleSet& es, const config::TaskSpec& spec,
                              const std::map<std::string, std::vector<double>>& embeddings) {
  const auto& codec = spec.target;
  auto field = [&](std::size_t i) -> const std::string& {
    if (codec.event_field == "description") return es.descriptions[i];
    if (codec.event_field == "concept_id") return es.concept_ids[i];
    throw ValidationError("data.target.event_field: unsupported field '" + codec.event_field + "'");
  };
  EncodedTargets enc;
  es.targets.clear();
  es.targets.reserve(es.n_examples);
  switch (codec.kind) {
  case config::TargetCodecKind::LabelEncoder: {
    enc.class_names = codec.classes;
    if (enc.class_names.empty()) {
      std::set<std::string> distinct;
      for (std::size_t i = 0; i < es.n_examples; ++i) distinct.insert(field(i));
      enc.class_names.assign(distinct.begin(), distinct.end());
    }
    std::map<std::string, int> index;
    for (std::size_t k = 0; k < enc.class_names.size(); ++k) index[enc.class_names[k]] = static_cast<int>(k);
    for (std::size_t i = 0; i < es.n_examples; ++i) {
      auto it = index.find(field(i));
      if (it == index.end()) throw ValidationError("example '" + es.example_ids[i] + "': unknown class '" + field(i) + "'");
      es.targets.push_back(ClassIndex{it->second});
    }
    enc.n_outputs = enc.class_names.size();
    if (spec.objective == ObjectiveKind::BinaryClassification && enc.n_outputs != 2)
      throw ValidationError("binary task found " + std::to_string(enc.n_outputs) + " classes in the data");
    break;
  }
  case config::TargetCodecKind::MultiLabelEncoder: {
    enc.class_names = codec.classes;
    if (enc.class_names.empty())
      throw ValidationError("MultiLabelEncoder requires data.target.classes");
    std::map<std::string, std::size_t> index;
    for (std::size_t k = 0; k < enc.class_names.size(); ++k) index[enc.class_names[k]] = k;
    for (std::size_t i = 0; i < es.n_examples; ++i) {
      LabelVector lv{std::vector<std::uint8_t>(enc.class_names.size(), 0)};
      std::stringstream ss(field(i));
      std::string token;
      while (std::getline(ss, token, '|')) {
        if (token.empty() || token == "none") continue;
        auto it = index.find(token);
        if (it == index.end()) throw ValidationError("example '" + es.example_ids[i] + "': unknown label '" + token + "'");
        lv.values[it->second] = 1;
      }
      es.targets.push_back(std::move(lv));
    }
    enc.n_outputs = enc.class_names.size();
    break;
  }
  case config::TargetCodecKind::Scalar: {
    for (std::size_t i = 0; i < es.n_examples; ++i) {
      const std::string& text = field(i);
      char* end = nullptr;
      const double v = std::strtod(text.c_str(), &end);
      if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(v))
        throw ValidationError("example '" + es.example_ids[i] + "': '" + text + "' is not a finite number");
      es.targets.push_back(ScalarTarget{v});
    }
    enc.n_outputs = 1;
    break;
  }
  case config::TargetCodecKind::Embedding: {
    for (std::size_t i = 0; i < es.n_examples; ++i) {
      const std::string& key = es.concept_ids[i].empty() ? field(i) : es.concept_ids[i];
      auto it = embeddings.find(key);
      if (it == embeddings.end()) throw ValidationError("example '" + es.example_ids[i] + "': no embedding for '" + key + "'");
      for (double v : it->second)
        if (!std::isfinite(v)) throw ValidationError("embedding '" + key + "' has non-finite values");
      if (enc.n_outputs == 0) enc.n_outputs = it->second.size();
      if (it->second.size() != enc.n_outputs)
        throw ValidationError("embedding '" + key + "' has inconsistent dimension");
      es.targets.push_back(EmbeddingTarget{it->second});
    }
    break;
  }
  }
  if (spec.n_outputs != 0 && es.n_examples > 0 && enc.n_outputs != spec.n_outputs)
    throw ValidationError("task declares n_outputs = " + std::to_string(spec.n_outputs) +
                          " but the data yields " + std::to_string(enc.n_outputs));
  if (enc.n_outputs == 0) enc.n_outputs = spec.n_outputs;
  return enc;
}

// ---------------------------------------------------------------- cache

namespace {

constexpr char kMagic[4] = {'N', 'B', 'C', 'H'};

using Crc32c = boost::crc_optimal<32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF, true, true>;

std::string target_kind(const ExampleSet& es) {
  if (es.targets.empty()) return "none";
  return std::visit(
      [](const auto& t) -> std::string {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, ClassIndex>) return "class";
        else if constexpr (std::is_same_v<T, LabelVector>) return "labels";
        else if constexpr (std::is_same_v<T, ScalarTarget>) return "scalar";
        else return "embedding";
      },
      es.targets.front());
}

template <typename T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

} // namespace

void write_cache(const ExampleSet& es, const fs::path& path, const json& meta) {
  if (auto v = validate_example_set(es); !v.empty()) throw ValidationError("cannot cache invalid example set: " + v.front());
  const std::string kind = target_kind(es);
  const std::size_t dim = es.targets.empty() ? 0 : target_dimension(es.targets.front());
  std::vector<std::string> labels;
  for (auto l : es.split_labels) labels.emplace_back(to_string(l));
  json header = {
      {"n_examples", es.n_examples}, {"n_channels", es.n_channels}, {"n_times", es.n_times},
      {"channels", es.channels},     {"sfreq", es.sfreq},           {"window_start", es.window_start},
      {"duration", es.duration},     {"target_kind", kind},         {"target_dim", dim},
      {"example_ids", es.example_ids}, {"subject_ids", es.subject_ids}, {"session_ids", es.session_ids},
      {"recording_ids", es.recording_ids}, {"run_ids", es.run_ids}, {"concept_ids", es.concept_ids},
      {"descriptions", es.descriptions}, {"split_labels", labels},   {"meta", meta},
  };
  const std::string header_text = header.dump();

  std::string blob;
  blob.append(kMagic, 4);
  put(blob, kCacheVersion);
  put(blob, static_cast<std::uint64_t>(header_text.size()));
  blob += header_text;
  blob.append(reinterpret_cast<const char*>(es.windows.data()), es.windows.size() * sizeof(float));
  for (const auto& t : es.targets) {
    if (target_dimension(t) != dim) throw ValidationError("cannot cache targets of mixed dimension");
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, ClassIndex>) put(blob, static_cast<double>(v.value));
          else if constexpr (std::is_same_v<T, LabelVector>) for (auto x : v.values) put(blob, static_cast<double>(x));
          else if constexpr (std::is_same_v<T, ScalarTarget>) put(blob, v.value);
          else for (double x : v.values) put(blob, x);
        },
        t);
  }
  Crc32c crc;
  crc.process_bytes(blob.data(), blob.size());
  put(blob, static_cast<std::uint32_t>(crc.checksum()));

  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error("cannot write cache " + path.string());
    }
  }
  fs::rename(tmp, path);
}

ExampleSet read_cache(const fs::path& path, json* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open cache " + path.string());
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t fixed = 4 + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (blob.size() < fixed + sizeof(std::uint32_t) || std::memcmp(blob.data(), kMagic, 4) != 0)
    throw Error("cache " + path.string() + ": not a cache file (bad magic)");
  std::uint32_t version = 0;
  std::memcpy(&version, blob.data() + 4, sizeof version);
  if (version != kCacheVersion)
    throw Error("cache " + path.string() + ": format version " + std::to_string(version) +
                " is not supported by this build (expects version " + std::to_string(kCacheVersion) + ")");
  const std::size_t body = blob.size() - sizeof(std::uint32_t);
  std::uint32_t stored = 0;
  std::memcpy(&stored, blob.data() + body, sizeof stored);
  Crc32c crc;
  crc.process_bytes(blob.data(), body);
  if (crc.checksum() != stored) throw Error("cache " + path.string() + ": checksum mismatch");

  std::uint64_t header_len = 0;
  std::memcpy(&header_len, blob.data() + 8, sizeof header_len);
  if (fixed + header_len > body) throw Error("cache " + path.string() + ": truncated header");
  const json h = json::parse(blob.substr(fixed, header_len));
  ExampleSet es;
  es.n_examples = h.at("n_examples").get<std::size_t>();
  es.n_channels = h.at("n_channels").get<std::size_t>();
  es.n_times = h.at("n_times").get<std::size_t>();
  es.channels = h.at("channels").get<std::vector<std::string>>();
  es.sfreq = h.at("sfreq").get<double>();
  es.window_start = h.at("window_start").get<double>();
  es.duration = h.at("duration").get<double>();
  es.example_ids = h.at("example_ids").get<std::vector<std::string>>();
  es.subject_ids = h.at("subject_ids").get<std::vector<std::string>>();
  es.session_ids = h.at("session_ids").get<std::vector<std::string>>();
  es.recording_ids = h.at("recording_ids").get<std::vector<std::string>>();
  es.run_ids = h.at("run_ids").get<std::vector<std::string>>();
  es.concept_ids = h.at("concept_ids").get<std::vector<std::string>>();
  es.descriptions = h.at("descriptions").get<std::vector<std::string>>();
  for (const auto& l : h.at("split_labels")) es.split_labels.push_back(split_label_from_string(l.get<std::string>()));
  const std::string kind = h.at("target_kind").get<std::string>();
  const std::size_t dim = h.at("target_dim").get<std::size_t>();

  const std::size_t n_win = es.n_examples * es.n_channels * es.n_times;
  const std::size_t n_tgt = kind == "none" ? 0 : es.n_examples * dim;
  std::size_t pos = fixed + header_len;
  if (pos + n_win * sizeof(float) + n_tgt * sizeof(double) != body)
    throw Error("cache " + path.string() + ": payload size does not match header");
  es.windows.resize(n_win);
  std::memcpy(es.windows.data(), blob.data() + pos, n_win * sizeof(float));
  pos += n_win * sizeof(float);
  std::vector<double> tv(n_tgt);
  std::memcpy(tv.data(), blob.data() + pos, n_tgt * sizeof(double));
  if (kind != "none") {
    for (std::size_t i = 0; i < es.n_examples; ++i) {
      const double* row = tv.data() + i * dim;
      if (kind == "class") es.targets.push_back(ClassIndex{static_cast<int>(row[0])});
      else if (kind == "labels") {
        LabelVector lv;
        for (std::size_t d = 0; d < dim; ++d) lv.values.push_back(static_cast<std::uint8_t>(row[d]));
        es.targets.push_back(std::move(lv));
      } else if (kind == "scalar") es.targets.push_back(ScalarTarget{row[0]});
      else if (kind == "embedding") es.targets.push_back(EmbeddingTarget{std::vector<double>(row, row + dim)});
      else throw Error("cache " + path.string() + ": unknown target kind '" + kind + "'");
    }
  }
  if (meta) *meta = h.value("meta", json::object());
  return es;
}

// ---------------------------------------------------------------- preparation

namespace {

std::optional<std::string> synthetic_name(const std::string& dataset_id) {
  const std::string prefix = "synthetic:";
  if (dataset_id.rfind(prefix, 0) == 0) return dataset_id.substr(prefix.size());
  return std::nullopt;
}

std::string sanitize(std::string id) {
  for (auto& ch : id)
    if (ch == ':' || ch == '/' || ch == '\\') ch = '_';
  return id;
}

void materialize_synthetic(const std::string& profile_name, const fs::path& dir, const config::TaskSpec& spec) {
  if (fs::exists(dir / ".complete")) return;
  const auto dataset = generate_synthetic(synthetic_profile(profile_name));
  static std::atomic<unsigned> counter{0};
  const fs::path tmp = dir.string() + ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  for (const auto& rec : dataset.recordings) write_recording(tmp, rec);
  if (!dataset.embeddings.empty())
    write_embeddings(tmp / (spec.target.embedding_file.empty() ? "embeddings.json" : spec.target.embedding_file),
                     dataset.embeddings);
  std::ofstream(tmp / ".complete") << profile_name << "\n";
  std::error_code ec;
  fs::rename(tmp, dir, ec);
  if (ec) {
    // Another preparer won the race; keep its copy.
    fs::remove_all(tmp);
    if (!fs::exists(dir / ".complete")) throw Error("cannot materialize dataset into " + dir.string());
  }
}

} // namespace

fs::path dataset_dir(const config::TaskSpec& spec, const std::string& dataset_id, const fs::path& data_root) {
  if (!synthetic_name(dataset_id) && spec.source_root) return fs::path(*spec.source_root) / dataset_id;
  return data_root / sanitize(dataset_id);
}

PreparedDataset prepare_dataset(const config::TaskSpec& spec, const std::string& dataset_id, const fs::path& data_root) {
  const fs::path dir = dataset_dir(spec, dataset_id, data_root);
  if (auto name = synthetic_name(dataset_id)) {
    fs::create_directories(dir.parent_path());
    materialize_synthetic(*name, dir, spec);
  }
  const auto ids = list_recordings(dir);
  if (ids.empty()) throw Error("dataset '" + dataset_id + "': no recordings under " + dir.string());

  PreparedDataset out;
  std::set<std::string> seen_log;
  std::vector<ExampleSet> parts;
  for (const auto& id : ids) {
    const Recording raw = load_recording(dir, id);
    auto pre = dsp::preprocess(raw, spec.preprocessing);
    for (const auto& line : pre.log)
      if (seen_log.insert(line).second) out.log.push_back(line);
    for (auto c : pre.flat_channels)
      out.log.push_back(id + ": channel " + raw.channels[c] + " has zero IQR (scaled by 1)");
    auto ep = epoch(pre.recording, spec);
    out.dropped += ep.dropped;
    parts.push_back(std::move(ep.examples));
  }
  ExampleSet es = concat(parts);
  if (spec.baseline) es = dsp::baseline_correct(es, (*spec.baseline)[0], (*spec.baseline)[1]);
  std::map<std::string, std::vector<double>> embeddings;
  if (spec.target.kind == config::TargetCodecKind::Embedding)
    embeddings = load_embeddings(dir / (spec.target.embedding_file.empty() ? "embeddings.json" : spec.target.embedding_file));
  out.encoding = encode_targets(es, spec, embeddings);
  if (out.dropped > 0) out.log.push_back("dropped " + std::to_string(out.dropped) + " out-of-bounds windows");
  out.examples = std::move(es);
  return out;
}

} // namespace nb::data
