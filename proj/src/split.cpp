#include "nb/split.hpp"

#include "nb/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>
#include <set>

namespace nb::split {

using json = nlohmann::json;

std::size_t split_count(double ratio, std::size_t n) {
  if (n == 0) return 0;
  const auto c = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
  return std::max<std::size_t>(1, c);
}

namespace {

struct Unit {
  std::string key;
  std::string stratum;
};

const std::vector<std::string>& tag_field(const ExampleSet& es, const std::string& name) {
  if (name == "description") return es.descriptions;
  if (name == "subject_id" || name == "subject") return es.subject_ids;
  if (name == "session_id" || name == "session") return es.session_ids;
  if (name == "recording_id" || name == "recording") return es.recording_ids;
  if (name == "run_id" || name == "run") return es.run_ids;
  if (name == "concept_id" || name == "concept") return es.concept_ids;
  throw ValidationError("stratify_by: unsupported field '" + name + "'");
}

// Quotas per stratum for one ratio: floor of the exact share, then the
// remaining units by largest remainder (ties by stratum order), within each
// stratum's capacity.
std::vector<std::size_t> quotas(const std::vector<std::size_t>& sizes, const std::vector<std::size_t>& capacity,
                                double ratio, std::size_t total) {
  const std::size_t k = sizes.size();
  std::vector<std::size_t> q(k);
  std::vector<double> rem(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = ratio * static_cast<double>(sizes[i]);
    q[i] = std::min(static_cast<std::size_t>(std::floor(exact)), capacity[i]);
    rem[i] = exact - std::floor(exact);
    assigned += q[i];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  while (assigned < total) {
    bool progressed = false;
    for (auto i : order) {
      if (assigned == total) break;
      if (q[i] < capacity[i]) {
        ++q[i];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  return q;
}

std::map<std::string, SplitLabel> assign_units(std::vector<Unit> units, double test_ratio, double valid_ratio,
                                               std::uint64_t seed, const std::string& what) {
  std::sort(units.begin(), units.end(), [](const Unit& a, const Unit& b) { return a.key < b.key; });
  const std::size_t n = units.size();
  const std::size_t n_test = split_count(test_ratio, n);
  const std::size_t n_valid = split_count(valid_ratio, n);
  if (n < 3 || n_test + n_valid >= n)
    throw ValidationError("too few " + what + " (" + std::to_string(n) + ") for train/valid/test splits");

  std::map<std::string, std::vector<std::string>> strata;
  for (const auto& u : units) strata[u.stratum].push_back(u.key);
  std::vector<std::size_t> sizes, cap;
  for (const auto& [name, keys] : strata) {
    sizes.push_back(keys.size());
    cap.push_back(keys.size());
  }
  const auto q_test = quotas(sizes, cap, test_ratio, n_test);
  for (std::size_t i = 0; i < cap.size(); ++i) cap[i] -= q_test[i];
  const auto q_valid = quotas(sizes, cap, valid_ratio, n_valid);

  Rng rng(seed);
  std::map<std::string, SplitLabel> out;
  std::size_t i = 0;
  for (auto& [name, keys] : strata) {
    rng.shuffle(keys);
    for (std::size_t j = 0; j < keys.size(); ++j) {
      SplitLabel label = SplitLabel::Train;
      if (j < q_test[i]) label = SplitLabel::Test;
      else if (j < q_test[i] + q_valid[i]) label = SplitLabel::Valid;
      out[keys[j]] = label;
    }
    ++i;
  }
  return out;
}

// Numeric-aware ordering so "10" follows "9".
bool natural_less(const std::string& a, const std::string& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (std::isdigit(static_cast<unsigned char>(a[i])) && std::isdigit(static_cast<unsigned char>(b[j]))) {
      std::size_t i2 = i, j2 = j;
      while (i2 < a.size() && std::isdigit(static_cast<unsigned char>(a[i2]))) ++i2;
      while (j2 < b.size() && std::isdigit(static_cast<unsigned char>(b[j2]))) ++j2;
      std::string na = a.substr(i, i2 - i), nb = b.substr(j, j2 - j);
      na.erase(0, std::min(na.find_first_not_of('0'), na.size()));
      nb.erase(0, std::min(nb.find_first_not_of('0'), nb.size()));
      if (na.size() != nb.size()) return na.size() < nb.size();
      if (na != nb) return na < nb;
      i = i2;
      j = j2;
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i;
      ++j;
    }
  }
  return a.size() - i < b.size() - j;
}

ExampleSet with_labels(const ExampleSet& es, std::vector<SplitLabel> labels) {
  ExampleSet out = es;
  out.split_labels = std::move(labels);
  return out;
}

ExampleSet carve_valid(const ExampleSet& es, std::vector<SplitLabel> labels, double valid_ratio,
                       std::uint64_t seed) {
  std::vector<std::string> pool;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < es.n_examples; ++i) {
    index[es.example_ids[i]] = i;
    if (labels[i] != SplitLabel::Test) pool.push_back(es.example_ids[i]);
  }
  std::sort(pool.begin(), pool.end());
  const std::size_t n_valid = split_count(valid_ratio, es.n_examples);
  if (n_valid >= pool.size())
    throw ValidationError("too few non-test examples (" + std::to_string(pool.size()) + ") for a validation carve");
  Rng rng(seed);
  rng.shuffle(pool);
  for (std::size_t j = 0; j < n_valid; ++j) labels[index[pool[j]]] = SplitLabel::Valid;
  return with_labels(es, std::move(labels));
}

void check_ids_unique(const ExampleSet& es) {
  std::set<std::string> seen;
  for (const auto& id : es.example_ids)
    if (!seen.insert(id).second) throw ValidationError("duplicate example id '" + id + "'");
}

} // namespace

ExampleSet split_predefined(const ExampleSet& es, const std::map<std::string, SplitLabel>& assignment) {
  std::vector<SplitLabel> labels(es.n_examples);
  for (std::size_t i = 0; i < es.n_examples; ++i) {
    auto it = assignment.find(es.example_ids[i]);
    if (it == assignment.end() || it->second == SplitLabel::Unassigned)
      throw ValidationError("predefined split does not cover example '" + es.example_ids[i] + "'");
    labels[i] = it->second;
  }
  return with_labels(es, std::move(labels));
}

ExampleSet split_cross_subject(const ExampleSet& es, double test_ratio, double valid_ratio,
                               const std::optional<std::string>& stratify_by, std::uint64_t seed) {
  std::map<std::string, std::map<std::string, std::size_t>> subject_strata;
  for (std::size_t i = 0; i < es.n_examples; ++i) {
    auto& counts = subject_strata[es.subject_ids[i]];
    if (stratify_by) ++counts[tag_field(es, *stratify_by)[i]];
  }
  std::vector<Unit> units;
  for (const auto& [subject, counts] : subject_strata) {
    std::string stratum;
    std::size_t best = 0;
    for (const auto& [value, c] : counts)
      if (c > best) {
        best = c;
        stratum = value;
      }
    units.push_back({subject, stratum});
  }
  const auto labels = assign_units(units, test_ratio, valid_ratio, derive_seed(seed, "split/cross_subject"), "subjects");
  std::vector<SplitLabel> out(es.n_examples);
  for (std::size_t i = 0; i < es.n_examples; ++i) out[i] = labels.at(es.subject_ids[i]);
  return with_labels(es, std::move(out));
}

ExampleSet split_leave_concept_out(const ExampleSet& es, double test_ratio, double valid_ratio, std::uint64_t seed) {
  std::set<std::string> concepts;
  for (std::size_t i = 0; i < es.n_examples; ++i) {
    if (es.concept_ids[i].empty())
      throw ValidationError("leave-concept-out split: example '" + es.example_ids[i] + "' has no concept id");
    concepts.insert(es.concept_ids[i]);
  }
  std::vector<Unit> units;
  for (const auto& c : concepts) units.push_back({c, ""});
  const auto labels = assign_units(units, test_ratio, valid_ratio, derive_seed(seed, "split/concept"), "concepts");
  std::vector<SplitLabel> out(es.n_examples);
  for (std::size_t i = 0; i < es.n_examples; ++i) out[i] = labels.at(es.concept_ids[i]);
  return with_labels(es, std::move(out));
}

ExampleSet split_within_subject(const ExampleSet& es, const std::string& holdout, double valid_ratio,
                                std::uint64_t seed) {
  static const std::regex pattern(R"(^\s*last\s+(\d+)\s+(session|sessions|run|runs)\s*$)");
  std::smatch m;
  if (!std::regex_match(holdout, m, pattern))
    throw ValidationError("holdout '" + holdout + "' must read 'last N sessions' or 'last N runs'");
  const std::size_t n_hold = std::stoul(m[1].str());
  const bool by_session = m[2].str().rfind("session", 0) == 0;
  if (n_hold == 0) throw ValidationError("holdout must keep at least one session or run");

  // Group key -> ordered tags; sessions per subject, runs per recording.
  const auto& groups = by_session ? es.subject_ids : es.recording_ids;
  const auto& tags = by_session ? es.session_ids : es.run_ids;
  std::map<std::string, std::vector<std::string>> ordered;
  for (std::size_t i = 0; i < es.n_examples; ++i) {
    if (!by_session && tags[i].empty())
      throw ValidationError("example '" + es.example_ids[i] + "' has no run tag");
    auto& v = ordered[groups[i]];
    if (std::find(v.begin(), v.end(), tags[i]) == v.end()) v.push_back(tags[i]);
  }
  std::map<std::string, std::set<std::string>> held;
  for (auto& [group, v] : ordered) {
    std::sort(v.begin(), v.end(), natural_less);
    if (v.size() <= n_hold)
      throw ValidationError(std::string(by_session ? "subject '" : "recording '") + group + "' has " +
                            std::to_string(v.size()) + (by_session ? " session(s)" : " run(s)") +
                            "; cannot hold out the last " + std::to_string(n_hold));
    held[group].insert(v.end() - static_cast<long>(n_hold), v.end());
  }
  std::vector<SplitLabel> labels(es.n_examples, SplitLabel::Train);
  for (std::size_t i = 0; i < es.n_examples; ++i)
    if (held[groups[i]].count(tags[i])) labels[i] = SplitLabel::Test;
  return carve_valid(es, std::move(labels), valid_ratio, derive_seed(seed, "split/within_valid"));
}

ExampleSet split_random(const ExampleSet& es, double test_ratio, double valid_ratio,
                        const std::optional<std::string>& stratify_by, std::uint64_t seed) {
  check_ids_unique(es);
  std::vector<Unit> units;
  for (std::size_t i = 0; i < es.n_examples; ++i)
    units.push_back({es.example_ids[i], stratify_by ? tag_field(es, *stratify_by)[i] : std::string()});
  const auto labels = assign_units(units, test_ratio, valid_ratio, derive_seed(seed, "split/random"), "examples");
  std::vector<SplitLabel> out(es.n_examples);
  for (std::size_t i = 0; i < es.n_examples; ++i) out[i] = labels.at(es.example_ids[i]);
  return with_labels(es, std::move(out));
}

ExampleSet apply_split(const ExampleSet& es, const config::SplitPolicy& policy) {
  switch (policy.kind) {
  case config::SplitKind::Random:
    return split_random(es, policy.test_ratio, policy.valid_ratio, policy.stratify_by, policy.seed);
  case config::SplitKind::CrossSubject:
    return split_cross_subject(es, policy.test_ratio, policy.valid_ratio, policy.stratify_by, policy.seed);
  case config::SplitKind::LeaveConceptOut:
    return split_leave_concept_out(es, policy.test_ratio, policy.valid_ratio, policy.seed);
  case config::SplitKind::WithinSubject:
    if (!policy.holdout_spec) throw ValidationError("within-subject split needs a holdout spec");
    return split_within_subject(es, *policy.holdout_spec, policy.valid_ratio, policy.seed);
  case config::SplitKind::Predefined: {
    const std::string spec = policy.holdout_spec.value_or("");
    const std::string prefix = "session=";
    if (spec.rfind(prefix, 0) != 0)
      throw ValidationError("predefined split needs holdout 'session=<id>'");
    const std::string session = spec.substr(prefix.size());
    std::vector<SplitLabel> labels(es.n_examples, SplitLabel::Train);
    std::size_t n_test = 0;
    for (std::size_t i = 0; i < es.n_examples; ++i)
      if (es.session_ids[i] == session) {
        labels[i] = SplitLabel::Test;
        ++n_test;
      }
    if (n_test == 0) throw ValidationError("predefined split: no example in session '" + session + "'");
    return carve_valid(es, std::move(labels), policy.valid_ratio, derive_seed(policy.seed, "split/predefined_valid"));
  }
  }
  throw ValidationError("unknown split kind");
}

json split_manifest(const ExampleSet& es) {
  if (es.split_labels.size() != es.n_examples) throw ValidationError("example set is not split");
  json m = json::object();
  for (std::size_t i = 0; i < es.n_examples; ++i) m[es.example_ids[i]] = std::string(to_string(es.split_labels[i]));
  return m;
}

std::map<std::string, SplitLabel> parse_manifest(const json& manifest) {
  std::map<std::string, SplitLabel> out;
  for (const auto& [id, label] : manifest.items()) out[id] = split_label_from_string(label.get<std::string>());
  return out;
}

std::uint64_t split_hash(const ExampleSet& es) { return hash_config(split_manifest(es).dump()); }

} // namespace nb::split
