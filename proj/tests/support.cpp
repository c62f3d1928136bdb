#include "support.hpp"

#include <atomic>
#include <unistd.h>

namespace nb::test {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& name) {
  static std::atomic<int> counter{0};
  path_ = fs::path(NB_TEST_TMP) / (name + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

ExampleSet make_set(const SetShape& shape, int n_classes, std::uint64_t seed) {
  Rng rng(seed);
  ExampleSet es;
  es.n_examples = shape.n_subjects * shape.per_subject;
  es.n_channels = shape.n_channels;
  es.n_times = shape.n_times;
  es.sfreq = 100.0;
  es.duration = static_cast<double>(shape.n_times) / es.sfreq;
  for (std::size_t c = 0; c < shape.n_channels; ++c) es.channels.push_back("ch" + std::to_string(c));
  es.windows.resize(es.n_examples * es.window_size());
  for (auto& v : es.windows) v = static_cast<float>(rng.normal());
  for (std::size_t s = 0; s < shape.n_subjects; ++s)
    for (std::size_t k = 0; k < shape.per_subject; ++k) {
      const std::size_t i = s * shape.per_subject + k;
      const int cls = static_cast<int>(i % static_cast<std::size_t>(n_classes));
      const std::string subject = "s" + std::to_string(s);
      const std::string session = std::to_string(k * shape.n_sessions / shape.per_subject + 1);
      es.example_ids.push_back(subject + "-" + std::to_string(k));
      es.subject_ids.push_back(subject);
      es.session_ids.push_back(session);
      es.recording_ids.push_back(subject + "_" + session);
      es.run_ids.push_back(std::to_string(k % 4 + 1));
      es.concept_ids.push_back(shape.n_concepts ? "k" + std::to_string(i % shape.n_concepts) : "");
      es.descriptions.push_back("c" + std::to_string(cls));
      es.targets.emplace_back(ClassIndex{cls});
    }
  return es;
}

ExampleSet make_separable(std::size_t n, std::size_t n_channels, std::size_t n_times, double margin,
                          std::uint64_t seed) {
  SetShape shape;
  shape.n_subjects = 1;
  shape.per_subject = n;
  shape.n_channels = n_channels;
  shape.n_times = n_times;
  ExampleSet es = make_set(shape, 2, seed);
  for (std::size_t i = 0; i < n; ++i) {
    const double sign = std::get<ClassIndex>(es.targets[i]).value == 1 ? 1.0 : -1.0;
    for (std::size_t t = 0; t < n_times; ++t)
      es.windows[(i * n_channels) * n_times + t] += static_cast<float>(sign * margin);
  }
  return es;
}

} // namespace nb::test
