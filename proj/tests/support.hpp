#pragma once

#include "nb/domain.hpp"
#include "nb/rng.hpp"

#include <filesystem>
#include <string>

namespace nb::test {

// Fresh directory under the build tree, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& name);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
  std::filesystem::path path_;
};

struct SetShape {
  std::size_t n_subjects = 4;
  std::size_t per_subject = 20;
  std::size_t n_channels = 3;
  std::size_t n_times = 16;
  std::size_t n_sessions = 2;
  std::size_t n_concepts = 0; // > 0 assigns concept ids round-robin
};

// Example set with Gaussian windows, ClassIndex targets (i % n_classes) and
// descriptions "c<k>". Ids are unique and subject/session tags regular.
ExampleSet make_set(const SetShape& shape, int n_classes, std::uint64_t seed);

// Binary set whose class is encoded as +/- `margin` on channel 0 for the whole
// window, over unit Gaussian noise.
ExampleSet make_separable(std::size_t n, std::size_t n_channels, std::size_t n_times, double margin,
                          std::uint64_t seed);

} // namespace nb::test
