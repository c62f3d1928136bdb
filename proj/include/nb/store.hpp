#pragma once

#include "nb/domain.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace nb::store {

class DuplicateError : public Error {
public:
  using Error::Error;
};

nlohmann::json to_json(const RunRecord& record);
RunRecord record_from_json(const nlohmann::json& j);

// One store line: 8 hex digits of CRC-32C over the JSON text, a tab, the JSON.
std::string encode_line(const RunRecord& record);
// Throws ValidationError on a CRC mismatch or malformed line.
RunRecord decode_line(std::string_view line);

std::uint32_t crc32c(std::string_view bytes);

struct Query {
  std::optional<std::string> model_id, task_id, dataset_id;
  std::optional<std::uint64_t> seed, config_hash;
  bool matches(const RunRecord& r) const;
};

struct LoadResult {
  std::vector<RunRecord> records;
  std::vector<std::string> warnings; // one per skipped line
};

// Holds an exclusive advisory lock on <store>.lock for its lifetime.
class WriterLock {
public:
  explicit WriterLock(const std::filesystem::path& store_file);
  ~WriterLock();
  WriterLock(const WriterLock&) = delete;
  WriterLock& operator=(const WriterLock&) = delete;

private:
  int fd_ = -1;
};

// Append-only JSON-lines results store. Uniqueness key:
// (model, task, dataset, seed, config_hash, attempt).
class ResultsStore {
public:
  explicit ResultsStore(std::filesystem::path file);

  const std::filesystem::path& path() const { return file_; }

  LoadResult load() const;
  std::vector<RunRecord> query(const Query& q) const;

  // Throws DuplicateError when the key is already present.
  void append(const RunRecord& record);

  // Rewrites the file atomically without unreadable lines. Returns the number
  // of dropped lines.
  std::size_t compact();

private:
  std::filesystem::path file_;
  mutable std::mutex mutex_;
};

} // namespace nb::store
