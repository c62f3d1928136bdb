#include "nb/store.hpp"

#include <boost/crc.hpp>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <tuple>

namespace nb::store {

using nlohmann::json;

std::uint32_t crc32c(std::string_view bytes) {
  boost::crc_optimal<32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF, true, true> crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

json to_json(const RunRecord& r) {
  json scores = json::array();
  for (const auto& s : r.scores) {
    json js = {{"metric", s.metric_name},   {"value", s.value}, {"dummy_value", s.dummy_value},
               {"perfect_value", s.perfect_value}, {"normalized", s.normalized}, {"seed", s.seed},
               {"n_test", s.n_test},         {"degenerate", s.degenerate}};
    if (s.max_normalized) js["max_normalized"] = *s.max_normalized;
    scores.push_back(std::move(js));
  }
  return {{"model_id", r.model_id},
          {"task_id", r.task_id},
          {"dataset_id", r.dataset_id},
          {"seed", r.seed},
          {"config_hash", to_hex(r.config_hash)},
          {"split_hash", to_hex(r.split_hash)},
          {"attempt", r.attempt},
          {"status", std::string(to_string(r.status))},
          {"reason", r.reason},
          {"scores", scores},
          {"deviations", r.deviations},
          {"pretrain_overlap", r.pretrain_overlap},
          {"wall_time", r.wall_time},
          {"started_at", r.started_at},
          {"finished_at", r.finished_at}};
}

RunRecord record_from_json(const json& j) {
  try {
    RunRecord r;
    r.model_id = j.at("model_id").get<std::string>();
    r.task_id = j.at("task_id").get<std::string>();
    r.dataset_id = j.at("dataset_id").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = from_hex(j.at("config_hash").get<std::string>());
    r.split_hash = from_hex(j.at("split_hash").get<std::string>());
    r.attempt = j.at("attempt").get<std::uint32_t>();
    r.status = run_status_from_string(j.at("status").get<std::string>());
    r.reason = j.value("reason", "");
    for (const auto& js : j.at("scores")) {
      ScoreRecord s;
      s.metric_name = js.at("metric").get<std::string>();
      s.value = js.at("value").get<double>();
      s.dummy_value = js.at("dummy_value").get<double>();
      s.perfect_value = js.at("perfect_value").get<double>();
      s.normalized = js.at("normalized").get<double>();
      s.seed = js.at("seed").get<std::uint64_t>();
      s.n_test = js.at("n_test").get<std::size_t>();
      s.degenerate = js.value("degenerate", false);
      if (js.contains("max_normalized")) s.max_normalized = js["max_normalized"].get<double>();
      r.scores.push_back(std::move(s));
    }
    r.deviations = j.value("deviations", std::map<std::string, std::string>{});
    r.pretrain_overlap = j.value("pretrain_overlap", false);
    r.wall_time = j.value("wall_time", 0.0);
    r.started_at = j.value("started_at", "");
    r.finished_at = j.value("finished_at", "");
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed run record: ") + e.what());
  }
}

std::string encode_line(const RunRecord& record) {
  const std::string text = to_json(record).dump();
  char crc[9];
  std::snprintf(crc, sizeof crc, "%08x", crc32c(text));
  return std::string(crc) + "\t" + text;
}

RunRecord decode_line(std::string_view line) {
  if (line.size() < 10 || line[8] != '\t') throw ValidationError("missing checksum prefix");
  const std::string_view text = line.substr(9);
  std::uint32_t stored = 0;
  for (char c : line.substr(0, 8)) {
    const int d = (c >= '0' && c <= '9') ? c - '0' : (c >= 'a' && c <= 'f') ? c - 'a' + 10 : -1;
    if (d < 0) throw ValidationError("malformed checksum");
    stored = stored * 16 + static_cast<std::uint32_t>(d);
  }
  if (crc32c(text) != stored) throw ValidationError("checksum mismatch");
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ValidationError("invalid JSON");
  return record_from_json(j);
}

bool Query::matches(const RunRecord& r) const {
  return (!model_id || *model_id == r.model_id) && (!task_id || *task_id == r.task_id) &&
         (!dataset_id || *dataset_id == r.dataset_id) && (!seed || *seed == r.seed) &&
         (!config_hash || *config_hash == r.config_hash);
}

WriterLock::WriterLock(const std::filesystem::path& store_file) {
  if (store_file.has_parent_path()) std::filesystem::create_directories(store_file.parent_path());
  const auto lock_path = store_file.string() + ".lock";
  fd_ = ::open(lock_path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error("cannot open lock file " + lock_path + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw Error("results store " + store_file.string() + " is locked by another writer");
  }
}

WriterLock::~WriterLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

ResultsStore::ResultsStore(std::filesystem::path file) : file_(std::move(file)) {}

LoadResult ResultsStore::load() const {
  std::lock_guard lock(mutex_);
  LoadResult out;
  std::ifstream in(file_, std::ios::binary);
  if (!in) return out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.records.push_back(decode_line(line));
    } catch (const ValidationError& e) {
      out.warnings.push_back(file_.string() + ":" + std::to_string(n) + ": skipped (" + e.what() + ")");
    }
  }
  return out;
}

std::vector<RunRecord> ResultsStore::query(const Query& q) const {
  std::vector<RunRecord> out;
  for (auto& r : load().records)
    if (q.matches(r)) out.push_back(std::move(r));
  return out;
}

namespace {

auto key_of(const RunRecord& r) {
  return std::make_tuple(r.model_id, r.task_id, r.dataset_id, r.seed, r.config_hash, r.attempt);
}

void write_all(int fd, std::string_view bytes, const std::filesystem::path& file) {
  while (!bytes.empty()) {
    const ssize_t w = ::write(fd, bytes.data(), bytes.size());
    if (w < 0) {
      if (errno == EINTR) continue;
      throw Error("write to " + file.string() + " failed: " + std::strerror(errno));
    }
    bytes.remove_prefix(static_cast<std::size_t>(w));
  }
}

} // namespace

void ResultsStore::append(const RunRecord& record) {
  const auto existing = load().records;
  std::lock_guard lock(mutex_);
  const auto key = key_of(record);
  for (const auto& r : existing)
    if (key_of(r) == key)
      throw DuplicateError("duplicate run record (" + record.model_id + ", " + record.task_id + ", " +
                           record.dataset_id + ", seed " + std::to_string(record.seed) + ", config " +
                           to_hex(record.config_hash) + ", attempt " + std::to_string(record.attempt) + ")");
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  const int fd = ::open(file_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw Error("cannot open " + file_.string() + ": " + std::strerror(errno));
  try {
    // A torn previous line would swallow this record; start on a fresh line.
    const auto size = ::lseek(fd, 0, SEEK_END);
    std::string line = encode_line(record) + "\n";
    if (size > 0) {
      char last = '\n';
      const int rfd = ::open(file_.c_str(), O_RDONLY | O_CLOEXEC);
      if (rfd >= 0) {
        if (::pread(rfd, &last, 1, size - 1) != 1) last = '\n';
        ::close(rfd);
      }
      if (last != '\n') line.insert(line.begin(), '\n');
    }
    write_all(fd, line, file_);
    ::fsync(fd);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

std::size_t ResultsStore::compact() {
  const auto loaded = load();
  std::lock_guard lock(mutex_);
  const auto tmp = file_.string() + ".compact.tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    for (const auto& r : loaded.records) out << encode_line(r) << '\n';
    out.flush();
    if (!out) throw Error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, file_);
  return loaded.warnings.size();
}

} // namespace nb::store
