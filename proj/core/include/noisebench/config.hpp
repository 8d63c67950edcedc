#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace noisebench {

// Flat sectioned key=value experiment config:
//
//   [train]
//   epochs = 10
//   # comment
//
// Keys are flattened to "section.key". Unknown keys are rejected so typos
// fail loudly. CLI flags override parsed values via set(); the resolved
// text (sorted, canonical) is archived next to every run's outputs and its
// CRC32 becomes the config hash embedded in artifact filenames.
class ExperimentConfig {
 public:
  static ExperimentConfig parse_file(const std::string& path);
  static ExperimentConfig parse_text(const std::string& text);
  static const std::vector<std::string>& known_keys();

  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback = "") const;
  double get_num(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_num_list(const std::string& key,
                                   const std::vector<double>& fallback) const;

  void set(const std::string& key, const std::string& value);

  std::string resolved_text() const;
  std::string hash8() const;  // 8 hex chars

 private:
  std::map<std::string, std::string> values_;
};

// Output directory guard: a run dir is bound to one config hash via its
// manifest. Reusing a dir with a different config, or overwriting an
// existing artifact, requires force. Every artifact lands in the manifest
// with its CRC32.
class RunDir {
 public:
  RunDir(std::string dir, const ExperimentConfig& cfg, bool force);

  const std::string& dir() const { return dir_; }
  const std::string& hash() const { return hash_; }
  // dir/stem-<hash>.ext, registering intent to write; throws unless forced
  // when the file already exists.
  std::string path(const std::string& stem, const std::string& ext);
  // Registers an already-written file in the manifest (CRC recorded).
  void add(const std::string& filename);
  // Adds a key/value to the run's stats blob (folded into report()).
  void stat(const std::string& key, const std::string& value);
  void stat(const std::string& key, double value);
  void flush_stats();

 private:
  std::string dir_;
  std::string hash_;
  bool force_ = false;
  std::map<std::string, std::string> stats_;
};

struct ReportResult {
  std::string summary;     // human-readable
  std::string index_csv;   // file,crc32
};

// Verifies the manifest (files present, CRCs intact, one config hash) and
// builds the run summary. IntegrityError on tampering or an empty dir.
ReportResult report_run(const std::string& run_dir);

}  // namespace noisebench
