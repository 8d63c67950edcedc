#include "noisebench/config.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "json.hpp"

#include "noisebench/artifact_io.hpp"
#include "noisebench/errors.hpp"

namespace fs = std::filesystem;

namespace noisebench {

const std::vector<std::string>& ExperimentConfig::known_keys() {
  static const std::vector<std::string> keys = {
      "dataset.name", "dataset.num_classes",
      "dataset.train_images", "dataset.train_labels",
      "dataset.test_images", "dataset.test_labels",
      "dataset.cifar_train_batches", "dataset.cifar_test_batches",
      "dataset.synth", "dataset.synth_classes", "dataset.synth_size",
      "dataset.synth_per_class", "dataset.synth_noise_sd", "dataset.synth_seed",
      "model.arch", "model.seed", "model.path",
      "train.epochs", "train.batch", "train.lr", "train.momentum", "train.seed",
      "noise.source", "noise.n", "noise.seed", "noise.sigma",
      "gabor.scales", "gabor.alpha", "gabor.components", "gabor.sampler_path",
      "probe.batch",
      "maps.subtract_mean", "maps.center", "maps.cosine",
      "attack.gamma_grid", "attack.target", "attack.n_noise", "attack.n_signal",
      "attack.seed", "attack.exclude_own_class", "attack.use_mean_images",
      "detect.window", "detect.threshold_z", "detect.smooth",
      "poison.shape", "poison.corner", "poison.value", "poison.additive",
      "poison.source_class", "poison.target_class", "poison.fraction", "poison.seed",
      "sta.layer", "sta.n", "sta.seed", "sta.sigma", "sta.whiten", "sta.full_image",
      "sta.units", "sta.stc",
      "stim.layer", "stim.k", "stim.lambda", "stim.mode",
      "microstim.grid", "microstim.trials", "microstim.seed",
      "inject.layer", "inject.grid", "inject.max_images",
      "output.dir",
      "threads",
  };
  return keys;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool key_known(const std::string& key) {
  const auto& keys = ExperimentConfig::known_keys();
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

}  // namespace

ExperimentConfig ExperimentConfig::parse_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    lineno++;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty section");
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    std::string full = section.empty() ? key : section + "." + key;
    cfg.set(full, value);
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
  return parse_text(read_text_file(path));
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (!key_known(key)) throw ConfigError("unknown config key: " + key);
  values_[key] = value;
}

bool ExperimentConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string ExperimentConfig::get(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double ExperimentConfig::get_num(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not a number: " + it->second);
  }
}

std::uint64_t ExperimentConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not an integer: " + it->second);
  }
}

bool ExperimentConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
  if (it->second == "false" || it->second == "0" || it->second == "no") return false;
  throw ConfigError("config key " + key + ": not a boolean: " + it->second);
}

std::vector<double> ExperimentConfig::get_num_list(const std::string& key,
                                                   const std::vector<double>& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  std::istringstream in(it->second);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": bad list element: " + tok);
    }
  }
  if (out.empty()) throw ConfigError("config key " + key + ": empty list");
  return out;
}

std::string ExperimentConfig::resolved_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

std::string ExperimentConfig::hash8() const {
  std::string text = resolved_text();
  std::uint32_t crc = crc32(text.data(), text.size());
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", crc);
  return buf;
}

namespace {

constexpr const char* kManifestName = "manifest.json";

nlohmann::json load_manifest(const std::string& dir) {
  std::string path = dir + "/" + kManifestName;
  if (!fs::exists(path)) return nlohmann::json::object();
  return nlohmann::json::parse(read_text_file(path));
}

void store_manifest(const std::string& dir, const nlohmann::json& m) {
  write_text_file(dir + "/" + kManifestName, m.dump(2) + "\n");
}

}  // namespace

RunDir::RunDir(std::string dir, const ExperimentConfig& cfg, bool force)
    : dir_(std::move(dir)), hash_(cfg.hash8()), force_(force) {
  if (fs::exists(dir_)) {
    nlohmann::json m = load_manifest(dir_);
    if (m.contains("config_hash") && m["config_hash"] != hash_ && !force_) {
      throw ConfigError("output dir " + dir_ + " belongs to config " +
                        m["config_hash"].get<std::string>() + "; use --force to reuse it");
    }
    if (!m.contains("config_hash") && !fs::is_empty(dir_) && !force_) {
      throw ConfigError("output dir " + dir_ + " exists and is not a run dir; use --force");
    }
  } else {
    fs::create_directories(dir_);
  }
  nlohmann::json m = load_manifest(dir_);
  m["config_hash"] = hash_;
  if (!m.contains("files")) m["files"] = nlohmann::json::object();
  store_manifest(dir_, m);
  write_text_file(dir_ + "/config-" + hash_ + ".resolved", cfg.resolved_text());
}

std::string RunDir::path(const std::string& stem, const std::string& ext) {
  std::string p = dir_ + "/" + stem + "-" + hash_ + ext;
  if (fs::exists(p) && !force_) {
    throw ConfigError("refusing to overwrite " + p + " (use --force)");
  }
  return p;
}

void RunDir::add(const std::string& filename) {
  std::string rel = fs::path(filename).filename().string();
  std::string data = read_file_bytes(filename);
  std::uint32_t crc = crc32(data.data(), data.size());
  nlohmann::json m = load_manifest(dir_);
  m["files"][rel] = crc;
  store_manifest(dir_, m);
}

void RunDir::stat(const std::string& key, const std::string& value) { stats_[key] = value; }

void RunDir::stat(const std::string& key, double value) {
  std::ostringstream os;
  os << value;
  stats_[key] = os.str();
}

void RunDir::flush_stats() {
  if (stats_.empty()) return;
  std::string path = dir_ + "/stats-" + hash_ + ".json";
  nlohmann::json j;
  if (fs::exists(path)) j = nlohmann::json::parse(read_text_file(path));
  for (const auto& [k, v] : stats_) j[k] = v;
  write_text_file(path, j.dump(2) + "\n");
  add(path);
  stats_.clear();
}

ReportResult report_run(const std::string& run_dir) {
  if (!fs::exists(run_dir) || !fs::exists(run_dir + "/" + kManifestName)) {
    throw IntegrityError("no run manifest in " + run_dir);
  }
  nlohmann::json m = load_manifest(run_dir);
  if (!m.contains("files") || m["files"].empty()) {
    throw IntegrityError("run manifest lists no artifacts in " + run_dir);
  }
  std::string hash = m.value("config_hash", "");

  std::ostringstream summary, index;
  index << "file,crc32\n";
  summary << "run: " << run_dir << "\nconfig hash: " << hash << "\n";

  for (auto it = m["files"].begin(); it != m["files"].end(); ++it) {
    std::string fname = it.key();
    std::string full = run_dir + "/" + fname;
    if (!fs::exists(full)) throw IntegrityError("missing artifact " + fname);
    std::string data = read_file_bytes(full);
    std::uint32_t crc = crc32(data.data(), data.size());
    if (crc != it.value().get<std::uint32_t>()) {
      throw IntegrityError("checksum mismatch on artifact " + fname);
    }
    // Config hash embedded in the artifact name must match the manifest.
    if (fname.find(hash) == std::string::npos && fname != kManifestName) {
      throw IntegrityError("artifact " + fname + " does not carry config hash " + hash);
    }
    char crcbuf[16];
    std::snprintf(crcbuf, sizeof(crcbuf), "%08x", crc);
    index << fname << "," << crcbuf << "\n";
  }

  std::string stats_path = run_dir + "/stats-" + hash + ".json";
  if (fs::exists(stats_path)) {
    nlohmann::json stats = nlohmann::json::parse(read_text_file(stats_path));
    summary << "\nstats:\n";
    for (auto it = stats.begin(); it != stats.end(); ++it) {
      summary << "  " << it.key() << " = " << it.value().get<std::string>() << "\n";
    }
  }
  summary << "\nartifacts verified: " << m["files"].size() << "\n";

  ReportResult res;
  res.summary = summary.str();
  res.index_csv = index.str();
  return res;
}

}  // namespace noisebench
