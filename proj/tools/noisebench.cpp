// noisebench: trains small classifiers, probes them with noise streams, and
// computes classification images, STA filters, attack/defense reports and
// microstimulation sweeps. Every run is driven by a key=value config plus
// flag overrides; artifacts land in a manifest-tracked output directory with
// the config hash embedded in each filename.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "noisebench/adversarial.hpp"
#include "noisebench/artifact_io.hpp"
#include "noisebench/classim.hpp"
#include "noisebench/config.hpp"
#include "noisebench/dataset.hpp"
#include "noisebench/microstim.hpp"
#include "noisebench/nn.hpp"
#include "noisebench/noise.hpp"
#include "noisebench/parallel.hpp"
#include "noisebench/random.hpp"
#include "noisebench/sta.hpp"

namespace fs = std::filesystem;
using namespace noisebench;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> sets;
  bool force = false;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonFlags& cf) {
  cmd->add_option("--config", cf.config_path, "experiment config file");
  cmd->add_option("--out", cf.out_dir, "output directory (overrides output.dir)");
  cmd->add_option("--set", cf.sets, "override a config key, e.g. --set train.epochs=3");
  cmd->add_flag("--force", cf.force, "allow reusing/overwriting existing outputs");
  cmd->add_option("--threads", cf.threads, "worker pool size (0 = cores)");
}

ExperimentConfig resolve_config(const CommonFlags& cf) {
  ExperimentConfig cfg;
  if (!cf.config_path.empty()) cfg = ExperimentConfig::parse_file(cf.config_path);
  for (const auto& kv : cf.sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set needs key=value, got: " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!cf.out_dir.empty()) cfg.set("output.dir", cf.out_dir);

  int threads = cf.threads;
  if (threads == 0) {
    if (const char* env = std::getenv("NOISEBENCH_THREADS")) threads = std::atoi(env);
  }
  set_default_threads(threads);
  return cfg;
}

RunDir open_run(const ExperimentConfig& cfg, const CommonFlags& cf) {
  std::string dir = cfg.get("output.dir", "");
  if (dir.empty()) throw ConfigError("no output directory (set output.dir or --out)");
  return RunDir(dir, cfg, cf.force);
}

Dataset load_dataset(const ExperimentConfig& cfg, bool train_split) {
  std::string name = cfg.get("dataset.name", "mnist");
  if (name == "synth" || cfg.get("dataset.synth", "") == "glyphs") {
    std::size_t k = cfg.get_u64("dataset.synth_classes", 4);
    std::size_t hw = cfg.get_u64("dataset.synth_size", 16);
    std::size_t per = cfg.get_u64("dataset.synth_per_class", train_split ? 400 : 100);
    double sd = cfg.get_num("dataset.synth_noise_sd", 0.15);
    std::uint64_t seed = cfg.get_u64("dataset.synth_seed", train_split ? 11 : 12);
    return synth_glyphs(k, hw, hw, per, sd, seed);
  }
  if (name == "cifar10") {
    std::string key = train_split ? "dataset.cifar_train_batches" : "dataset.cifar_test_batches";
    std::string paths = cfg.get(key, "");
    if (paths.empty()) throw ConfigError("missing " + key);
    std::vector<std::string> batches;
    std::istringstream in(paths);
    std::string tok;
    while (std::getline(in, tok, ',')) {
      if (!tok.empty()) batches.push_back(tok);
    }
    return load_cifar10(batches, name);
  }
  // IDX-based datasets (mnist, fashion-mnist, custom).
  std::string ik = train_split ? "dataset.train_images" : "dataset.test_images";
  std::string lk = train_split ? "dataset.train_labels" : "dataset.test_labels";
  std::string images = cfg.get(ik, "");
  std::string labels = cfg.get(lk, "");
  if (images.empty() || labels.empty()) {
    throw ConfigError("missing " + ik + " / " + lk + " for dataset " + name);
  }
  return load_idx(images, labels, cfg.get_u64("dataset.num_classes", 10), name);
}

Network require_model(const ExperimentConfig& cfg, RunDir& run, const std::string& flag_path) {
  std::string path = flag_path;
  if (path.empty()) path = cfg.get("model.path", "");
  if (path.empty()) path = run.dir() + "/model-" + run.hash() + ".wnam";
  if (!fs::exists(path)) throw IoError("model file not found: " + path);
  return load_model(path);
}

StimulusStream make_stream(const ExperimentConfig& cfg, const Shape& shape, RunDir* run) {
  StimulusStream stream;
  stream.source = noise_kind_from_string(cfg.get("noise.source", "white_uniform"));
  stream.shape = shape;
  stream.count = cfg.get_u64("noise.n", 100000);
  stream.seed = cfg.get_u64("noise.seed", 7);
  stream.sigma = cfg.get_num("noise.sigma", 0.2);
  if (stream.source == NoiseKind::GaborPca) {
    std::string path = cfg.get("gabor.sampler_path", "");
    if (path.empty() && run) path = run->dir() + "/sampler-" + run->hash() + ".wngs";
    if (path.empty() || !fs::exists(path)) {
      throw IoError("gabor sampler not found (run gabor-fit first): " + path);
    }
    stream.sampler = std::make_shared<GaborPcaSampler>(load_sampler(path));
  }
  return stream;
}

std::vector<double> grid_from(const ExperimentConfig& cfg, const std::string& key) {
  return cfg.get_num_list(key, {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0});
}

int dominant_class(const ClassAccumulator& acc) {
  int best = 0;
  for (std::size_t c = 1; c < acc.num_classes(); ++c) {
    if (acc.response_count(static_cast<int>(c)) > acc.response_count(best)) {
      best = static_cast<int>(c);
    }
  }
  return best;
}

// --- subcommand bodies ---

int cmd_train(const CommonFlags& cf) {
  ExperimentConfig cfg = resolve_config(cf);
  RunDir run = open_run(cfg, cf);
  Dataset train_set = load_dataset(cfg, true);
  train_set.validate();

  std::string arch = cfg.get("model.arch", "cnn_mnist");
  Network net = build_network(arch, train_set.image_shape(), train_set.num_classes,
                              cfg.get_u64("model.seed", 1));

  TrainConfig tc;
  tc.epochs = cfg.get_u64("train.epochs", 10);
  tc.batch_size = cfg.get_u64("train.batch", 64);
  tc.learning_rate = cfg.get_num("train.lr", arch == "cnn_cifar" ? 0.005 : 0.01);
  tc.momentum = cfg.get_num("train.momentum", 0.9);
  tc.seed = cfg.get_u64("train.seed", 1);
  tc.verbose = true;
  auto history = train(net, train_set, tc);

  std::string model_path = run.path("model", ".wnam");
  save_model(net, model_path);
  run.add(model_path);

  std::ostringstream hist;
  hist << "epoch,loss,accuracy\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    hist << e + 1 << "," << history[e].loss << "," << history[e].accuracy << "\n";
  }
  std::string hist_path = run.path("history", ".csv");
  write_text_file(hist_path, hist.str());
  run.add(hist_path);

  run.stat("arch", arch);
  run.stat("train_final_loss", history.back().loss);
  run.stat("train_final_accuracy", history.back().accuracy);
  if (cfg.has("dataset.test_images") || cfg.get("dataset.name", "") == "synth" ||
      cfg.has("dataset.cifar_test_batches")) {
    Dataset test_set = load_dataset(cfg, false);
    EvalResult ev = evaluate(net, test_set);
    run.stat("test_accuracy", ev.accuracy);
    std::string conf_path = run.path("confusion", ".csv");
    write_confusion_csv(conf_path, ev.confusion);
    run.add(conf_path);
    std::printf("test accuracy %.4f\n", ev.accuracy);
  }
  run.flush_stats();
  return 0;
}

struct ProbeFlags {
  std::string noise;
  std::uint64_t n = 0;
  long long seed = -1;
};

int cmd_probe(const CommonFlags& cf, const std::string& model_flag, const ProbeFlags& pf) {
  ExperimentConfig cfg = resolve_config(cf);
  if (!pf.noise.empty()) cfg.set("noise.source", pf.noise);
  if (pf.n) cfg.set("noise.n", std::to_string(pf.n));
  if (pf.seed >= 0) cfg.set("noise.seed", std::to_string(pf.seed));
  RunDir run = open_run(cfg, cf);
  std::string model_path = model_flag;
  if (model_path.empty()) model_path = cfg.get("model.path", "");
  if (model_path.empty()) model_path = run.dir() + "/model-" + run.hash() + ".wnam";
  Network net = require_model(cfg, run, model_flag);
  {
    std::string bytes = read_file_bytes(model_path);
    char crcbuf[16];
    std::snprintf(crcbuf, sizeof(crcbuf), "%08x", crc32(bytes.data(), bytes.size()));
    run.stat("model_crc32", std::string(crcbuf));
  }
  StimulusStream stream = make_stream(cfg, net.input_shape(), &run);

  CollectOptions opts;
  opts.batch = cfg.get_u64("probe.batch", 256);
  ClassAccumulator acc = collect(net, stream, 0, stream.count, opts);

  std::string acc_path = run.path("accum", ".wnac");
  acc.save(acc_path);
  run.add(acc_path);

  int dom = dominant_class(acc);
  double share = static_cast<double>(acc.response_count(dom)) /
                 static_cast<double>(std::max<std::uint64_t>(1, acc.total()));
  run.stat("probe_n", static_cast<double>(acc.total()));
  run.stat("probe_source", to_string(stream.source));
  run.stat("dominant_class", static_cast<double>(dom));
  run.stat("dominant_share", share);
  run.flush_stats();
  std::printf("probed %llu stimuli; dominant class %d holds %.1f%%\n",
              static_cast<unsigned long long>(acc.total()), dom, 100.0 * share);
  return 0;
}

int cmd_bias_maps(const CommonFlags& cf, const std::string& accum_flag) {
  ExperimentConfig cfg = resolve_config(cf);
  RunDir run = open_run(cfg, cf);
  std::string acc_path = accum_flag.empty() ? run.dir() + "/accum-" + run.hash() + ".wnac"
                                            : accum_flag;
  if (!fs::exists(acc_path)) throw IoError("accumulator not found: " + acc_path);
  ClassAccumulator acc = ClassAccumulator::load(acc_path);

  BiasMaps maps = bias_maps(acc);
  maps.meta["seed"] = cfg.get("noise.seed", "7");
  maps.meta["source"] = cfg.get("noise.source", "white_uniform");
  maps.meta["config"] = run.hash();
  // Model provenance recorded by the probe step, when present.
  std::string stats_path = run.dir() + "/stats-" + run.hash() + ".json";
  if (fs::exists(stats_path)) {
    auto stats = nlohmann::json::parse(read_text_file(stats_path));
    if (stats.contains("model_crc32")) {
      maps.meta["model_crc32"] = stats["model_crc32"].get<std::string>();
    }
  }
  if (cfg.get_bool("maps.subtract_mean", false)) maps = maps.mean_subtracted();

  std::string stem = "maps-" + run.hash();
  write_bias_maps(maps, run.dir(), stem);
  for (std::size_t c = 0; c < maps.num_classes(); ++c) {
    run.add(run.dir() + "/" + stem + "-class" + std::to_string(c) + ".pgm");
    run.add(run.dir() + "/" + stem + "-class" + std::to_string(c) + ".f32");
  }
  run.add(run.dir() + "/" + stem + "-meta.json");
  run.stat("maps_classes", static_cast<double>(maps.num_classes()));
  run.flush_stats();
  return 0;
}

BiasMaps load_maps(const ExperimentConfig& cfg, RunDir& run, const std::string& maps_flag) {
  (void)cfg;
  std::string dir = run.dir();
  std::string stem = "maps-" + run.hash();
  if (!maps_flag.empty()) {
    fs::path p(maps_flag);
    dir = p.parent_path().string();
    stem = p.filename().string();
    if (dir.empty()) dir = ".";
  }
  return read_bias_maps(dir, stem);
}

int cmd_template_eval(const CommonFlags& cf, const std::string& maps_flag,
                      const std::string& templates, const std::string& model_flag) {
  ExperimentConfig cfg = resolve_config(cf);
  RunDir run = open_run(cfg, cf);
  Dataset test_set = load_dataset(cfg, false);

  BiasMaps maps;
  if (templates == "bias") {
    maps = load_maps(cfg, run, maps_flag);
  } else if (templates == "mean_images") {
    maps = mean_image_templates(load_dataset(cfg, true));
  } else if (templates == "weight_rows") {
    maps = weight_row_templates(require_model(cfg, run, model_flag));
  } else {
    throw ConfigError("unknown template source: " + templates);
  }

  TemplateOptions topts;
  topts.center = cfg.get_bool("maps.center", false);
  topts.cosine = cfg.get_bool("maps.cosine", false);
  EvalResult ev = template_eval(maps, test_set, topts);

  std::string conf_path = run.path("template-confusion-" + templates, ".csv");
  write_confusion_csv(conf_path, ev.confusion);
  run.add(conf_path);
  run.stat("template_accuracy_" + templates, ev.accuracy);
  run.flush_stats();
  std::printf("template accuracy (%s): %.4f\n", templates.c_str(), ev.accuracy);
  return 0;
}

int cmd_sta(const CommonFlags& cf, const std::string& model_flag) {
  ExperimentConfig cfg = resolve_config(cf);
  RunDir run = open_run(cfg, cf);
  Network net = require_model(cfg, run, model_flag);

  std::string layer = cfg.get("sta.layer", "conv1");
  UnitStaOptions opts;
  opts.n = cfg.get_u64("sta.n", 100000);
  opts.seed = cfg.get_u64("sta.seed", 19);
  opts.sigma = cfg.get_num("sta.sigma", 0.2);
  opts.whiten = cfg.get_bool("sta.whiten", true);
  opts.full_image = cfg.get_bool("sta.full_image", false);

  std::vector<UnitAddress> units = center_units(net, layer);
  if (cfg.has("sta.units")) {
    // comma list of map indices
    units.clear();
    for (double v : cfg.get_num_list("sta.units", {})) {
      UnitAddress u;
      u.layer = layer;
      u.map = static_cast<std::size_t>(v);
      units.push_back(u);
    }
  }
  auto results = unit_sta_filters(net, units, opts);

  // Tiled sheet: one row of filters per 16 units.
  std::size_t dead = 0;
  std::ostringstream csv;
  csv << "unit,map,row,col,n_sp,dead\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const StaResult& r = results[i];
    if (r.dead) dead++;
    csv << i << "," << r.unit.map << "," << r.unit.row << "," << r.unit.col << "," << r.n_sp
        << "," << (r.dead ? 1 : 0) << "\n";
    std::string base = run.path("sta-" + layer + "-m" + std::to_string(r.unit.map), "");
    write_f32_raw(base + ".f32", r.mu);
    write_pgm(base + ".pgm", r.mu.ndim() == 3 ? r.mu : r.mu);
    run.add(base + ".f32");
    run.add(base + ".pgm");
    if (r.whitened) {
      write_f32_raw(base + "-whitened.f32",
                    r.whitened->reshaped(r.mu.shape()));
      run.add(base + "-whitened.f32");
    }
  }
  // Tiled sheet: units left-to-right, 8 per row, 1px separators.
  if (!results.empty()) {
    const Tensor& first = results[0].mu;
    std::size_t fh = first.dim(1), fw = first.dim(2);
    std::size_t cols = std::min<std::size_t>(8, results.size());
    std::size_t rows = (results.size() + cols - 1) / cols;
    Tensor sheet({rows * (fh + 1) - 1, cols * (fw + 1) - 1});
    for (std::size_t u = 0; u < results.size(); ++u) {
      const Tensor& m = results[u].mu;
      float lo = m.min(), hi = m.max();
      float inv = hi > lo ? 1.0f / (hi - lo) : 0.0f;
      std::size_t r0 = (u / cols) * (fh + 1);
      std::size_t c0 = (u % cols) * (fw + 1);
      for (std::size_t r = 0; r < fh; ++r) {
        for (std::size_t c = 0; c < fw; ++c) {
          float v = 0.0f;
          for (std::size_t ch = 0; ch < m.dim(0); ++ch) {
            v += (m.at3(ch, r, c) - lo) * inv / static_cast<float>(m.dim(0));
          }
          sheet.at2(r0 + r, c0 + c) = v;
        }
      }
    }
    std::string sheet_path = run.path("sta-" + layer + "-sheet", ".pgm");
    write_pgm(sheet_path, sheet);
    run.add(sheet_path);
  }

  std::string csv_path = run.path("sta-" + layer + "-units", ".csv");
  write_text_file(csv_path, csv.str());
  run.add(csv_path);
  run.stat("sta_layer", layer);
  run.stat("sta_dead_units", static_cast<double>(dead));
  run.flush_stats();
  std::printf("sta over %zu units of %s (%zu dead)\n", results.size(), layer.c_str(), dead);
  return 0;
}

int cmd_stc(const CommonFlags& cf, const std::string& model_flag) {
  ExperimentConfig cfg = resolve_config(cf);
  RunDir run = open_run(cfg, cf);
  Network net = require_model(cfg, run, model_flag);

  std::string layer = cfg.get("sta.layer", "conv1");
  std::size_t map = 0;
  if (cfg.has("sta.units")) map = static_cast<std::size_t>(cfg.get_num_list("sta.units", {0})[0]);
  std::size_t n = cfg.get_u64("sta.n", 20000);
  std::uint64_t seed = cfg.get_u64("sta.seed", 19);
  double sigma = cfg.get_num("sta.sigma", 0.2);

  // RF window geometry for the centered unit of the chosen map.
  UnitAddress unit;
  unit.layer = layer;
  unit.map = map;
  UnitStaOptions uopts;
  uopts.n = n;
  uopts.seed = seed;
  uopts.sigma = sigma;
  uopts.whiten = false;
  auto sta_res = unit_sta_filters(net, {unit}, uopts);
  if (sta_res[0].dead) throw NoSpikes("stc: unit never responded");
  const StaResult& base = sta_res[0];

  Network::RfInfo rf = net.receptive_field(layer);
  Shape in_shape = net.input_shape();
  const std::size_t c_in = in_shape[0], h = in_shape[1], w = in_shape[2];
  const Shape hshape = net.hook_shape(layer);
  long row0 = static_cast<long>(base.unit.row) * static_cast<long>(rf.jump) + rf.offset;
  long col0 = static_cast<long>(base.unit.col) * static_cast<long>(rf.jump) + rf.offset;

  StimulusFn stim_at = [&](std::size_t i) {
    RandomStream rs(seed, i);
    Tensor window({c_in, rf.size, rf.size});
    for (std::size_t j = 0; j < window.numel(); ++j) {
      window[j] = static_cast<float>(std::clamp(0.5 + sigma * rs.next_gaussian(), 0.0, 1.0));
    }
    return window;
  };
  ResponseFn resp = [&](const Tensor& window) {
    Tensor img({1, c_in, h, w});
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = 0.5f;
    for (std::size_t c = 0; c < c_in; ++c) {
      for (std::size_t r = 0; r < rf.size; ++r) {
        for (std::size_t cc = 0; cc < rf.size; ++cc) {
          long ir = row0 + static_cast<long>(r);
          long ic = col0 + static_cast<long>(cc);
          if (ir < 0 || ir >= static_cast<long>(h) || ic < 0 || ic >= static_cast<long>(w)) continue;
          img[((c * h) + static_cast<std::size_t>(ir)) * w + static_cast<std::size_t>(ic)] =
              window[(c * rf.size + r) * rf.size + cc];
        }
      }
    }
    ForwardOptions fo;
    fo.trace_layers = {layer};
    fo.stop_at_trace = true;
    fo.threads = 1;
    ForwardTrace trace;
    net.forward(img, fo, &trace);
    const Tensor* acts = trace.find(layer);
    double y = acts->data()[unit.map * hshape[1] * hshape[2] +
                            static_cast<std::size_t>(base.unit.row) * hshape[2] +
                            static_cast<std::size_t>(base.unit.col)];
    return std::max(y, 0.0);
  };

  StcResult stc_res = stc(stim_at, resp, base.mu, n);

  std::ostringstream spectra;
  spectra << "rank,eigenvalue\n";
  for (std::size_t i = 0; i < stc_res.eigenvalues.size(); ++i) {
    spectra << i << "," << stc_res.eigenvalues[i] << "\n";
  }
  std::string spath = run.path("stc-" + layer + "-m" + std::to_string(map) + "-spectrum", ".csv");
  write_text_file(spath, spectra.str());
  run.add(spath);
  std::string lpath = run.path("stc-" + layer + "-m" + std::to_string(map) + "-lambda", ".f32");
  write_f32_raw(lpath, stc_res.lambda);
  run.add(lpath);
  run.stat("stc_top_eigenvalue", stc_res.eigenvalues.front());
  run.flush_stats();
  return 0;
}

int cmd_attack(const CommonFlags& cf, const std::string& model_flag, const std::string& maps_flag) {
  ExperimentConfig cfg = resolve_config(cf);
  RunDir run = open_run(cfg, cf);
  Network net = require_model(cfg, run, model_flag);
  Dataset test_set = load_dataset(cfg, false);

  BiasMaps maps = cfg.get_bool("attack.use_mean_images", false)
                      ? mean_image_templates(load_dataset(cfg, true))
                      : load_maps(cfg, run, maps_flag);

  StimulusStream stream = make_stream(cfg, net.input_shape(), &run);
  AttackOptions aopts;
  aopts.n_noise = cfg.get_u64("attack.n_noise", 2000);
  aopts.n_signal = cfg.get_u64("attack.n_signal", 2000);
  aopts.seed = cfg.get_u64("attack.seed", 23);
  aopts.exclude_own_class = cfg.get_bool("attack.exclude_own_class", false);
  int target = static_cast<int>(cfg.get_num("attack.target", -1));
  std::vector<double> grid = grid_from(cfg, "attack.gamma_grid");

  AttackReport rep = bias_attack(predictor(net), maps, &test_set, &stream, target, grid, aopts);

  std::ostringstream csv;
  csv << "gamma,noise_rate,signal_rate,noise_l2,signal_l2\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    csv << grid[i] << "," << rep.noise_rate[i] << "," << rep.signal_rate[i] << ","
        << rep.noise_perturb_l2[i] << "," << rep.signal_perturb_l2[i] << "\n";
  }
  std::string path = run.path("attack", ".csv");
  write_text_file(path, csv.str());
  run.add(path);
  run.stat("attack_noise_rate_mid", rep.noise_rate[grid.size() / 2]);
  run.stat("attack_signal_rate_mid", rep.signal_rate[grid.size() / 2]);
  run.flush_stats();
  return 0;
}

int cmd_poison(const CommonFlags& cf) {
  ExperimentConfig cfg = resolve_config(cf);
  RunDir run = open_run(cfg, cf);
  Dataset train_set = load_dataset(cfg, true);

  PatchSpec patch;
  patch.shape = patch_shape_from_string(cfg.get("poison.shape", "x3"));
  patch.corner = corner_from_string(cfg.get("poison.corner", "top_left"));
  patch.value = static_cast<float>(cfg.get_num("poison.value", 1.0));
  patch.additive = cfg.get_bool("poison.additive", false);
  patch.source_class = static_cast<int>(cfg.get_num("poison.source_class", 0));
  patch.target_class = static_cast<int>(cfg.get_num("poison.target_class", 1));
  patch.fraction = cfg.get_num("poison.fraction", 0.5);

  Dataset poisoned = poison(train_set, patch, cfg.get_u64("poison.seed", 5));

  std::size_t relabeled = 0;
  for (std::size_t i = 0; i < poisoned.size(); ++i) {
    if (poisoned.labels[i] != train_set.labels[i]) relabeled++;
  }

  std::string ipath = run.path("poisoned-images", ".idx");
  std::string lpath = run.path("poisoned-labels", ".idx");
  save_idx(poisoned, ipath, lpath);
  run.add(ipath);
  run.add(lpath);
  run.stat("poisoned_count", static_cast<double>(relabeled));
  run.flush_stats();
  std::printf("poisoned %zu images (%s -> %d)\n", relabeled,
              std::to_string(patch.source_class).c_str(), patch.target_class);
  return 0;
}

int cmd_detect(const CommonFlags& cf, const std::string& maps_flag) {
  ExperimentConfig cfg = resolve_config(cf);
  RunDir run = open_run(cfg, cf);
  BiasMaps maps = load_maps(cfg, run, maps_flag);

  std::uint64_t n = 0;
  for (auto c : maps.counts) n += c;
  if (n < 100000) {
    std::fprintf(stderr, "warning: maps built from %llu stimuli; detection wants >= 1e5\n",
                 static_cast<unsigned long long>(n));
  }

  DetectOptions dopts;
  dopts.window = cfg.get_u64("detect.window", 3);
  dopts.threshold_z = cfg.get_num("detect.threshold_z", 5.0);
  dopts.smooth = cfg.get_u64("detect.smooth", 5);
  DetectionReport rep = detect_patch(maps, dopts);

  std::ostringstream csv;
  csv << "class,max_z,row,col,flagged\n";
  for (std::size_t c = 0; c < rep.max_z.size(); ++c) {
    csv << c << "," << rep.max_z[c] << "," << rep.peak[c].first << "," << rep.peak[c].second
        << "," << (rep.flagged && rep.flagged_class == static_cast<int>(c) ? 1 : 0) << "\n";
  }
  std::string path = run.path("detect-report", ".csv");
  write_text_file(path, csv.str());
  run.add(path);
  for (std::size_t c = 0; c < rep.max_z.size(); ++c) {
    Tensor plane({rep.heatmap.dim(1), rep.heatmap.dim(2)});
    std::size_t hw = plane.numel();
    std::copy(rep.heatmap.data() + c * hw, rep.heatmap.data() + (c + 1) * hw, plane.data());
    std::string hp = run.path("detect-heatmap-class" + std::to_string(c), ".pgm");
    write_pgm(hp, plane);
    run.add(hp);
  }
  run.stat("detect_flagged", rep.flagged ? 1.0 : 0.0);
  if (rep.flagged) {
    run.stat("detect_class", static_cast<double>(rep.flagged_class));
    run.stat("detect_row", static_cast<double>(rep.flagged_row));
    run.stat("detect_col", static_cast<double>(rep.flagged_col));
  }
  run.flush_stats();
  std::printf("flagged=%s\n", rep.flagged ? "true" : "false");
  return 0;
}

int cmd_gradients(const CommonFlags& cf, const std::string& model_flag) {
  ExperimentConfig cfg = resolve_config(cf);
  RunDir run = open_run(cfg, cf);
  Network net = require_model(cfg, run, model_flag);
  Dataset train_set = load_dataset(cfg, true);

  DetectOptions dopts;
  dopts.window = cfg.get_u64("detect.window", 3);
  dopts.threshold_z = cfg.get_num("detect.threshold_z", 5.0);
  dopts.smooth = cfg.get_u64("detect.smooth", 5);
  GradientBaselineReport rep = gradient_baseline(net, train_set, dopts);

  std::ostringstream csv;
  csv << "class,max_z,row,col\n";
  for (std::size_t c = 0; c < rep.detection.max_z.size(); ++c) {
    csv << c << "," << rep.detection.max_z[c] << "," << rep.detection.peak[c].first << ","
        << rep.detection.peak[c].second << "\n";
  }
  std::string path = run.path("gradient-report", ".csv");
  write_text_file(path, csv.str());
  run.add(path);
  std::string gpath = run.path("gradients", ".f32");
  write_f32_raw(gpath, rep.gradients);
  run.add(gpath);
  run.stat("gradient_flagged", rep.detection.flagged ? 1.0 : 0.0);
  run.flush_stats();
  return 0;
}

int cmd_microstim(const CommonFlags& cf, const std::string& model_flag) {
  ExperimentConfig cfg = resolve_config(cf);
  RunDir run = open_run(cfg, cf);
  Network net = require_model(cfg, run, model_flag);
  Dataset test_set = load_dataset(cfg, false);
  StimulusStream stream = make_stream(cfg, net.input_shape(), &run);

  PsychometricOptions popts;
  popts.n_trials = cfg.get_u64("microstim.trials", 1000);
  popts.seed = cfg.get_u64("microstim.seed", 31);

  StimulationConfig stim;
  bool stimulated = cfg.has("stim.layer") && cfg.get_num("stim.k", 0.0) != 0.0;
  if (stimulated) {
    stim.layer_name = cfg.get("stim.layer", "fc");
    stim.k = cfg.get_num("stim.k", 0.0);
    stim.lambda = cfg.get_num("stim.lambda", default_stim_lambda(net, stim.layer_name));
    stim.mode = cfg.get("stim.mode", "per_stimulus") == "batch_mean"
                    ? StimulationConfig::Mode::BatchMean
                    : StimulationConfig::Mode::PerStimulus;
    popts.stim = &stim;
  }

  std::vector<double> grid = grid_from(cfg, "microstim.grid");
  PsychometricCurve curve = psychometric(net, test_set, stream, grid, popts);

  std::string path = run.path(stimulated ? "psychometric-stim" : "psychometric", ".csv");
  write_text_file(path, curve.to_csv());
  run.add(path);
  run.stat(stimulated ? "psychometric_stim_mid" : "psychometric_mid",
           curve.mean_accuracy(grid.size() / 2));
  run.flush_stats();
  return 0;
}

int cmd_inject(const CommonFlags& cf, const std::string& model_flag) {
  ExperimentConfig cfg = resolve_config(cf);
  RunDir run = open_run(cfg, cf);
  Network net = require_model(cfg, run, model_flag);
  Dataset test_set = load_dataset(cfg, false);
  StimulusStream stream = make_stream(cfg, net.input_shape(), &run);

  std::string layer = cfg.get("inject.layer", "fc");
  ClassActivationStats stats =
      mean_layer_activation(net, stream, std::min<std::size_t>(stream.count, 50000), layer);

  InjectionSweepOptions iopts;
  iopts.max_images = cfg.get_u64("inject.max_images", 1000);
  std::vector<double> grid = grid_from(cfg, "inject.grid");
  InjectionSweep sweep = injection_sweep(net, stats.means, test_set, layer, grid, iopts);

  std::string path = run.path("inject-" + layer, ".csv");
  write_text_file(path, sweep.to_csv());
  run.add(path);
  run.stat("inject_layer", layer);
  run.flush_stats();
  return 0;
}

int cmd_gabor_fit(const CommonFlags& cf) {
  ExperimentConfig cfg = resolve_config(cf);
  RunDir run = open_run(cfg, cf);
  Dataset train_set = load_dataset(cfg, true);

  std::vector<double> default_scales =
      train_set.image_shape()[0] == 3 ? std::vector<double>{2, 4, 7, 11}
                                      : std::vector<double>{2, 4, 10};
  std::vector<double> scales = cfg.get_num_list("gabor.scales", default_scales);
  GaborBank bank = build_gabor_bank(train_set.image_shape()[1], train_set.image_shape()[2], scales);

  GaborFitOptions gopts;
  gopts.alpha = cfg.get_num("gabor.alpha", 1.0);
  gopts.k_components = cfg.get_u64("gabor.components", train_set.image_shape()[0] == 3 ? 600 : 250);
  GaborPcaSampler sampler = fit_gabor_pca(train_set, bank, gopts);

  std::string path = run.path("sampler", ".wngs");
  save_sampler(sampler, path);
  run.add(path);
  auto ev = sampler.explained_variance();
  for (std::size_t c = 0; c < ev.size(); ++c) {
    run.stat("gabor_ev_channel" + std::to_string(c), ev[c]);
    std::printf("channel %zu: %zu wavelets, %zu PCs explain %.4f\n", c, bank.count(),
                gopts.k_components, ev[c]);
  }
  run.flush_stats();
  return 0;
}

int cmd_report(const std::string& run_dir, const std::string& csv_out) {
  ReportResult res = report_run(run_dir);
  std::fputs(res.summary.c_str(), stdout);
  if (!csv_out.empty()) write_text_file(csv_out, res.index_csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"white-noise probing toolkit for small image classifiers"};
  app.require_subcommand(1);

  CommonFlags cf;
  std::string model_flag, maps_flag, accum_flag, templates = "bias";
  std::string report_dir, report_csv;

  auto* train_cmd = app.add_subcommand("train", "train a classifier from config");
  add_common(train_cmd, cf);

  ProbeFlags pf;
  auto* probe_cmd = app.add_subcommand("probe", "classify a noise stream and accumulate");
  add_common(probe_cmd, cf);
  probe_cmd->add_option("--model", model_flag, "model file (.wnam)");
  probe_cmd->add_option("--noise", pf.noise, "noise source (white|gaussian|gabor_pca)");
  probe_cmd->add_option("--n", pf.n, "stimulus count");
  probe_cmd->add_option("--seed", pf.seed, "stream seed");

  auto* maps_cmd = app.add_subcommand("bias-maps", "render bias maps from an accumulator");
  add_common(maps_cmd, cf);
  maps_cmd->add_option("--accum", accum_flag, "accumulator file (.wnac)");

  auto* teval_cmd = app.add_subcommand("template-eval", "template-matching eval on the test set");
  add_common(teval_cmd, cf);
  teval_cmd->add_option("--maps", maps_flag, "maps dir/stem");
  teval_cmd->add_option("--templates", templates, "bias | mean_images | weight_rows");
  teval_cmd->add_option("--model", model_flag, "model file (for weight_rows)");

  auto* sta_cmd = app.add_subcommand("sta", "STA filters for conv units");
  add_common(sta_cmd, cf);
  sta_cmd->add_option("--model", model_flag, "model file (.wnam)");

  auto* stc_cmd = app.add_subcommand("stc", "STC spectrum for one conv unit");
  add_common(stc_cmd, cf);
  stc_cmd->add_option("--model", model_flag, "model file (.wnam)");

  auto* attack_cmd = app.add_subcommand("attack", "bias-map mixing attack curves");
  add_common(attack_cmd, cf);
  attack_cmd->add_option("--model", model_flag, "model file (.wnam)");
  attack_cmd->add_option("--maps", maps_flag, "maps dir/stem");

  auto* poison_cmd = app.add_subcommand("poison", "stamp a backdoor patch into a dataset");
  add_common(poison_cmd, cf);

  auto* detect_cmd = app.add_subcommand("detect", "detect patch anomalies in bias maps");
  add_common(detect_cmd, cf);
  detect_cmd->add_option("--maps", maps_flag, "maps dir/stem");

  auto* grad_cmd = app.add_subcommand("gradients", "average input-gradient baseline");
  add_common(grad_cmd, cf);
  grad_cmd->add_option("--model", model_flag, "model file (.wnam)");

  auto* micro_cmd = app.add_subcommand("microstim", "psychometric sweep with optional stimulation");
  add_common(micro_cmd, cf);
  micro_cmd->add_option("--model", model_flag, "model file (.wnam)");

  auto* inject_cmd = app.add_subcommand("inject", "activation-injection sweep");
  add_common(inject_cmd, cf);
  inject_cmd->add_option("--model", model_flag, "model file (.wnam)");

  auto* gabor_cmd = app.add_subcommand("gabor-fit", "fit the Gabor-PCA noise sampler");
  add_common(gabor_cmd, cf);

  auto* report_cmd = app.add_subcommand("report", "verify + summarize a run directory");
  report_cmd->add_option("dir", report_dir, "run directory")->required();
  report_cmd->add_option("--csv", report_csv, "write the artifact index CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(cf);
    if (probe_cmd->parsed()) return cmd_probe(cf, model_flag, pf);
    if (maps_cmd->parsed()) return cmd_bias_maps(cf, accum_flag);
    if (teval_cmd->parsed()) return cmd_template_eval(cf, maps_flag, templates, model_flag);
    if (sta_cmd->parsed()) return cmd_sta(cf, model_flag);
    if (stc_cmd->parsed()) return cmd_stc(cf, model_flag);
    if (attack_cmd->parsed()) return cmd_attack(cf, model_flag, maps_flag);
    if (poison_cmd->parsed()) return cmd_poison(cf);
    if (detect_cmd->parsed()) return cmd_detect(cf, maps_flag);
    if (grad_cmd->parsed()) return cmd_gradients(cf, model_flag);
    if (micro_cmd->parsed()) return cmd_microstim(cf, model_flag);
    if (inject_cmd->parsed()) return cmd_inject(cf, model_flag);
    if (gabor_cmd->parsed()) return cmd_gabor_fit(cf);
    if (report_cmd->parsed()) return cmd_report(report_dir, report_csv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
