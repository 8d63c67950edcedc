#include "noisebench/classim.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>

#include "json.hpp"

#include "noisebench/artifact_io.hpp"
#include "noisebench/errors.hpp"
#include "noisebench/parallel.hpp"
#include "noisebench/random.hpp"

namespace noisebench {

ClassAccumulator::ClassAccumulator(Shape stimulus_shape, std::size_t num_classes)
    : shape_(std::move(stimulus_shape)), num_classes_(num_classes) {}

ClassAccumulator::Cell& ClassAccumulator::cell(int signal, int response) {
  auto& per_response = cells_[signal];
  if (per_response.empty()) per_response.resize(num_classes_);
  return per_response[static_cast<std::size_t>(response)];
}

const ClassAccumulator::Cell* ClassAccumulator::find_cell(int signal, int response) const {
  auto it = cells_.find(signal);
  if (it == cells_.end()) return nullptr;
  return &it->second[static_cast<std::size_t>(response)];
}

void ClassAccumulator::add(int signal, int response, const Tensor& noise, double weight) {
  if (noise.numel() != shape_numel(shape_)) {
    throw ShapeError("accumulator: stimulus shape mismatch");
  }
  if (response < 0 || static_cast<std::size_t>(response) >= num_classes_) {
    throw ShapeError("accumulator: response out of range");
  }
  if (weight < 0.0) throw ShapeError("accumulator: negative weight");
  Cell& c = cell(signal, response);
  if (c.sum.empty()) c.sum.assign(noise.numel(), 0.0);
  // Quantized addends are integers <= 2^20 (and weighted products likewise),
  // so cell sums stay exact and order-free.
  double wq = std::nearbyint(weight * kQuant) / kQuant;
  for (std::size_t i = 0; i < noise.numel(); ++i) {
    c.sum[i] += std::nearbyint(static_cast<double>(noise[i]) * wq * kQuant);
  }
  c.weight += std::nearbyint(weight * kQuant);
  c.count++;
  total_++;
}

void ClassAccumulator::merge(const ClassAccumulator& other) {
  if (other.shape_ != shape_ || other.num_classes_ != num_classes_) {
    throw ShapeError("accumulator merge: incompatible accumulators");
  }
  for (const auto& [signal, per_response] : other.cells_) {
    for (std::size_t r = 0; r < per_response.size(); ++r) {
      const Cell& src = per_response[r];
      if (src.count == 0) continue;
      Cell& dst = cell(signal, static_cast<int>(r));
      if (dst.sum.empty()) dst.sum.assign(src.sum.size(), 0.0);
      for (std::size_t i = 0; i < src.sum.size(); ++i) dst.sum[i] += src.sum[i];
      dst.count += src.count;
      dst.weight += src.weight;
    }
  }
  total_ += other.total_;
}

std::vector<int> ClassAccumulator::signals_seen() const {
  std::vector<int> out;
  for (const auto& [signal, cells] : cells_) {
    (void)cells;
    out.push_back(signal);
  }
  return out;
}

std::uint64_t ClassAccumulator::cell_count(int signal, int response) const {
  const Cell* c = find_cell(signal, response);
  return c ? c->count : 0;
}

std::uint64_t ClassAccumulator::response_count(int response) const {
  std::uint64_t n = 0;
  for (const auto& [signal, per_response] : cells_) {
    (void)signal;
    n += per_response[static_cast<std::size_t>(response)].count;
  }
  return n;
}

Tensor ClassAccumulator::mean_of(const std::vector<const Cell*>& cells) const {
  Tensor out(shape_);
  std::vector<double> acc(out.numel(), 0.0);
  double mass = 0.0;  // quantized weight units
  for (const Cell* c : cells) {
    if (!c || c->count == 0) continue;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += c->sum[i];
    mass += c->weight;
  }
  if (mass == 0.0) return out;  // zero map
  double inv = 1.0 / mass;
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] * inv);
  return out;
}

Tensor ClassAccumulator::cell_mean(int signal, int response) const {
  return mean_of({find_cell(signal, response)});
}

Tensor ClassAccumulator::response_mean(int response) const {
  std::vector<const Cell*> cells;
  for (const auto& [signal, per_response] : cells_) {
    (void)signal;
    cells.push_back(&per_response[static_cast<std::size_t>(response)]);
  }
  return mean_of(cells);
}

Tensor ClassAccumulator::grand_mean() const {
  std::vector<const Cell*> cells;
  for (const auto& [signal, per_response] : cells_) {
    (void)signal;
    for (const auto& c : per_response) cells.push_back(&c);
  }
  return mean_of(cells);
}

namespace {
constexpr char kAccumMagic[4] = {'W', 'N', 'A', 'C'};
constexpr std::uint16_t kAccumVersion = 1;
}  // namespace

void ClassAccumulator::save(const std::string& path) const {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(shape_.size()));
  for (std::size_t d : shape_) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(num_classes_));
  w.u64(total_);
  w.u32(static_cast<std::uint32_t>(cells_.size()));
  for (const auto& [signal, per_response] : cells_) {
    w.u32(static_cast<std::uint32_t>(signal));
    for (const auto& c : per_response) {
      w.u64(c.count);
      w.f64(c.weight);
      w.u64(c.sum.size());
      for (double v : c.sum) w.f64(v);
    }
  }
  write_container(path, kAccumMagic, kAccumVersion, w.data());
}

ClassAccumulator ClassAccumulator::load(const std::string& path) {
  auto payload = read_container(path, kAccumMagic, kAccumVersion);
  ByteReader r(payload.data(), payload.size());
  std::uint32_t nd = r.u32();
  Shape shape(nd);
  for (auto& d : shape) d = r.u32();
  std::size_t k = r.u32();
  ClassAccumulator acc(shape, k);
  acc.total_ = r.u64();
  std::uint32_t n_signals = r.u32();
  for (std::uint32_t s = 0; s < n_signals; ++s) {
    int signal = static_cast<int>(r.u32());
    auto& per_response = acc.cells_[signal];
    per_response.resize(k);
    for (auto& c : per_response) {
      c.count = r.u64();
      c.weight = r.f64();
      std::uint64_t n = r.u64();
      c.sum.resize(n);
      for (auto& v : c.sum) v = r.f64();
    }
  }
  if (!r.done()) throw FormatError("trailing bytes in accumulator " + path);
  return acc;
}

ClassAccumulator collect(const Network& net, const StimulusStream& stream, std::size_t begin,
                         std::size_t end, const CollectOptions& opts) {
  if (stream.shape != net.input_shape()) {
    throw ShapeError("collect: stream shape " + shape_str(stream.shape) +
                     " does not match network input " + shape_str(net.input_shape()));
  }
  if (opts.mix && opts.mix->signals) {
    if (opts.mix->signals->image_shape() != stream.shape) {
      throw ShapeError("collect: signal images do not match stream shape");
    }
  }

  ClassAccumulator result(stream.shape, net.num_classes());
  std::mutex mu;
  const std::size_t px = shape_numel(stream.shape);
  const std::size_t batch_sz = std::max<std::size_t>(1, opts.batch);

  std::vector<std::vector<std::size_t>> members;
  if (opts.mix && opts.mix->signals) {
    const Dataset& sig = *opts.mix->signals;
    members.resize(sig.num_classes);
    for (std::size_t s = 0; s < sig.size(); ++s) {
      members[static_cast<std::size_t>(sig.labels[s])].push_back(s);
    }
    for (const auto& m : members) {
      if (m.empty()) throw ConfigError("collect: a signal class has no exemplars");
    }
  }

  parallel_for(begin, end, [&](std::size_t lo, std::size_t hi) {
    ClassAccumulator local(stream.shape, net.num_classes());
    std::vector<Tensor> noises(batch_sz);
    std::vector<int> signal_class(batch_sz);
    for (std::size_t b0 = lo; b0 < hi; b0 += batch_sz) {
      std::size_t b1 = std::min(hi, b0 + batch_sz);
      std::size_t nb = b1 - b0;
      Tensor batch({nb, stream.shape[0], stream.shape[1], stream.shape[2]});
      for (std::size_t i = 0; i < nb; ++i) {
        noises[i] = stream.at(b0 + i);
        if (opts.mix && opts.mix->signals) {
          const Dataset& sig = *opts.mix->signals;
          RandomStream chooser(opts.mix->seed, b0 + i);
          int cls = static_cast<int>(chooser.next_below(sig.num_classes));
          std::size_t pick = members[cls][chooser.next_below(members[cls].size())];
          signal_class[i] = cls;
          Tensor mixed = mix(sig.image(pick), noises[i], opts.mix->gamma);
          std::memcpy(batch.data() + i * px, mixed.data(), px * sizeof(float));
        } else {
          signal_class[i] = ClassAccumulator::kNoSignal;
          std::memcpy(batch.data() + i * px, noises[i].data(), px * sizeof(float));
        }
      }
      if (opts.confidence_weight) {
        ForwardOptions fo;
        fo.threads = 1;
        Tensor probs = net.forward(batch, fo, nullptr);
        std::size_t k = probs.numel() / nb;
        for (std::size_t i = 0; i < nb; ++i) {
          const float* row = probs.data() + i * k;
          int best = 0;
          for (std::size_t j = 1; j < k; ++j) {
            if (row[j] > row[best]) best = static_cast<int>(j);
          }
          local.add(signal_class[i], best, noises[i], row[best]);
        }
      } else {
        std::vector<int> preds = net.predict(batch, 1);
        for (std::size_t i = 0; i < nb; ++i) {
          local.add(signal_class[i], preds[i], noises[i]);
        }
      }
    }
    std::lock_guard<std::mutex> lk(mu);
    result.merge(local);
  }, opts.threads);

  return result;
}

Tensor binary_classification_image(const ClassAccumulator& acc, int positive_class,
                                   std::vector<std::string>* warnings) {
  if (acc.num_classes() != 2) {
    throw ShapeError("binary_classification_image: accumulator must have 2 classes");
  }
  int pos = positive_class;
  int neg = 1 - pos;
  if (pos != 0 && pos != 1) throw ConfigError("positive_class must be 0 or 1");

  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(msg);
  };

  if (acc.response_count(pos) == 0) {
    throw InsufficientData("no stimuli classified as the positive response");
  }
  if (acc.response_count(neg) == 0) {
    throw InsufficientData("no stimuli classified as the negative response");
  }

  std::vector<int> signals = acc.signals_seen();
  bool tagged = false;
  for (int s : signals) tagged |= s != ClassAccumulator::kNoSignal;

  Tensor out(acc.stimulus_shape());
  if (tagged) {
    // c = (n̄^{1,pos} + n̄^{2,pos}) - (n̄^{1,neg} + n̄^{2,neg})
    for (int s : {neg, pos}) {
      if (acc.cell_count(s, pos) == 0) {
        warn("empty cell: signal " + std::to_string(s) + ", response " + std::to_string(pos));
      }
      if (acc.cell_count(s, neg) == 0) {
        warn("empty cell: signal " + std::to_string(s) + ", response " + std::to_string(neg));
      }
      Tensor a = acc.cell_mean(s, pos);
      Tensor b = acc.cell_mean(s, neg);
      for (std::size_t i = 0; i < out.numel(); ++i) out[i] += a[i] - b[i];
    }
  } else {
    // Noise-only form: n̄^{*pos} - n̄^{*neg}.
    Tensor a = acc.response_mean(pos);
    Tensor b = acc.response_mean(neg);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] - b[i];
  }
  return out;
}

BiasMaps bias_maps(const ClassAccumulator& acc) {
  const Shape& s = acc.stimulus_shape();
  std::size_t px = shape_numel(s);
  BiasMaps maps;
  maps.means = Tensor({acc.num_classes(), s[0], s[1], s[2]});
  maps.counts.resize(acc.num_classes());
  for (std::size_t k = 0; k < acc.num_classes(); ++k) {
    maps.counts[k] = acc.response_count(static_cast<int>(k));
    Tensor m = acc.response_mean(static_cast<int>(k));
    std::memcpy(maps.means.data() + k * px, m.data(), px * sizeof(float));
  }
  maps.meta["source"] = "bias_maps";
  maps.meta["n"] = std::to_string(acc.total());
  return maps;
}

Tensor BiasMaps::class_map(std::size_t k) const {
  Shape s{means.dim(1), means.dim(2), means.dim(3)};
  std::size_t px = shape_numel(s);
  Tensor out(s);
  std::memcpy(out.data(), means.data() + k * px, px * sizeof(float));
  return out;
}

BiasMaps BiasMaps::mean_subtracted() const {
  std::size_t k = num_classes();
  std::size_t px = means.numel() / k;
  std::vector<double> grand(px, 0.0);
  std::uint64_t total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < px; ++i) {
      grand[i] += static_cast<double>(means[c * px + i]) * static_cast<double>(counts[c]);
    }
    total += counts[c];
  }
  BiasMaps out = *this;
  if (total == 0) return out;
  for (std::size_t i = 0; i < px; ++i) grand[i] /= static_cast<double>(total);
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t i = 0; i < px; ++i) {
      out.means[c * px + i] = static_cast<float>(means[c * px + i] - grand[i]);
    }
  }
  out.meta["mean_subtracted"] = "true";
  return out;
}

BiasMaps BiasMaps::from_templates(Tensor templates, std::string source) {
  if (templates.ndim() != 4) throw ShapeError("templates must be K x C x H x W");
  BiasMaps maps;
  maps.counts.assign(templates.dim(0), 1);
  maps.means = std::move(templates);
  maps.meta["source"] = std::move(source);
  return maps;
}

BiasMaps mean_image_templates(const Dataset& ds) {
  BiasMaps maps = BiasMaps::from_templates(class_mean_images(ds), "mean_images");
  std::vector<std::uint64_t> counts(ds.num_classes, 0);
  for (int l : ds.labels) counts[static_cast<std::size_t>(l)]++;
  maps.counts = counts;
  return maps;
}

BiasMaps weight_row_templates(const Network& net) {
  // Columns of the final dense layer reshaped to image templates; only
  // meaningful for architectures whose dense layer sees raw pixels (logreg).
  const Layer* dense = nullptr;
  for (const auto& l : net.layers()) {
    if (l.spec.kind == LayerKind::Dense) dense = &l;
  }
  if (!dense) throw ConfigError("weight_row_templates: no dense layer");
  std::size_t in_n = dense->weights.dim(0);
  std::size_t k = dense->weights.dim(1);
  if (in_n != shape_numel(net.input_shape())) {
    throw ConfigError("weight_row_templates: dense layer does not see raw pixels");
  }
  Tensor t({k, net.input_shape()[0], net.input_shape()[1], net.input_shape()[2]});
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < in_n; ++i) t[c * in_n + i] = dense->weights.at2(i, c);
  }
  BiasMaps maps = BiasMaps::from_templates(std::move(t), "weight_rows");
  return maps;
}

int template_classify(const BiasMaps& maps, const Tensor& image, const TemplateOptions& opts) {
  std::size_t k = maps.num_classes();
  std::size_t px = maps.means.numel() / k;
  if (image.numel() != px) throw ShapeError("template_classify: image shape mismatch");

  int best = -1;
  double best_score = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    if (maps.class_empty(c)) continue;
    const float* map = maps.means.data() + c * px;
    double offset = 0.0;
    if (opts.center) {
      double mean = 0.0;
      for (std::size_t i = 0; i < px; ++i) mean += map[i];
      offset = mean / static_cast<double>(px);
    }
    double score = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < px; ++i) {
      double mv = map[i] - offset;
      score += mv * image[i];
      norm += mv * mv;
    }
    if (opts.cosine) {
      double inorm = 0.0;
      for (std::size_t i = 0; i < px; ++i) inorm += static_cast<double>(image[i]) * image[i];
      double denom = std::sqrt(norm * inorm);
      score = denom > 0.0 ? score / denom : 0.0;
    }
    if (best < 0 || score > best_score) {
      best = static_cast<int>(c);
      best_score = score;
    }
  }
  if (best < 0) throw InsufficientData("template_classify: all classes empty");
  return best;
}

EvalResult template_eval(const BiasMaps& maps, const Dataset& ds, const TemplateOptions& opts,
                         int threads) {
  const std::size_t n = ds.size();
  std::vector<int> preds(n);
  parallel_for(0, n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      preds[i] = template_classify(maps, ds.image(i), opts);
    }
  }, threads);

  EvalResult res;
  res.confusion = ConfusionMatrix(ds.num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    res.confusion.at(static_cast<std::size_t>(ds.labels[i]), static_cast<std::size_t>(preds[i]))++;
  }
  res.accuracy = res.confusion.accuracy();
  return res;
}

void write_bias_maps(const BiasMaps& maps, const std::string& dir, const std::string& stem) {
  nlohmann::json meta;
  meta["classes"] = maps.num_classes();
  meta["shape"] = {maps.means.dim(1), maps.means.dim(2), maps.means.dim(3)};
  meta["counts"] = maps.counts;
  for (const auto& [k, v] : maps.meta) meta["meta"][k] = v;

  std::size_t px = maps.means.numel() / maps.num_classes();
  for (std::size_t c = 0; c < maps.num_classes(); ++c) {
    Tensor m = maps.class_map(c);
    std::string base = dir + "/" + stem + "-class" + std::to_string(c);
    write_pgm(base + ".pgm", m);
    write_f32_raw(base + ".f32", m);
    meta["files"].push_back(stem + "-class" + std::to_string(c) + ".f32");
    meta["scale"].push_back({m.min(), m.max()});
  }
  (void)px;
  write_text_file(dir + "/" + stem + "-meta.json", meta.dump(2) + "\n");
}

BiasMaps read_bias_maps(const std::string& dir, const std::string& stem) {
  nlohmann::json meta = nlohmann::json::parse(read_text_file(dir + "/" + stem + "-meta.json"));
  std::size_t k = meta["classes"];
  Shape s = {meta["shape"][0], meta["shape"][1], meta["shape"][2]};
  BiasMaps maps;
  maps.means = Tensor({k, s[0], s[1], s[2]});
  maps.counts = meta["counts"].get<std::vector<std::uint64_t>>();
  if (meta.contains("meta")) {
    for (auto it = meta["meta"].begin(); it != meta["meta"].end(); ++it) {
      maps.meta[it.key()] = it.value().get<std::string>();
    }
  }
  std::size_t px = shape_numel(s);
  for (std::size_t c = 0; c < k; ++c) {
    Tensor m = read_f32_raw(dir + "/" + stem + "-class" + std::to_string(c) + ".f32", s);
    std::memcpy(maps.means.data() + c * px, m.data(), px * sizeof(float));
  }
  return maps;
}

void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "truth\\pred";
  for (std::size_t j = 0; j < cm.k; ++j) os << "," << j;
  os << "\n";
  for (std::size_t i = 0; i < cm.k; ++i) {
    os << i;
    for (std::size_t j = 0; j < cm.k; ++j) os << "," << cm.at(i, j);
    os << "\n";
  }
  write_text_file(path, os.str());
}

}  // namespace noisebench
