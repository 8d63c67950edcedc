#include "noisebench/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "noisebench/random.hpp"

namespace noisebench {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  in.seekg(0, std::ios::end);
  std::streamoff len = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
  if (len > 0) in.read(reinterpret_cast<char*>(buf.data()), len);
  if (!in) throw IoError("short read on " + path);
  return buf;
}

std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  std::uint8_t b[4] = {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
                       static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

}  // namespace

Tensor Dataset::image(std::size_t i) const {
  Shape s = image_shape();
  std::size_t px = shape_numel(s);
  Tensor out(s);
  std::memcpy(out.data(), images.data() + i * px, px * sizeof(float));
  return out;
}

Dataset Dataset::filter_classes(const std::vector<int>& keep) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < size(); ++i) {
    if (std::find(keep.begin(), keep.end(), labels[i]) != keep.end()) idx.push_back(i);
  }
  Shape s = image_shape();
  std::size_t px = shape_numel(s);
  Dataset out;
  out.images = Tensor({idx.size(), s[0], s[1], s[2]});
  out.labels.reserve(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    std::memcpy(out.images.data() + j * px, images.data() + idx[j] * px, px * sizeof(float));
    // Remap to the position within `keep` so binary subsets become {0,1}.
    auto it = std::find(keep.begin(), keep.end(), labels[idx[j]]);
    out.labels.push_back(static_cast<int>(it - keep.begin()));
  }
  out.num_classes = keep.size();
  out.name = name + "-subset";
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  n = std::min(n, size());
  Shape s = image_shape();
  std::size_t px = shape_numel(s);
  Dataset out;
  out.images = Tensor({n, s[0], s[1], s[2]});
  std::memcpy(out.images.data(), images.data(), n * px * sizeof(float));
  out.labels.assign(labels.begin(), labels.begin() + n);
  out.num_classes = num_classes;
  out.name = name;
  return out;
}

void Dataset::validate() const {
  if (images.ndim() != 4) throw ShapeError("Dataset: images must be N x C x H x W");
  if (images.dim(0) != labels.size()) {
    throw FormatError("Dataset: " + std::to_string(images.dim(0)) + " images vs " +
                      std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw FormatError("Dataset: label " + std::to_string(l) + " out of range");
    }
  }
  for (std::size_t i = 0; i < images.numel(); ++i) {
    float v = images[i];
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw FormatError("Dataset: pixel outside [0,1]");
    }
  }
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t num_classes, const std::string& name) {
  auto ib = read_file(images_path);
  auto lb = read_file(labels_path);
  if (ib.size() < 16) throw IoError("truncated IDX image file " + images_path);
  if (lb.size() < 8) throw IoError("truncated IDX label file " + labels_path);
  if (be32(ib.data()) != kImagesMagic) {
    throw FormatError("bad image magic in " + images_path);
  }
  if (be32(lb.data()) != kLabelsMagic) {
    throw FormatError("bad label magic in " + labels_path);
  }
  std::size_t n = be32(ib.data() + 4);
  std::size_t h = be32(ib.data() + 8);
  std::size_t w = be32(ib.data() + 12);
  std::size_t nl = be32(lb.data() + 4);
  if (n != nl) {
    throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                      std::to_string(nl) + " labels");
  }
  if (ib.size() != 16 + n * h * w) throw IoError("truncated IDX image payload in " + images_path);
  if (lb.size() != 8 + n) throw IoError("truncated IDX label payload in " + labels_path);

  Dataset ds;
  ds.images = Tensor({n, 1, h, w});
  for (std::size_t i = 0; i < n * h * w; ++i) {
    ds.images[i] = static_cast<float>(ib[16 + i]) / 255.0f;
  }
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint8_t l = lb[8 + i];
    if (l >= num_classes) {
      throw FormatError("IDX label " + std::to_string(l) + " >= K in " + labels_path);
    }
    ds.labels[i] = l;
  }
  ds.num_classes = num_classes;
  ds.name = name;
  return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
  if (ds.images.dim(1) != 1) throw FormatError("save_idx: single-channel datasets only");
  std::size_t n = ds.size(), h = ds.images.dim(2), w = ds.images.dim(3);
  {
    std::ofstream out(images_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + images_path);
    put_be32(out, kImagesMagic);
    put_be32(out, static_cast<std::uint32_t>(n));
    put_be32(out, static_cast<std::uint32_t>(h));
    put_be32(out, static_cast<std::uint32_t>(w));
    std::vector<std::uint8_t> bytes(n * h * w);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      bytes[i] = static_cast<std::uint8_t>(std::lround(ds.images[i] * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write on " + images_path);
  }
  {
    std::ofstream out(labels_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + labels_path);
    put_be32(out, kLabelsMagic);
    put_be32(out, static_cast<std::uint32_t>(n));
    for (int l : ds.labels) {
      std::uint8_t b = static_cast<std::uint8_t>(l);
      out.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!out) throw IoError("short write on " + labels_path);
  }
}

Dataset load_cifar10(const std::vector<std::string>& batch_paths, const std::string& name) {
  constexpr std::size_t kRecord = 3073;  // 1 label byte + 3 x 1024 pixels
  std::vector<std::vector<std::uint8_t>> batches;
  std::size_t total = 0;
  for (const auto& p : batch_paths) {
    auto buf = read_file(p);
    if (buf.size() % kRecord != 0) {
      throw FormatError("CIFAR batch " + p + " length " + std::to_string(buf.size()) +
                        " is not a multiple of 3073");
    }
    total += buf.size() / kRecord;
    batches.push_back(std::move(buf));
  }
  Dataset ds;
  ds.images = Tensor({total, 3, 32, 32});
  ds.labels.resize(total);
  std::size_t rec = 0;
  for (const auto& buf : batches) {
    for (std::size_t off = 0; off < buf.size(); off += kRecord, ++rec) {
      std::uint8_t label = buf[off];
      if (label > 9) throw FormatError("CIFAR label byte " + std::to_string(label) + " > 9");
      ds.labels[rec] = label;
      float* dst = ds.images.data() + rec * 3072;
      for (std::size_t i = 0; i < 3072; ++i) {
        dst[i] = static_cast<float>(buf[off + 1 + i]) / 255.0f;
      }
    }
  }
  ds.num_classes = 10;
  ds.name = name;
  return ds;
}

Dataset synth_two_template(std::size_t h, std::size_t w, std::size_t n_per_class,
                           double noise_sd, std::uint64_t seed) {
  if (h < 4 || w < 4) throw ShapeError("synth_two_template: h, w must be >= 4");
  Tensor vert({1, h, w});
  Tensor horiz({1, h, w});
  std::size_t c0 = w / 2, r0 = h / 2;
  for (std::size_t r = 0; r < h; ++r) vert.at3(0, r, c0) = 1.0f;
  for (std::size_t c = 0; c < w; ++c) horiz.at3(0, r0, c) = 1.0f;

  Dataset ds;
  std::size_t n = 2 * n_per_class;
  ds.images = Tensor({n, 1, h, w});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    int cls = i < n_per_class ? 0 : 1;
    ds.labels[i] = cls;
    const Tensor& tpl = cls == 0 ? vert : horiz;
    RandomStream rs(seed, i);
    float* dst = ds.images.data() + i * h * w;
    for (std::size_t p = 0; p < h * w; ++p) {
      double v = tpl[p] + (noise_sd > 0.0 ? noise_sd * rs.next_gaussian() : 0.0);
      dst[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  ds.num_classes = 2;
  ds.name = "synth-two-template";
  return ds;
}

Dataset synth_glyphs(std::size_t num_classes, std::size_t h, std::size_t w,
                     std::size_t n_per_class, double noise_sd, std::uint64_t seed) {
  if (h < 8 || w < 8) throw ShapeError("synth_glyphs: h, w must be >= 8");
  // Class templates: a bright block whose position/orientation varies by
  // class, so classes are linearly separable but spatially distinct.
  std::vector<Tensor> templates;
  for (std::size_t k = 0; k < num_classes; ++k) {
    Tensor t({1, h, w});
    std::size_t band = std::max<std::size_t>(2, h / 6);
    if (k % 2 == 0) {
      std::size_t row = (k / 2 * h / ((num_classes + 1) / 2)) % (h - band);
      for (std::size_t r = row; r < row + band; ++r)
        for (std::size_t c = 0; c < w; ++c) t.at3(0, r, c) = 0.9f;
    } else {
      std::size_t col = (k / 2 * w / ((num_classes + 1) / 2)) % (w - band);
      for (std::size_t c = col; c < col + band; ++c)
        for (std::size_t r = 0; r < h; ++r) t.at3(0, r, c) = 0.9f;
    }
    templates.push_back(std::move(t));
  }

  Dataset ds;
  std::size_t n = num_classes * n_per_class;
  ds.images = Tensor({n, 1, h, w});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t cls = i / n_per_class;
    ds.labels[i] = static_cast<int>(cls);
    RandomStream rs(seed, i);
    // +/- 1 px jitter keeps the task nontrivial for template matchers.
    int dr = static_cast<int>(rs.next_below(3)) - 1;
    int dc = static_cast<int>(rs.next_below(3)) - 1;
    const Tensor& tpl = templates[cls];
    float* dst = ds.images.data() + i * h * w;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        int sr = static_cast<int>(r) - dr;
        int sc = static_cast<int>(c) - dc;
        float base = 0.0f;
        if (sr >= 0 && sr < static_cast<int>(h) && sc >= 0 && sc < static_cast<int>(w)) {
          base = tpl.at3(0, static_cast<std::size_t>(sr), static_cast<std::size_t>(sc));
        }
        double v = base + (noise_sd > 0.0 ? noise_sd * rs.next_gaussian() : 0.0);
        dst[r * w + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  ds.num_classes = num_classes;
  ds.name = "synth-glyphs";
  return ds;
}

Tensor class_mean_images(const Dataset& ds) {
  Shape s = ds.image_shape();
  std::size_t px = shape_numel(s);
  Tensor means({ds.num_classes, s[0], s[1], s[2]});
  std::vector<double> acc(ds.num_classes * px, 0.0);
  std::vector<std::size_t> counts(ds.num_classes, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::size_t cls = static_cast<std::size_t>(ds.labels[i]);
    const float* src = ds.images.data() + i * px;
    double* dst = acc.data() + cls * px;
    for (std::size_t p = 0; p < px; ++p) dst[p] += src[p];
    counts[cls]++;
  }
  for (std::size_t k = 0; k < ds.num_classes; ++k) {
    double inv = counts[k] ? 1.0 / static_cast<double>(counts[k]) : 0.0;
    for (std::size_t p = 0; p < px; ++p) {
      means[k * px + p] = static_cast<float>(acc[k * px + p] * inv);
    }
  }
  return means;
}

}  // namespace noisebench
