#include <cmath>

#include "noisebench/artifact_io.hpp"
#include "noisebench/errors.hpp"
#include "noisebench/linalg.hpp"
#include "noisebench/noise.hpp"
#include "noisebench/parallel.hpp"
#include "noisebench/random.hpp"

namespace noisebench {

GaborBank build_gabor_bank(std::size_t h, std::size_t w, const std::vector<double>& scales) {
  if (scales.empty()) throw ConfigError("gabor bank: no scales given");
  for (double s : scales) {
    if (s < 1.0 || s > static_cast<double>(std::min(h, w))) {
      throw ConfigError("gabor bank: scale " + std::to_string(s) + " larger than image");
    }
  }

  GaborBank bank;
  bank.height = h;
  bank.width = w;
  bank.scales = scales;

  const double orientations[4] = {0.0, 45.0, 90.0, 135.0};
  const double phases[2] = {0.0, 90.0};

  std::size_t total = 0;
  for (double s : scales) {
    std::size_t grid = static_cast<std::size_t>(std::lround(s));
    total += grid * grid * 4 * 2;
  }
  bank.wavelets = Tensor({total, h, w});
  bank.params.reserve(total);

  std::size_t idx = 0;
  for (double s : scales) {
    std::size_t grid = static_cast<std::size_t>(std::lround(s));
    // wavelength = H / cycles; envelope sigma = 0.4 * wavelength.
    double wavelength = static_cast<double>(h) / s;
    double sigma = 0.4 * wavelength;
    for (std::size_t gr = 0; gr < grid; ++gr) {
      for (std::size_t gc = 0; gc < grid; ++gc) {
        double cy = (static_cast<double>(gr) + 0.5) * static_cast<double>(h) / static_cast<double>(grid);
        double cx = (static_cast<double>(gc) + 0.5) * static_cast<double>(w) / static_cast<double>(grid);
        for (double theta_deg : orientations) {
          double theta = theta_deg * M_PI / 180.0;
          double ct = std::cos(theta), st = std::sin(theta);
          for (double phase_deg : phases) {
            double phase = phase_deg * M_PI / 180.0;
            float* plane = bank.wavelets.data() + idx * h * w;
            for (std::size_t r = 0; r < h; ++r) {
              for (std::size_t c = 0; c < w; ++c) {
                double dy = static_cast<double>(r) - cy;
                double dx = static_cast<double>(c) - cx;
                double xr = dx * ct + dy * st;
                double yr = -dx * st + dy * ct;
                double env = std::exp(-(xr * xr + yr * yr) / (2.0 * sigma * sigma));
                double carrier = std::cos(2.0 * M_PI * xr / wavelength + phase);
                plane[r * w + c] = static_cast<float>(env * carrier);
              }
            }
            GaborParams p;
            p.cycles = s;
            p.grid_row = gr;
            p.grid_col = gc;
            p.orientation_deg = theta_deg;
            p.phase_deg = phase_deg;
            bank.params.push_back(p);
            ++idx;
          }
        }
      }
    }
  }
  bank.wavelets.ensure_finite("gabor bank");
  return bank;
}

std::vector<double> GaborPcaSampler::explained_variance() const {
  std::vector<double> ev;
  for (const auto& m : channel_models) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.explained_variance_ratio.numel(); ++i) {
      s += m.explained_variance_ratio[i];
    }
    ev.push_back(s);
  }
  return ev;
}

namespace {

// Design matrix with wavelet j flattened as column j: pixels x K_w.
Tensor bank_design(const GaborBank& bank) {
  const std::size_t px = bank.height * bank.width;
  const std::size_t kw = bank.count();
  Tensor g({px, kw});
  for (std::size_t j = 0; j < kw; ++j) {
    const float* wav = bank.wavelets.data() + j * px;
    for (std::size_t p = 0; p < px; ++p) g.at2(p, j) = wav[p];
  }
  return g;
}

}  // namespace

GaborPcaSampler fit_gabor_pca(const Dataset& dataset, const GaborBank& bank,
                              const GaborFitOptions& opts) {
  if (dataset.images.dim(2) != bank.height || dataset.images.dim(3) != bank.width) {
    throw ShapeError("fit_gabor_pca: dataset images do not match bank dims");
  }
  const std::size_t n = dataset.size();
  const std::size_t channels = dataset.images.dim(1);
  const std::size_t px = bank.height * bank.width;
  const std::size_t kw = bank.count();

  GaborPcaSampler sampler;
  sampler.bank = bank;
  sampler.channels = channels;

  RidgeSolver solver(bank_design(bank), opts.alpha);

  const std::size_t kBlock = 2048;  // images per ridge solve
  for (std::size_t ch = 0; ch < channels; ++ch) {
    Tensor weights({n, kw});
    for (std::size_t b0 = 0; b0 < n; b0 += kBlock) {
      std::size_t b1 = std::min(n, b0 + kBlock);
      Tensor targets({px, b1 - b0});
      for (std::size_t i = b0; i < b1; ++i) {
        const float* img = dataset.images.data() + (i * channels + ch) * px;
        for (std::size_t p = 0; p < px; ++p) targets.at2(p, i - b0) = img[p];
      }
      Tensor wblock = solver.solve(targets);  // kw x (b1-b0)
      for (std::size_t i = b0; i < b1; ++i) {
        for (std::size_t j = 0; j < kw; ++j) weights.at2(i, j) = wblock.at2(j, i - b0);
      }
    }
    std::size_t k = std::min(opts.k_components, std::min(n, kw));
    sampler.channel_models.push_back(pca_fit(weights, k));
  }
  return sampler;
}

Tensor sample_gabor(const GaborPcaSampler& sampler, std::size_t index, std::uint64_t seed) {
  if (sampler.channel_models.empty()) throw ConfigError("sample_gabor: sampler not fitted");
  const std::size_t h = sampler.bank.height, w = sampler.bank.width;
  const std::size_t px = h * w;
  const std::size_t kw = sampler.bank.count();
  RandomStream rs(seed, index);

  Tensor out({sampler.channels, h, w});
  for (std::size_t ch = 0; ch < sampler.channels; ++ch) {
    const PcaModel& model = sampler.channel_models[ch];
    Tensor scores({model.n_components()});
    for (std::size_t c = 0; c < model.n_components(); ++c) {
      scores[c] = static_cast<float>(rs.uniform(model.score_min[c], model.score_max[c]));
    }
    Tensor weights = pca_reconstruct(model, scores);  // kw
    // image = sum_j weights_j * wavelet_j
    std::vector<double> acc(px, 0.0);
    for (std::size_t j = 0; j < kw; ++j) {
      double wj = weights[j];
      if (wj == 0.0) continue;
      const float* wav = sampler.bank.wavelets.data() + j * px;
      for (std::size_t p = 0; p < px; ++p) acc[p] += wj * wav[p];
    }
    float* dst = out.data() + ch * px;
    for (std::size_t p = 0; p < px; ++p) dst[p] = static_cast<float>(acc[p]);
  }

  // Per-stimulus min-max rescale to [0,1].
  float lo = out.min(), hi = out.max();
  if (hi > lo) {
    float inv = 1.0f / (hi - lo);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (out[i] - lo) * inv;
  } else {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 0.5f;
  }
  return out;
}

Tensor gabor_weights_for_image(const GaborPcaSampler& sampler, const Tensor& image, double alpha) {
  const std::size_t px = sampler.bank.height * sampler.bank.width;
  const std::size_t channels = sampler.channels;
  if (image.numel() != channels * px) throw ShapeError("gabor_weights_for_image: shape mismatch");
  RidgeSolver solver(bank_design(sampler.bank), alpha);
  Tensor weights({channels, sampler.bank.count()});
  for (std::size_t ch = 0; ch < channels; ++ch) {
    Tensor target({px, 1});
    for (std::size_t p = 0; p < px; ++p) target.at2(p, 0) = image[ch * px + p];
    Tensor w = solver.solve(target);
    for (std::size_t j = 0; j < sampler.bank.count(); ++j) weights.at2(ch, j) = w.at2(j, 0);
  }
  return weights;
}

namespace {
constexpr char kSamplerMagic[4] = {'W', 'N', 'G', 'S'};
constexpr std::uint16_t kSamplerVersion = 1;
}  // namespace

void save_sampler(const GaborPcaSampler& sampler, const std::string& path) {
  ByteWriter wtr;
  wtr.u32(static_cast<std::uint32_t>(sampler.bank.height));
  wtr.u32(static_cast<std::uint32_t>(sampler.bank.width));
  wtr.u32(static_cast<std::uint32_t>(sampler.bank.scales.size()));
  for (double s : sampler.bank.scales) wtr.f64(s);
  wtr.u32(static_cast<std::uint32_t>(sampler.channels));
  for (const auto& m : sampler.channel_models) {
    wtr.u32(static_cast<std::uint32_t>(m.n_components()));
    wtr.u32(static_cast<std::uint32_t>(m.dim()));
    wtr.f32_array(m.mean.data(), m.mean.numel());
    wtr.f32_array(m.components.data(), m.components.numel());
    wtr.f32_array(m.explained_variance_ratio.data(), m.explained_variance_ratio.numel());
    wtr.f32_array(m.score_min.data(), m.score_min.size());
    wtr.f32_array(m.score_max.data(), m.score_max.size());
  }
  write_container(path, kSamplerMagic, kSamplerVersion, wtr.data());
}

GaborPcaSampler load_sampler(const std::string& path) {
  auto payload = read_container(path, kSamplerMagic, kSamplerVersion);
  ByteReader r(payload.data(), payload.size());
  std::size_t h = r.u32();
  std::size_t w = r.u32();
  std::size_t n_scales = r.u32();
  std::vector<double> scales(n_scales);
  for (auto& s : scales) s = r.f64();

  GaborPcaSampler sampler;
  sampler.bank = build_gabor_bank(h, w, scales);
  sampler.channels = r.u32();
  for (std::size_t ch = 0; ch < sampler.channels; ++ch) {
    std::size_t k = r.u32();
    std::size_t d = r.u32();
    if (d != sampler.bank.count()) throw FormatError("sampler dim mismatch in " + path);
    PcaModel m;
    m.mean = Tensor({d});
    r.f32_array(m.mean.data(), d);
    m.components = Tensor({k, d});
    r.f32_array(m.components.data(), k * d);
    m.explained_variance_ratio = Tensor({k});
    r.f32_array(m.explained_variance_ratio.data(), k);
    m.score_min.resize(k);
    r.f32_array(m.score_min.data(), k);
    m.score_max.resize(k);
    r.f32_array(m.score_max.data(), k);
    sampler.channel_models.push_back(std::move(m));
  }
  if (!r.done()) throw FormatError("trailing bytes in sampler " + path);
  return sampler;
}

}  // namespace noisebench
