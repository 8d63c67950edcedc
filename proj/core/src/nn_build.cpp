#include <cmath>

#include "noisebench/errors.hpp"
#include "noisebench/nn.hpp"
#include "noisebench/random.hpp"

namespace noisebench {

LayerSpec LayerSpec::conv(std::size_t maps, std::size_t kh, std::size_t kw, Padding pad) {
  if (kh % 2 == 0 || kw % 2 == 0 || kh < 1 || kw < 1) {
    throw ConfigError("conv kernel dims must be odd and >= 1");
  }
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.out_maps = maps;
  s.kernel_h = kh;
  s.kernel_w = kw;
  s.padding = pad;
  return s;
}

LayerSpec LayerSpec::pool() {
  LayerSpec s;
  s.kind = LayerKind::MaxPool2;
  return s;
}

LayerSpec LayerSpec::dense(std::size_t units) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.out_units = units;
  return s;
}

LayerSpec LayerSpec::activation(ActFn fn) {
  LayerSpec s;
  s.kind = LayerKind::Activation;
  s.fn = fn;
  return s;
}

namespace {

Shape layer_out_shape(const LayerSpec& spec, const Shape& in) {
  switch (spec.kind) {
    case LayerKind::Conv2d: {
      if (in.size() != 3) throw ShapeError("conv2d input must be C x H x W");
      std::size_t h = in[1], w = in[2];
      if (spec.padding == Padding::Valid) {
        if (h < spec.kernel_h || w < spec.kernel_w) throw ShapeError("conv2d kernel larger than input");
        return {spec.out_maps, h - spec.kernel_h + 1, w - spec.kernel_w + 1};
      }
      return {spec.out_maps, h, w};
    }
    case LayerKind::MaxPool2: {
      if (in.size() != 3) throw ShapeError("maxpool2 input must be C x H x W");
      if (in[1] < 2 || in[2] < 2) throw ShapeError("maxpool2 input too small");
      return {in[0], in[1] / 2, in[2] / 2};
    }
    case LayerKind::Dense:
      return {spec.out_units};
    case LayerKind::Activation:
      return in;
  }
  throw ConfigError("unknown layer kind");
}

}  // namespace

void Network::init(std::string arch_id, Shape input_shape, std::size_t num_classes,
                   std::vector<LayerSpec> specs, std::uint64_t init_seed) {
  arch_id_ = std::move(arch_id);
  input_shape_ = std::move(input_shape);
  num_classes_ = num_classes;
  layers_.clear();

  // Softmax only as the final activation.
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].kind == LayerKind::Activation && specs[i].fn == ActFn::Softmax &&
        i + 1 != specs.size()) {
      throw ConfigError("softmax must be the final activation");
    }
  }

  Shape cur = input_shape_;
  std::size_t conv_idx = 0, pool_idx = 0, act_idx = 0;
  std::vector<std::size_t> dense_positions;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].kind == LayerKind::Dense) dense_positions.push_back(i);
  }
  std::size_t dense_seen = 0;

  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& spec = specs[i];
    Layer layer;
    layer.spec = spec;
    layer.in_shape = cur;
    layer.out_shape = layer_out_shape(spec, cur);
    switch (spec.kind) {
      case LayerKind::Conv2d: {
        layer.name = "conv" + std::to_string(++conv_idx);
        std::size_t fan_in = cur[0] * spec.kernel_h * spec.kernel_w;
        layer.weights = Tensor({spec.out_maps, fan_in});
        layer.bias.assign(spec.out_maps, 0.0f);
        RandomStream rs(init_seed, i + 1);
        float a = std::sqrt(6.0f / static_cast<float>(fan_in));
        for (std::size_t p = 0; p < layer.weights.numel(); ++p) {
          layer.weights[p] = static_cast<float>(rs.uniform(-a, a));
        }
        break;
      }
      case LayerKind::MaxPool2:
        layer.name = "pool" + std::to_string(++pool_idx);
        break;
      case LayerKind::Dense: {
        ++dense_seen;
        bool last_dense = dense_seen == dense_positions.size();
        layer.name = last_dense ? "fc" : "fc" + std::to_string(dense_seen);
        std::size_t fan_in = shape_numel(cur);
        layer.in_shape = {fan_in};  // dense flattens implicitly
        layer.weights = Tensor({fan_in, spec.out_units});
        layer.bias.assign(spec.out_units, 0.0f);
        RandomStream rs(init_seed, i + 1);
        float a = std::sqrt(6.0f / static_cast<float>(fan_in));
        for (std::size_t p = 0; p < layer.weights.numel(); ++p) {
          layer.weights[p] = static_cast<float>(rs.uniform(-a, a));
        }
        break;
      }
      case LayerKind::Activation:
        layer.name = spec.fn == ActFn::Softmax ? "softmax" : "act" + std::to_string(++act_idx);
        break;
    }
    cur = layer.out_shape;
    layers_.push_back(std::move(layer));
  }

  if (shape_numel(cur) != num_classes_) {
    throw ConfigError("network output size " + std::to_string(shape_numel(cur)) +
                      " != num_classes " + std::to_string(num_classes_));
  }
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.numel() + l.bias.size();
  return n;
}

Network build_network(const std::string& architecture_id, const Shape& input_shape,
                      std::size_t num_classes, std::uint64_t init_seed) {
  if (input_shape.size() != 3) throw ConfigError("input shape must be C x H x W");
  std::vector<LayerSpec> specs;
  if (architecture_id == "logreg") {
    specs = {LayerSpec::dense(num_classes), LayerSpec::activation(ActFn::Softmax)};
  } else if (architecture_id == "mlp_1000") {
    specs = {LayerSpec::dense(1000), LayerSpec::activation(ActFn::Relu),
             LayerSpec::dense(num_classes), LayerSpec::activation(ActFn::Softmax)};
  } else if (architecture_id == "cnn_mnist") {
    specs = {LayerSpec::conv(32, 5, 5, Padding::Valid), LayerSpec::activation(ActFn::Relu),
             LayerSpec::pool(),
             LayerSpec::conv(64, 5, 5, Padding::Valid), LayerSpec::activation(ActFn::Relu),
             LayerSpec::pool(),
             LayerSpec::dense(num_classes), LayerSpec::activation(ActFn::Softmax)};
  } else if (architecture_id == "cnn_cifar") {
    specs = {LayerSpec::conv(32, 3, 3, Padding::Same), LayerSpec::activation(ActFn::Tanh),
             LayerSpec::conv(32, 3, 3, Padding::Same), LayerSpec::activation(ActFn::Tanh),
             LayerSpec::pool(),
             LayerSpec::conv(64, 3, 3, Padding::Same), LayerSpec::activation(ActFn::Tanh),
             LayerSpec::conv(64, 3, 3, Padding::Same), LayerSpec::activation(ActFn::Tanh),
             LayerSpec::pool(),
             LayerSpec::conv(128, 3, 3, Padding::Same), LayerSpec::activation(ActFn::Tanh),
             LayerSpec::conv(128, 3, 3, Padding::Same), LayerSpec::activation(ActFn::Tanh),
             LayerSpec::pool(),
             LayerSpec::dense(num_classes), LayerSpec::activation(ActFn::Softmax)};
  } else {
    throw ConfigError("unknown architecture id: " + architecture_id);
  }
  Network net;
  net.init(architecture_id, input_shape, num_classes, std::move(specs), init_seed);
  return net;
}

std::vector<std::string> Network::hook_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    if (l.spec.kind == LayerKind::Conv2d || l.spec.kind == LayerKind::Dense ||
        l.spec.kind == LayerKind::MaxPool2) {
      names.push_back(l.name);
    } else if (l.spec.fn == ActFn::Softmax) {
      names.push_back("softmax");
    }
  }
  return names;
}

bool Network::has_hook(const std::string& name) const {
  for (const auto& h : hook_names()) {
    if (h == name) return true;
  }
  return false;
}

std::size_t Network::hook_param_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name &&
        (layers_[i].spec.kind == LayerKind::Conv2d || layers_[i].spec.kind == LayerKind::Dense)) {
      return i;
    }
  }
  throw ConfigError("no conv/dense layer named '" + name + "'");
}

std::size_t Network::hook_layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name || (name == "softmax" && layers_[i].spec.fn == ActFn::Softmax &&
                                    layers_[i].spec.kind == LayerKind::Activation)) {
      // convN / hidden fcN hooks mean the post-activation output: advance to
      // the immediately following non-softmax activation when present.
      std::size_t idx = i;
      if ((layers_[i].spec.kind == LayerKind::Conv2d || layers_[i].spec.kind == LayerKind::Dense) &&
          i + 1 < layers_.size() && layers_[i + 1].spec.kind == LayerKind::Activation &&
          layers_[i + 1].spec.fn != ActFn::Softmax) {
        idx = i + 1;
      }
      return idx;
    }
  }
  throw ConfigError("no layer named '" + name + "'");
}

Shape Network::hook_shape(const std::string& name) const {
  return layers_[hook_layer_index(name)].out_shape;
}

std::size_t Network::hook_maps(const std::string& name) const {
  std::size_t pi = hook_param_index(name);
  const Layer& l = layers_[pi];
  return l.spec.kind == LayerKind::Conv2d ? l.spec.out_maps : l.spec.out_units;
}

Network::RfInfo Network::receptive_field(const std::string& hook) const {
  std::size_t target = hook_param_index(hook);
  RfInfo info;
  for (std::size_t i = 0; i <= target; ++i) {
    const Layer& l = layers_[i];
    if (l.spec.kind == LayerKind::Conv2d) {
      info.size += (l.spec.kernel_h - 1) * info.jump;
      if (l.spec.padding == Padding::Same) {
        info.offset -= static_cast<long>((l.spec.kernel_h - 1) / 2 * info.jump);
      }
    } else if (l.spec.kind == LayerKind::MaxPool2) {
      info.size += info.jump;
      info.jump *= 2;
    } else if (l.spec.kind == LayerKind::Dense) {
      throw ConfigError("receptive_field: '" + hook + "' is not a conv hook");
    }
  }
  return info;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto v : counts) t += v;
  return t;
}

double ConfusionMatrix::accuracy() const {
  std::uint64_t t = total();
  if (t == 0) return 0.0;
  std::uint64_t diag = 0;
  for (std::size_t i = 0; i < k; ++i) diag += at(i, i);
  return static_cast<double>(diag) / static_cast<double>(t);
}

std::vector<double> ConfusionMatrix::per_class_recall() const {
  std::vector<double> r(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uint64_t row = 0;
    for (std::size_t j = 0; j < k; ++j) row += at(i, j);
    r[i] = row ? static_cast<double>(at(i, i)) / static_cast<double>(row) : 0.0;
  }
  return r;
}

}  // namespace noisebench
