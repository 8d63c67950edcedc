#include "noisebench/artifact_io.hpp"
#include "noisebench/errors.hpp"
#include "noisebench/nn.hpp"

namespace noisebench {

namespace {
constexpr char kModelMagic[4] = {'W', 'N', 'A', 'M'};
constexpr std::uint16_t kModelVersion = 1;
}  // namespace

void save_model(const Network& net, const std::string& path) {
  ByteWriter w;
  w.str(net.arch_id());
  w.u32(static_cast<std::uint32_t>(net.input_shape().size()));
  for (std::size_t d : net.input_shape()) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(net.num_classes()));
  w.u32(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    w.u64(l.weights.numel());
    w.f32_array(l.weights.data(), l.weights.numel());
    w.u64(l.bias.size());
    w.f32_array(l.bias.data(), l.bias.size());
  }
  write_container(path, kModelMagic, kModelVersion, w.data());
}

Network load_model(const std::string& path) {
  auto payload = read_container(path, kModelMagic, kModelVersion);
  ByteReader r(payload.data(), payload.size());
  std::string arch = r.str();
  std::uint32_t nd = r.u32();
  Shape input_shape(nd);
  for (std::uint32_t i = 0; i < nd; ++i) input_shape[i] = r.u32();
  std::uint32_t k = r.u32();

  Network net = build_network(arch, input_shape, k, /*init_seed=*/0);

  std::uint32_t n_layers = r.u32();
  if (n_layers != net.layers().size()) {
    throw FormatError("model layer count mismatch in " + path);
  }
  for (auto& l : net.layers()) {
    std::uint64_t wn = r.u64();
    if (wn != l.weights.numel()) throw FormatError("model weight size mismatch in " + path);
    r.f32_array(l.weights.data(), wn);
    std::uint64_t bn = r.u64();
    if (bn != l.bias.size()) throw FormatError("model bias size mismatch in " + path);
    r.f32_array(l.bias.data(), bn);
  }
  if (!r.done()) throw FormatError("trailing bytes in model " + path);
  return net;
}

}  // namespace noisebench
