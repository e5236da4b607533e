#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "formdigit/errors.hpp"
#include "formdigit/neuralnet.hpp"

namespace formdigit {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'F', 'S', 'N', 'N'};

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

void put_f32(std::ostream& out, float v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw CheckpointError("file ends inside the header");
  return v;
}

float get_f32(std::istream& in) {
  float v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw CheckpointError("file ends inside a layer");
  return v;
}

std::filesystem::path sidecar(const std::filesystem::path& p) { return p.string() + ".json"; }

}  // namespace

void save_checkpoint(const Network<float>& net, const std::filesystem::path& path, const nlohmann::json& metadata) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  auto& self = const_cast<Network<float>&>(net);
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(net.layer_count()));
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    Layer<float>& l = self.layer(i);
    const LayerSpec s = l.spec();
    put_u32(out, static_cast<std::uint32_t>(s.kind));
    std::vector<float> config;
    if (s.kind == LayerKind::Conv3x3 || s.kind == LayerKind::Dense) config.push_back(static_cast<float>(s.units));
    if (s.kind == LayerKind::Dropout) config.push_back(static_cast<float>(s.rate));
    put_u32(out, static_cast<std::uint32_t>(config.size()));
    for (float c : config) put_f32(out, c);
    std::vector<Tensor<float>*> tensors = l.parameters();
    for (Tensor<float>* b : l.buffers()) tensors.push_back(b);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const Tensor<float>* t : tensors) {
      put_u32(out, static_cast<std::uint32_t>(t->shape.size()));
      for (int d : t->shape) put_u32(out, static_cast<std::uint32_t>(d));
      out.write(reinterpret_cast<const char*>(t->values.data()), static_cast<std::streamsize>(t->size() * 4));
    }
    layers.push_back(layer_kind_name(s.kind));
  }
  if (!out) throw CheckpointError("write failed for " + path.string());

  nlohmann::json side = {{"format", "FSNN"},
                         {"version", kCheckpointVersion},
                         {"input_shape", net.input_shape()},
                         {"layers", layers},
                         {"parameters", net.parameter_count()},
                         {"metadata", metadata}};
  std::ofstream js(sidecar(path), std::ios::trunc);
  if (!js) throw CheckpointError("cannot write " + sidecar(path).string());
  js << side.dump(2) << '\n';
}

Network<float> load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata) {
  std::ifstream js(sidecar(path));
  if (!js) throw CheckpointError("missing sidecar " + sidecar(path).string());
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(sidecar(path).string() + ": " + e.what());
  }
  if (!side.contains("input_shape")) throw CheckpointError("sidecar lacks input_shape");
  const Shape input = side["input_shape"].get<Shape>();

  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError(path.string() + " is not an FSNN file");
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = get_u32(in);

  Network<float> net(input, {}, 0);
  std::mt19937_64 rng(0);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t tag = get_u32(in);
    if (tag < 1 || tag > 8) throw CheckpointError("unknown layer tag " + std::to_string(tag));
    LayerSpec s;
    s.kind = static_cast<LayerKind>(tag);
    const std::uint32_t n_config = get_u32(in);
    std::vector<float> config;
    for (std::uint32_t k = 0; k < n_config; ++k) config.push_back(get_f32(in));
    if ((s.kind == LayerKind::Conv3x3 || s.kind == LayerKind::Dense)) {
      if (config.size() != 1) throw CheckpointError("layer " + std::to_string(i) + " lacks its width");
      s.units = static_cast<int>(config[0]);
    }
    if (s.kind == LayerKind::Dropout) {
      if (config.size() != 1) throw CheckpointError("dropout layer lacks its rate");
      s.rate = config[0];
    }
    try {
      net.add(s, rng);
    } catch (const std::exception& e) {
      throw CheckpointError("layer " + std::to_string(i) + ": " + e.what());
    }
    Layer<float>& l = net.layer(i);
    std::vector<Tensor<float>*> tensors = l.parameters();
    for (Tensor<float>* b : l.buffers()) tensors.push_back(b);
    if (get_u32(in) != tensors.size()) throw CheckpointError("layer " + std::to_string(i) + " has the wrong tensor count");
    for (Tensor<float>* t : tensors) {
      const std::uint32_t ndim = get_u32(in);
      Shape shape;
      for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(get_u32(in)));
      if (shape != t->shape)
        throw CheckpointError("tensor shape " + shape_string(shape) + " where " + shape_string(t->shape) + " expected");
      if (!in.read(reinterpret_cast<char*>(t->values.data()), static_cast<std::streamsize>(t->size() * 4)))
        throw CheckpointError("file ends inside tensor data");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after the last layer");
  if (metadata) *metadata = side.value("metadata", nlohmann::json::object());
  return net;
}

}  // namespace formdigit
