#include "sinktrack/tensor_file.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sinktrack/error.hpp"

namespace sinktrack {

using json = nlohmann::json;

namespace {

constexpr std::size_t kPreambleSize = 16;
constexpr const char* kMetadataKey = "__metadata__";

std::size_t align_up(std::size_t n) { return (n + kTensorAlignment - 1) / kTensorAlignment * kTensorAlignment; }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t at, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
  return v;
}

std::size_t product(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor_file(const TensorFile& file) {
  // Offsets depend on the header length and the header contains the offsets,
  // so iterate until the padded header size is stable.
  std::size_t payload_start = align_up(kPreambleSize + 2);
  json header;
  std::string header_text;
  for (;;) {
    header = json::object();
    header[kMetadataKey] = file.metadata.is_null() ? json::object() : file.metadata;
    std::size_t offset = payload_start;
    for (const auto& [name, tensor] : file.tensors) {
      if (name == kMetadataKey) throw FormatError("tensor name '__metadata__' is reserved");
      require_finite(tensor, name.c_str());
      header[name] = {{"dtype", "f32"},
                      {"shape", tensor.shape()},
                      {"offset", offset},
                      {"nbytes", tensor.size() * sizeof(float)}};
      offset = align_up(offset + tensor.size() * sizeof(float));
    }
    header_text = header.dump();
    const std::size_t needed = align_up(kPreambleSize + header_text.size());
    if (needed <= payload_start) break;
    payload_start = needed;
  }
  header_text.resize(payload_start - kPreambleSize, ' ');

  std::vector<std::uint8_t> out;
  out.insert(out.end(), std::begin(kTensorFileMagic), std::end(kTensorFileMagic));
  put_u32(out, kTensorFileVersion);
  put_u64(out, header_text.size());
  out.insert(out.end(), header_text.begin(), header_text.end());
  for (const auto& [name, tensor] : file.tensors) {
    const std::size_t offset = header[name]["offset"].get<std::size_t>();
    out.resize(offset, 0);
    for (float v : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  out.resize(align_up(out.size()), 0);
  return out;
}

TensorFile decode_tensor_file(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPreambleSize) throw BoundsError("tensor file shorter than its 16-byte preamble");
  if (std::memcmp(bytes.data(), kTensorFileMagic, 4) != 0) throw FormatError("bad magic: not an STKW tensor file");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kTensorFileVersion) throw FormatError("unsupported STKW version " + std::to_string(version));
  const std::uint64_t header_len = get_le(bytes, 8, 8);
  if (header_len > bytes.size() - kPreambleSize) throw BoundsError("header length runs past end of file");
  const std::size_t payload_start = kPreambleSize + header_len;

  json header;
  try {
    header = json::parse(bytes.begin() + kPreambleSize, bytes.begin() + static_cast<std::ptrdiff_t>(payload_start));
  } catch (const json::exception& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw FormatError("header must be a JSON object");

  TensorFile file;
  struct Extent {
    std::size_t begin, end;
    std::string name;
  };
  std::vector<Extent> extents;
  for (const auto& [name, entry] : header.items()) {
    if (name == kMetadataKey) {
      file.metadata = entry;
      continue;
    }
    Shape shape;
    std::size_t offset = 0, nbytes = 0;
    try {
      if (entry.at("dtype").get<std::string>() != "f32") throw FormatError("tensor " + name + ": dtype must be f32");
      shape = entry.at("shape").get<Shape>();
      offset = entry.at("offset").get<std::size_t>();
      nbytes = entry.at("nbytes").get<std::size_t>();
    } catch (const json::exception& e) {
      throw FormatError("tensor " + name + ": malformed header entry: " + e.what());
    }
    if (shape.empty() || shape.size() > 3 || std::find(shape.begin(), shape.end(), 0) != shape.end()) {
      throw ShapeError("tensor " + name + ": invalid shape " + shape_to_string(shape));
    }
    if (product(shape) * sizeof(float) != nbytes) {
      throw ShapeError("tensor " + name + ": shape " + shape_to_string(shape) + " holds " +
                       std::to_string(product(shape)) + " floats but payload has " + std::to_string(nbytes) +
                       " bytes");
    }
    if (offset % kTensorAlignment != 0) {
      throw AlignmentError("tensor " + name + ": offset " + std::to_string(offset) + " is not 64-byte aligned");
    }
    if (offset < payload_start) throw FormatError("tensor " + name + ": offset lies inside the header");
    if (offset > bytes.size() || nbytes > bytes.size() - offset) {
      throw BoundsError("tensor " + name + ": payload [" + std::to_string(offset) + ", " +
                        std::to_string(offset + nbytes) + ") runs past end of file (" + std::to_string(bytes.size()) +
                        " bytes)");
    }
    std::vector<float> data(nbytes / sizeof(float));
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, offset + 4 * i, 4)));
    }
    Tensor t(shape, std::move(data));
    require_finite(t, name.c_str());
    file.tensors.emplace(name, std::move(t));
    extents.push_back({offset, offset + nbytes, name});
  }
  std::sort(extents.begin(), extents.end(), [](const Extent& a, const Extent& b) { return a.begin < b.begin; });
  for (std::size_t i = 1; i < extents.size(); ++i) {
    if (extents[i].begin < extents[i - 1].end) {
      throw FormatError("tensors " + extents[i - 1].name + " and " + extents[i].name + " overlap");
    }
  }
  return file;
}

void save_tensor_file(const TensorFile& file, const std::string& path) {
  const auto bytes = encode_tensor_file(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

TensorFile load_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return decode_tensor_file(bytes);
}

json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers}, {"d_model", c.d_model},       {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},         {"vocab_size", c.vocab_size}, {"max_seq", c.max_seq},
          {"ln_eps", c.ln_eps},     {"bos_id", c.bos_id},         {"activation", "gelu"},
          {"norm", "post"}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq = j.at("max_seq").get<std::size_t>();
    c.ln_eps = j.at("ln_eps").get<float>();
    c.bos_id = j.value("bos_id", TokenId{0});
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

std::string layer_name(std::size_t l, const char* field) { return "layers." + std::to_string(l) + "." + field; }

template <typename Fn>
void for_each_layer_tensor(Fn&& fn) {
  fn("wq", &LayerWeights::wq);
  fn("wk", &LayerWeights::wk);
  fn("wv", &LayerWeights::wv);
  fn("wo", &LayerWeights::wo);
  fn("ffn_w1", &LayerWeights::ffn_w1);
  fn("ffn_b1", &LayerWeights::ffn_b1);
  fn("ffn_w2", &LayerWeights::ffn_w2);
  fn("ffn_b2", &LayerWeights::ffn_b2);
  fn("ln1_gain", &LayerWeights::ln1_gain);
  fn("ln1_bias", &LayerWeights::ln1_bias);
  fn("ln2_gain", &LayerWeights::ln2_gain);
  fn("ln2_bias", &LayerWeights::ln2_bias);
}

Shape expected_layer_shape(const ModelConfig& c, const std::string& field) {
  const auto d = c.d_model;
  const auto f = c.d_ff;
  if (field == "ffn_w1") return {d, f};
  if (field == "ffn_b1") return {f};
  if (field == "ffn_w2") return {f, d};
  if (field[0] == 'w') return {d, d};
  return {d};
}

}  // namespace

TensorFile model_to_tensor_file(const Model& model) {
  model.validate();
  TensorFile file;
  file.metadata = {{"kind", "model"}, {"config", config_to_json(model.config)}};
  file.tensors.emplace("embedding", model.weights.embedding);
  file.tensors.emplace("unembed", model.weights.unembed);
  for (std::size_t l = 0; l < model.weights.layers.size(); ++l) {
    for_each_layer_tensor([&](const char* field, Tensor LayerWeights::*member) {
      file.tensors.emplace(layer_name(l, field), model.weights.layers[l].*member);
    });
  }
  return file;
}

Model model_from_tensor_file(const TensorFile& file) {
  if (!file.metadata.is_object() || !file.metadata.contains("config")) {
    throw FormatError("tensor file has no model config in __metadata__");
  }
  Model model;
  model.config = config_from_json(file.metadata.at("config"));
  const auto& c = model.config;
  std::size_t used = 0;
  auto take = [&](const std::string& name, const Shape& shape) {
    auto it = file.tensors.find(name);
    if (it == file.tensors.end()) throw MissingTensorError("model file is missing tensor " + name);
    if (it->second.shape() != shape) {
      throw ShapeError("tensor " + name + " has shape " + shape_to_string(it->second.shape()) + ", config needs " +
                       shape_to_string(shape));
    }
    ++used;
    return it->second;
  };
  model.weights.embedding = take("embedding", {c.vocab_size, c.d_model});
  model.weights.unembed = take("unembed", {c.d_model, c.vocab_size});
  model.weights.layers.resize(c.n_layers);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    for_each_layer_tensor([&](const char* field, Tensor LayerWeights::*member) {
      model.weights.layers[l].*member = take(layer_name(l, field), expected_layer_shape(c, field));
    });
  }
  if (used != file.tensors.size()) throw FormatError("model file contains unexpected extra tensors");
  model.validate();
  return model;
}

void save_model(const Model& model, const std::string& path) { save_tensor_file(model_to_tensor_file(model), path); }

Model load_model(const std::string& path) { return model_from_tensor_file(load_tensor_file(path)); }

}  // namespace sinktrack
