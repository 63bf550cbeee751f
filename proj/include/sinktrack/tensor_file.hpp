#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sinktrack/model.hpp"
#include "sinktrack/tensor.hpp"

namespace sinktrack {

// STKW tensor file, all integers little-endian:
//
//   0   "STKW"                     magic
//   4   u32 format version (1)
//   8   u64 header length H
//   16  H bytes of UTF-8 JSON, space-padded so the payload starts 64-aligned
//   ..  payload: raw f32 LE; every tensor starts on a 64-byte boundary
//
// Header JSON maps tensor name -> {"dtype":"f32","shape":[...],"offset":abs
// byte offset,"nbytes":n}. The reserved key "__metadata__" holds an arbitrary
// object (model files store their ModelConfig there).
inline constexpr char kTensorFileMagic[4] = {'S', 'T', 'K', 'W'};
inline constexpr std::uint32_t kTensorFileVersion = 1;
inline constexpr std::size_t kTensorAlignment = 64;

using TensorMap = std::map<std::string, Tensor>;

struct TensorFile {
  nlohmann::json metadata = nlohmann::json::object();
  TensorMap tensors;
};

// Byte-deterministic for identical input.
std::vector<std::uint8_t> encode_tensor_file(const TensorFile& file);
TensorFile decode_tensor_file(std::span<const std::uint8_t> bytes);

void save_tensor_file(const TensorFile& file, const std::string& path);
TensorFile load_tensor_file(const std::string& path);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

TensorFile model_to_tensor_file(const Model& model);
Model model_from_tensor_file(const TensorFile& file);

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace sinktrack
