#include "sinktrack/kv_cache.hpp"

#include <string>

#include "sinktrack/error.hpp"

namespace sinktrack {

KVCache::KVCache(const ModelConfig& config)
    : n_heads_(config.n_heads), d_head_(config.d_head()), capacity_(config.max_seq) {
  layers_.resize(config.n_layers);
  for (auto& layer : layers_) {
    layer.heads.resize(n_heads_);
    for (auto& head : layer.heads) {
      head.keys.reserve(capacity_ * d_head_);
      head.values.reserve(capacity_ * d_head_);
    }
  }
}

std::size_t KVCache::length() const {
  if (layers_.empty()) return 0;
  const std::size_t t = layers_[0].length;
  for (std::size_t l = 1; l < layers_.size(); ++l) {
    if (layers_[l].length != t) {
      throw CacheError("cache layers disagree on length: layer 0 has " + std::to_string(t) + ", layer " +
                       std::to_string(l) + " has " + std::to_string(layers_[l].length));
    }
  }
  return t;
}

std::size_t KVCache::layer_length(std::size_t layer) const {
  if (layer >= layers_.size()) throw CacheError("cache layer " + std::to_string(layer) + " out of range");
  return layers_[layer].length;
}

void KVCache::append(std::size_t layer, const Tensor& keys, const Tensor& values) {
  if (layer >= layers_.size()) throw CacheError("cache layer " + std::to_string(layer) + " out of range");
  const std::size_t d = n_heads_ * d_head_;
  if (keys.cols() != d || values.cols() != d || keys.rows() != values.rows()) {
    throw DimensionError("cache append expects matching n×" + std::to_string(d) + " K/V, got " +
                         shape_to_string(keys.shape()) + " and " + shape_to_string(values.shape()));
  }
  auto& rows = layers_[layer];
  const std::size_t n = keys.rows();
  if (rows.length + n > capacity_) {
    throw CapacityError("cache capacity " + std::to_string(capacity_) + " exceeded at layer " +
                        std::to_string(layer));
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto k = keys.row(i);
    auto v = values.row(i);
    for (std::size_t h = 0; h < n_heads_; ++h) {
      auto& head = rows.heads[h];
      head.keys.insert(head.keys.end(), k.begin() + h * d_head_, k.begin() + (h + 1) * d_head_);
      head.values.insert(head.values.end(), v.begin() + h * d_head_, v.begin() + (h + 1) * d_head_);
    }
  }
  rows.length += n;
}

void KVCache::check_pos(std::size_t layer, std::size_t head, std::size_t pos) const {
  if (layer >= layers_.size() || head >= n_heads_ || pos >= layers_[layer].length) {
    throw CacheError("cache access out of range: layer " + std::to_string(layer) + ", head " +
                     std::to_string(head) + ", position " + std::to_string(pos));
  }
}

std::span<const float> KVCache::key(std::size_t layer, std::size_t head, std::size_t pos) const {
  check_pos(layer, head, pos);
  return std::span<const float>(layers_[layer].heads[head].keys).subspan(pos * d_head_, d_head_);
}

std::span<const float> KVCache::value(std::size_t layer, std::size_t head, std::size_t pos) const {
  check_pos(layer, head, pos);
  return std::span<const float>(layers_[layer].heads[head].values).subspan(pos * d_head_, d_head_);
}

std::span<float> KVCache::mutable_value(std::size_t layer, std::size_t head, std::size_t pos) {
  check_pos(layer, head, pos);
  return std::span<float>(layers_[layer].heads[head].values).subspan(pos * d_head_, d_head_);
}

std::vector<float> KVCache::value_row(std::size_t layer, std::size_t pos) const {
  std::vector<float> out;
  out.reserve(n_heads_ * d_head_);
  for (std::size_t h = 0; h < n_heads_; ++h) {
    auto v = value(layer, h, pos);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

std::vector<float> KVCache::key_row(std::size_t layer, std::size_t pos) const {
  std::vector<float> out;
  out.reserve(n_heads_ * d_head_);
  for (std::size_t h = 0; h < n_heads_; ++h) {
    auto k = key(layer, h, pos);
    out.insert(out.end(), k.begin(), k.end());
  }
  return out;
}

}  // namespace sinktrack
