#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sinktrack/model.hpp"
#include "sinktrack/tensor.hpp"

namespace sinktrack {

// Per-layer, per-head Key/Value rows for every processed position. Position 0
// always holds BOS; rows are only ever appended, never evicted or reordered.
class KVCache {
 public:
  KVCache() = default;
  explicit KVCache(const ModelConfig& config);

  std::size_t n_layers() const { return layers_.size(); }
  std::size_t n_heads() const { return n_heads_; }
  std::size_t d_head() const { return d_head_; }
  std::size_t capacity() const { return capacity_; }

  // Common length across layers; throws CacheError when layers disagree
  // (only possible while a forward pass is half done).
  std::size_t length() const;
  std::size_t layer_length(std::size_t layer) const;
  bool empty() const { return layers_.empty() || layers_[0].length == 0; }

  // Appends n rows of full-width K and V (n×d_model), split per head into
  // contiguous d_head chunks.
  void append(std::size_t layer, const Tensor& keys, const Tensor& values);

  std::span<const float> key(std::size_t layer, std::size_t head, std::size_t pos) const;
  std::span<const float> value(std::size_t layer, std::size_t head, std::size_t pos) const;
  std::span<float> mutable_value(std::size_t layer, std::size_t head, std::size_t pos);

  // All heads' value rows at `pos`, concatenated (length d_model).
  std::vector<float> value_row(std::size_t layer, std::size_t pos) const;
  std::vector<float> key_row(std::size_t layer, std::size_t pos) const;

  friend bool operator==(const KVCache&, const KVCache&) = default;

 private:
  struct HeadRows {
    std::vector<float> keys;
    std::vector<float> values;
    friend bool operator==(const HeadRows&, const HeadRows&) = default;
  };
  struct LayerRows {
    std::vector<HeadRows> heads;
    std::size_t length = 0;
    friend bool operator==(const LayerRows&, const LayerRows&) = default;
  };

  void check_pos(std::size_t layer, std::size_t head, std::size_t pos) const;

  std::vector<LayerRows> layers_;
  std::size_t n_heads_ = 0;
  std::size_t d_head_ = 0;
  std::size_t capacity_ = 0;
};

}  // namespace sinktrack
