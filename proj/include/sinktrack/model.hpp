#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sinktrack/tensor.hpp"

namespace sinktrack {

using TokenId = std::uint32_t;

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 64;
  std::size_t max_seq = 256;
  float ln_eps = 1e-5f;
  // Token ids are opaque; the caller declares which one is BOS.
  TokenId bos_id = 0;

  std::size_t d_head() const { return d_model / n_heads; }

  // Throws ConfigError on any violated invariant.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Row-vector convention throughout: projections are h[1×d] · W[d×d].
struct LayerWeights {
  Tensor wq, wk, wv, wo;     // d×d
  Tensor ffn_w1, ffn_b1;     // d×d_ff, d_ff
  Tensor ffn_w2, ffn_b2;     // d_ff×d, d
  Tensor ln1_gain, ln1_bias; // after attention
  Tensor ln2_gain, ln2_bias; // after FFN

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct ModelWeights {
  Tensor embedding;  // vocab×d
  Tensor unembed;    // d×vocab
  std::vector<LayerWeights> layers;

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

// Immutable after construction; shareable across sessions.
struct Model {
  ModelConfig config;
  ModelWeights weights;

  // Checks every tensor's shape against config and that all values are finite.
  void validate() const;

  const LayerWeights& layer(std::size_t l) const { return weights.layers.at(l); }
};

}  // namespace sinktrack
