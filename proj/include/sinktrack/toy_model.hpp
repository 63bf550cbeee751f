#pragma once

#include <cstdint>

#include "sinktrack/model.hpp"

namespace sinktrack {

inline constexpr std::uint64_t kCanonicalSeed = 42;

// L=4, d=32, heads=4, d_ff=64, vocab=64, max_seq=256, BOS id 0.
ModelConfig canonical_config();

// xoshiro256** seeded through splitmix64. Integer-only state; floats come
// from the top 24 bits so the sequence is identical on every IEEE platform.
class Xoshiro256 {
 public:
  explicit Xoshiro256(std::uint64_t seed);
  std::uint64_t next();
  // Uniform in [0, 1), exactly representable.
  float next_unit();

 private:
  std::uint64_t s_[4];
};

// Every matrix and FFN bias is drawn as 0.02 * (2u - 1), u uniform in [0,1),
// in this order: embedding, unembed, then per layer wq, wk, wv, wo, ffn_w1,
// ffn_b1, ffn_w2, ffn_b2 (row-major). LayerNorm gains are 1, biases 0.
Model make_toy_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace sinktrack
