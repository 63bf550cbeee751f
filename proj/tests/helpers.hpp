#pragma once

#include <cmath>
#include <span>
#include <random>
#include <vector>

#include "sinktrack/model.hpp"
#include "sinktrack/tensor.hpp"
#include "sinktrack/toy_model.hpp"

namespace testutil {

inline sinktrack::Tensor random_tensor(sinktrack::Shape shape, std::mt19937_64& rng, float scale = 1.0f) {
  sinktrack::Tensor t(std::move(shape));
  std::uniform_real_distribution<float> dist(-scale, scale);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

inline sinktrack::Model canonical_model() {
  return sinktrack::make_toy_model(sinktrack::canonical_config(), sinktrack::kCanonicalSeed);
}

// Small model with the layer count large enough for every_k(5) schedules to
// hit more than one layer when n_layers >= 6.
inline sinktrack::ModelConfig small_config(std::size_t layers = 2, std::size_t d = 8, std::size_t heads = 2,
                                           std::size_t vocab = 16) {
  sinktrack::ModelConfig c;
  c.n_layers = layers;
  c.d_model = d;
  c.n_heads = heads;
  c.d_ff = 2 * d;
  c.vocab_size = vocab;
  c.max_seq = 64;
  return c;
}

inline std::vector<sinktrack::TokenId> random_prompt(std::size_t len, std::size_t vocab, std::mt19937_64& rng,
                                                     sinktrack::TokenId bos = 0) {
  std::uniform_int_distribution<sinktrack::TokenId> dist(0, static_cast<sinktrack::TokenId>(vocab - 1));
  std::vector<sinktrack::TokenId> p{bos};
  while (p.size() < len) p.push_back(dist(rng));
  return p;
}

inline double max_abs_diff(const std::vector<double>& a, std::span<const float> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
