#include "sinktrack/toy_model.hpp"

namespace sinktrack {

ModelConfig canonical_config() { return ModelConfig{}; }

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

constexpr float kInitScale = 0.02f;

}  // namespace

Xoshiro256::Xoshiro256(std::uint64_t seed) {
  for (auto& s : s_) s = splitmix64(seed);
}

std::uint64_t Xoshiro256::next() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

float Xoshiro256::next_unit() { return static_cast<float>(next() >> 40) * 0x1.0p-24f; }

Model make_toy_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Xoshiro256 rng(seed);
  auto draw = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (float& v : t.data()) v = kInitScale * (2.0f * rng.next_unit() - 1.0f);
    return t;
  };
  auto ones = [](std::size_t n) { return Tensor::vector(std::vector<float>(n, 1.0f)); };
  auto zeros = [](std::size_t n) { return Tensor({n}); };

  const auto d = config.d_model;
  const auto f = config.d_ff;
  Model model;
  model.config = config;
  model.weights.embedding = draw({config.vocab_size, d});
  model.weights.unembed = draw({d, config.vocab_size});
  model.weights.layers.resize(config.n_layers);
  for (auto& lw : model.weights.layers) {
    lw.wq = draw({d, d});
    lw.wk = draw({d, d});
    lw.wv = draw({d, d});
    lw.wo = draw({d, d});
    lw.ffn_w1 = draw({d, f});
    lw.ffn_b1 = draw({f});
    lw.ffn_w2 = draw({f, d});
    lw.ffn_b2 = draw({d});
    lw.ln1_gain = ones(d);
    lw.ln1_bias = zeros(d);
    lw.ln2_gain = ones(d);
    lw.ln2_bias = zeros(d);
  }
  return model;
}

}  // namespace sinktrack
