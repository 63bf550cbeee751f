#include "sinktrack/model.hpp"

#include <string>

#include "sinktrack/error.hpp"

namespace sinktrack {

void ModelConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (max_seq < 2) throw ConfigError("max_seq must be at least 2 (BOS plus one token)");
  if (!(ln_eps > 0.0f)) throw ConfigError("ln_eps must be positive");
  if (bos_id >= vocab_size) {
    throw ConfigError("bos_id " + std::to_string(bos_id) + " outside vocabulary of " +
                      std::to_string(vocab_size));
  }
}

namespace {

void expect_shape(const Tensor& t, const Shape& shape, const std::string& name) {
  if (t.shape() != shape) {
    throw DimensionError(name + " has shape " + shape_to_string(t.shape()) + ", expected " +
                         shape_to_string(shape));
  }
  require_finite(t, name.c_str());
}

}  // namespace

void Model::validate() const {
  config.validate();
  const auto d = config.d_model;
  const auto f = config.d_ff;
  expect_shape(weights.embedding, {config.vocab_size, d}, "embedding");
  expect_shape(weights.unembed, {d, config.vocab_size}, "unembed");
  if (weights.layers.size() != config.n_layers) {
    throw DimensionError("model has " + std::to_string(weights.layers.size()) + " layers, config says " +
                         std::to_string(config.n_layers));
  }
  for (std::size_t l = 0; l < weights.layers.size(); ++l) {
    const auto& lw = weights.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    expect_shape(lw.wq, {d, d}, p + "wq");
    expect_shape(lw.wk, {d, d}, p + "wk");
    expect_shape(lw.wv, {d, d}, p + "wv");
    expect_shape(lw.wo, {d, d}, p + "wo");
    expect_shape(lw.ffn_w1, {d, f}, p + "ffn_w1");
    expect_shape(lw.ffn_b1, {f}, p + "ffn_b1");
    expect_shape(lw.ffn_w2, {f, d}, p + "ffn_w2");
    expect_shape(lw.ffn_b2, {d}, p + "ffn_b2");
    expect_shape(lw.ln1_gain, {d}, p + "ln1_gain");
    expect_shape(lw.ln1_bias, {d}, p + "ln1_bias");
    expect_shape(lw.ln2_gain, {d}, p + "ln2_gain");
    expect_shape(lw.ln2_bias, {d}, p + "ln2_bias");
  }
}

}  // namespace sinktrack
