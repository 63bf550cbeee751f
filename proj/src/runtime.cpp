#include "sinktrack/runtime.hpp"

#include <cmath>
#include <string>

#include "sinktrack/error.hpp"

namespace sinktrack {

Tensor embed(std::span<const TokenId> tokens, const Model& model) {
  if (tokens.empty()) throw InputError("cannot embed an empty token list");
  if (tokens[0] != model.config.bos_id) {
    throw InputError("token sequence must start with the BOS id " + std::to_string(model.config.bos_id));
  }
  return gather_embeddings(tokens, model);
}

Tensor gather_embeddings(std::span<const TokenId> tokens, const Model& model) {
  if (tokens.empty()) throw InputError("cannot embed an empty token list");
  const auto& cfg = model.config;
  const std::size_t d = cfg.d_model;
  Tensor out({tokens.size(), d});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= cfg.vocab_size) {
      throw VocabError("token id " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                       " outside vocabulary of " + std::to_string(cfg.vocab_size));
    }
    auto src = model.weights.embedding.row(tokens[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

QkvRows project_qkv(const Tensor& h, const LayerWeights& lw) {
  return {matmul(h, lw.wq), matmul(h, lw.wk), matmul(h, lw.wv)};
}

void attention_weights(std::span<const float> q_head, const KVCache& cache, std::size_t layer, std::size_t head,
                       std::size_t last, std::vector<float>& weights) {
  const std::size_t dh = cache.d_head();
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  weights.resize(last + 1);
  for (std::size_t j = 0; j <= last; ++j) {
    auto k = cache.key(layer, head, j);
    float dot = 0.0f;
    for (std::size_t p = 0; p < dh; ++p) dot += q_head[p] * k[p];
    weights[j] = dot * scale;
  }
  softmax_inplace(weights);
}

void attend_causal_rows(const Tensor& q, const KVCache& cache, std::size_t layer, std::size_t base_pos,
                        std::size_t first_row, Tensor& heads_out, const AttentionContext& ctx) {
  const std::size_t n = q.rows();
  const std::size_t dh = cache.d_head();
  if (base_pos + n > cache.layer_length(layer)) {
    throw CacheError("layer " + std::to_string(layer) + " cache holds " + std::to_string(cache.layer_length(layer)) +
                     " positions, attention needs " + std::to_string(base_pos + n));
  }
  std::vector<float> weights;
  for (std::size_t i = first_row; i < n; ++i) {
    const std::size_t pos = base_pos + i;
    auto q_row = q.row(i);
    auto out_row = heads_out.row(i);
    for (std::size_t h = 0; h < cache.n_heads(); ++h) {
      auto q_head = q_row.subspan(h * dh, dh);
      attention_weights(q_head, cache, layer, h, pos, weights);
      if (ctx.recorder) ctx.recorder->on_attention(ctx.step, layer, h, pos, weights, q_head);
      // O = Σ_j α_j · V_j
      auto o = out_row.subspan(h * dh, dh);
      std::fill(o.begin(), o.end(), 0.0f);
      for (std::size_t j = 0; j <= pos; ++j) {
        auto v = cache.value(layer, h, j);
        for (std::size_t p = 0; p < dh; ++p) o[p] += weights[j] * v[p];
      }
    }
  }
}

Tensor causal_self_attention(const Tensor& h, const Model& model, std::size_t layer, KVCache& cache,
                             const AttentionContext& ctx) {
  if (h.rows() == 0) throw InputError("attention over zero rows");
  const std::size_t base = cache.layer_length(layer);
  const auto& lw = model.layer(layer);
  auto qkv = project_qkv(h, lw);
  cache.append(layer, qkv.k, qkv.v);
  Tensor heads(h.shape());
  attend_causal_rows(qkv.q, cache, layer, base, 0, heads, ctx);
  return matmul(heads, lw.wo);
}

Tensor feed_forward(const Tensor& m, const LayerWeights& lw) {
  Tensor hidden = matmul(m, lw.ffn_w1);
  for (std::size_t i = 0; i < hidden.rows(); ++i) {
    auto r = hidden.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = gelu(r[j] + lw.ffn_b1[j]);
  }
  Tensor out = matmul(hidden, lw.ffn_w2);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += lw.ffn_b2[j];
  }
  return out;
}

namespace {

// x <- LayerNorm(x + delta), row-wise.
void add_and_norm(Tensor& x, const Tensor& delta, const Tensor& gain, const Tensor& bias, float eps) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    auto dr = delta.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += dr[j];
    layernorm_inplace(r, gain.data(), bias.data(), eps);
  }
}

}  // namespace

Tensor decoder_block(const Tensor& h, const Model& model, std::size_t layer, KVCache& cache,
                     const AttentionContext& ctx, LayerIntervention* intervention) {
  if (layer >= model.config.n_layers) throw InputError("layer index " + std::to_string(layer) + " out of range");
  const auto& lw = model.layer(layer);
  const float eps = model.config.ln_eps;

  Tensor attn = (intervention && intervention->replaces_attention(layer))
                    ? intervention->attention(h, model, layer, cache, ctx)
                    : causal_self_attention(h, model, layer, cache, ctx);
  if (intervention) intervention->after_attention(layer, cache);

  Tensor m = h;
  add_and_norm(m, attn, lw.ln1_gain, lw.ln1_bias, eps);
  Tensor ffn = feed_forward(m, lw);
  add_and_norm(m, ffn, lw.ln2_gain, lw.ln2_bias, eps);
  if (intervention) intervention->after_block(layer, m);
  require_finite(m, "decoder_block");
  return m;
}

Tensor logits_from_hidden(std::span<const float> hidden, const Model& model) {
  Tensor logits({model.config.vocab_size});
  vec_matmul(hidden, model.weights.unembed, logits.data());
  require_finite(logits, "logits");
  return logits;
}

TokenId greedy_argmax(std::span<const float> logits) {
  if (logits.empty()) throw InputError("argmax over empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

PrefillResult prefill(const Model& model, std::span<const TokenId> tokens, AttentionRecorder* recorder,
                      LayerIntervention* intervention) {
  const auto& cfg = model.config;
  if (tokens.empty() || tokens[0] != cfg.bos_id) {
    throw InputError("prompt must start with the BOS token id " + std::to_string(cfg.bos_id));
  }
  if (tokens.size() > cfg.max_seq) {
    throw CapacityError("prompt of " + std::to_string(tokens.size()) + " tokens exceeds max_seq " +
                        std::to_string(cfg.max_seq));
  }
  PrefillResult result{KVCache(cfg), {}};
  Tensor h = embed(tokens, model);
  const AttentionContext ctx{0, recorder};
  for (std::size_t l = 0; l < cfg.n_layers; ++l) h = decoder_block(h, model, l, result.cache, ctx, intervention);
  auto last = h.row(h.rows() - 1);
  result.last_hidden = Tensor::vector({last.begin(), last.end()});
  if (recorder) {
    for (std::size_t l = 0; l < cfg.n_layers; ++l) recorder->on_bos_value(l, result.cache.value_row(l, 0));
  }
  return result;
}

DecodeResult decode_step(const Model& model, KVCache& cache, Tensor& last_hidden, std::size_t step,
                         AttentionRecorder* recorder) {
  if (cache.empty()) throw CacheError("decode_step on an empty cache");
  const std::size_t pos = cache.length();
  if (pos >= cache.capacity()) {
    throw CapacityError("cache is full at " + std::to_string(pos) + " positions");
  }
  DecodeResult result;
  result.logits = logits_from_hidden(last_hidden.data(), model);
  result.token = greedy_argmax(result.logits.data());

  const TokenId tok[1] = {result.token};
  Tensor h = gather_embeddings(tok, model);
  const AttentionContext ctx{step, recorder};
  for (std::size_t l = 0; l < model.config.n_layers; ++l) h = decoder_block(h, model, l, cache, ctx);
  last_hidden = Tensor::vector(h.values());
  return result;
}

GenerationOutput generate(const Model& model, std::span<const TokenId> prompt, std::size_t max_new_tokens,
                          const GenerationFlags& flags, LayerIntervention* intervention) {
  GenerationOutput out;
  if (flags.record_trace) out.trace.emplace(flags.record_queries);
  AttentionRecorder* own = out.trace ? &*out.trace : nullptr;
  TeeRecorder tee({own, flags.extra_recorder});
  AttentionRecorder* rec = (own || flags.extra_recorder) ? &tee : nullptr;

  auto pre = prefill(model, prompt, rec, intervention);
  out.cache = std::move(pre.cache);
  out.last_hidden = std::move(pre.last_hidden);
  for (std::size_t g = 1; g <= max_new_tokens; ++g) {
    auto step = decode_step(model, out.cache, out.last_hidden, g, rec);
    out.tokens.push_back(step.token);
    if (flags.keep_logits) out.logits.push_back(std::move(step.logits));
  }
  return out;
}

}  // namespace sinktrack
