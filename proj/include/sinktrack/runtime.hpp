#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "sinktrack/kv_cache.hpp"
#include "sinktrack/model.hpp"
#include "sinktrack/tensor.hpp"
#include "sinktrack/trace.hpp"

namespace sinktrack {

// Reference post-norm decoder:
//   M = LayerNorm(H + MHA(H))
//   H' = LayerNorm(M + FFN(M)),  FFN = linear -> GELU -> linear
// No positional encoding; greedy decoding only.

// Where an attention call sits in the session: step 0 is prefill, step g the
// g-th decode step. The recorder may be null.
struct AttentionContext {
  std::size_t step = 0;
  AttentionRecorder* recorder = nullptr;
};

// Hook points used by context-anchoring interventions. The runtime itself has
// no knowledge of any particular intervention; with no hook attached (or a
// hook that declines every layer) the computation is the plain decoder.
class LayerIntervention {
 public:
  virtual ~LayerIntervention() = default;
  // True when `attention` should replace the MHA sub-layer at this layer.
  virtual bool replaces_attention(std::size_t layer) const = 0;
  // Must append this layer's K/V rows to the cache exactly as the standard
  // path would, and return the post-W_O attention output (n×d).
  virtual Tensor attention(const Tensor& h, const Model& model, std::size_t layer, KVCache& cache,
                           const AttentionContext& ctx) = 0;
  // Called after the MHA sub-layer has written this layer's cache rows.
  virtual void after_attention(std::size_t layer, KVCache& cache) = 0;
  // Called on the block output H^(l) before it feeds layer l+1.
  virtual void after_block(std::size_t layer, Tensor& h) = 0;
};

// Rows of the embedding table for a prompt; tokens[0] must be BOS.
Tensor embed(std::span<const TokenId> tokens, const Model& model);
// Same lookup without the BOS requirement (decode steps, info spans).
Tensor gather_embeddings(std::span<const TokenId> tokens, const Model& model);

struct QkvRows {
  Tensor q, k, v;  // each n×d
};
QkvRows project_qkv(const Tensor& h, const LayerWeights& lw);

// Per-head softmax(q·K[0..last]ᵀ/√d_head) for a single query against the
// cached keys of `layer`. Writes last+1 weights.
void attention_weights(std::span<const float> q_head, const KVCache& cache, std::size_t layer,
                       std::size_t head, std::size_t last, std::vector<float>& weights);

// Causal attention for query rows [first_row, n) of `q`, where row i sits at
// cache position base_pos + i and sees keys 0..base_pos+i. Writes the
// concatenated head outputs (pre W_O) into the same rows of `heads_out`.
void attend_causal_rows(const Tensor& q, const KVCache& cache, std::size_t layer, std::size_t base_pos,
                        std::size_t first_row, Tensor& heads_out, const AttentionContext& ctx);

// Standard MHA sub-layer (without the residual/norm): projects Q/K/V, appends
// K/V to the cache, attends causally, applies W_O.
Tensor causal_self_attention(const Tensor& h, const Model& model, std::size_t layer, KVCache& cache,
                             const AttentionContext& ctx = {});

// Position-wise FFN sub-layer output (without the residual/norm).
Tensor feed_forward(const Tensor& m, const LayerWeights& lw);

Tensor decoder_block(const Tensor& h, const Model& model, std::size_t layer, KVCache& cache,
                     const AttentionContext& ctx = {}, LayerIntervention* intervention = nullptr);

Tensor logits_from_hidden(std::span<const float> hidden, const Model& model);

// Lowest index wins ties.
TokenId greedy_argmax(std::span<const float> logits);

struct PrefillResult {
  KVCache cache;
  Tensor last_hidden;  // final-layer hidden state of the last prompt token, length d
};

// Runs the whole prompt through all layers. After the pass the BOS value rows
// of every layer are reported to the recorder (if any).
PrefillResult prefill(const Model& model, std::span<const TokenId> tokens, AttentionRecorder* recorder = nullptr,
                      LayerIntervention* intervention = nullptr);

struct DecodeResult {
  TokenId token = 0;
  Tensor logits;  // the logits `token` was chosen from
};

// Picks the next token from `last_hidden`, feeds it through the model at
// position cache.length(), and replaces `last_hidden` with the new state.
DecodeResult decode_step(const Model& model, KVCache& cache, Tensor& last_hidden, std::size_t step,
                         AttentionRecorder* recorder = nullptr);

struct GenerationFlags {
  bool keep_logits = false;
  bool record_trace = false;
  bool record_queries = false;
  // Additional sink (e.g. a JSON-lines writer); not owned.
  AttentionRecorder* extra_recorder = nullptr;
};

struct GenerationOutput {
  std::vector<TokenId> tokens;
  std::vector<Tensor> logits;  // one per emitted token when keep_logits
  std::optional<AttentionTrace> trace;
  KVCache cache;
  Tensor last_hidden;
};

// Prefill once, then max_new_tokens greedy decode steps.
GenerationOutput generate(const Model& model, std::span<const TokenId> prompt, std::size_t max_new_tokens,
                          const GenerationFlags& flags = {}, LayerIntervention* intervention = nullptr);

}  // namespace sinktrack
