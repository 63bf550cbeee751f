#pragma once

// Byte serialization of a generation run (tokens, logits, KV cache, trace).
// Core-only so a binary without the injection library can produce it.

#include <sstream>
#include <string>
#include <vector>

#include "sinktrack/runtime.hpp"
#include "sinktrack/tensor_file.hpp"
#include "sinktrack/trace.hpp"

namespace sinktrack::dump {

// The fixed prompt both sides of the transparency check run.
inline std::vector<TokenId> baseline_prompt() { return {0, 17, 3, 42, 8, 25, 11, 60, 5, 33, 19, 2}; }
inline constexpr std::size_t kBaselineNewTokens = 16;

inline std::string encode_run(const GenerationOutput& run) {
  TensorFile f;
  std::vector<float> toks(run.tokens.begin(), run.tokens.end());
  if (!toks.empty()) f.tensors["tokens"] = Tensor::vector(toks);
  for (std::size_t i = 0; i < run.logits.size(); ++i) f.tensors["logits." + std::to_string(i)] = run.logits[i];
  const auto& cache = run.cache;
  for (std::size_t l = 0; l < cache.n_layers(); ++l) {
    const std::size_t n = cache.layer_length(l), d = cache.n_heads() * cache.d_head();
    Tensor k({n, d}), v({n, d});
    for (std::size_t p = 0; p < n; ++p) {
      auto kr = cache.key_row(l, p), vr = cache.value_row(l, p);
      std::copy(kr.begin(), kr.end(), k.row(p).begin());
      std::copy(vr.begin(), vr.end(), v.row(p).begin());
    }
    f.tensors["cache." + std::to_string(l) + ".k"] = std::move(k);
    f.tensors["cache." + std::to_string(l) + ".v"] = std::move(v);
  }
  f.tensors["last_hidden"] = run.last_hidden;
  auto bytes = encode_tensor_file(f);
  std::string out(bytes.begin(), bytes.end());
  if (run.trace) {
    std::ostringstream ss;
    write_trace_jsonl(*run.trace, ss);
    out += ss.str();
  }
  return out;
}

inline GenerationFlags baseline_flags() {
  GenerationFlags flags;
  flags.keep_logits = true;
  flags.record_trace = true;
  flags.record_queries = true;
  return flags;
}

}  // namespace sinktrack::dump
