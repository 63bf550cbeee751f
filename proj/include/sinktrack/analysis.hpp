#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sinktrack/info_source.hpp"
#include "sinktrack/injection.hpp"
#include "sinktrack/model.hpp"
#include "sinktrack/runtime.hpp"
#include "sinktrack/trace.hpp"

namespace sinktrack {

// One decode step of the drift analysis. Weights of the step's final query are
// averaged over every layer and head before the BOS/others split.
struct DriftRow {
  std::size_t generated_index = 0;    // decode step g
  std::size_t sequence_position = 0;  // 1-based position of the generated token (qpos + 1)
  double attn_to_bos = 0.0;
  double max_attn_others = 0.0;
  double ratio = 0.0;  // attn_to_bos / max_attn_others; +inf when no other key exists
  std::vector<double> attn_to_bos_by_layer;  // head-averaged, index = layer
};

struct DriftReport {
  std::vector<DriftRow> rows;
};

DriftReport drift_report(const AttentionTrace& trace, std::size_t bos_position = 0);

struct SpearmanResult {
  double rho = 0.0;
  double p_value = 1.0;  // two-sided
  std::size_t n = 0;
  bool exact = false;    // true when p came from full permutation enumeration
};

// Average ranks (1-based); tied values share the mean of their ranks.
std::vector<double> average_ranks(std::span<const double> values);

// Spearman's ρ over per-layer scalars. p-value: exact permutation when
// n <= 8, normal approximation z = ρ·√(n−1) otherwise.
SpearmanResult spearman_layers(std::span<const double> before, std::span<const double> after);

inline constexpr std::size_t kExactPermutationMaxN = 8;

// Per-layer mean attention paid to BOS (all heads, steps and queries past
// BOS). Index = layer.
std::vector<double> bos_attention_by_layer(const AttentionTrace& trace, std::size_t bos_position = 0);

// Secondary statistic: for every layer, Spearman ρ between the two traces'
// head-averaged attention-to-BOS sequences over matching (step, query)
// positions, then averaged over layers where ρ is defined.
double mean_layerwise_vector_spearman(const AttentionTrace& before, const AttentionTrace& after,
                                      std::size_t bos_position = 0);

struct ValueNormRow {
  std::size_t layer = 0;
  double l1_before = 0.0;
  double l1_after = 0.0;
  double difference = 0.0;  // l1_after − l1_before
};

struct ValueNormReport {
  std::vector<ValueNormRow> rows;
};

using BosValues = std::map<std::size_t, std::vector<float>>;

ValueNormReport value_norm_report(const BosValues& before, const BosValues& after);
ValueNormReport value_norm_report(const AttentionTrace& before, const AttentionTrace& after);

// BOS followed by a fixed token pattern; `length` counts BOS.
std::vector<TokenId> synthetic_prompt(const ModelConfig& config, std::size_t length);

struct DriftTestResult {
  std::vector<DriftRow> rows;  // one per checkpoint, ascending
  std::vector<TokenId> prompt;
  GenerationOutput output;     // trace recorded with queries
};

// Generates gen_steps tokens after a synthetic prompt of prompt_len tokens and
// samples the drift report at each checkpoint (1-based generated index).
// The info source is built from the prompt in the plan's source form.
DriftTestResult drift_test(const Model& model, const ValidatedPlan& plan, std::size_t prompt_len,
                           std::size_t gen_steps, const std::vector<std::size_t>& checkpoints);
DriftTestResult drift_test(const Model& model, const ValidatedPlan& plan, std::span<const TokenId> prompt,
                           std::size_t gen_steps, const std::vector<std::size_t>& checkpoints);

struct TimingStats {
  double mean_ms = 0.0;
  double stddev_ms = 0.0;  // sample stddev; 0 for a single repetition
  std::vector<double> samples_ms;
};

struct PrefillBenchmark {
  std::size_t repetitions = 0;
  std::size_t prompt_len = 0;
  TimingStats baseline;  // mode none
  TimingStats injected;  // the plan under test
  double delta_ms = 0.0;          // injected.mean − baseline.mean
  double delta_stderr_ms = 0.0;   // standard error of the delta
  double overhead_fraction = 0.0; // delta / baseline.mean
};

// Times prefill (including building the info source) with and without the
// plan. Arms alternate every repetition so drift in machine load hits both.
PrefillBenchmark bench_prefill(const Model& model, const ValidatedPlan& plan, std::span<const TokenId> prompt,
                               std::size_t repetitions, std::size_t warmup = 5);

// Report emitters. CSV column order:
//   drift:    gen_idx,seq_pos,attn_to_bos,max_attn_others,ratio
//   spearman: rho,p_value,n,exact
//   l1norm:   layer,l1_before,l1_after,difference
nlohmann::json to_json(const DriftRow& row);
nlohmann::json to_json(const std::vector<DriftRow>& rows);
nlohmann::json to_json(const SpearmanResult& result);
nlohmann::json to_json(const ValueNormReport& report);
std::string to_csv(const std::vector<DriftRow>& rows);
std::string to_csv(const SpearmanResult& result);
std::string to_csv(const ValueNormReport& report);
nlohmann::json to_json(const PrefillBenchmark& bench);
std::string to_csv(const PrefillBenchmark& bench);

}  // namespace sinktrack
