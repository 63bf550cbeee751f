#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sinktrack/error.hpp"
#include "sinktrack/info_source.hpp"
#include "sinktrack/kv_cache.hpp"
#include "sinktrack/model.hpp"
#include "sinktrack/runtime.hpp"
#include "sinktrack/tensor.hpp"

namespace sinktrack {

enum class InjectionMode { none, hard, soft, sinktrack };

struct LayerSchedule {
  enum class Kind { all, every_k, explicit_layers };
  Kind kind = Kind::every_k;
  std::size_t k = 5;
  std::size_t offset = 0;
  std::vector<std::size_t> layers;  // explicit_layers only; sorted, unique

  static LayerSchedule all() { return {Kind::all, 1, 0, {}}; }
  static LayerSchedule every(std::size_t k, std::size_t offset = 0) { return {Kind::every_k, k, offset, {}}; }
  static LayerSchedule explicit_list(std::vector<std::size_t> layers) {
    return {Kind::explicit_layers, 1, 0, std::move(layers)};
  }
};

// α keeps the original state and (1 − α) is injected, so a schedule whose
// injection decays with depth has α rising: linear_decay needs
// alpha_start < alpha_end, linear_increase needs alpha_start > alpha_end.
struct StrengthSchedule {
  enum class Kind { constant, linear_decay, linear_increase };
  Kind kind = Kind::constant;
  float alpha_start = 1.0f;
  float alpha_end = 1.0f;

  static StrengthSchedule constant(float alpha) { return {Kind::constant, alpha, alpha}; }
  static StrengthSchedule decaying(float start, float end) { return {Kind::linear_decay, start, end}; }
  static StrengthSchedule increasing(float start, float end) { return {Kind::linear_increase, start, end}; }
};

struct InjectionPlan {
  InjectionMode mode = InjectionMode::none;
  LayerSchedule schedule;  // default: every 5th layer from 0
  std::optional<StrengthSchedule> strength;
  SourceForm source_form = SourceForm::pooled;
};

enum class PlanViolation {
  layer_out_of_range,
  bad_interval,
  unsorted_layers,
  empty_schedule,
  missing_strength,
  strength_out_of_range,
  strength_not_allowed,
  strength_order,
  full_source_not_allowed,
  not_scheduled,
};

std::string_view to_string(PlanViolation v);

class PlanValidationError : public PlanError {
 public:
  PlanValidationError(PlanViolation violation, const std::string& message)
      : PlanError(std::string(to_string(violation)) + ": " + message), violation_(violation) {}
  PlanViolation violation() const { return violation_; }

 private:
  PlanViolation violation_;
};

// A plan checked against a model config, with its layer set and per-layer
// strengths resolved.
class ValidatedPlan {
 public:
  const InjectionPlan& plan() const { return plan_; }
  InjectionMode mode() const { return plan_.mode; }
  // Ascending.
  const std::vector<std::size_t>& layers() const { return layers_; }
  bool scheduled(std::size_t layer) const;
  // Soft mode only.
  float alpha_at(std::size_t layer) const;
  const std::vector<float>& alphas() const { return alphas_; }

 private:
  friend ValidatedPlan validate_plan(const InjectionPlan&, const ModelConfig&);
  InjectionPlan plan_;
  std::vector<std::size_t> layers_;
  std::vector<float> alphas_;
};

ValidatedPlan validate_plan(const InjectionPlan& plan, const ModelConfig& config);

// {offset, offset+k, ...} ∩ [0, n_layers) etc. No other validation.
std::vector<std::size_t> resolve_layers(const LayerSchedule& schedule, std::size_t n_layers);

// Overwrites the cached BOS value row of every head at `layer` with the
// matching contiguous d_head chunk of f_info. Keys are untouched.
void hard_inject(KVCache& cache, std::size_t layer, const Tensor& f_info);

// α·h0 + (1−α)·f_info.
Tensor soft_inject(const Tensor& h0, const Tensor& f_info, float alpha);

// Concatenated per-head cross-attention outputs (before W_O) for one query
// row against the info rows projected with the layer's own W_K/W_V.
std::vector<float> cross_attend_heads(std::span<const float> q, const Tensor& info_rows, const LayerWeights& lw,
                                      std::size_t n_heads);

// MHA(Q = h0, K = f_info, V = f_info) with the layer's existing projections
// and no positional information on the info rows. Returns a d-vector.
Tensor cross_attend_bos(const Tensor& h0, const Tensor& info_rows, const LayerWeights& lw, std::size_t n_heads);

// Dual-track MHA sub-layer for a scheduled sinktrack layer: row 0 (BOS) takes
// its output from cross-attention over the info rows only; rows 1..n-1 run the
// standard causal self-attention over the unmodified sequence. The cache gets
// K/V projected from the unmodified h. Output is post-W_O, n×d.
Tensor dual_track_attention(const Tensor& h, const Model& model, std::size_t layer, const ValidatedPlan& plan,
                            const InfoSource& info, KVCache& cache, const AttentionContext& ctx = {});

// Runtime hook that applies a validated plan during prefill.
class InjectionIntervention final : public LayerIntervention {
 public:
  // `info` may be null only for mode none.
  InjectionIntervention(const ValidatedPlan& plan, const InfoSource* info);

  bool replaces_attention(std::size_t layer) const override;
  Tensor attention(const Tensor& h, const Model& model, std::size_t layer, KVCache& cache,
                   const AttentionContext& ctx) override;
  void after_attention(std::size_t layer, KVCache& cache) override;
  void after_block(std::size_t layer, Tensor& h) override;

 private:
  const ValidatedPlan& plan_;
  std::optional<InfoSource> info_;  // already in the plan's source form
  Tensor pooled_;
};

// One decoder block with the plan's intervention (if any) for this layer.
Tensor apply_plan_at_layer(const Tensor& h, const Model& model, std::size_t layer, const ValidatedPlan& plan,
                           const InfoSource* info, KVCache& cache, const AttentionContext& ctx = {});

PrefillResult prefill(const Model& model, std::span<const TokenId> tokens, const ValidatedPlan& plan,
                      const InfoSource* info, AttentionRecorder* recorder = nullptr);

GenerationOutput generate(const Model& model, std::span<const TokenId> prompt, const ValidatedPlan& plan,
                          const InfoSource* info, std::size_t max_new_tokens, const GenerationFlags& flags = {});

std::string_view to_string(InjectionMode mode);
InjectionMode parse_injection_mode(std::string_view text);
std::string_view to_string(LayerSchedule::Kind kind);
LayerSchedule::Kind parse_schedule_kind(std::string_view text);
std::string_view to_string(StrengthSchedule::Kind kind);
StrengthSchedule::Kind parse_strength_kind(std::string_view text);

}  // namespace sinktrack
