#include "sinktrack/injection.hpp"

#include <algorithm>
#include <cmath>

namespace sinktrack {

std::string_view to_string(PlanViolation v) {
  switch (v) {
    case PlanViolation::layer_out_of_range: return "layer_out_of_range";
    case PlanViolation::bad_interval: return "bad_interval";
    case PlanViolation::unsorted_layers: return "unsorted_layers";
    case PlanViolation::empty_schedule: return "empty_schedule";
    case PlanViolation::missing_strength: return "missing_strength";
    case PlanViolation::strength_out_of_range: return "strength_out_of_range";
    case PlanViolation::strength_not_allowed: return "strength_not_allowed";
    case PlanViolation::strength_order: return "strength_order";
    case PlanViolation::full_source_not_allowed: return "full_source_not_allowed";
    case PlanViolation::not_scheduled: return "not_scheduled";
  }
  return "unknown";
}

std::vector<std::size_t> resolve_layers(const LayerSchedule& schedule, std::size_t n_layers) {
  std::vector<std::size_t> out;
  switch (schedule.kind) {
    case LayerSchedule::Kind::all:
      for (std::size_t l = 0; l < n_layers; ++l) out.push_back(l);
      break;
    case LayerSchedule::Kind::every_k:
      if (schedule.k == 0) break;
      for (std::size_t l = schedule.offset; l < n_layers; l += schedule.k) out.push_back(l);
      break;
    case LayerSchedule::Kind::explicit_layers:
      for (auto l : schedule.layers) {
        if (l < n_layers) out.push_back(l);
      }
      break;
  }
  return out;
}

namespace {

[[noreturn]] void violate(PlanViolation v, const std::string& msg) { throw PlanValidationError(v, msg); }

bool in_unit_interval(float a) { return std::isfinite(a) && a >= 0.0f && a <= 1.0f; }

}  // namespace

ValidatedPlan validate_plan(const InjectionPlan& plan, const ModelConfig& config) {
  ValidatedPlan out;
  out.plan_ = plan;
  if (plan.mode == InjectionMode::none) return out;

  const auto& s = plan.schedule;
  const std::size_t L = config.n_layers;
  switch (s.kind) {
    case LayerSchedule::Kind::all:
      break;
    case LayerSchedule::Kind::every_k:
      if (s.k == 0) violate(PlanViolation::bad_interval, "every_k needs k >= 1");
      if (s.offset >= L) {
        violate(PlanViolation::layer_out_of_range,
                "offset " + std::to_string(s.offset) + " is not below n_layers " + std::to_string(L));
      }
      break;
    case LayerSchedule::Kind::explicit_layers:
      if (s.layers.empty()) violate(PlanViolation::empty_schedule, "explicit schedule lists no layers");
      for (std::size_t i = 0; i < s.layers.size(); ++i) {
        if (s.layers[i] >= L) {
          violate(PlanViolation::layer_out_of_range,
                  "layer " + std::to_string(s.layers[i]) + " is not below n_layers " + std::to_string(L));
        }
        if (i > 0 && s.layers[i] <= s.layers[i - 1]) {
          violate(PlanViolation::unsorted_layers, "explicit layers must be strictly ascending");
        }
      }
      break;
  }
  out.layers_ = resolve_layers(s, L);

  if (plan.mode == InjectionMode::soft) {
    if (!plan.strength) violate(PlanViolation::missing_strength, "soft mode needs a strength schedule");
    const auto& st = *plan.strength;
    if (!in_unit_interval(st.alpha_start) || !in_unit_interval(st.alpha_end)) {
      violate(PlanViolation::strength_out_of_range, "alpha values must lie in [0, 1]");
    }
    if (st.kind == StrengthSchedule::Kind::linear_decay && !(st.alpha_start < st.alpha_end)) {
      violate(PlanViolation::strength_order, "linear_decay needs alpha_start < alpha_end (alpha keeps the original state)");
    }
    if (st.kind == StrengthSchedule::Kind::linear_increase && !(st.alpha_start > st.alpha_end)) {
      violate(PlanViolation::strength_order, "linear_increase needs alpha_start > alpha_end");
    }
    const std::size_t n = out.layers_.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (st.kind == StrengthSchedule::Kind::constant || n == 1) {
        out.alphas_.push_back(st.alpha_start);
      } else {
        const float t = static_cast<float>(i) / static_cast<float>(n - 1);
        out.alphas_.push_back(st.alpha_start + (st.alpha_end - st.alpha_start) * t);
      }
    }
  } else if (plan.strength) {
    violate(PlanViolation::strength_not_allowed,
            std::string(to_string(plan.mode)) + " mode takes no strength schedule");
  }

  if ((plan.mode == InjectionMode::hard || plan.mode == InjectionMode::soft) &&
      plan.source_form != SourceForm::pooled) {
    violate(PlanViolation::full_source_not_allowed,
            std::string(to_string(plan.mode)) + " mode injects a single d-vector and needs the pooled source");
  }
  return out;
}

bool ValidatedPlan::scheduled(std::size_t layer) const {
  return std::binary_search(layers_.begin(), layers_.end(), layer);
}

float ValidatedPlan::alpha_at(std::size_t layer) const {
  auto it = std::lower_bound(layers_.begin(), layers_.end(), layer);
  if (it == layers_.end() || *it != layer || alphas_.empty()) {
    throw PlanValidationError(PlanViolation::not_scheduled, "no strength for layer " + std::to_string(layer));
  }
  return alphas_[static_cast<std::size_t>(it - layers_.begin())];
}

void hard_inject(KVCache& cache, std::size_t layer, const Tensor& f_info) {
  const std::size_t dh = cache.d_head();
  if (f_info.size() != cache.n_heads() * dh) {
    throw DimensionError("f_info has " + std::to_string(f_info.size()) + " elements, cache rows have " +
                         std::to_string(cache.n_heads() * dh));
  }
  if (cache.layer_length(layer) == 0) throw CacheError("hard_inject on an empty cache layer");
  for (std::size_t h = 0; h < cache.n_heads(); ++h) {
    auto v = cache.mutable_value(layer, h, 0);
    std::copy_n(f_info.data().begin() + static_cast<std::ptrdiff_t>(h * dh), dh, v.begin());
  }
}

Tensor soft_inject(const Tensor& h0, const Tensor& f_info, float alpha) {
  if (h0.size() != f_info.size()) {
    throw DimensionError("soft_inject length mismatch: h0 " + shape_to_string(h0.shape()) + ", f_info " +
                         shape_to_string(f_info.shape()));
  }
  if (!in_unit_interval(alpha)) throw PlanValidationError(PlanViolation::strength_out_of_range, "alpha outside [0, 1]");
  Tensor out({h0.size()});
  for (std::size_t i = 0; i < h0.size(); ++i) out[i] = alpha * h0[i] + (1.0f - alpha) * f_info[i];
  return out;
}

std::vector<float> cross_attend_heads(std::span<const float> q, const Tensor& info_rows, const LayerWeights& lw,
                                      std::size_t n_heads) {
  if (info_rows.empty() || info_rows.rows() == 0) throw InputError("cross-attention needs at least one info row");
  const std::size_t d = q.size();
  if (info_rows.cols() != d) {
    throw DimensionError("info rows have " + std::to_string(info_rows.cols()) + " columns, expected " +
                         std::to_string(d));
  }
  const std::size_t m = info_rows.rows();
  const std::size_t dh = d / n_heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const Tensor k_info = matmul(info_rows, lw.wk);
  const Tensor v_info = matmul(info_rows, lw.wv);

  std::vector<float> out(d, 0.0f);
  std::vector<float> w(m);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t base = h * dh;
    for (std::size_t j = 0; j < m; ++j) {
      auto k = k_info.row(j);
      float dot = 0.0f;
      for (std::size_t p = 0; p < dh; ++p) dot += q[base + p] * k[base + p];
      w[j] = dot * scale;
    }
    softmax_inplace(w);
    for (std::size_t j = 0; j < m; ++j) {
      auto v = v_info.row(j);
      for (std::size_t p = 0; p < dh; ++p) out[base + p] += w[j] * v[base + p];
    }
  }
  return out;
}

Tensor cross_attend_bos(const Tensor& h0, const Tensor& info_rows, const LayerWeights& lw, std::size_t n_heads) {
  Tensor q({lw.wq.cols()});
  vec_matmul(h0.data(), lw.wq, q.data());
  const auto heads = cross_attend_heads(q.data(), info_rows, lw, n_heads);
  Tensor out({lw.wo.cols()});
  vec_matmul(heads, lw.wo, out.data());
  return out;
}

Tensor dual_track_attention(const Tensor& h, const Model& model, std::size_t layer, const ValidatedPlan& plan,
                            const InfoSource& info, KVCache& cache, const AttentionContext& ctx) {
  if (plan.mode() != InjectionMode::sinktrack || !plan.scheduled(layer)) {
    throw PlanValidationError(PlanViolation::not_scheduled,
                              "layer " + std::to_string(layer) + " is not a scheduled sinktrack layer");
  }
  if (cache.layer_length(layer) != 0) {
    throw CacheError("dual-track attention runs at prefill only; layer " + std::to_string(layer) + " cache is not empty");
  }
  const auto& lw = model.layer(layer);
  auto qkv = project_qkv(h, lw);
  cache.append(layer, qkv.k, qkv.v);

  Tensor heads(h.shape());
  // Track 2: regular tokens, unmodified causal self-attention.
  attend_causal_rows(qkv.q, cache, layer, 0, 1, heads, ctx);
  // Track 1: BOS queries the info rows only.
  const auto first = cross_attend_heads(qkv.q.row(0), info.rows(), lw, model.config.n_heads);
  std::copy(first.begin(), first.end(), heads.row(0).begin());
  return matmul(heads, lw.wo);
}

InjectionIntervention::InjectionIntervention(const ValidatedPlan& plan, const InfoSource* info) : plan_(plan) {
  if (plan.mode() == InjectionMode::none) return;
  if (!info) throw InputError(std::string(to_string(plan.mode())) + " mode needs an info source");
  info_ = plan.plan().source_form == SourceForm::pooled ? info->pooled() : *info;
  pooled_ = info_->vector();
}

bool InjectionIntervention::replaces_attention(std::size_t layer) const {
  return plan_.mode() == InjectionMode::sinktrack && plan_.scheduled(layer);
}

Tensor InjectionIntervention::attention(const Tensor& h, const Model& model, std::size_t layer, KVCache& cache,
                                        const AttentionContext& ctx) {
  return dual_track_attention(h, model, layer, plan_, *info_, cache, ctx);
}

void InjectionIntervention::after_attention(std::size_t layer, KVCache& cache) {
  if (plan_.mode() == InjectionMode::hard && plan_.scheduled(layer)) hard_inject(cache, layer, pooled_);
}

void InjectionIntervention::after_block(std::size_t layer, Tensor& h) {
  if (plan_.mode() != InjectionMode::soft || !plan_.scheduled(layer)) return;
  auto bos = h.row(0);
  const Tensor mixed = soft_inject(Tensor::vector({bos.begin(), bos.end()}), pooled_, plan_.alpha_at(layer));
  std::copy(mixed.data().begin(), mixed.data().end(), bos.begin());
}

Tensor apply_plan_at_layer(const Tensor& h, const Model& model, std::size_t layer, const ValidatedPlan& plan,
                           const InfoSource* info, KVCache& cache, const AttentionContext& ctx) {
  InjectionIntervention hook(plan, info);
  return decoder_block(h, model, layer, cache, ctx, &hook);
}

PrefillResult prefill(const Model& model, std::span<const TokenId> tokens, const ValidatedPlan& plan,
                      const InfoSource* info, AttentionRecorder* recorder) {
  InjectionIntervention hook(plan, info);
  return prefill(model, tokens, recorder, &hook);
}

GenerationOutput generate(const Model& model, std::span<const TokenId> prompt, const ValidatedPlan& plan,
                          const InfoSource* info, std::size_t max_new_tokens, const GenerationFlags& flags) {
  InjectionIntervention hook(plan, info);
  return generate(model, prompt, max_new_tokens, flags, &hook);
}

std::string_view to_string(InjectionMode mode) {
  switch (mode) {
    case InjectionMode::none: return "none";
    case InjectionMode::hard: return "hard";
    case InjectionMode::soft: return "soft";
    case InjectionMode::sinktrack: return "sinktrack";
  }
  return "none";
}

InjectionMode parse_injection_mode(std::string_view text) {
  if (text == "none") return InjectionMode::none;
  if (text == "hard") return InjectionMode::hard;
  if (text == "soft") return InjectionMode::soft;
  if (text == "sinktrack") return InjectionMode::sinktrack;
  throw InputError("unknown injection mode '" + std::string(text) + "' (expected none|hard|soft|sinktrack)");
}

std::string_view to_string(LayerSchedule::Kind kind) {
  switch (kind) {
    case LayerSchedule::Kind::all: return "all";
    case LayerSchedule::Kind::every_k: return "every_k";
    case LayerSchedule::Kind::explicit_layers: return "explicit";
  }
  return "every_k";
}

LayerSchedule::Kind parse_schedule_kind(std::string_view text) {
  if (text == "all") return LayerSchedule::Kind::all;
  if (text == "every_k") return LayerSchedule::Kind::every_k;
  if (text == "explicit") return LayerSchedule::Kind::explicit_layers;
  throw InputError("unknown schedule kind '" + std::string(text) + "' (expected all|every_k|explicit)");
}

std::string_view to_string(StrengthSchedule::Kind kind) {
  switch (kind) {
    case StrengthSchedule::Kind::constant: return "constant";
    case StrengthSchedule::Kind::linear_decay: return "linear_decay";
    case StrengthSchedule::Kind::linear_increase: return "linear_increase";
  }
  return "constant";
}

StrengthSchedule::Kind parse_strength_kind(std::string_view text) {
  if (text == "constant") return StrengthSchedule::Kind::constant;
  if (text == "linear_decay") return StrengthSchedule::Kind::linear_decay;
  if (text == "linear_increase") return StrengthSchedule::Kind::linear_increase;
  throw InputError("unknown strength kind '" + std::string(text) + "' (expected constant|linear_decay|linear_increase)");
}

}  // namespace sinktrack
