#include "sinktrack/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <tuple>

#include "sinktrack/error.hpp"

namespace sinktrack {

using json = nlohmann::json;

DriftReport drift_report(const AttentionTrace& trace, std::size_t bos_position) {
  if (trace.empty()) throw TraceError("drift report needs a non-empty trace");
  std::map<std::size_t, std::size_t> final_qpos;  // step -> final query position
  for (const auto& r : trace.records()) {
    if (r.step == 0) continue;
    auto [it, inserted] = final_qpos.emplace(r.step, r.qpos);
    if (!inserted) it->second = std::max(it->second, r.qpos);
  }
  if (final_qpos.empty()) throw TraceError("trace has no decode-step records");

  std::size_t n_layers = 0;
  for (const auto& r : trace.records()) n_layers = std::max(n_layers, r.layer + 1);

  struct Acc {
    std::vector<double> sum;
    std::size_t count = 0;
    std::vector<double> bos_by_layer;
    std::vector<std::size_t> count_by_layer;
  };
  std::map<std::size_t, Acc> accs;
  for (const auto& [step, qpos] : final_qpos) {
    if (bos_position > qpos) throw TraceError("BOS position lies past the query");
    auto& a = accs[step];
    a.sum.assign(qpos + 1, 0.0);
    a.bos_by_layer.assign(n_layers, 0.0);
    a.count_by_layer.assign(n_layers, 0);
  }
  for (const auto& r : trace.records()) {
    if (r.step == 0 || r.qpos != final_qpos.at(r.step)) continue;
    auto& a = accs.at(r.step);
    for (std::size_t j = 0; j <= r.qpos; ++j) a.sum[j] += r.weights[j];
    ++a.count;
    a.bos_by_layer[r.layer] += r.weights[bos_position];
    ++a.count_by_layer[r.layer];
  }

  DriftReport report;
  for (const auto& [step, a] : accs) {
    DriftRow row;
    row.generated_index = step;
    row.sequence_position = final_qpos.at(step) + 1;
    const double denom = static_cast<double>(a.count);
    row.attn_to_bos = a.sum[bos_position] / denom;
    double mx = 0.0;
    bool any_other = false;
    for (std::size_t j = 0; j < a.sum.size(); ++j) {
      if (j == bos_position) continue;
      const double v = a.sum[j] / denom;
      if (!any_other || v > mx) mx = v;
      any_other = true;
    }
    row.max_attn_others = mx;
    row.ratio = (any_other && mx > 0.0) ? row.attn_to_bos / mx : std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < n_layers; ++l) {
      row.attn_to_bos_by_layer.push_back(a.count_by_layer[l] ? a.bos_by_layer[l] / a.count_by_layer[l] : 0.0);
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  for (double v : values) {
    if (std::isnan(v)) throw InputError("cannot rank NaN");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // sorted slots i..j-1 hold ranks i+1..j
    const double rank = static_cast<double>(i + 1 + j) / 2.0;
    for (std::size_t p = i; p < j; ++p) ranks[order[p]] = rank;
    i = j;
  }
  return ranks;
}

namespace {

// Ranks doubled so ties (x.5) become integers; all sums below are exact.
std::vector<std::int64_t> doubled_ranks(std::span<const double> values) {
  const auto r = average_ranks(values);
  std::vector<std::int64_t> out(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = std::llround(2.0 * r[i]);
  return out;
}

// n·Σxy − Σx·Σy
std::int64_t centered_cross(const std::vector<std::int64_t>& x, const std::vector<std::int64_t>& y) {
  const auto n = static_cast<std::int64_t>(x.size());
  std::int64_t sx = 0, sy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxy += x[i] * y[i];
  }
  return n * sxy - sx * sy;
}

}  // namespace

SpearmanResult spearman_layers(std::span<const double> before, std::span<const double> after) {
  if (before.size() != after.size()) {
    throw DimensionError("spearman inputs differ in length: " + std::to_string(before.size()) + " vs " +
                         std::to_string(after.size()));
  }
  const std::size_t n = before.size();
  if (n < 3) throw InputError("spearman needs at least 3 layers, got " + std::to_string(n));
  const auto rx = doubled_ranks(before);
  const auto ry = doubled_ranks(after);
  const std::int64_t sxx = centered_cross(rx, rx);
  const std::int64_t syy = centered_cross(ry, ry);
  if (sxx == 0 || syy == 0) throw InputError("spearman is undefined for a constant input");
  const std::int64_t sxy = centered_cross(rx, ry);

  SpearmanResult res;
  res.n = n;
  res.rho = std::clamp(static_cast<double>(sxy) / std::sqrt(static_cast<double>(sxx) * static_cast<double>(syy)),
                       -1.0, 1.0);
  if (n <= kExactPermutationMaxN) {
    // Distinct arrangements of a multiset are equally likely under uniform
    // shuffling, so counting them gives the permutation p-value directly.
    auto perm = ry;
    std::sort(perm.begin(), perm.end());
    const std::int64_t observed = sxy < 0 ? -sxy : sxy;
    std::uint64_t total = 0, extreme = 0;
    do {
      const std::int64_t c = centered_cross(rx, perm);
      ++total;
      if ((c < 0 ? -c : c) >= observed) ++extreme;
    } while (std::next_permutation(perm.begin(), perm.end()));
    res.p_value = static_cast<double>(extreme) / static_cast<double>(total);
    res.exact = true;
  } else {
    const double z = res.rho * std::sqrt(static_cast<double>(n - 1));
    res.p_value = std::erfc(std::fabs(z) / std::sqrt(2.0));
  }
  return res;
}

std::vector<double> bos_attention_by_layer(const AttentionTrace& trace, std::size_t bos_position) {
  std::vector<double> sum;
  std::vector<std::size_t> count;
  for (const auto& r : trace.records()) {
    if (r.qpos <= bos_position) continue;
    if (r.layer >= sum.size()) {
      sum.resize(r.layer + 1, 0.0);
      count.resize(r.layer + 1, 0);
    }
    sum[r.layer] += r.weights[bos_position];
    ++count[r.layer];
  }
  if (sum.empty()) throw TraceError("trace has no queries past BOS");
  for (std::size_t l = 0; l < sum.size(); ++l) {
    if (count[l] == 0) throw TraceError("trace has no records for layer " + std::to_string(l));
    sum[l] /= static_cast<double>(count[l]);
  }
  return sum;
}

namespace {

using LayerStepQuery = std::tuple<std::size_t, std::size_t, std::size_t>;

std::map<LayerStepQuery, double> head_averaged_bos(const AttentionTrace& trace, std::size_t bos_position) {
  std::map<LayerStepQuery, std::pair<double, std::size_t>> acc;
  for (const auto& r : trace.records()) {
    if (r.qpos <= bos_position) continue;
    auto& [s, c] = acc[{r.layer, r.step, r.qpos}];
    s += r.weights[bos_position];
    ++c;
  }
  std::map<LayerStepQuery, double> out;
  for (const auto& [key, sc] : acc) out.emplace(key, sc.first / static_cast<double>(sc.second));
  return out;
}

}  // namespace

double mean_layerwise_vector_spearman(const AttentionTrace& before, const AttentionTrace& after,
                                      std::size_t bos_position) {
  const auto a = head_averaged_bos(before, bos_position);
  const auto b = head_averaged_bos(after, bos_position);
  if (a.size() != b.size()) throw TraceError("traces have different query layouts");
  std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> by_layer;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first) throw TraceError("traces have different query layouts");
    auto& [x, y] = by_layer[std::get<0>(ia->first)];
    x.push_back(ia->second);
    y.push_back(ib->second);
  }
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& [layer, xy] : by_layer) {
    if (xy.first.size() < 3) continue;
    try {
      total += spearman_layers(xy.first, xy.second).rho;
      ++used;
    } catch (const InputError&) {
      // constant sequence at this layer; ρ undefined
    }
  }
  if (used == 0) throw TraceError("no layer has a defined rank correlation");
  return total / static_cast<double>(used);
}

ValueNormReport value_norm_report(const BosValues& before, const BosValues& after) {
  if (before.size() != after.size()) {
    throw DimensionError("runs expose " + std::to_string(before.size()) + " vs " + std::to_string(after.size()) +
                         " layers of BOS values");
  }
  if (before.empty()) throw TraceError("runs carry no BOS value snapshots");
  ValueNormReport report;
  for (auto ib = before.begin(), ia = after.begin(); ib != before.end(); ++ib, ++ia) {
    if (ib->first != ia->first) throw DimensionError("runs cover different layers");
    if (ib->second.size() != ia->second.size()) throw DimensionError("BOS value widths differ");
    ValueNormRow row;
    row.layer = ib->first;
    row.l1_before = l1_norm(ib->second);
    row.l1_after = l1_norm(ia->second);
    row.difference = row.l1_after - row.l1_before;
    report.rows.push_back(row);
  }
  return report;
}

ValueNormReport value_norm_report(const AttentionTrace& before, const AttentionTrace& after) {
  return value_norm_report(before.bos_values(), after.bos_values());
}

std::vector<TokenId> synthetic_prompt(const ModelConfig& config, std::size_t length) {
  if (length == 0) throw InputError("prompt length must count at least the BOS token");
  std::vector<TokenId> others;
  for (TokenId t = 0; t < config.vocab_size; ++t) {
    if (t != config.bos_id) others.push_back(t);
  }
  if (others.empty() && length > 1) throw InputError("vocabulary holds only BOS");
  std::vector<TokenId> prompt{config.bos_id};
  for (std::size_t i = 1; i < length; ++i) prompt.push_back(others[(i * 7 + 3) % others.size()]);
  return prompt;
}

DriftTestResult drift_test(const Model& model, const ValidatedPlan& plan, std::span<const TokenId> prompt,
                           std::size_t gen_steps, const std::vector<std::size_t>& checkpoints) {
  for (auto c : checkpoints) {
    if (c < 1 || c > gen_steps) {
      throw InputError("checkpoint " + std::to_string(c) + " outside [1, " + std::to_string(gen_steps) + "]");
    }
  }
  DriftTestResult result;
  result.prompt.assign(prompt.begin(), prompt.end());
  std::optional<InfoSource> info;
  if (plan.mode() != InjectionMode::none) info = InfoSource::from_prompt(prompt, model, plan.plan().source_form);

  GenerationFlags flags;
  flags.record_trace = true;
  flags.record_queries = true;
  result.output = generate(model, prompt, plan, info ? &*info : nullptr, gen_steps, flags);
  if (gen_steps == 0 || checkpoints.empty()) return result;

  const auto report = drift_report(*result.output.trace);
  std::vector<std::size_t> wanted = checkpoints;
  std::sort(wanted.begin(), wanted.end());
  wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());
  for (const auto& row : report.rows) {
    if (std::binary_search(wanted.begin(), wanted.end(), row.generated_index)) result.rows.push_back(row);
  }
  return result;
}

DriftTestResult drift_test(const Model& model, const ValidatedPlan& plan, std::size_t prompt_len,
                           std::size_t gen_steps, const std::vector<std::size_t>& checkpoints) {
  const auto prompt = synthetic_prompt(model.config, prompt_len);
  return drift_test(model, plan, std::span<const TokenId>(prompt), gen_steps, checkpoints);
}

namespace {

TimingStats summarize(std::vector<double> samples) {
  TimingStats t;
  const double n = static_cast<double>(samples.size());
  t.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  if (samples.size() > 1) {
    double ss = 0.0;
    for (double v : samples) ss += (v - t.mean_ms) * (v - t.mean_ms);
    t.stddev_ms = std::sqrt(ss / (n - 1.0));
  }
  t.samples_ms = std::move(samples);
  return t;
}

}  // namespace

PrefillBenchmark bench_prefill(const Model& model, const ValidatedPlan& plan, std::span<const TokenId> prompt,
                               std::size_t repetitions, std::size_t warmup) {
  if (repetitions == 0) throw InputError("benchmark needs at least one repetition");
  const auto none = validate_plan(InjectionPlan{}, model.config);
  using clock = std::chrono::steady_clock;
  auto run = [&](const ValidatedPlan& p) {
    const auto start = clock::now();
    std::optional<InfoSource> info;
    if (p.mode() != InjectionMode::none) info = InfoSource::from_prompt(prompt, model, p.plan().source_form);
    auto res = prefill(model, prompt, p, info ? &*info : nullptr);
    const auto stop = clock::now();
    if (res.last_hidden.empty()) throw NumericError("prefill produced no hidden state");
    return std::chrono::duration<double, std::milli>(stop - start).count();
  };
  for (std::size_t i = 0; i < warmup; ++i) {
    run(none);
    run(plan);
  }
  std::vector<double> a, b;
  a.reserve(repetitions);
  b.reserve(repetitions);
  for (std::size_t i = 0; i < repetitions; ++i) {
    if (i % 2 == 0) {
      a.push_back(run(none));
      b.push_back(run(plan));
    } else {
      b.push_back(run(plan));
      a.push_back(run(none));
    }
  }
  PrefillBenchmark out;
  out.repetitions = repetitions;
  out.prompt_len = prompt.size();
  out.baseline = summarize(std::move(a));
  out.injected = summarize(std::move(b));
  out.delta_ms = out.injected.mean_ms - out.baseline.mean_ms;
  const double n = static_cast<double>(repetitions);
  out.delta_stderr_ms = std::sqrt((out.baseline.stddev_ms * out.baseline.stddev_ms +
                                   out.injected.stddev_ms * out.injected.stddev_ms) / n);
  out.overhead_fraction = out.baseline.mean_ms > 0.0 ? out.delta_ms / out.baseline.mean_ms : 0.0;
  return out;
}

namespace {

json number(double v) {
  // JSON has no infinity; an unbounded ratio is written as null.
  if (!std::isfinite(v)) return nullptr;
  return v;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

json to_json(const DriftRow& row) {
  return {{"gen_idx", row.generated_index},
          {"seq_pos", row.sequence_position},
          {"attn_to_bos", row.attn_to_bos},
          {"max_attn_others", row.max_attn_others},
          {"ratio", number(row.ratio)},
          {"attn_to_bos_by_layer", row.attn_to_bos_by_layer}};
}

json to_json(const std::vector<DriftRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) out.push_back(to_json(r));
  return out;
}

json to_json(const SpearmanResult& r) {
  return {{"rho", r.rho}, {"p_value", r.p_value}, {"n", r.n}, {"exact", r.exact}};
}

json to_json(const ValueNormReport& report) {
  json out = json::array();
  for (const auto& r : report.rows) {
    out.push_back({{"layer", r.layer}, {"l1_before", r.l1_before}, {"l1_after", r.l1_after}, {"difference", r.difference}});
  }
  return out;
}

std::string to_csv(const std::vector<DriftRow>& rows) {
  std::string out = "gen_idx,seq_pos,attn_to_bos,max_attn_others,ratio\n";
  for (const auto& r : rows) {
    out += std::to_string(r.generated_index) + "," + std::to_string(r.sequence_position) + "," + fmt(r.attn_to_bos) +
           "," + fmt(r.max_attn_others) + "," + fmt(r.ratio) + "\n";
  }
  return out;
}

std::string to_csv(const SpearmanResult& r) {
  return "rho,p_value,n,exact\n" + fmt(r.rho) + "," + fmt(r.p_value) + "," + std::to_string(r.n) + "," +
         (r.exact ? "true" : "false") + "\n";
}

std::string to_csv(const ValueNormReport& report) {
  std::string out = "layer,l1_before,l1_after,difference\n";
  for (const auto& r : report.rows) {
    out += std::to_string(r.layer) + "," + fmt(r.l1_before) + "," + fmt(r.l1_after) + "," + fmt(r.difference) + "\n";
  }
  return out;
}

json to_json(const PrefillBenchmark& b) {
  auto arm = [](const TimingStats& t) { return json{{"mean_ms", t.mean_ms}, {"stddev_ms", t.stddev_ms}}; };
  return {{"repetitions", b.repetitions},
          {"prompt_len", b.prompt_len},
          {"none", arm(b.baseline)},
          {"injected", arm(b.injected)},
          {"delta_ms", b.delta_ms},
          {"delta_stderr_ms", b.delta_stderr_ms},
          {"overhead_pct", 100.0 * b.overhead_fraction}};
}

std::string to_csv(const PrefillBenchmark& b) {
  std::string out = "arm,repetitions,mean_ms,stddev_ms\n";
  out += "none," + std::to_string(b.repetitions) + "," + fmt(b.baseline.mean_ms) + "," + fmt(b.baseline.stddev_ms) + "\n";
  out += "injected," + std::to_string(b.repetitions) + "," + fmt(b.injected.mean_ms) + "," + fmt(b.injected.stddev_ms) + "\n";
  out += "delta," + std::to_string(b.repetitions) + "," + fmt(b.delta_ms) + "," + fmt(b.delta_stderr_ms) + "\n";
  return out;
}

}  // namespace sinktrack
