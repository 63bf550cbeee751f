#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sinktrack/analysis.hpp"
#include "sinktrack/error.hpp"
#include "sinktrack/injection.hpp"
#include "sinktrack/tensor_file.hpp"
#include "sinktrack/toy_model.hpp"

using namespace sinktrack;
using nlohmann::json;

namespace {

// Bad flags or inputs the user can fix; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string model_path;
  std::string prompt;  // "0,5,7"
  std::string prompt_file;
  std::string mode = "none";
  std::string schedule = "every_k";
  std::size_t k = 5;
  std::size_t offset = 0;
  std::vector<std::size_t> layers;
  std::string alpha_kind;
  float alpha = 1.0f;
  float alpha_start = 1.0f;
  float alpha_end = 1.0f;
  std::string source;  // empty: full for sinktrack, pooled otherwise
  std::string info_span;  // "B:E"
  std::string info_tensor;
  std::string info_tensor_name;
  std::size_t max_new_tokens = 16;
  std::string trace_path;
  bool trace_queries = false;
  std::string format = "json";
  bool alpha_given = false;
};

std::vector<TokenId> parse_ids(const std::string& text) {
  std::vector<TokenId> ids;
  std::string cleaned = text;
  for (char& c : cleaned)
    if (c == ',' || c == '[' || c == ']') c = ' ';
  std::istringstream in(cleaned);
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(tok, &used);
      if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
      ids.push_back(static_cast<TokenId>(v));
    } catch (const std::exception&) {
      throw UsageError("not a token id: '" + tok + "'");
    }
  }
  return ids;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Values from a --config JSON document become the defaults that flags then override.
void apply_config_file(const std::string& path, RunConfig& rc) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  try {
    get("model", rc.model_path);
    if (j.contains("prompt")) {
      const auto& p = j.at("prompt");
      rc.prompt = p.is_string() ? p.get<std::string>() : p.dump();
    }
    get("prompt_file", rc.prompt_file);
    get("mode", rc.mode);
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      if (s.contains("kind")) s.at("kind").get_to(rc.schedule);
      if (s.contains("k")) s.at("k").get_to(rc.k);
      if (s.contains("offset")) s.at("offset").get_to(rc.offset);
      if (s.contains("layers")) s.at("layers").get_to(rc.layers);
    }
    if (j.contains("strength")) {
      const auto& s = j.at("strength");
      rc.alpha_given = true;
      if (s.contains("kind")) s.at("kind").get_to(rc.alpha_kind);
      if (s.contains("alpha")) s.at("alpha").get_to(rc.alpha);
      if (s.contains("alpha_start")) s.at("alpha_start").get_to(rc.alpha_start);
      if (s.contains("alpha_end")) s.at("alpha_end").get_to(rc.alpha_end);
    }
    get("source_form", rc.source);
    if (j.contains("info_span")) {
      const auto& s = j.at("info_span");
      rc.info_span = s.is_string() ? s.get<std::string>()
                                   : std::to_string(s.at(0).get<std::size_t>()) + ":" + std::to_string(s.at(1).get<std::size_t>());
    }
    get("info_tensor", rc.info_tensor);
    get("info_tensor_name", rc.info_tensor_name);
    get("max_new_tokens", rc.max_new_tokens);
    get("trace", rc.trace_path);
    get("trace_queries", rc.trace_queries);
    get("format", rc.format);
  } catch (const json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
}

std::vector<TokenId> load_prompt(const RunConfig& rc) {
  if (!rc.prompt.empty() && !rc.prompt_file.empty()) throw UsageError("give either --prompt or --prompt-file");
  auto ids = !rc.prompt_file.empty() ? parse_ids(read_text(rc.prompt_file)) : parse_ids(rc.prompt);
  if (ids.empty()) throw UsageError("a prompt is required (--prompt or --prompt-file)");
  return ids;
}

InjectionPlan build_plan(const RunConfig& rc) {
  InjectionPlan plan;
  try {
    plan.mode = parse_injection_mode(rc.mode);
    switch (parse_schedule_kind(rc.schedule)) {
      case LayerSchedule::Kind::all: plan.schedule = LayerSchedule::all(); break;
      case LayerSchedule::Kind::every_k: plan.schedule = LayerSchedule::every(rc.k, rc.offset); break;
      case LayerSchedule::Kind::explicit_layers: plan.schedule = LayerSchedule::explicit_list(rc.layers); break;
    }
    if (rc.alpha_given || !rc.alpha_kind.empty()) {
      const auto kind = rc.alpha_kind.empty() ? StrengthSchedule::Kind::constant : parse_strength_kind(rc.alpha_kind);
      if (kind == StrengthSchedule::Kind::constant) plan.strength = StrengthSchedule::constant(rc.alpha);
      else plan.strength = StrengthSchedule{kind, rc.alpha_start, rc.alpha_end};
    }
    if (rc.source.empty()) {
      plan.source_form = plan.mode == InjectionMode::sinktrack ? SourceForm::full : SourceForm::pooled;
    } else {
      plan.source_form = parse_source_form(rc.source);
    }
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
  return plan;
}

std::optional<TokenSpan> parse_span(const std::string& text) {
  if (text.empty()) return std::nullopt;
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw UsageError("--info-span expects B:E");
  try {
    return TokenSpan{std::stoul(text.substr(0, colon)), std::stoul(text.substr(colon + 1))};
  } catch (const std::exception&) {
    throw UsageError("--info-span expects B:E, got '" + text + "'");
  }
}

std::optional<InfoSource> build_info(const RunConfig& rc, const ValidatedPlan& plan, const Model& model,
                                     const std::vector<TokenId>& prompt) {
  if (plan.mode() == InjectionMode::none) return std::nullopt;
  const auto form = plan.plan().source_form;
  if (!rc.info_tensor.empty()) {
    const auto file = load_tensor_file(rc.info_tensor);
    std::string name = rc.info_tensor_name;
    if (name.empty()) {
      if (file.tensors.size() != 1) throw UsageError("info tensor file holds several tensors; pick one with --info-tensor-name");
      name = file.tensors.begin()->first;
    }
    const auto it = file.tensors.find(name);
    if (it == file.tensors.end()) throw MissingTensorError("no tensor '" + name + "' in " + rc.info_tensor);
    return InfoSource::from_external(it->second, form, model.config.d_model);
  }
  return InfoSource::from_prompt(prompt, model, form, parse_span(rc.info_span));
}

void add_plan_options(CLI::App& cmd, RunConfig& rc) {
  cmd.add_option("--mode", rc.mode, "none|hard|soft|sinktrack");
  cmd.add_option("--schedule", rc.schedule, "all|every_k|explicit");
  cmd.add_option("--k", rc.k, "Interval for every_k");
  cmd.add_option("--offset", rc.offset, "First layer for every_k");
  cmd.add_option("--layers", rc.layers, "Layer list for explicit")->delimiter(',');
  cmd.add_option("--alpha-kind", rc.alpha_kind, "constant|linear_decay|linear_increase");
  cmd.add_option_function<float>(
      "--alpha", [&rc](float v) { rc.alpha = v; rc.alpha_given = true; }, "Constant soft strength");
  cmd.add_option("--alpha-start", rc.alpha_start);
  cmd.add_option("--alpha-end", rc.alpha_end);
  cmd.add_option("--source", rc.source, "pooled|full (default: full for sinktrack)");
  cmd.add_option("--info-span", rc.info_span, "Prompt positions B:E (half-open) used as f_info");
  cmd.add_option("--info-tensor", rc.info_tensor, "STKW file holding an external f_info matrix");
  cmd.add_option("--info-tensor-name", rc.info_tensor_name);
}

void add_format_option(CLI::App& cmd, RunConfig& rc) {
  cmd.add_option("--format", rc.format, "json|csv")->check(CLI::IsMember({"json", "csv"}));
}

template <class Report>
void emit(const Report& r, const std::string& format) {
  if (format == "csv") std::cout << to_csv(r);
  else std::cout << to_json(r).dump(2) << '\n';
}

AttentionTrace read_trace_input(const std::string& path) {
  auto t = read_trace_jsonl(path);
  if (t.empty() && t.bos_values().empty()) throw UsageError("trace " + path + " is empty");
  return t;
}

Model load_model_checked(const std::string& path) {
  if (path.empty()) throw UsageError("--model is required");
  return load_model(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context anchoring through the BOS attention sink on a desk-scale decoder"};
  app.require_subcommand(1);
  app.fallthrough();
  RunConfig rc;
  std::string config_path;
  app.add_option("--config", config_path, "JSON run configuration; flags override it")->check(CLI::ExistingFile);

  // make-toy-model
  auto* mk = app.add_subcommand("make-toy-model", "Write a seeded toy model file");
  ModelConfig toy = canonical_config();
  std::uint64_t seed = kCanonicalSeed;
  std::string out_path = "toy_model.stkw";
  mk->add_option("--out,-o", out_path, "Output model file");
  mk->add_option("--layers", toy.n_layers);
  mk->add_option("--d-model", toy.d_model);
  mk->add_option("--heads", toy.n_heads);
  mk->add_option("--d-ff", toy.d_ff);
  mk->add_option("--vocab", toy.vocab_size);
  mk->add_option("--max-seq", toy.max_seq);
  mk->add_option("--seed", seed, "PRNG seed (STKW_SEED overrides)");

  // gen
  auto* gen = app.add_subcommand("gen", "Greedy generation under an injection plan");
  gen->add_option("--model,-m", rc.model_path);
  gen->add_option("--prompt,-p", rc.prompt, "Token ids, e.g. 0,5,7");
  gen->add_option("--prompt-file", rc.prompt_file);
  gen->add_option("--max-new-tokens,-n", rc.max_new_tokens);
  gen->add_option("--trace", rc.trace_path, "Write the attention trace as JSON lines");
  gen->add_flag("--trace-queries", rc.trace_queries, "Include per-head query vectors in the trace");
  add_plan_options(*gen, rc);

  // analyze
  auto* an = app.add_subcommand("analyze", "Reports over saved traces");
  an->require_subcommand(1);
  std::string before_path, after_path, trace_path;
  std::vector<std::size_t> checkpoints;
  bool vector_stat = false;
  auto* sp = an->add_subcommand("spearman", "Layer-wise rank correlation of attention to BOS");
  sp->add_option("--before", before_path)->required()->check(CLI::ExistingFile);
  sp->add_option("--after", after_path)->required()->check(CLI::ExistingFile);
  sp->add_flag("--vector", vector_stat, "Also report the mean per-layer vector correlation");
  add_format_option(*sp, rc);
  auto* dr = an->add_subcommand("drift", "Attention to BOS per decode step");
  dr->add_option("--trace", trace_path)->required()->check(CLI::ExistingFile);
  dr->add_option("--checkpoints", checkpoints, "Decode steps to report (default: all)")->delimiter(',');
  add_format_option(*dr, rc);
  auto* l1 = an->add_subcommand("l1norm", "L1 norm of the BOS value vector per layer");
  l1->add_option("--before", before_path)->required()->check(CLI::ExistingFile);
  l1->add_option("--after", after_path)->required()->check(CLI::ExistingFile);
  add_format_option(*l1, rc);

  // bench-prefill
  auto* bench = app.add_subcommand("bench-prefill", "Prefill latency with and without injection");
  std::size_t prompt_len = 64, reps = 500, warmup = 5;
  bench->add_option("--model,-m", rc.model_path);
  bench->add_option("--prompt-len", prompt_len)->check(CLI::PositiveNumber);
  bench->add_option("--repetitions,-r", reps)->check(CLI::PositiveNumber);
  bench->add_option("--warmup", warmup);
  add_plan_options(*bench, rc);
  add_format_option(*bench, rc);

  // Load --config first so explicit flags win over it.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
  }

  try {
    if (!config_path.empty()) apply_config_file(config_path, rc);
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*mk) {
      if (const char* env = std::getenv("STKW_SEED")) {
        try {
          seed = std::stoull(env);
        } catch (const std::exception&) {
          throw UsageError(std::string("STKW_SEED is not an integer: ") + env);
        }
      }
      try {
        toy.validate();
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      save_model(make_toy_model(toy, seed), out_path);
      std::cout << "wrote " << out_path << ": layers=" << toy.n_layers << " d_model=" << toy.d_model
                << " heads=" << toy.n_heads << " d_ff=" << toy.d_ff << " vocab=" << toy.vocab_size
                << " max_seq=" << toy.max_seq << " seed=" << seed << '\n';
    } else if (*gen) {
      const auto model = load_model_checked(rc.model_path);
      const auto prompt = load_prompt(rc);
      const auto plan = validate_plan(build_plan(rc), model.config);
      const auto info = build_info(rc, plan, model, prompt);
      std::optional<JsonlTraceWriter> writer;
      GenerationFlags flags;
      if (!rc.trace_path.empty()) {
        writer.emplace(rc.trace_path, rc.trace_queries);
        flags.extra_recorder = &*writer;
      }
      const auto out = generate(model, prompt, plan, info ? &*info : nullptr, rc.max_new_tokens, flags);
      if (writer) writer->flush();
      for (auto t : out.tokens) std::cout << t << '\n';
    } else if (*sp) {
      const auto before = read_trace_input(before_path), after = read_trace_input(after_path);
      const auto r = spearman_layers(bos_attention_by_layer(before), bos_attention_by_layer(after));
      if (vector_stat && rc.format == "json") {
        auto j = to_json(r);
        j["vector_rho_mean"] = mean_layerwise_vector_spearman(before, after);
        std::cout << j.dump(2) << '\n';
      } else {
        emit(r, rc.format);
      }
    } else if (*dr) {
      const auto trace = read_trace_input(trace_path);
      auto rows = drift_report(trace).rows;
      if (!checkpoints.empty()) {
        std::erase_if(rows, [&](const DriftRow& r) {
          return std::find(checkpoints.begin(), checkpoints.end(), r.generated_index) == checkpoints.end();
        });
      }
      emit(rows, rc.format);
    } else if (*l1) {
      emit(value_norm_report(read_trace_input(before_path), read_trace_input(after_path)), rc.format);
    } else if (*bench) {
      const auto model = load_model_checked(rc.model_path);
      const auto plan = validate_plan(build_plan(rc), model.config);
      if (!rc.info_tensor.empty() || !rc.info_span.empty()) {
        throw UsageError("bench-prefill builds f_info from the whole prompt; --info-span/--info-tensor are not used");
      }
      const auto prompt = synthetic_prompt(model.config, prompt_len);
      emit(bench_prefill(model, plan, prompt, reps, warmup), rc.format);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const PlanError& e) {
    std::cerr << "invalid plan: " << e.what() << '\n';
    return 2;
  } catch (const TraceError& e) {
    // unusable trace input
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
