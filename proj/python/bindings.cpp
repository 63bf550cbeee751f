#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include <fstream>

#include "sinktrack/analysis.hpp"
#include "sinktrack/error.hpp"
#include "sinktrack/injection.hpp"
#include "sinktrack/tensor_file.hpp"
#include "sinktrack/toy_model.hpp"

namespace py = pybind11;
using namespace sinktrack;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

py::dict drift_row_dict(const DriftRow& r) {
  py::dict d;
  d["gen_idx"] = r.generated_index;
  d["seq_pos"] = r.sequence_position;
  d["attn_to_bos"] = r.attn_to_bos;
  d["max_attn_others"] = r.max_attn_others;
  d["ratio"] = r.ratio;
  d["attn_to_bos_by_layer"] = r.attn_to_bos_by_layer;
  return d;
}

py::list value_norm_rows(const ValueNormReport& rep) {
  py::list rows;
  for (const auto& r : rep.rows) {
    py::dict d;
    d["layer"] = r.layer;
    d["l1_before"] = r.l1_before;
    d["l1_after"] = r.l1_after;
    d["difference"] = r.difference;
    rows.append(d);
  }
  return rows;
}

InjectionPlan make_plan(const std::string& mode, const std::string& schedule, std::size_t k, std::size_t offset,
                        std::vector<std::size_t> layers, std::optional<float> alpha, const std::string& alpha_kind,
                        float alpha_start, float alpha_end, const std::string& source) {
  InjectionPlan p;
  p.mode = parse_injection_mode(mode);
  switch (parse_schedule_kind(schedule)) {
    case LayerSchedule::Kind::all: p.schedule = LayerSchedule::all(); break;
    case LayerSchedule::Kind::every_k: p.schedule = LayerSchedule::every(k, offset); break;
    case LayerSchedule::Kind::explicit_layers: p.schedule = LayerSchedule::explicit_list(std::move(layers)); break;
  }
  if (!alpha_kind.empty() && alpha_kind != "constant") {
    p.strength = StrengthSchedule{parse_strength_kind(alpha_kind), alpha_start, alpha_end};
  } else if (alpha || alpha_kind == "constant") {
    p.strength = StrengthSchedule::constant(alpha.value_or(1.0f));
  }
  if (source.empty()) p.source_form = p.mode == InjectionMode::sinktrack ? SourceForm::full : SourceForm::pooled;
  else p.source_form = parse_source_form(source);
  return p;
}

}  // namespace

PYBIND11_MODULE(_sinktrack, m) {
  m.doc() = "Context anchoring through the BOS attention sink on a small reference decoder";

  static auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<VocabError>(m, "VocabError", base.ptr());
  py::register_exception<CacheError>(m, "CacheError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<PlanError>(m, "PlanError", base.ptr());
  py::register_exception<TraceError>(m, "TraceError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  // most derived last so they win the translator lookup
  py::register_exception<CapacityError>(m, "CapacityError", base.ptr());
  py::register_exception<PlanValidationError>(m, "PlanValidationError", base.ptr());

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("d_ff", &ModelConfig::d_ff)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("max_seq", &ModelConfig::max_seq)
      .def_readwrite("ln_eps", &ModelConfig::ln_eps)
      .def_readwrite("bos_id", &ModelConfig::bos_id)
      .def_property_readonly("d_head", &ModelConfig::d_head)
      .def("validate", &ModelConfig::validate);

  py::class_<Model>(m, "Model")
      .def_readonly("config", &Model::config)
      .def_property_readonly("embedding", [](const Model& md) { return to_numpy(md.weights.embedding); })
      .def_property_readonly("unembed", [](const Model& md) { return to_numpy(md.weights.unembed); });

  m.def("canonical_config", &canonical_config);
  m.attr("CANONICAL_SEED") = kCanonicalSeed;
  m.def("make_toy_model", &make_toy_model, py::arg("config") = canonical_config(), py::arg("seed") = kCanonicalSeed);
  m.def("save_model", &save_model, py::arg("model"), py::arg("path"));
  m.def("load_model", &load_model, py::arg("path"));

  py::class_<InjectionPlan>(m, "InjectionPlan")
      .def(py::init(&make_plan), py::arg("mode") = "none", py::arg("schedule") = "every_k", py::arg("k") = 5,
           py::arg("offset") = 0, py::arg("layers") = std::vector<std::size_t>{}, py::arg("alpha") = py::none(),
           py::arg("alpha_kind") = "", py::arg("alpha_start") = 1.0f, py::arg("alpha_end") = 1.0f,
           py::arg("source") = "")
      .def_property_readonly("mode", [](const InjectionPlan& p) { return std::string(to_string(p.mode)); })
      .def_property_readonly("source", [](const InjectionPlan& p) { return std::string(to_string(p.source_form)); });

  py::class_<ValidatedPlan>(m, "ValidatedPlan")
      .def_property_readonly("layers", &ValidatedPlan::layers)
      .def_property_readonly("alphas", &ValidatedPlan::alphas)
      .def_property_readonly("mode", [](const ValidatedPlan& p) { return std::string(to_string(p.mode())); });
  m.def("validate_plan", &validate_plan, py::arg("plan"), py::arg("config"));

  py::class_<InfoSource>(m, "InfoSource")
      .def_static(
          "from_prompt",
          [](const std::vector<TokenId>& tokens, const Model& model, const std::string& form,
             std::optional<std::pair<std::size_t, std::size_t>> span) {
            std::optional<TokenSpan> s;
            if (span) s = TokenSpan{span->first, span->second};
            return InfoSource::from_prompt(tokens, model, parse_source_form(form), s);
          },
          py::arg("tokens"), py::arg("model"), py::arg("form") = "pooled", py::arg("span") = py::none())
      .def_static(
          "from_external",
          [](const FloatArray& a, const std::string& form, std::size_t d_model) {
            return InfoSource::from_external(from_numpy(a), parse_source_form(form), d_model);
          },
          py::arg("matrix"), py::arg("form"), py::arg("d_model"))
      .def_property_readonly("rows", [](const InfoSource& s) { return to_numpy(s.rows()); })
      .def_property_readonly("form", [](const InfoSource& s) { return std::string(to_string(s.form())); })
      .def("pooled", &InfoSource::pooled);

  py::class_<AttentionTrace>(m, "AttentionTrace")
      .def("__len__", &AttentionTrace::size)
      .def("records",
           [](const AttentionTrace& t) {
             py::list out;
             for (const auto& r : t.records()) {
               py::dict d;
               d["step"] = r.step;
               d["layer"] = r.layer;
               d["head"] = r.head;
               d["qpos"] = r.qpos;
               d["weights"] = r.weights;
               out.append(d);
             }
             return out;
           })
      .def_property_readonly("bos_values", &AttentionTrace::bos_values)
      .def("write_jsonl", [](const AttentionTrace& t, const std::string& path) {
        std::ofstream out(path);
        if (!out) throw IoError("cannot open for writing: " + path);
        write_trace_jsonl(t, out);
      });
  m.def("read_trace_jsonl", py::overload_cast<const std::string&>(&read_trace_jsonl), py::arg("path"));

  m.def(
      "generate",
      [](const Model& model, const std::vector<TokenId>& prompt, std::size_t max_new_tokens,
         std::optional<InjectionPlan> plan, const InfoSource* info, bool keep_logits, bool record_trace) {
        const auto vp = validate_plan(plan.value_or(InjectionPlan{}), model.config);
        GenerationFlags flags;
        flags.keep_logits = keep_logits;
        flags.record_trace = record_trace;
        std::optional<InfoSource> own;
        if (!info && vp.mode() != InjectionMode::none) {
          own = InfoSource::from_prompt(prompt, model, vp.plan().source_form);
          info = &*own;
        }
        GenerationOutput out;
        {
          py::gil_scoped_release release;
          out = generate(model, prompt, vp, info, max_new_tokens, flags);
        }
        py::dict d;
        d["tokens"] = out.tokens;
        if (keep_logits) {
          py::list logits;
          for (const auto& l : out.logits) logits.append(to_numpy(l));
          d["logits"] = logits;
        }
        if (out.trace) d["trace"] = std::move(*out.trace);
        return d;
      },
      py::arg("model"), py::arg("prompt"), py::arg("max_new_tokens") = 16, py::arg("plan") = py::none(),
      py::arg("info") = nullptr, py::arg("keep_logits") = false, py::arg("record_trace") = false,
      "Greedy generation; with an injection plan and no info source, f_info is built from the prompt.");

  m.def("synthetic_prompt", &synthetic_prompt, py::arg("config"), py::arg("length"));

  m.def(
      "spearman_layers",
      [](const std::vector<double>& before, const std::vector<double>& after) {
        const auto r = spearman_layers(before, after);
        py::dict d;
        d["rho"] = r.rho;
        d["p_value"] = r.p_value;
        d["n"] = r.n;
        d["exact"] = r.exact;
        return d;
      },
      py::arg("before"), py::arg("after"));
  m.def("bos_attention_by_layer", &bos_attention_by_layer, py::arg("trace"), py::arg("bos_position") = 0);
  m.def(
      "drift_report",
      [](const AttentionTrace& t) {
        py::list rows;
        for (const auto& r : drift_report(t).rows) rows.append(drift_row_dict(r));
        return rows;
      },
      py::arg("trace"));
  m.def(
      "value_norm_report",
      [](const AttentionTrace& before, const AttentionTrace& after) {
        return value_norm_rows(value_norm_report(before, after));
      },
      py::arg("before"), py::arg("after"));
  m.def(
      "drift_test",
      [](const Model& model, const InjectionPlan& plan, std::size_t prompt_len, std::size_t gen_steps,
         const std::vector<std::size_t>& checkpoints) {
        const auto res = drift_test(model, validate_plan(plan, model.config), prompt_len, gen_steps, checkpoints);
        py::list rows;
        for (const auto& r : res.rows) rows.append(drift_row_dict(r));
        return rows;
      },
      py::arg("model"), py::arg("plan"), py::arg("prompt_len"), py::arg("gen_steps"), py::arg("checkpoints"));
}
