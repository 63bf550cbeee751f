#include "sinktrack/trace.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "sinktrack/error.hpp"

namespace sinktrack {

using json = nlohmann::json;

void check_attention_row(std::size_t qpos, std::span<const float> weights) {
  if (weights.size() < qpos + 1) {
    throw TraceError("attention row for query " + std::to_string(qpos) + " has only " +
                     std::to_string(weights.size()) + " weights");
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    const float w = weights[j];
    if (!std::isfinite(w) || w < 0.0f) throw TraceError("attention weight is negative or not finite");
    if (j > qpos && w != 0.0f) {
      throw TraceError("attention row for query " + std::to_string(qpos) + " has mass on future key " +
                       std::to_string(j));
    }
    sum += w;
  }
  if (std::fabs(sum - 1.0) > 1e-6) {
    throw TraceError("attention row for query " + std::to_string(qpos) + " sums to " + std::to_string(sum));
  }
}

void AttentionTrace::record(std::size_t step, std::size_t layer, std::size_t head, std::size_t qpos,
                            std::span<const float> weights, std::span<const float> query) {
  check_attention_row(qpos, weights);
  TraceRecord r;
  r.step = step;
  r.layer = layer;
  r.head = head;
  r.qpos = qpos;
  r.weights.assign(weights.begin(), weights.end());
  r.query.assign(query.begin(), query.end());
  records_.push_back(std::move(r));
}

void AttentionTrace::set_bos_value(std::size_t layer, std::span<const float> value) {
  bos_values_[layer] = std::vector<float>(value.begin(), value.end());
}

namespace {

json attention_line(std::size_t step, std::size_t layer, std::size_t head, std::size_t qpos,
                    std::span<const float> weights, std::span<const float> query) {
  json j;
  j["step"] = step;
  j["layer"] = layer;
  j["head"] = head;
  j["qpos"] = qpos;
  j["weights"] = std::vector<float>(weights.begin(), weights.end());
  if (!query.empty()) j["query"] = std::vector<float>(query.begin(), query.end());
  return j;
}

json bos_value_line(std::size_t layer, std::span<const float> value) {
  json j;
  j["kind"] = "bos_value";
  j["layer"] = layer;
  j["value"] = std::vector<float>(value.begin(), value.end());
  return j;
}

}  // namespace

JsonlTraceWriter::JsonlTraceWriter(const std::string& path, bool write_queries)
    : path_(path), out_(path, std::ios::out | std::ios::trunc), write_queries_(write_queries) {
  if (!out_) throw IoError("cannot open trace file for writing: " + path);
}

void JsonlTraceWriter::on_attention(std::size_t step, std::size_t layer, std::size_t head, std::size_t qpos,
                                    std::span<const float> weights, std::span<const float> query) {
  check_attention_row(qpos, weights);
  out_ << attention_line(step, layer, head, qpos, weights, write_queries_ ? query : std::span<const float>{})
              .dump()
       << '\n';
  if (!out_) throw IoError("write failed: " + path_);
}

void JsonlTraceWriter::on_bos_value(std::size_t layer, std::span<const float> value) {
  out_ << bos_value_line(layer, value).dump() << '\n';
  if (!out_) throw IoError("write failed: " + path_);
}

void JsonlTraceWriter::flush() {
  out_.flush();
  if (!out_) throw IoError("flush failed: " + path_);
}

void TeeRecorder::on_attention(std::size_t step, std::size_t layer, std::size_t head, std::size_t qpos,
                               std::span<const float> weights, std::span<const float> query) {
  for (auto* s : sinks_) {
    if (s) s->on_attention(step, layer, head, qpos, weights, query);
  }
}

void TeeRecorder::on_bos_value(std::size_t layer, std::span<const float> value) {
  for (auto* s : sinks_) {
    if (s) s->on_bos_value(layer, value);
  }
}

AttentionTrace read_trace_jsonl(std::istream& in) {
  AttentionTrace trace(true);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (j.value("kind", std::string{}) == "bos_value") {
        const auto value = j.at("value").get<std::vector<float>>();
        trace.set_bos_value(j.at("layer").get<std::size_t>(), value);
        continue;
      }
      const auto weights = j.at("weights").get<std::vector<float>>();
      std::vector<float> query;
      if (j.contains("query")) query = j.at("query").get<std::vector<float>>();
      trace.record(j.at("step").get<std::size_t>(), j.at("layer").get<std::size_t>(),
                   j.at("head").get<std::size_t>(), j.at("qpos").get<std::size_t>(), weights, query);
    } catch (const json::exception& e) {
      throw TraceError("trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return trace;
}

AttentionTrace read_trace_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace file: " + path);
  return read_trace_jsonl(in);
}

void write_trace_jsonl(const AttentionTrace& trace, std::ostream& out) {
  for (const auto& r : trace.records()) {
    out << attention_line(r.step, r.layer, r.head, r.qpos, r.weights, r.query).dump() << '\n';
  }
  for (const auto& [layer, value] : trace.bos_values()) out << bos_value_line(layer, value).dump() << '\n';
}

}  // namespace sinktrack
