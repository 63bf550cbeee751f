#pragma once

#include <cstddef>
#include <fstream>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace sinktrack {

// One attention row: query at `qpos` over key positions 0..qpos.
struct TraceRecord {
  std::size_t step = 0;  // 0 = prefill, g >= 1 = decode step g
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t qpos = 0;
  std::vector<float> weights;
  // Per-head query vector, kept only when query capture is enabled.
  std::vector<float> query;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

// Sink interface the runtime emits into. Implementations decide what to keep.
class AttentionRecorder {
 public:
  virtual ~AttentionRecorder() = default;
  virtual void on_attention(std::size_t step, std::size_t layer, std::size_t head, std::size_t qpos,
                            std::span<const float> weights, std::span<const float> query) = 0;
  // BOS value row (all heads concatenated) for a layer, emitted once after prefill.
  virtual void on_bos_value(std::size_t layer, std::span<const float> value) = 0;
};

// Throws TraceError unless `weights` is a probability vector over keys 0..qpos
// (non-negative, sum 1 ± 1e-6, exactly zero past qpos).
void check_attention_row(std::size_t qpos, std::span<const float> weights);

// In-memory trace.
class AttentionTrace : public AttentionRecorder {
 public:
  explicit AttentionTrace(bool keep_queries = false) : keep_queries_(keep_queries) {}

  void record(std::size_t step, std::size_t layer, std::size_t head, std::size_t qpos,
              std::span<const float> weights, std::span<const float> query = {});
  void set_bos_value(std::size_t layer, std::span<const float> value);

  void on_attention(std::size_t step, std::size_t layer, std::size_t head, std::size_t qpos,
                    std::span<const float> weights, std::span<const float> query) override {
    record(step, layer, head, qpos, weights, keep_queries_ ? query : std::span<const float>{});
  }
  void on_bos_value(std::size_t layer, std::span<const float> value) override { set_bos_value(layer, value); }

  const std::vector<TraceRecord>& records() const { return records_; }
  // layer -> BOS value row
  const std::map<std::size_t, std::vector<float>>& bos_values() const { return bos_values_; }
  bool empty() const { return records_.empty(); }
  std::size_t size() const { return records_.size(); }
  bool keeps_queries() const { return keep_queries_; }

  friend bool operator==(const AttentionTrace& a, const AttentionTrace& b) {
    return a.records_ == b.records_ && a.bos_values_ == b.bos_values_;
  }

 private:
  bool keep_queries_;
  std::vector<TraceRecord> records_;
  std::map<std::size_t, std::vector<float>> bos_values_;
};

// Streams records to a JSON-lines file as they arrive. Attention lines carry
// keys step, layer, head, qpos, weights (plus query when captured); BOS value
// snapshots are lines with "kind": "bos_value", layer, value.
class JsonlTraceWriter : public AttentionRecorder {
 public:
  explicit JsonlTraceWriter(const std::string& path, bool write_queries = false);

  void on_attention(std::size_t step, std::size_t layer, std::size_t head, std::size_t qpos,
                    std::span<const float> weights, std::span<const float> query) override;
  void on_bos_value(std::size_t layer, std::span<const float> value) override;

  void flush();

 private:
  std::string path_;
  std::ofstream out_;
  bool write_queries_;
};

// Forwards every event to several recorders (null entries are skipped).
class TeeRecorder : public AttentionRecorder {
 public:
  explicit TeeRecorder(std::vector<AttentionRecorder*> sinks) : sinks_(std::move(sinks)) {}
  void on_attention(std::size_t step, std::size_t layer, std::size_t head, std::size_t qpos,
                    std::span<const float> weights, std::span<const float> query) override;
  void on_bos_value(std::size_t layer, std::span<const float> value) override;

 private:
  std::vector<AttentionRecorder*> sinks_;
};

AttentionTrace read_trace_jsonl(const std::string& path);
AttentionTrace read_trace_jsonl(std::istream& in);

void write_trace_jsonl(const AttentionTrace& trace, std::ostream& out);

}  // namespace sinktrack
