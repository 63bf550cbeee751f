#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

#include "sinktrack/model.hpp"
#include "sinktrack/tensor.hpp"

namespace sinktrack {

enum class SourceForm { pooled, full };
enum class InfoOrigin { prompt_embeddings, external };

std::string_view to_string(SourceForm form);
SourceForm parse_source_form(std::string_view text);

// Half-open range of prompt positions.
struct TokenSpan {
  std::size_t begin = 1;
  std::size_t end = 0;
};

// The information source injected into BOS: one pooled d-vector (m = 1) or
// the full m×d feature matrix. Immutable once built.
class InfoSource {
 public:
  // Gathers input-embedding rows of the prompt over `span` (default: every
  // token after BOS). Position 0 may not be part of the span.
  static InfoSource from_prompt(std::span<const TokenId> tokens, const Model& model, SourceForm form,
                                std::optional<TokenSpan> span = std::nullopt);
  // Wraps caller-supplied features; columns must equal d_model.
  static InfoSource from_external(const Tensor& matrix, SourceForm form, std::size_t d_model);

  SourceForm form() const { return form_; }
  InfoOrigin origin() const { return origin_; }
  // m×d; m == 1 when pooled.
  const Tensor& rows() const { return rows_; }
  std::size_t row_count() const { return rows_.rows(); }
  std::size_t dim() const { return rows_.cols(); }

  // The same source in pooled form; pooling a pooled source returns it as is.
  InfoSource pooled() const;
  // Pooled d-vector (pools on the fly for a full source).
  Tensor vector() const;

 private:
  InfoSource(SourceForm form, InfoOrigin origin, Tensor rows)
      : form_(form), origin_(origin), rows_(std::move(rows)) {}

  SourceForm form_;
  InfoOrigin origin_;
  Tensor rows_;
};

}  // namespace sinktrack
