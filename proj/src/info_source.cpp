#include "sinktrack/info_source.hpp"

#include <string>

#include "sinktrack/error.hpp"
#include "sinktrack/runtime.hpp"

namespace sinktrack {

std::string_view to_string(SourceForm form) { return form == SourceForm::pooled ? "pooled" : "full"; }

SourceForm parse_source_form(std::string_view text) {
  if (text == "pooled") return SourceForm::pooled;
  if (text == "full") return SourceForm::full;
  throw InputError("unknown source form '" + std::string(text) + "' (expected pooled|full)");
}

namespace {

Tensor as_matrix(Tensor t) {
  if (t.rank() == 1) return Tensor::matrix(1, t.size(), t.values());
  return t;
}

}  // namespace

InfoSource InfoSource::from_prompt(std::span<const TokenId> tokens, const Model& model, SourceForm form,
                                   std::optional<TokenSpan> span) {
  const TokenSpan s = span.value_or(TokenSpan{1, tokens.size()});
  if (s.begin == 0) throw InputError("info span may not include the BOS position 0");
  if (s.end > tokens.size()) {
    throw InputError("info span end " + std::to_string(s.end) + " exceeds prompt length " +
                     std::to_string(tokens.size()));
  }
  if (s.begin >= s.end) throw InputError("info span is empty");
  Tensor rows = gather_embeddings(tokens.subspan(s.begin, s.end - s.begin), model);
  if (form == SourceForm::pooled) rows = as_matrix(mean_pool_rows(rows));
  return InfoSource(form, InfoOrigin::prompt_embeddings, std::move(rows));
}

InfoSource InfoSource::from_external(const Tensor& matrix, SourceForm form, std::size_t d_model) {
  if (matrix.empty()) throw InputError("external info matrix is empty");
  if (matrix.rank() > 2) throw DimensionError("external info must be a vector or matrix, got " + shape_to_string(matrix.shape()));
  if (matrix.cols() != d_model) {
    throw DimensionError("external info has " + std::to_string(matrix.cols()) + " columns, model d_model is " +
                         std::to_string(d_model));
  }
  require_finite(matrix, "external info");
  Tensor rows = as_matrix(matrix);
  if (form == SourceForm::pooled) rows = as_matrix(mean_pool_rows(rows));
  return InfoSource(form, InfoOrigin::external, std::move(rows));
}

InfoSource InfoSource::pooled() const {
  if (form_ == SourceForm::pooled) return *this;
  return InfoSource(SourceForm::pooled, origin_, as_matrix(mean_pool_rows(rows_)));
}

Tensor InfoSource::vector() const {
  if (form_ == SourceForm::pooled) return Tensor::vector(rows_.values());
  return mean_pool_rows(rows_);
}

}  // namespace sinktrack
