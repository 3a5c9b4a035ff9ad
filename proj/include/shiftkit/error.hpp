#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace shiftkit {

/// Failure categories raised by the toolkit. Every validation or numerical
/// failure surfaces as an `Error` carrying one of these codes.
enum class Errc {
  // ingest
  BadMagic,
  TruncatedPayload,
  NonFiniteEntry,
  DimensionZero,
  IoFailure,
  BadAttention,
  BadManifest,
  MissingIdTrain,
  DuplicateDatasetId,
  DanglingPath,
  UnknownShiftType,
  UnknownRole,
  BadTag,
  // stats / metrics
  SingularCovariance,
  DegenerateRows,
  DimensionMismatch,
  ZeroVariance,
  LengthMismatch,
  NonMonotonicEdges,
  MissingEmbedding,
  MissingRow,
  InsufficientDatasets,
  EmptyList,
  ZeroImageAttention,
  UnmatchedSampleId,
  // fine-tuning kernels / trainer
  AlphaOutOfRange,
  ZeroGamma,
  InactiveProjection,
  InvalidConfig,
  WrongAnswerCount,
  DivergedLoss,
  // report
  BadCsv,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);
  Error(Errc code, const std::string& message, std::size_t row,
        std::optional<std::size_t> col = std::nullopt);

  Errc code() const noexcept { return code_; }
  /// Row / token / epoch index associated with the failure, when one exists.
  std::optional<std::size_t> row() const noexcept { return row_; }
  std::optional<std::size_t> col() const noexcept { return col_; }

 private:
  Errc code_;
  std::optional<std::size_t> row_;
  std::optional<std::size_t> col_;
};

}  // namespace shiftkit
