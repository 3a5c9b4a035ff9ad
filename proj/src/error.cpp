#include "shiftkit/error.hpp"

namespace shiftkit {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedPayload: return "TruncatedPayload";
    case Errc::NonFiniteEntry: return "NonFiniteEntry";
    case Errc::DimensionZero: return "DimensionZero";
    case Errc::IoFailure: return "IoFailure";
    case Errc::BadAttention: return "BadAttention";
    case Errc::BadManifest: return "BadManifest";
    case Errc::MissingIdTrain: return "MissingIdTrain";
    case Errc::DuplicateDatasetId: return "DuplicateDatasetId";
    case Errc::DanglingPath: return "DanglingPath";
    case Errc::UnknownShiftType: return "UnknownShiftType";
    case Errc::UnknownRole: return "UnknownRole";
    case Errc::BadTag: return "BadTag";
    case Errc::SingularCovariance: return "SingularCovariance";
    case Errc::DegenerateRows: return "DegenerateRows";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::ZeroVariance: return "ZeroVariance";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::NonMonotonicEdges: return "NonMonotonicEdges";
    case Errc::MissingEmbedding: return "MissingEmbedding";
    case Errc::MissingRow: return "MissingRow";
    case Errc::InsufficientDatasets: return "InsufficientDatasets";
    case Errc::EmptyList: return "EmptyList";
    case Errc::ZeroImageAttention: return "ZeroImageAttention";
    case Errc::UnmatchedSampleId: return "UnmatchedSampleId";
    case Errc::AlphaOutOfRange: return "AlphaOutOfRange";
    case Errc::ZeroGamma: return "ZeroGamma";
    case Errc::InactiveProjection: return "InactiveProjection";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::WrongAnswerCount: return "WrongAnswerCount";
    case Errc::DivergedLoss: return "DivergedLoss";
    case Errc::BadCsv: return "BadCsv";
  }
  return "Unknown";
}

namespace {
std::string decorate(Errc code, const std::string& message) {
  return std::string(errc_name(code)) + ": " + message;
}
}  // namespace

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(decorate(code, message)), code_(code) {}

Error::Error(Errc code, const std::string& message, std::size_t row,
             std::optional<std::size_t> col)
    : std::runtime_error(decorate(code, message)), code_(code), row_(row), col_(col) {}

}  // namespace shiftkit
