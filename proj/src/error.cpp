#include "metcc/error.hpp"

namespace metcc {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kMalformedFile: return "MalformedFile";
    case Errc::kNonFiniteValue: return "NonFiniteValue";
    case Errc::kDuplicateId: return "DuplicateId";
    case Errc::kMissingColumn: return "MissingColumn";
    case Errc::kUnknownLabelValue: return "UnknownLabelValue";
    case Errc::kNegativeAge: return "NegativeAge";
    case Errc::kAllFeaturesDropped: return "AllFeaturesDropped";
    case Errc::kZeroVarianceSample: return "ZeroVarianceSample";
    case Errc::kEmptyIntersection: return "EmptyIntersection";
    case Errc::kInfeasibleConfig: return "InfeasibleConfig";
    case Errc::kRankTooHigh: return "RankTooHigh";
    case Errc::kDegenerateData: return "DegenerateData";
    case Errc::kDimensionMismatch: return "DimensionMismatch";
    case Errc::kSingularUpdate: return "SingularUpdate";
    case Errc::kSingleClassInput: return "SingleClassInput";
    case Errc::kDivergenceDetected: return "DivergenceDetected";
    case Errc::kClassTooSmall: return "ClassTooSmall";
    case Errc::kEmptyTrainSet: return "EmptyTrainSet";
    case Errc::kSingleClass: return "SingleClass";
    case Errc::kLengthMismatch: return "LengthMismatch";
    case Errc::kIncompleteGrid: return "IncompleteGrid";
    case Errc::kIo: return "IoError";
  }
  return "Unknown";
}

int exit_code(Errc code) {
  switch (code) {
    case Errc::kIo:
      return 4;
    case Errc::kDivergenceDetected:
    case Errc::kSingularUpdate:
    case Errc::kDegenerateData:
      return 3;
    default:
      return 2;
  }
}

}  // namespace metcc
