#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace metcc {

enum class Errc {
  kInvalidArgument,
  kMalformedFile,
  kNonFiniteValue,
  kDuplicateId,
  kMissingColumn,
  kUnknownLabelValue,
  kNegativeAge,
  kAllFeaturesDropped,
  kZeroVarianceSample,
  kEmptyIntersection,
  kInfeasibleConfig,
  kRankTooHigh,
  kDegenerateData,
  kDimensionMismatch,
  kSingularUpdate,
  kSingleClassInput,
  kDivergenceDetected,
  kClassTooSmall,
  kEmptyTrainSet,
  kSingleClass,
  kLengthMismatch,
  kIncompleteGrid,
  kIo,
};

std::string_view to_string(Errc code);

// Process exit code for a failure of the given kind: 2 validation, 3 numeric, 4 I/O.
int exit_code(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Training blew up; carries the per-epoch loss trace up to the failure.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::vector<double> trace)
      : Error(Errc::kDivergenceDetected, what), trace_(std::move(trace)) {}

  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

}  // namespace metcc
