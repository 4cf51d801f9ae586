#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crossinstruct {

enum class ErrorKind {
  kInvalidInput,
  kParse,
  kValidation,
  kIndex,
  kDegenerateGeometry,
  kBehindCamera,
  kEmptyRegion,
  kSingularCovariance,
  kTransport,
  kScenarioIncomplete,
  kInvalidResponse,
  kInsufficientKeypoints,
  kTrainingDiverged,
  kNotFound,
  kConflict,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// Process exit code used by the CLI for each error class.
int exit_code(ErrorKind kind);

// Single exception type carried through every module. `field` names the
// offending input field for validation errors; `stage` is filled in by the
// pipeline when it propagates a module error.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message, std::string field = {});

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& field() const noexcept { return field_; }
  const std::string& stage() const noexcept { return stage_; }
  const std::string& detail() const noexcept { return detail_; }

  // Copy of this error tagged with the pipeline stage that raised it.
  Error with_stage(std::string stage) const;

 private:
  ErrorKind kind_;
  std::string field_;
  std::string stage_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, std::string message, std::string field = {}) {
  throw Error(kind, std::move(message), std::move(field));
}

}  // namespace crossinstruct
