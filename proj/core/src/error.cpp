#include "crossinstruct/error.hpp"

namespace crossinstruct {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidInput: return "invalid-input";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kIndex: return "index";
    case ErrorKind::kDegenerateGeometry: return "degenerate-geometry";
    case ErrorKind::kBehindCamera: return "behind-camera";
    case ErrorKind::kEmptyRegion: return "empty-region";
    case ErrorKind::kSingularCovariance: return "singular-covariance";
    case ErrorKind::kTransport: return "transport";
    case ErrorKind::kScenarioIncomplete: return "scenario-incomplete";
    case ErrorKind::kInvalidResponse: return "invalid-response";
    case ErrorKind::kInsufficientKeypoints: return "insufficient-keypoints";
    case ErrorKind::kTrainingDiverged: return "training-diverged";
    case ErrorKind::kNotFound: return "not-found";
    case ErrorKind::kConflict: return "conflict";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return 3;
    case ErrorKind::kValidation:
    case ErrorKind::kInvalidInput:
    case ErrorKind::kIndex: return 4;
    case ErrorKind::kDegenerateGeometry:
    case ErrorKind::kBehindCamera:
    case ErrorKind::kEmptyRegion:
    case ErrorKind::kSingularCovariance: return 5;
    case ErrorKind::kScenarioIncomplete: return 6;
    case ErrorKind::kTransport: return 7;
    case ErrorKind::kInvalidResponse:
    case ErrorKind::kInsufficientKeypoints: return 8;
    case ErrorKind::kTrainingDiverged: return 9;
    case ErrorKind::kNotFound: return 10;
    case ErrorKind::kConflict: return 11;
    case ErrorKind::kIo: return 12;
  }
  return 1;
}

Error::Error(ErrorKind kind, std::string message, std::string field)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message),
      kind_(kind),
      field_(std::move(field)),
      detail_(std::move(message)) {}

Error Error::with_stage(std::string stage) const {
  Error e(kind_, "[" + stage + "] " + detail_, field_);
  e.stage_ = std::move(stage);
  e.detail_ = detail_;
  return e;
}

}  // namespace crossinstruct
