#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gridcause {

enum class ErrorKind {
  MissingValue,
  RaggedRows,
  DuplicateNodeId,
  UnparseableNumber,
  UnstableSpec,
  InvalidSpec,
  TooShort,
  SingularDesign,
  InvalidArgument,
  UnknownNode,
  ZeroVariance,
  NonSquare,
  ShapeMismatch,
  EmptyMask,
  EmptyGraph,
  GridMismatch,
  IoError,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingValue: return "MissingValue";
    case ErrorKind::RaggedRows: return "RaggedRows";
    case ErrorKind::DuplicateNodeId: return "DuplicateNodeId";
    case ErrorKind::UnparseableNumber: return "UnparseableNumber";
    case ErrorKind::UnstableSpec: return "UnstableSpec";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::TooShort: return "TooShort";
    case ErrorKind::SingularDesign: return "SingularDesign";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::UnknownNode: return "UnknownNode";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::NonSquare: return "NonSquare";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyMask: return "EmptyMask";
    case ErrorKind::EmptyGraph: return "EmptyGraph";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable kind; the
/// message is prefixed with the kind name so CLI stderr output names it too.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace gridcause
