#include "cq/tensor.hpp"

#include <sstream>

#include "cq/error.hpp"

namespace cq {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) {
    if (extent == 0) fail(ErrorCode::kShape, "zero extent in shape " + shape_to_string(shape));
    n *= extent;
  }
  return n;
}

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig: return "E_CONFIG";
    case ErrorCode::kIo: return "E_IO";
    case ErrorCode::kFormat: return "E_FORMAT";
    case ErrorCode::kShape: return "E_SHAPE";
    case ErrorCode::kValue: return "E_VALUE";
    case ErrorCode::kDegenerate: return "E_DEGENERATE";
    case ErrorCode::kDiverged: return "E_DIVERGED";
  }
  return "E_UNKNOWN";
}

}  // namespace cq
