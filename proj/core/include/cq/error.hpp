#pragma once

#include <stdexcept>
#include <string>

namespace cq {

// Machine-parsable error categories. The CLI prints them as a single
// `cq: E_XXX: message` line so scripts can branch on the code token.
enum class ErrorCode {
  kConfig,      // invalid configuration / CLI arguments
  kIo,          // file system failures
  kFormat,      // malformed container/CSV/config content
  kShape,       // tensor dimension mismatch
  kValue,       // value outside its domain (labels, probabilities, ...)
  kDegenerate,  // geometrically undefined result (empty cavity, broken ring)
  kDiverged,    // training produced non-finite losses/gradients
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace cq
