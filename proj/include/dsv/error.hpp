#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dsv {

enum class ErrorKind {
  InvalidInput,
  State,
  ModelMismatch,
  CorruptPacket,
  TraceFormat,
  Config,
  TrainingDiverged,
  Format,
  Io,
};

std::string_view to_string(ErrorKind kind);

// All library failures surface as dsv::Error; callers switch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace dsv
