#include "dsv/error.hpp"

namespace dsv {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid input";
    case ErrorKind::State: return "state error";
    case ErrorKind::ModelMismatch: return "model mismatch";
    case ErrorKind::CorruptPacket: return "corrupt packet";
    case ErrorKind::TraceFormat: return "trace format";
    case ErrorKind::Config: return "config error";
    case ErrorKind::TrainingDiverged: return "training diverged";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

}  // namespace dsv
