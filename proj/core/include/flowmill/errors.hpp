#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flowmill {

// Every recoverable failure in the engine carries one of these codes so
// callers (and the CLI's --json error output) can dispatch on it without
// parsing message text.
enum class Errc {
  // parsing / schema
  SyntaxError,
  SchemaError,
  DuplicateStep,
  // cas
  EncodingError,
  StoreIOError,
  NotFound,
  CorruptObject,
  PathError,
  // metadata
  UnknownRun,
  RunClosed,
  IllegalTransition,
  ArtifactRebind,
  // runtime
  InvalidFlow,
  MissingParameter,
  UnknownParameter,
  NotAList,
  IncompleteFanIn,
  ProtocolViolation,
  UnknownStep,
  NothingToResume,
  // backends
  BackendRejected,
  WorkerCrashed,
  AlreadyReaped,
  // client
  NamespaceMismatch,
  // cards
  RunNotTerminal,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& message) {
  throw Error(code, message);
}

inline const char* errc_name(Errc code) {
  switch (code) {
    case Errc::SyntaxError: return "SyntaxError";
    case Errc::SchemaError: return "SchemaError";
    case Errc::DuplicateStep: return "DuplicateStep";
    case Errc::EncodingError: return "EncodingError";
    case Errc::StoreIOError: return "StoreIOError";
    case Errc::NotFound: return "NotFound";
    case Errc::CorruptObject: return "CorruptObject";
    case Errc::PathError: return "PathError";
    case Errc::UnknownRun: return "UnknownRun";
    case Errc::RunClosed: return "RunClosed";
    case Errc::IllegalTransition: return "IllegalTransition";
    case Errc::ArtifactRebind: return "ArtifactRebind";
    case Errc::InvalidFlow: return "InvalidFlow";
    case Errc::MissingParameter: return "MissingParameter";
    case Errc::UnknownParameter: return "UnknownParameter";
    case Errc::NotAList: return "NotAList";
    case Errc::IncompleteFanIn: return "IncompleteFanIn";
    case Errc::ProtocolViolation: return "ProtocolViolation";
    case Errc::UnknownStep: return "UnknownStep";
    case Errc::NothingToResume: return "NothingToResume";
    case Errc::BackendRejected: return "BackendRejected";
    case Errc::WorkerCrashed: return "WorkerCrashed";
    case Errc::AlreadyReaped: return "AlreadyReaped";
    case Errc::NamespaceMismatch: return "NamespaceMismatch";
    case Errc::RunNotTerminal: return "RunNotTerminal";
  }
  return "Error";
}

}  // namespace flowmill
