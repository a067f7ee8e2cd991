#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mdtroom {

enum class ErrorCode {
  InvalidCase,
  InvalidCategory,
  UnknownItem,
  ItemInUse,
  ExtractorUnavailable,
  DuplicateAgent,
  TooFewAgents,
  UnknownAgent,
  MutedAgent,
  EmptyTargets,
  EmptyInstruction,
  WrongPhase,
  RoundBudgetExhausted,
  TransportDown,
  EmptyHypothesis,
  UnknownConflict,
  ConflictAlreadyResolved,
  IllegalTransition,
  NoRounds,
  UnknownRound,
  TooFewRounds,
  IllegalEvent,
  Divergence,
  OutOfRange,
  StorageFailure,
  CorruptFile,
  UnknownFormat,
  InvalidConfig,
  BadRequest,
  UnknownSession,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure surfaced by the core carries a machine-readable code; the
/// service layer maps codes to HTTP statuses and the CLI to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised by the fold when a recorded analytics event disagrees with the
/// recomputed derivation. Carries the offending sequence number.
class DivergenceError : public Error {
 public:
  DivergenceError(std::uint64_t seq, const std::string& message)
      : Error(ErrorCode::Divergence, message), seq_(seq) {}

  std::uint64_t seq() const noexcept { return seq_; }

 private:
  std::uint64_t seq_;
};

}  // namespace mdtroom
