#include "mdtroom/error.hpp"

namespace mdtroom {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidCase: return "InvalidCase";
    case ErrorCode::InvalidCategory: return "InvalidCategory";
    case ErrorCode::UnknownItem: return "UnknownItem";
    case ErrorCode::ItemInUse: return "ItemInUse";
    case ErrorCode::ExtractorUnavailable: return "ExtractorUnavailable";
    case ErrorCode::DuplicateAgent: return "DuplicateAgent";
    case ErrorCode::TooFewAgents: return "TooFewAgents";
    case ErrorCode::UnknownAgent: return "UnknownAgent";
    case ErrorCode::MutedAgent: return "MutedAgent";
    case ErrorCode::EmptyTargets: return "EmptyTargets";
    case ErrorCode::EmptyInstruction: return "EmptyInstruction";
    case ErrorCode::WrongPhase: return "WrongPhase";
    case ErrorCode::RoundBudgetExhausted: return "RoundBudgetExhausted";
    case ErrorCode::TransportDown: return "TransportDown";
    case ErrorCode::EmptyHypothesis: return "EmptyHypothesis";
    case ErrorCode::UnknownConflict: return "UnknownConflict";
    case ErrorCode::ConflictAlreadyResolved: return "ConflictAlreadyResolved";
    case ErrorCode::IllegalTransition: return "IllegalTransition";
    case ErrorCode::NoRounds: return "NoRounds";
    case ErrorCode::UnknownRound: return "UnknownRound";
    case ErrorCode::TooFewRounds: return "TooFewRounds";
    case ErrorCode::IllegalEvent: return "IllegalEvent";
    case ErrorCode::Divergence: return "Divergence";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::StorageFailure: return "StorageFailure";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::UnknownFormat: return "UnknownFormat";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::BadRequest: return "BadRequest";
    case ErrorCode::UnknownSession: return "UnknownSession";
  }
  return "Unknown";
}

}  // namespace mdtroom
