#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdtroom/analysis.hpp"
#include "mdtroom/clock.hpp"
#include "mdtroom/session_state.hpp"

namespace mdtroom {

enum class EventKind {
  SessionCreated,
  CaseItemEdited,
  RoundStarted,
  StatementAccepted,
  StatementRejected,
  RoundCommitted,
  ConflictOpened,
  ConflictUpdated,
  ConflictResolved,
  InterventionSubmitted,
  ReEvalRequested,
  AgentMuted,
  AgentUnmuted,
  SessionPaused,
  SessionResumed,
  SessionTerminated,
};

std::string_view to_string(EventKind kind) noexcept;
std::optional<EventKind> parse_event_kind(std::string_view text) noexcept;

/// Conflict events: derivable from the rest of the log, recorded so an auditor
/// sees what the system showed.
bool is_analytic(EventKind kind) noexcept;

inline constexpr int kEventSchemaVersion = 1;

struct Event {
  std::uint64_t seq = 0;
  std::int64_t ts = 0;
  EventKind kind = EventKind::SessionCreated;
  int v = kEventSchemaVersion;
  nlohmann::json payload = nlohmann::json::object();
  bool operator==(const Event&) const = default;
};

/// An event before the store stamps seq and ts.
struct PendingEvent {
  EventKind kind;
  nlohmann::json payload;
};

nlohmann::json encode_event(const Event& event);  // without crc
Event decode_event(const nlohmann::json& j);

/// Payload builders. The folder is the only decoder.
namespace events {
PendingEvent session_created(const std::string& session_id, const CaseRecord& record,
                             const std::vector<AgentProfile>& agents, const DebateConfig& config);
PendingEvent case_item_edited(const ItemEdit& edit, const std::string& intervention_id);
PendingEvent round_started(const InFlightRound& round);
PendingEvent statement_accepted(int round_index, const std::string& agent_id, int attempt);
PendingEvent statement_rejected(int round_index, const std::string& agent_id, int attempt,
                                const std::vector<std::string>& reasons);
PendingEvent round_committed(const Round& round);
PendingEvent intervention_submitted(const Intervention& intervention);
PendingEvent reeval_requested(const std::string& conflict_id, const IdSet& targets);
PendingEvent agent_muted(const std::string& agent_id);
PendingEvent agent_unmuted(const std::string& agent_id);
PendingEvent session_paused();
PendingEvent session_resumed();
PendingEvent session_terminated(const std::optional<analysis::ConsensusSummary>& consensus);
std::vector<PendingEvent> conflict_analytics(const ConflictDelta& delta);
}  // namespace events

struct EventLog {
  std::string session_id;
  std::vector<Event> events;

  std::uint64_t last_seq() const noexcept { return events.empty() ? 0 : events.back().seq; }
  bool operator==(const EventLog&) const = default;
};

struct Divergence {
  std::uint64_t seq = 0;
  std::string message;
  bool operator==(const Divergence&) const = default;
};

/// Left fold of events into a SessionState. Every event is checked for
/// legality against the state it lands on; recorded analytics are compared
/// with a fresh derivation. Strict mode throws on the first problem, audit
/// mode records divergences and continues with the recomputed values.
class Folder {
 public:
  enum class Mode { Strict, Audit };

  explicit Folder(Mode mode = Mode::Strict) : mode_(mode) {}

  void apply(const Event& event);

  const SessionState& state() const noexcept { return state_; }
  const std::vector<Divergence>& divergences() const noexcept { return divergences_; }
  /// Analytics still expected after the last RoundCommitted.
  bool awaiting_analytics() const noexcept { return !pending_.empty(); }
  const std::deque<PendingEvent>& pending_analytics() const noexcept { return pending_; }

 private:
  void apply_domain(const Event& event);
  void apply_analytic(const Event& event);
  void diverge(std::uint64_t seq, const std::string& message);
  void flush_pending(std::uint64_t seq);
  void commit_round(const Event& event);

  Mode mode_;
  SessionState state_;
  std::deque<PendingEvent> pending_;
  std::vector<Divergence> divergences_;
};

struct SeqTarget {
  std::uint64_t seq;
};
struct RoundBoundary {
  int round_index;
};
using FoldTarget = std::variant<SeqTarget, RoundBoundary>;

/// Snapshot of the session after event `seq`, or after round `round_index`
/// and its analytics committed. Throws OutOfRange.
SessionState fold_state(const EventLog& log, FoldTarget upto);
SessionState fold_state(const EventLog& log);

/// Seq of the last event belonging to the commit of `round_index`.
std::uint64_t round_boundary_seq(const EventLog& log, int round_index);

/// Append-side persistence; called with each committed batch.
class LogSink {
 public:
  virtual ~LogSink() = default;
  virtual void write(const std::vector<Event>& batch) = 0;
};

/// Appends batches to an .mdtlog file and flushes before returning. The file
/// (and its header) is created on the first write.
class FileLogSink final : public LogSink {
 public:
  FileLogSink(std::filesystem::path path, std::string session_id);
  void write(const std::vector<Event>& batch) override;

 private:
  std::filesystem::path path_;
  std::string session_id_;
  std::ofstream out_;
};

/// The single-writer side of a session: owns the log and the folded live
/// state. Appends are validated by folding them onto a copy first, so a
/// rejected batch leaves no trace.
class SessionStore {
 public:
  explicit SessionStore(Clock clock = system_clock(), std::shared_ptr<LogSink> sink = nullptr);

  /// Rebuilds a store from an existing log (strict fold).
  static SessionStore from_log(EventLog log, Clock clock = system_clock(), std::shared_ptr<LogSink> sink = nullptr);

  std::uint64_t append(PendingEvent event);
  /// All-or-nothing. Returns the seq of the last appended event.
  std::uint64_t append_batch(std::vector<PendingEvent> batch);

  /// Folds a batch onto a copy of the live state without appending.
  SessionState preview(const std::vector<PendingEvent>& batch) const;
  /// The conflict events a batch ending in RoundCommitted must be followed by.
  std::vector<PendingEvent> derive_analytics(const std::vector<PendingEvent>& batch) const;

  const SessionState& state() const noexcept { return folder_.state(); }
  const EventLog& log() const noexcept { return log_; }

 private:
  Clock clock_;
  std::shared_ptr<LogSink> sink_;
  EventLog log_;
  Folder folder_;
};

inline constexpr std::string_view kLogMagic = "MDTROOM1";

/// Writes header + one line per event, each carrying a CRC32. Atomic rename.
void save_session(const EventLog& log, const std::filesystem::path& path);

enum class LoadMode {
  Strict,       // any damage, including a torn final line, is CorruptFile
  ValidPrefix,  // a torn final line is dropped; anything else is CorruptFile
  Audit,        // like ValidPrefix, but checksum mismatches are reported in `notes`
};

EventLog load_session(const std::filesystem::path& path, LoadMode mode = LoadMode::Strict,
                      std::vector<std::string>* notes = nullptr);

/// CRC-carrying encoding of one line, shared by save_session and FileLogSink.
std::string encode_log_line(const Event& event);
std::string encode_log_header(const std::string& session_id);

/// Hash of the log with timestamps excluded.
std::string log_fingerprint(const EventLog& log);

}  // namespace mdtroom
