#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mdtroom {

class ChatClient;

enum class Category { Demographics, Symptoms, Exam, History, Labs, Imaging };

std::string_view to_string(Category category) noexcept;
std::optional<Category> parse_category(std::string_view text) noexcept;

/// Half-open byte range [begin, end) into the case narrative.
struct SourceSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const SourceSpan&) const = default;
};

struct CaseItem {
  std::string item_id;
  Category category = Category::History;
  std::string label;
  std::string value;
  std::optional<SourceSpan> source_span;
  bool operator==(const CaseItem&) const = default;
};

/// A patient case as structured items. The narrative is fixed at creation;
/// item ids come from a monotone counter and are never reused.
struct CaseRecord {
  std::string case_id;
  std::string narrative;
  std::vector<CaseItem> items;
  std::uint64_t revision = 0;
  std::uint64_t next_item_number = 1;

  const CaseItem* find(std::string_view item_id) const noexcept;
  bool contains(std::string_view item_id) const noexcept { return find(item_id) != nullptr; }
  bool operator==(const CaseRecord&) const = default;
};

enum class EditKind { Add, Update, Remove };

std::string_view to_string(EditKind kind) noexcept;

struct ItemEdit {
  EditKind kind = EditKind::Add;
  std::string target_id;  // Update / Remove
  std::optional<Category> category;
  std::optional<std::string> label;
  std::optional<std::string> value;
  bool operator==(const ItemEdit&) const = default;

  static ItemEdit add(Category category, std::string label, std::string value);
  static ItemEdit update(std::string target_id);
  static ItemEdit remove(std::string target_id);
};

/// Returns the edited record with revision + 1. Throws UnknownItem when the
/// target does not exist and InvalidCase when an Add carries no label.
CaseRecord apply_item_edit(const CaseRecord& record, const ItemEdit& edit);

struct Violation {
  std::string code;  // "empty case", "empty label", "duplicate id", "span out of bounds"
  std::string item_id;
  bool operator==(const Violation&) const = default;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const noexcept { return violations.empty(); }
  bool has(std::string_view code) const noexcept;
};

ValidationReport validate_case(const CaseRecord& record);

class CaseExtractor {
 public:
  virtual ~CaseExtractor() = default;
  virtual CaseRecord extract(std::string_view narrative, std::string case_id) const = 0;
};

/// Deterministic keyword and pattern extractor. Pure: the same narrative always
/// yields the same record.
class RuleBasedExtractor final : public CaseExtractor {
 public:
  CaseRecord extract(std::string_view narrative, std::string case_id) const override;
};

/// Asks a chat endpoint to emit items in the case wire schema. Transport or
/// parse failures raise ExtractorUnavailable.
class LiveExtractor final : public CaseExtractor {
 public:
  explicit LiveExtractor(std::shared_ptr<ChatClient> client) : client_(std::move(client)) {}
  CaseRecord extract(std::string_view narrative, std::string case_id) const override;

 private:
  std::shared_ptr<ChatClient> client_;
};

CaseRecord extract_case_items(std::string_view narrative, const CaseExtractor& extractor,
                              std::string case_id = "case");

inline constexpr int kCaseSchemaVersion = 1;

void to_json(nlohmann::json& j, const SourceSpan& span);
void to_json(nlohmann::json& j, const CaseItem& item);
void from_json(const nlohmann::json& j, CaseItem& item);
void to_json(nlohmann::json& j, const CaseRecord& record);
void from_json(const nlohmann::json& j, CaseRecord& record);
void to_json(nlohmann::json& j, const ItemEdit& edit);
void from_json(const nlohmann::json& j, ItemEdit& edit);

}  // namespace mdtroom
