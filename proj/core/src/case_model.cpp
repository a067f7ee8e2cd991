#include "mdtroom/case_model.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <regex>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "mdtroom/chat_client.hpp"
#include "mdtroom/error.hpp"

namespace mdtroom {

namespace {

constexpr std::array<std::pair<Category, std::string_view>, 6> kCategoryNames{{
    {Category::Demographics, "Demographics"},
    {Category::Symptoms, "Symptoms"},
    {Category::Exam, "Exam"},
    {Category::History, "History"},
    {Category::Labs, "Labs"},
    {Category::Imaging, "Imaging"},
}};

std::string item_id_for(std::uint64_t number) { return "i" + std::to_string(number); }

std::uint64_t parse_item_number(std::string_view id) {
  if (id.size() < 2 || id.front() != 'i') return 0;
  std::uint64_t n = 0;
  for (char c : id.substr(1)) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return 0;
    n = n * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return n;
}

}  // namespace

std::string_view to_string(Category category) noexcept {
  for (const auto& [c, name] : kCategoryNames) {
    if (c == category) return name;
  }
  return "History";
}

std::optional<Category> parse_category(std::string_view text) noexcept {
  for (const auto& [c, name] : kCategoryNames) {
    if (name.size() != text.size()) continue;
    bool same = std::equal(name.begin(), name.end(), text.begin(), [](char a, char b) {
      return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b));
    });
    if (same) return c;
  }
  return std::nullopt;
}

std::string_view to_string(EditKind kind) noexcept {
  switch (kind) {
    case EditKind::Add: return "add";
    case EditKind::Update: return "update";
    case EditKind::Remove: return "remove";
  }
  return "add";
}

const CaseItem* CaseRecord::find(std::string_view item_id) const noexcept {
  auto it = std::find_if(items.begin(), items.end(),
                         [&](const CaseItem& item) { return item.item_id == item_id; });
  return it == items.end() ? nullptr : &*it;
}

ItemEdit ItemEdit::add(Category category, std::string label, std::string value) {
  ItemEdit edit;
  edit.kind = EditKind::Add;
  edit.category = category;
  edit.label = std::move(label);
  edit.value = std::move(value);
  return edit;
}

ItemEdit ItemEdit::update(std::string target_id) {
  ItemEdit edit;
  edit.kind = EditKind::Update;
  edit.target_id = std::move(target_id);
  return edit;
}

ItemEdit ItemEdit::remove(std::string target_id) {
  ItemEdit edit;
  edit.kind = EditKind::Remove;
  edit.target_id = std::move(target_id);
  return edit;
}

CaseRecord apply_item_edit(const CaseRecord& record, const ItemEdit& edit) {
  CaseRecord next = record;
  switch (edit.kind) {
    case EditKind::Add: {
      if (!edit.label || edit.label->empty()) {
        throw Error(ErrorCode::InvalidCase, "added item needs a non-empty label");
      }
      CaseItem item;
      item.item_id = item_id_for(next.next_item_number++);
      item.category = edit.category.value_or(Category::History);
      item.label = *edit.label;
      item.value = edit.value.value_or("");
      next.items.push_back(std::move(item));
      break;
    }
    case EditKind::Update: {
      auto it = std::find_if(next.items.begin(), next.items.end(),
                             [&](const CaseItem& i) { return i.item_id == edit.target_id; });
      if (it == next.items.end()) throw Error(ErrorCode::UnknownItem, "unknown item " + edit.target_id);
      if (edit.label && edit.label->empty()) {
        throw Error(ErrorCode::InvalidCase, "item label cannot be emptied");
      }
      if (edit.category) it->category = *edit.category;
      if (edit.label) it->label = *edit.label;
      if (edit.value) it->value = *edit.value;
      break;
    }
    case EditKind::Remove: {
      auto it = std::find_if(next.items.begin(), next.items.end(),
                             [&](const CaseItem& i) { return i.item_id == edit.target_id; });
      if (it == next.items.end()) throw Error(ErrorCode::UnknownItem, "unknown item " + edit.target_id);
      next.items.erase(it);
      break;
    }
  }
  ++next.revision;
  return next;
}

bool ValidationReport::has(std::string_view code) const noexcept {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.code == code; });
}

ValidationReport validate_case(const CaseRecord& record) {
  ValidationReport report;
  if (record.items.empty()) report.violations.push_back({"empty case", ""});
  std::unordered_set<std::string> seen;
  for (const auto& item : record.items) {
    if (item.label.empty()) report.violations.push_back({"empty label", item.item_id});
    if (!seen.insert(item.item_id).second) report.violations.push_back({"duplicate id", item.item_id});
    if (item.source_span &&
        (item.source_span->begin > item.source_span->end || item.source_span->end > record.narrative.size())) {
      report.violations.push_back({"span out of bounds", item.item_id});
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Rule-based extraction

namespace {

struct Piece {
  std::size_t begin;
  std::size_t end;
};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

Piece trim(std::string_view text, Piece p) {
  auto junk = [](char c) { return is_space(c) || c == ',' || c == ';' || c == ':' || c == '-' || c == '.'; };
  while (p.begin < p.end && junk(text[p.begin])) ++p.begin;
  while (p.end > p.begin && junk(text[p.end - 1])) --p.end;
  return p;
}

// Splits on ';', ',', newlines and sentence-ending periods. Decimal points
// ("9.8") and abbreviations glued to the next token survive.
std::vector<Piece> segments(std::string_view text) {
  std::vector<Piece> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    bool cut = i == text.size();
    if (!cut) {
      char c = text[i];
      cut = c == ';' || c == ',' || c == '\n' ||
            (c == '.' && (i + 1 == text.size() || is_space(text[i + 1])));
      // keep thousands separators such as "12,000" intact
      if (c == ',' && i > 0 && i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i - 1])) &&
          std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
        cut = false;
      }
    }
    if (cut) {
      Piece p = trim(text, {start, i});
      if (p.begin < p.end) out.push_back(p);
      start = i + 1;
    }
  }
  return out;
}

const std::set<std::string>& filler_words() {
  static const std::set<std::string> words{"a",      "an",      "the",      "patient", "pt",   "presents",
                                           "presenting", "presented", "with", "and",  "who",  "has",
                                           "had",    "reports", "reporting", "complains", "of", "is",
                                           "was",    "also",    "notes",    "noted"};
  return words;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Drops leading filler words ("presents with", "a", ...) and a trailing "and".
Piece strip_filler(std::string_view text, Piece p) {
  for (;;) {
    p = trim(text, p);
    std::size_t w = p.begin;
    while (w < p.end && std::isalpha(static_cast<unsigned char>(text[w]))) ++w;
    if (w == p.begin || (w < p.end && !is_space(text[w]))) break;
    if (!filler_words().count(lower(text.substr(p.begin, w - p.begin)))) break;
    p.begin = w;
  }
  for (;;) {
    p = trim(text, p);
    std::size_t w = p.end;
    while (w > p.begin && std::isalpha(static_cast<unsigned char>(text[w - 1]))) --w;
    if (w == p.end || w == p.begin || !is_space(text[w - 1])) break;
    auto word = lower(text.substr(w, p.end - w));
    if (word != "and" && word != "with") break;
    p.end = w;
  }
  return p;
}

const auto kIcase = std::regex::ECMAScript | std::regex::icase;

struct Rules {
  std::regex age{R"((\d{1,3})\s*-?\s*(?:years?|yrs?|y/o)\s*-?\s*old|\bage[:\s]+(\d{1,3})\b)", kIcase};
  std::regex sex{R"(\b(male|female|man|woman|boy|girl)\b)", kIcase};
  std::regex imaging{
      R"(\b(CT|MRI|MRCP|PET|X-?ray|radiograph\w*|ultrasound|sonograph\w*|echocardiogra\w*|angiogra\w*|scan|imaging|endoscop\w*|colonoscop\w*)\b)",
      kIcase};
  std::regex exam{
      R"(\b(exam\w*|auscultation|palpa\w*|murmur|tender\w*|edema|BP|blood pressure|heart rate|pulse|temperature|temp|vitals?|afebrile|febrile|hepatomegaly|splenomegaly|jaundice|pallor)\b)",
      kIcase};
  std::regex lab_value{
      R"(^([A-Za-z][A-Za-z0-9 \-/()]*?)(?:\s*[:=]\s*|\s+)([<>]?\d[\d.,:]*(?:\s*[A-Za-z%/^][A-Za-z0-9%/^.]*)?)$)"};
  std::regex pathology{R"(\b(biopsy|histolog\w*|patholog\w*|culture|PCR|serolog\w*|titer|titre)\b)", kIcase};
  std::regex history{
      R"(\b(history|hx|prior|previous|past|family|smok\w*|alcohol|medications?|taking|surgery|travel\w*|occupation\w*|allerg\w*|diagnosed)\b)",
      kIcase};
  std::regex symptom{
      R"(\b(pain|ache|diarrh\w*|fevers?|weight loss|fatigue|malaise|cough|dyspn\w*|nausea|vomit\w*|arthralgi\w*|myalgi\w*|headache|rash|prurit\w*|sweats|bloating|constipation|bleeding|weakness|dizziness|syncope|palpitations|anorexia|chills)\b)",
      kIcase};
};

const Rules& rules() {
  static const Rules r;
  return r;
}

CaseItem make_item(Category category, std::string label, std::string value, std::optional<SourceSpan> span) {
  CaseItem item;
  item.category = category;
  item.label = std::move(label);
  item.value = std::move(value);
  item.source_span = span;
  return item;
}

// Splits "label: value" when a colon is present, otherwise the whole run is
// the label.
std::pair<std::string, std::string> colon_split(std::string_view run) {
  auto colon = run.find(':');
  if (colon == std::string_view::npos) return {std::string(run), ""};
  auto strip = [](std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return std::string(s);
  };
  auto label = strip(run.substr(0, colon));
  auto value = strip(run.substr(colon + 1));
  if (label.empty()) return {value, ""};
  return {label, value};
}

std::optional<CaseItem> classify(std::string_view run, SourceSpan span) {
  const auto& r = rules();
  const std::string text(run);
  std::smatch m;
  if (std::regex_search(text, r.imaging)) {
    auto [label, value] = colon_split(run);
    return make_item(Category::Imaging, label, value, span);
  }
  if (std::regex_search(text, r.exam)) {
    if (std::regex_match(text, m, r.lab_value)) {
      return make_item(Category::Exam, m[1].str(), m[2].str(), span);
    }
    auto [label, value] = colon_split(run);
    return make_item(Category::Exam, label, value, span);
  }
  if (std::regex_match(text, m, r.lab_value)) {
    return make_item(Category::Labs, m[1].str(), m[2].str(), span);
  }
  if (std::regex_search(text, r.pathology)) {
    auto [label, value] = colon_split(run);
    return make_item(Category::Labs, label, value, span);
  }
  if (std::regex_search(text, r.history)) {
    auto [label, value] = colon_split(run);
    return make_item(Category::History, label, value, span);
  }
  if (std::regex_search(text, r.symptom)) {
    return make_item(Category::Symptoms, text, "", span);
  }
  return std::nullopt;
}

}  // namespace

CaseRecord RuleBasedExtractor::extract(std::string_view narrative, std::string case_id) const {
  CaseRecord record;
  record.case_id = std::move(case_id);
  record.narrative = std::string(narrative);

  const auto& r = rules();
  std::vector<CaseItem> items;
  std::vector<std::string> residual;
  bool have_age = false;
  bool have_sex = false;

  for (const Piece& seg : segments(narrative)) {
    const std::string text(narrative.substr(seg.begin, seg.end - seg.begin));
    std::vector<Piece> consumed;
    std::vector<CaseItem> seg_items;

    std::smatch m;
    if (!have_age && std::regex_search(text, m, r.age)) {
      const auto pos = static_cast<std::size_t>(m.position(0));
      const auto len = static_cast<std::size_t>(m.length(0));
      auto years = m[1].matched ? m[1].str() : m[2].str();
      seg_items.push_back(make_item(Category::Demographics, "age", years,
                                    SourceSpan{seg.begin + pos, seg.begin + pos + len}));
      consumed.push_back({pos, pos + len});
      have_age = true;
    }
    if (!have_sex && std::regex_search(text, m, r.sex)) {
      const auto pos = static_cast<std::size_t>(m.position(0));
      const auto len = static_cast<std::size_t>(m.length(0));
      auto word = lower(m[1].str());
      auto value = (word == "male" || word == "man" || word == "boy") ? "male" : "female";
      seg_items.push_back(make_item(Category::Demographics, "sex", value,
                                    SourceSpan{seg.begin + pos, seg.begin + pos + len}));
      consumed.push_back({pos, pos + len});
      have_sex = true;
    }
    std::sort(consumed.begin(), consumed.end(), [](Piece a, Piece b) { return a.begin < b.begin; });

    std::vector<Piece> runs;
    std::size_t cursor = 0;
    for (const Piece& c : consumed) {
      if (c.begin > cursor) runs.push_back({cursor, c.begin});
      cursor = std::max(cursor, c.end);
    }
    if (cursor < text.size()) runs.push_back({cursor, text.size()});

    for (Piece run : runs) {
      Piece stripped = strip_filler(text, run);
      if (stripped.begin >= stripped.end) continue;
      std::string_view body(text.data() + stripped.begin, stripped.end - stripped.begin);
      SourceSpan span{seg.begin + stripped.begin, seg.begin + stripped.end};
      if (auto item = classify(body, span)) {
        seg_items.push_back(std::move(*item));
      } else {
        Piece raw = trim(text, run);
        residual.emplace_back(text.substr(raw.begin, raw.end - raw.begin));
      }
    }
    std::stable_sort(seg_items.begin(), seg_items.end(), [](const CaseItem& a, const CaseItem& b) {
      return a.source_span->begin < b.source_span->begin;
    });
    for (auto& item : seg_items) items.push_back(std::move(item));
  }

  if (!residual.empty()) {
    std::string value;
    if (items.empty()) {
      Piece whole = trim(narrative, {0, narrative.size()});
      value = std::string(narrative.substr(whole.begin, whole.end - whole.begin));
    } else {
      for (std::size_t i = 0; i < residual.size(); ++i) {
        if (i) value += "; ";
        value += residual[i];
      }
    }
    items.push_back(make_item(Category::History, "narrative", value, std::nullopt));
  }

  for (auto& item : items) item.item_id = item_id_for(record.next_item_number++);
  record.items = std::move(items);
  return record;
}

// ---------------------------------------------------------------------------
// Live extraction

namespace {

constexpr std::string_view kExtractionPrompt =
    "You convert free-form clinical case narratives into structured data items. "
    "Reply with a single JSON object and nothing else: "
    "{\"items\": [{\"category\": \"Demographics|Symptoms|Exam|History|Labs|Imaging\", "
    "\"label\": str, \"value\": str, \"span\": [begin, end] | null}]}. "
    "span is a half-open byte range into the narrative. Put anything you cannot "
    "classify into a single History item labelled \"narrative\".";

std::string strip_code_fence(std::string text) {
  auto open = text.find("```");
  if (open == std::string::npos) return text;
  auto body_start = text.find('\n', open);
  auto close = text.rfind("```");
  if (body_start == std::string::npos || close <= body_start) return text;
  return text.substr(body_start + 1, close - body_start - 1);
}

}  // namespace

CaseRecord LiveExtractor::extract(std::string_view narrative, std::string case_id) const {
  std::string reply;
  try {
    reply = client_->complete({{"system", std::string(kExtractionPrompt)}, {"user", std::string(narrative)}});
  } catch (const TransportError& e) {
    throw Error(ErrorCode::ExtractorUnavailable, e.what());
  }

  CaseRecord record;
  record.case_id = std::move(case_id);
  record.narrative = std::string(narrative);
  std::vector<std::string> residual;
  try {
    auto doc = nlohmann::json::parse(strip_code_fence(reply));
    for (const auto& raw : doc.at("items")) {
      auto category = parse_category(raw.value("category", ""));
      auto label = raw.value("label", std::string{});
      auto value = raw.value("value", std::string{});
      if (!category || label.empty()) {
        auto text = label.empty() ? value : (value.empty() ? label : label + ": " + value);
        if (!text.empty()) residual.push_back(text);
        continue;
      }
      if (*category == Category::History && label == "narrative") {
        residual.push_back(value);
        continue;
      }
      CaseItem item = make_item(*category, label, value, std::nullopt);
      if (raw.contains("span") && raw["span"].is_array() && raw["span"].size() == 2) {
        auto b = raw["span"][0].get<std::size_t>();
        auto e = raw["span"][1].get<std::size_t>();
        if (b <= e && e <= narrative.size()) item.source_span = SourceSpan{b, e};
      }
      item.item_id = item_id_for(record.next_item_number++);
      record.items.push_back(std::move(item));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ExtractorUnavailable, std::string("extractor reply is not valid item JSON: ") + e.what());
  }
  if (!residual.empty()) {
    std::string value;
    for (std::size_t i = 0; i < residual.size(); ++i) {
      if (i) value += "; ";
      value += residual[i];
    }
    CaseItem item = make_item(Category::History, "narrative", value, std::nullopt);
    item.item_id = item_id_for(record.next_item_number++);
    record.items.push_back(std::move(item));
  }
  return record;
}

CaseRecord extract_case_items(std::string_view narrative, const CaseExtractor& extractor, std::string case_id) {
  return extractor.extract(narrative, std::move(case_id));
}

// ---------------------------------------------------------------------------
// Wire encoding

void to_json(nlohmann::json& j, const SourceSpan& span) { j = nlohmann::json::array({span.begin, span.end}); }

void to_json(nlohmann::json& j, const CaseItem& item) {
  j = {{"id", item.item_id},
       {"category", to_string(item.category)},
       {"label", item.label},
       {"value", item.value},
       {"span", item.source_span ? nlohmann::json(*item.source_span) : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, CaseItem& item) {
  item.item_id = j.at("id").get<std::string>();
  auto category = parse_category(j.at("category").get<std::string>());
  if (!category) throw Error(ErrorCode::InvalidCategory, "unknown category " + j.at("category").dump());
  item.category = *category;
  item.label = j.at("label").get<std::string>();
  item.value = j.value("value", std::string{});
  item.source_span.reset();
  if (j.contains("span") && !j["span"].is_null()) {
    const auto& s = j["span"];
    item.source_span = SourceSpan{s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()};
  }
}

void to_json(nlohmann::json& j, const CaseRecord& record) {
  j = {{"v", kCaseSchemaVersion},
       {"case_id", record.case_id},
       {"narrative", record.narrative},
       {"revision", record.revision},
       {"next_item_number", record.next_item_number},
       {"items", record.items}};
}

void from_json(const nlohmann::json& j, CaseRecord& record) {
  if (j.value("v", kCaseSchemaVersion) != kCaseSchemaVersion) {
    throw Error(ErrorCode::InvalidCase, "unsupported case schema version " + j.at("v").dump());
  }
  record.case_id = j.at("case_id").get<std::string>();
  record.narrative = j.value("narrative", std::string{});
  record.revision = j.value("revision", std::uint64_t{0});
  record.items = j.at("items").get<std::vector<CaseItem>>();
  std::uint64_t highest = 0;
  for (const auto& item : record.items) highest = std::max(highest, parse_item_number(item.item_id));
  record.next_item_number = std::max(j.value("next_item_number", std::uint64_t{1}), highest + 1);
}

void to_json(nlohmann::json& j, const ItemEdit& edit) {
  j = {{"kind", to_string(edit.kind)}};
  if (!edit.target_id.empty()) j["id"] = edit.target_id;
  if (edit.category) j["category"] = to_string(*edit.category);
  if (edit.label) j["label"] = *edit.label;
  if (edit.value) j["value"] = *edit.value;
}

void from_json(const nlohmann::json& j, ItemEdit& edit) {
  auto kind = j.at("kind").get<std::string>();
  if (kind == "add") {
    edit.kind = EditKind::Add;
  } else if (kind == "update") {
    edit.kind = EditKind::Update;
  } else if (kind == "remove") {
    edit.kind = EditKind::Remove;
  } else {
    throw Error(ErrorCode::BadRequest, "unknown edit kind " + kind);
  }
  edit.target_id = j.value("id", std::string{});
  edit.category.reset();
  edit.label.reset();
  edit.value.reset();
  if (j.contains("category")) {
    auto category = parse_category(j["category"].get<std::string>());
    if (!category) throw Error(ErrorCode::InvalidCategory, "unknown category " + j["category"].dump());
    edit.category = category;
  }
  if (j.contains("label")) edit.label = j["label"].get<std::string>();
  if (j.contains("value")) edit.value = j["value"].get<std::string>();
}

}  // namespace mdtroom
