#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "mdtroom/engine.hpp"
#include "mdtroom/error.hpp"
#include "test_util.hpp"

using namespace mdtroom;
using namespace mdtroom::testing;

namespace {

SessionStore fresh_store() {
  SessionStore store(fixed_step_clock());
  DebateConfig config;
  config.hypothesis_aliases["whipple"] = "whipple disease";
  create_session(store, "s1", small_case(3), panel(2), config);
  return store;
}

ValidationFailure failure(const StatementResult& r) {
  ValidationFailure none;
  if (!std::holds_alternative<ValidationFailure>(r)) {
    ADD_FAILURE() << "statement unexpectedly accepted";
    return none;
  }
  return std::get<ValidationFailure>(r);
}

}  // namespace

TEST(Statement, AcceptsWellFormedReply) {
  auto store = fresh_store();
  nlohmann::json evidence = nlohmann::json::array(
      {{{"id", "e1"}, {"type", "Guideline"}, {"citation", "ACG 2020"}, {"snippet", "x"}, {"items", {"i3"}}}});
  auto r = validate_statement(reply("Whipple Disease", {"i1", "i2"}, evidence), store.state(), "a1", 0);
  ASSERT_TRUE(std::holds_alternative<Opinion>(r));
  const auto& op = std::get<Opinion>(r);
  EXPECT_EQ(op.hypothesis_label_raw, "Whipple Disease");
  EXPECT_EQ(op.hypothesis_id, "");
  EXPECT_EQ(op.cited_item_ids(), (IdSet{"i1", "i2", "i3"}));
  EXPECT_EQ(op.reasoning_steps[0].cited_evidence_ids, IdSet{"e1"});
  EXPECT_FALSE(op.changed_from);
}

TEST(Statement, StripsProseAndFences) {
  auto store = fresh_store();
  auto text = "Here is my answer:\n```json\n" + reply("Lymphoma", {"i1"}) + "\n```\nThanks";
  EXPECT_TRUE(std::holds_alternative<Opinion>(validate_statement(text, store.state(), "a1", 0)));
}

TEST(Statement, NonJsonIsSchemaMismatch) {
  auto store = fresh_store();
  const auto f = failure(validate_statement("I think lymphoma", store.state(), "a1", 0));
  EXPECT_TRUE(f.has(StatementError::SchemaMismatch));
}

TEST(Statement, CollectsEveryIssue) {
  auto store = fresh_store();
  nlohmann::json j = nlohmann::json::parse(reply("  ", {"i1", "i9"}));
  j["steps"][0]["evidence"] = {"e7"};
  j["evidence"] = nlohmann::json::array(
      {{{"id", "e1"}, {"type", "blog"}, {"citation", "c"}, {"items", nlohmann::json::array()}}});
  const auto f = failure(validate_statement(j.dump(), store.state(), "a1", 0));
  EXPECT_TRUE(f.has(StatementError::EmptyHypothesis));
  EXPECT_TRUE(f.has(StatementError::UnknownItemReference));
  EXPECT_TRUE(f.has(StatementError::UnknownEvidenceReference));
  EXPECT_TRUE(f.has(StatementError::SchemaMismatch));
  auto reasons = f.reasons();
  EXPECT_NE(std::find(reasons.begin(), reasons.end(), "UnknownItemReference(i9)"), reasons.end());
  EXPECT_NE(std::find(reasons.begin(), reasons.end(), "UnknownEvidenceReference(e7)"), reasons.end());
}

TEST(Statement, MissingStepsAndDuplicateEvidence) {
  auto store = fresh_store();
  nlohmann::json j = nlohmann::json::parse(reply("Lymphoma", {"i1"}));
  j.erase("steps");
  EXPECT_TRUE(failure(validate_statement(j.dump(), store.state(), "a1", 0)).has(StatementError::SchemaMismatch));

  nlohmann::json dup = nlohmann::json::parse(reply("Lymphoma", {"i1"}));
  nlohmann::json e = {{"id", "e1"}, {"type", "literature"}, {"citation", "c"}, {"items", nlohmann::json::array()}};
  dup["evidence"] = {e, e};
  EXPECT_TRUE(failure(validate_statement(dup.dump(), store.state(), "a1", 0)).has(StatementError::SchemaMismatch));
}

TEST(Statement, ChangedFromComparesCanonicalKeys) {
  auto store = fresh_store();
  DebateEngine engine(store, table_transport({{{"a1", 0}, reply("Whipple", {"i1"})},
                                              {{"a2", 0}, reply("Lymphoma", {"i1"})}}));
  engine.run_round(RoundKind::Initial);
  const auto& st = store.state();
  const auto& held = st.rounds[0].opinion_of("a1")->hypothesis_id;

  // alias and case variants of the held hypothesis are not a change
  for (const char* label : {"WHIPPLE", " whipple  disease "}) {
    auto r = validate_statement(reply(label, {"i1"}), st, "a1", 1);
    ASSERT_TRUE(std::holds_alternative<Opinion>(r));
    EXPECT_FALSE(std::get<Opinion>(r).changed_from) << label;
    EXPECT_EQ(std::get<Opinion>(r).hypothesis_id, held);
  }
  auto r = validate_statement(reply("lymphoma", {"i1"}), st, "a1", 1);
  ASSERT_TRUE(std::holds_alternative<Opinion>(r));
  EXPECT_EQ(std::get<Opinion>(r).changed_from, held);
}

TEST(Statement, SelfReportedChangeIsIgnored) {
  auto store = fresh_store();
  nlohmann::json j = nlohmann::json::parse(reply("Lymphoma", {"i1"}));
  j["changed_opinion"] = true;
  auto r = validate_statement(j.dump(), store.state(), "a1", 0);
  ASSERT_TRUE(std::holds_alternative<Opinion>(r));
  EXPECT_FALSE(std::get<Opinion>(r).changed_from);
}
