#include <gtest/gtest.h>

#include <numeric>

#include "test_util.hpp"
#include "umind/mixture.hpp"
#include "umind/synthdata.hpp"

using namespace umind;
using namespace umind::mixture;
using tokens::Special;

namespace {

tokens::Alphabet alphabet;
const tokens::VocabLayout layout = tokens::VocabLayout::build(alphabet.size(), 16, 8, 2);

ModalSample sample() {
  ModalSample s;
  s.text = "go left.";
  s.speech = {1, 2, 3};
  s.motion = codec::MotionTokenGrid{2, 2, {0, 1, 2, 3}};
  s.sources = {"clip00001"};
  return s;
}

InstructRecord record() {
  return {"inst1", "show me wave?", "the prompt asks for wave; plan wave", "sure.", {4, 5},
          codec::MotionTokenGrid{1, 2, {7, 6}}};
}

std::array<double, kTaskCount> frequencies(const MixtureSpec& spec, std::uint64_t seed, int n) {
  const TaskSampler s(spec, seed);
  std::vector<TaskKind> draws;
  for (int i = 0; i < n; ++i) draws.push_back(s.draw(static_cast<std::uint64_t>(i)));
  return mixture_report(draws).frequencies;
}

}  // namespace

TEST(Mixture, SpecValidation) {
  EXPECT_NO_THROW(MixtureSpec::stage1_default().validate());
  EXPECT_NO_THROW(MixtureSpec::stage2_default().validate());
  MixtureSpec s{1, {0.5, 0.5, 0.0, 0.0, 0.1}};
  EXPECT_UMIND_ERROR(s.validate(), ErrorCode::kConfig);
  s = {1, {0.5, 0.4, 0.0, 0.0, 0.0}};
  EXPECT_UMIND_ERROR(s.validate(), ErrorCode::kConfig);
  s = {2, {0.5, 0.5, 0.0, 0.0, 0.0}};
  EXPECT_UMIND_ERROR(s.validate(), ErrorCode::kConfig);
  s = {1, {1.2, -0.2, 0.0, 0.0, 0.0}};
  EXPECT_UMIND_ERROR(s.validate(), ErrorCode::kConfig);
}

TEST(Mixture, DefaultWeights) {
  const auto s1 = MixtureSpec::stage1_default();
  EXPECT_DOUBLE_EQ(s1.weight(TaskKind::kT2M), 0.25);
  EXPECT_DOUBLE_EQ(s1.weight(TaskKind::kS2M), 0.25);
  EXPECT_DOUBLE_EQ(s1.weight(TaskKind::kT2S), 0.2);
  EXPECT_DOUBLE_EQ(s1.weight(TaskKind::kTextRehearsal), 0.3);
  const auto nr = s1.without_rehearsal();
  EXPECT_DOUBLE_EQ(nr.weight(TaskKind::kTextRehearsal), 0.0);
  EXPECT_NEAR(nr.weight(TaskKind::kT2M), 0.25 / 0.7, 1e-12);
}

TEST(Mixture, SingleTaskAlwaysDrawn) {
  const auto f = frequencies({1, {1.0, 0, 0, 0, 0}}, 3, 1000);
  EXPECT_EQ(f[0], 1.0);
}

TEST(Mixture, UniformFourWayWithinOnePercent) {
  const auto f = frequencies({1, {0.25, 0.25, 0.25, 0.25, 0.0}}, 7, 100000);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(f[static_cast<std::size_t>(i)], 0.25, 0.01);
  EXPECT_EQ(f[4], 0.0);
}

TEST(Mixture, DrawsDependOnlyOnSeedAndIndex) {
  const TaskSampler a(MixtureSpec::stage1_default(), 11);
  TaskSampler b(MixtureSpec::stage1_default(), 11);
  for (std::uint64_t i = 0; i < 100; ++i) EXPECT_EQ(a.draw(i), b.next());
}

TEST(Mixture, ReportEdgeCases) {
  EXPECT_TRUE(mixture_report({}).empty);
  const std::vector<TaskKind> d{TaskKind::kT2S, TaskKind::kT2S};
  const auto r = mixture_report(d);
  EXPECT_FALSE(r.empty);
  EXPECT_EQ(r.frequencies[2], 1.0);
  EXPECT_DOUBLE_EQ(std::accumulate(r.frequencies.begin(), r.frequencies.end(), 0.0), 1.0);
}

TEST(Mixture, TaskNames) {
  for (TaskKind t : kAllTasks) EXPECT_EQ(task_from_name(task_name(t)), t);
  EXPECT_UMIND_ERROR(task_from_name("X2Y"), ErrorCode::kConfig);
}

TEST(Mixture, Stage1Templates) {
  const auto t2m = build_stage1_example(TaskKind::kT2M, sample(), layout, alphabet);
  const auto r = tokens::parse_response(t2m.target, layout);
  EXPECT_TRUE(r.speech.empty());
  EXPECT_EQ(r.motion.size(), 4u);
  EXPECT_TRUE(r.think.empty() && r.text.empty());
  EXPECT_EQ(t2m.prompt[1], layout.special(Special::kUserTextOpen));

  const auto s2m = build_stage1_example(TaskKind::kS2M, sample(), layout, alphabet);
  ASSERT_EQ(s2m.prompt.size(), 6u);
  EXPECT_EQ(s2m.prompt[1], layout.special(Special::kUserSpeechOpen));
  for (std::size_t i = 2; i + 1 < s2m.prompt.size(); ++i) {
    EXPECT_EQ(tokens::classify(s2m.prompt[i], layout).kind, tokens::Kind::kSpeech);
  }
  const auto t2s = build_stage1_example(TaskKind::kT2S, sample(), layout, alphabet);
  EXPECT_EQ(tokens::parse_response(t2s.target, layout).speech.size(), 3u);
  EXPECT_EQ(t2s.sources, sample().sources);
}

TEST(Mixture, Stage1MissingModality) {
  ModalSample s = sample();
  s.motion.reset();
  EXPECT_UMIND_ERROR(build_stage1_example(TaskKind::kT2M, s, layout, alphabet),
                     ErrorCode::kModalityMissing);
  s = sample();
  s.speech.clear();
  EXPECT_UMIND_ERROR(build_stage1_example(TaskKind::kT2S, s, layout, alphabet),
                     ErrorCode::kModalityMissing);
  EXPECT_UMIND_ERROR(build_stage1_example(TaskKind::kInstruct, sample(), layout, alphabet),
                     ErrorCode::kInvalidArgument);
}

TEST(Mixture, Rehearsal) {
  const auto ex = build_rehearsal_example({"t1", "what is 2 plus 3?", "5"}, layout, alphabet);
  const auto r = tokens::parse_response(ex.target, layout);
  EXPECT_EQ(alphabet.decode(r.text, layout), "5");
  EXPECT_TRUE(r.think.empty() && r.speech.empty() && r.motion.empty());
}

TEST(Mixture, Stage2Variants) {
  const auto full = build_stage2_example(record(), layout, alphabet);
  const auto r = tokens::parse_response(full.target, layout);
  EXPECT_EQ(alphabet.decode(r.think, layout), record().cot);
  EXPECT_EQ(alphabet.decode(r.text, layout), "sure.");
  EXPECT_EQ(r.speech.size(), 2u);

  const auto no_cot = build_stage2_example(record(), layout, alphabet, {true, false});
  const auto rc = tokens::parse_response(no_cot.target, layout);
  EXPECT_TRUE(rc.think.empty());
  EXPECT_EQ(rc.text, r.text);
  EXPECT_EQ(rc.motion, r.motion);

  const auto media = build_stage2_example(record(), layout, alphabet, {false, true});
  EXPECT_EQ(media.order, tokens::SectionOrder::kMediaFirst);
  EXPECT_EQ(tokens::parse_response(media.target, layout, tokens::SectionOrder::kMediaFirst), r);
  EXPECT_EQ(media.target.end()[-2], r.text.back());
}

TEST(Mixture, Stage2RejectsIncompleteRecords) {
  auto rec = record();
  rec.answer.clear();
  EXPECT_UMIND_ERROR(build_stage2_example(rec, layout, alphabet), ErrorCode::kInvalidRecord);
  rec = record();
  rec.cot.clear();
  EXPECT_UMIND_ERROR(build_stage2_example(rec, layout, alphabet), ErrorCode::kInvalidRecord);
}

TEST(Mixture, SynthRecordsAllBuild) {
  synth::SynthConfig cfg;
  cfg.num_instruct = 1000;
  const auto recs = synth::gen_instruct_records(cfg);
  ASSERT_EQ(recs.size(), 1000u);
  const tokens::VocabLayout l = tokens::VocabLayout::build(alphabet.size(), cfg.speech_vocab, 8, 2);
  for (const auto& s : recs) {
    InstructRecord r{s.id, s.question, s.cot, s.answer, s.speech, codec::MotionTokenGrid{1, 2, {0, 0}}};
    const auto ex = build_stage2_example(r, l, alphabet);
    EXPECT_NO_THROW(tokens::parse_response(ex.target, l));
  }
}
