#include "umind/mixture.hpp"

#include <cmath>
#include <numeric>

#include "umind/error.hpp"
#include "umind/random.hpp"

namespace umind::mixture {

using tokens::ResponseStructure;
using tokens::SectionOrder;

std::string_view task_name(TaskKind t) {
  switch (t) {
    case TaskKind::kT2M: return "T2M";
    case TaskKind::kS2M: return "S2M";
    case TaskKind::kT2S: return "T2S";
    case TaskKind::kTextRehearsal: return "TEXT_REHEARSAL";
    case TaskKind::kInstruct: return "INSTRUCT";
  }
  return "?";
}

TaskKind task_from_name(std::string_view name) {
  for (TaskKind t : kAllTasks) {
    if (task_name(t) == name) return t;
  }
  throw Error(ErrorCode::kConfig, "unknown task kind: " + std::string(name));
}

void MixtureSpec::validate() const {
  require(stage == 1 || stage == 2, ErrorCode::kConfig, "mixture stage must be 1 or 2");
  double sum = 0.0;
  for (double w : weights) {
    require(std::isfinite(w) && w >= 0.0, ErrorCode::kConfig,
            "mixture weights must be non-negative");
    sum += w;
  }
  require(std::abs(sum - 1.0) <= 1e-9, ErrorCode::kConfig, "mixture weights must sum to 1");
  if (stage == 1) {
    require(weight(TaskKind::kInstruct) == 0.0, ErrorCode::kConfig,
            "stage-1 mixture cannot include INSTRUCT");
  } else {
    require(weight(TaskKind::kInstruct) > 0.0, ErrorCode::kConfig,
            "stage-2 mixture needs a nonzero INSTRUCT weight");
  }
}

MixtureSpec MixtureSpec::without_rehearsal() const {
  MixtureSpec out = *this;
  out.weights[static_cast<std::size_t>(TaskKind::kTextRehearsal)] = 0.0;
  const double sum = std::accumulate(out.weights.begin(), out.weights.end(), 0.0);
  require(sum > 0.0, ErrorCode::kConfig, "mixture has only rehearsal weight");
  for (double& w : out.weights) w /= sum;
  return out;
}

MixtureSpec MixtureSpec::stage1_default() { return MixtureSpec{}; }

MixtureSpec MixtureSpec::stage2_default() {
  return MixtureSpec{2, {0.125, 0.125, 0.125, 0.125, 0.5}};
}

TaskSampler::TaskSampler(MixtureSpec spec, std::uint64_t seed)
    : spec_(spec), seed_(seed) {
  spec_.validate();
  double acc = 0.0;
  for (std::size_t i = 0; i < cumulative_.size(); ++i) {
    acc += spec_.weights[i];
    cumulative_[i] = acc;
  }
}

TaskKind TaskSampler::draw(std::uint64_t index) const {
  Rng rng(derive_seed(seed_, 0x7A5C, index));
  const double u = rng.uniform() * cumulative_.back();
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < cumulative_.size(); ++i) {
    if (spec_.weights[i] <= 0.0) continue;
    last_positive = i;
    if (u < cumulative_[i]) return kAllTasks[i];
  }
  return kAllTasks[last_positive];
}

namespace {

TrainingExample finish(TaskKind task, std::vector<int> prompt, const ResponseStructure& r,
                       const tokens::VocabLayout& layout, std::vector<std::string> sources,
                       SectionOrder order = SectionOrder::kTextFirst) {
  TrainingExample ex;
  ex.task = task;
  ex.prompt = std::move(prompt);
  ex.target = tokens::serialize_response(r, layout, order);
  ex.sources = std::move(sources);
  ex.order = order;
  return ex;
}

}  // namespace

TrainingExample build_stage1_example(TaskKind task, const ModalSample& sample,
                                     const tokens::VocabLayout& layout,
                                     const tokens::Alphabet& alphabet) {
  auto need = [&](bool ok, const char* what) {
    require(ok, ErrorCode::kModalityMissing,
            std::string(task_name(task)) + " example needs " + what);
  };
  ResponseStructure r;
  std::vector<int> prompt;
  switch (task) {
    case TaskKind::kT2M:
      need(!sample.text.empty(), "text");
      need(sample.motion && sample.motion->timesteps > 0, "motion");
      prompt = tokens::user_text_prompt(alphabet.encode(sample.text, layout), layout);
      r.motion = tokens::flatten_motion(*sample.motion, layout);
      break;
    case TaskKind::kS2M:
      need(!sample.speech.empty(), "speech");
      need(sample.motion && sample.motion->timesteps > 0, "motion");
      prompt = tokens::user_speech_prompt(tokens::speech_ids(sample.speech, layout), layout);
      r.motion = tokens::flatten_motion(*sample.motion, layout);
      break;
    case TaskKind::kT2S:
      need(!sample.text.empty(), "text");
      need(!sample.speech.empty(), "speech");
      prompt = tokens::user_text_prompt(alphabet.encode(sample.text, layout), layout);
      r.speech = tokens::speech_ids(sample.speech, layout);
      break;
    case TaskKind::kTextRehearsal:
      throw Error(ErrorCode::kModalityMissing,
                  "TEXT_REHEARSAL examples are built from text records");
    case TaskKind::kInstruct:
      throw Error(ErrorCode::kInvalidArgument, "INSTRUCT is not a stage-1 task");
  }
  return finish(task, std::move(prompt), r, layout, sample.sources);
}

TrainingExample build_rehearsal_example(const TextRecord& record,
                                        const tokens::VocabLayout& layout,
                                        const tokens::Alphabet& alphabet) {
  require(!record.question.empty() && !record.answer.empty(), ErrorCode::kModalityMissing,
          "rehearsal record " + record.id + " needs a question and an answer");
  ResponseStructure r;
  r.text = alphabet.encode(record.answer, layout);
  return finish(TaskKind::kTextRehearsal,
                tokens::user_text_prompt(alphabet.encode(record.question, layout), layout), r,
                layout, {record.id});
}

TrainingExample build_stage2_example(const InstructRecord& record,
                                     const tokens::VocabLayout& layout,
                                     const tokens::Alphabet& alphabet,
                                     const Stage2Options& options) {
  require(!record.answer.empty(), ErrorCode::kInvalidRecord,
          "instruct record " + record.id + " has an empty answer");
  require(!record.cot.empty(), ErrorCode::kInvalidRecord,
          "instruct record " + record.id + " has an empty plan");
  ResponseStructure r;
  if (!options.wo_cot) r.think = alphabet.encode(record.cot, layout);
  r.text = alphabet.encode(record.answer, layout);
  r.speech = tokens::speech_ids(record.speech, layout);
  r.motion = tokens::flatten_motion(record.motion, layout);
  return finish(TaskKind::kInstruct,
                tokens::user_text_prompt(alphabet.encode(record.question, layout), layout), r,
                layout, {record.id},
                options.wo_text_first ? SectionOrder::kMediaFirst : SectionOrder::kTextFirst);
}

MixtureReport mixture_report(std::span<const TaskKind> draws) {
  MixtureReport rep;
  for (TaskKind t : draws) ++rep.counts[static_cast<std::size_t>(t)];
  rep.total = static_cast<long>(draws.size());
  rep.empty = draws.empty();
  if (!rep.empty) {
    for (std::size_t i = 0; i < rep.counts.size(); ++i) {
      rep.frequencies[i] = static_cast<double>(rep.counts[i]) / static_cast<double>(rep.total);
    }
  }
  return rep;
}

}  // namespace umind::mixture
