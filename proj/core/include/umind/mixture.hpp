#pragma once

// Task-weighted curriculum: stage-1 modality tasks plus text rehearsal, and
// stage-2 instruction examples with a think section.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "umind/motion_codec.hpp"
#include "umind/token_space.hpp"

namespace umind::mixture {

enum class TaskKind { kT2M, kS2M, kT2S, kTextRehearsal, kInstruct };
inline constexpr int kTaskCount = 5;
inline constexpr std::array<TaskKind, kTaskCount> kAllTasks{
    TaskKind::kT2M, TaskKind::kS2M, TaskKind::kT2S, TaskKind::kTextRehearsal,
    TaskKind::kInstruct};

std::string_view task_name(TaskKind t);
TaskKind task_from_name(std::string_view name);

struct MixtureSpec {
  int stage = 1;
  std::array<double, kTaskCount> weights{0.25, 0.25, 0.2, 0.3, 0.0};

  double weight(TaskKind t) const { return weights[static_cast<std::size_t>(t)]; }
  // Throws kConfig unless weights are non-negative, sum to 1 within 1e-9 and
  // respect stage gating.
  void validate() const;
  // Rehearsal weight zeroed and the remainder renormalized.
  MixtureSpec without_rehearsal() const;

  static MixtureSpec stage1_default();
  static MixtureSpec stage2_default();
};

// Categorical draws that depend only on (seed, draw index).
class TaskSampler {
 public:
  TaskSampler(MixtureSpec spec, std::uint64_t seed);
  TaskKind draw(std::uint64_t index) const;
  TaskKind next() { return draw(cursor_++); }
  const MixtureSpec& spec() const { return spec_; }

 private:
  MixtureSpec spec_;
  std::array<double, kTaskCount> cumulative_{};
  std::uint64_t seed_;
  std::uint64_t cursor_ = 0;
};

struct TrainingExample {
  TaskKind task = TaskKind::kT2M;
  std::vector<int> prompt;
  std::vector<int> target;
  std::vector<std::string> sources;
  // Grammar the target follows.
  tokens::SectionOrder order = tokens::SectionOrder::kTextFirst;
};

// Aligned material for one stage-1 example. Motion is already tokenized.
struct ModalSample {
  std::string text;
  std::vector<int> speech;  // speech codebook indices
  std::optional<codec::MotionTokenGrid> motion;
  std::vector<std::string> sources;
};

struct TextRecord {
  std::string id;
  std::string question;
  std::string answer;
};

struct InstructRecord {
  std::string id;
  std::string question;
  std::string cot;
  std::string answer;
  std::vector<int> speech;  // speech codebook indices
  codec::MotionTokenGrid motion;
};

TrainingExample build_stage1_example(TaskKind task, const ModalSample& sample,
                                     const tokens::VocabLayout& layout,
                                     const tokens::Alphabet& alphabet);
TrainingExample build_rehearsal_example(const TextRecord& record,
                                        const tokens::VocabLayout& layout,
                                        const tokens::Alphabet& alphabet);

struct Stage2Options {
  bool wo_cot = false;
  bool wo_text_first = false;
};

TrainingExample build_stage2_example(const InstructRecord& record,
                                     const tokens::VocabLayout& layout,
                                     const tokens::Alphabet& alphabet,
                                     const Stage2Options& options = {});

struct MixtureReport {
  std::array<long, kTaskCount> counts{};
  std::array<double, kTaskCount> frequencies{};
  long total = 0;
  bool empty = true;  // set when the stream held no draws
};

MixtureReport mixture_report(std::span<const TaskKind> draws);

}  // namespace umind::mixture
