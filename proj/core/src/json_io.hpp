#pragma once

// nlohmann/json bindings for configuration structs. Missing keys fall back
// to the struct defaults so configs can be partial.

#include <json.hpp>

#include "umind/error.hpp"
#include "umind/experiment.hpp"

namespace umind::codec {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CodecConfig, num_residual_layers,
                                                downsample_ratio, codebook_size, latent_dim,
                                                joints, channel_widths, commitment_weight,
                                                ema_momentum, dead_threshold, learning_rate,
                                                adam_beta1, adam_beta2, weight_decay, milestones,
                                                lr_decay, steps_per_epoch, batch_size, window,
                                                fps, seed)
}  // namespace umind::codec

namespace umind::lm {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LMConfig, vocab_size, context_length, layers,
                                                heads, model_dim, feedforward_dim, dropout, seed,
                                                learning_rate, warmup_steps, total_steps,
                                                min_lr_ratio, weight_decay, grad_clip)
}  // namespace umind::lm

namespace umind::synth {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthConfig, num_clips, fps, joints,
                                                vocabulary_words, min_words, max_words,
                                                speech_vocab, silence_token, speech_rate,
                                                time_unit, word_units, pause_units,
                                                pause_probability, punctuation_probability,
                                                max_frequency, max_amplitude, held_out_fraction,
                                                num_instruct, num_text_records, seed)
}  // namespace umind::synth

namespace umind::segment {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SegmentOptions, pause_threshold, punctuation,
                                                merge_window, silence_token)
}  // namespace umind::segment

namespace umind::tokens {
NLOHMANN_JSON_SERIALIZE_ENUM(SectionOrder, {{SectionOrder::kTextFirst, "text_first"},
                                            {SectionOrder::kMediaFirst, "media_first"}})
}  // namespace umind::tokens

namespace umind::decode {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SectionCaps, think, text, speech, motion)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DecodePolicy, temperature, top_k, greedy, caps,
                                                seed, order, motion_per_speech)
}  // namespace umind::decode

namespace umind::metrics {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MetricOptions, window, stride, diversity_pairs,
                                                seed, normalize)
}  // namespace umind::metrics

namespace umind::mixture {

// {"stage": 1, "weights": {"t2m": 0.25, ...}}; absent tasks weigh zero.
inline void to_json(nlohmann::json& j, const MixtureSpec& m) {
  nlohmann::json w = nlohmann::json::object();
  for (TaskKind t : kAllTasks) w[std::string(task_name(t))] = m.weight(t);
  j = nlohmann::json{{"stage", m.stage}, {"weights", w}};
}

inline void from_json(const nlohmann::json& j, MixtureSpec& m) {
  m.stage = j.value("stage", m.stage);
  if (!j.contains("weights")) return;
  m.weights.fill(0.0);
  for (const auto& [name, w] : j.at("weights").items()) {
    m.weights[static_cast<std::size_t>(task_from_name(name))] = w.get<double>();
  }
}

}  // namespace umind::mixture

namespace umind::experiment {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StageConfig, steps, batch_size, learning_rate,
                                                warmup_steps, examples)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DatasetConfig, min_segments, max_segments,
                                                segmentation, within_clip)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Ablation, wo_seg, wo_cot, wo_text_first,
                                                wo_rehearsal)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExperimentConfig, corpus, codec, codec_steps,
                                                model, stage1, stage2, dataset, pretrain,
                                                instruct, decode, metrics, ablation, alphabet,
                                                eval_set, eval_limit, seed)
}  // namespace umind::experiment
