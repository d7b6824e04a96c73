#pragma once

// Small pre-LayerNorm decoder-only transformer over the unified vocabulary.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "umind/mixture.hpp"
#include "umind/nn/graph.hpp"
#include "umind/nn/optim.hpp"

namespace umind::lm {

using nn::Matrix;

struct LMConfig {
  int vocab_size = 0;
  int context_length = 512;
  int layers = 4;
  int heads = 8;
  int model_dim = 256;
  int feedforward_dim = 1024;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  // Warmup then cosine decay to peak * min_lr_ratio over total_steps.
  double learning_rate = 1e-3;
  long warmup_steps = 100;
  long total_steps = 3000;
  double min_lr_ratio = 0.1;
  double weight_decay = 0.01;
  double grad_clip = 1.0;

  void validate() const;
};

// Closed-form parameter count of the architecture.
std::size_t parameter_count(const LMConfig& c);

struct StepReport {
  long step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
  double grad_norm = 0.0;
};

struct EvalStats {
  double loss = 0.0;
  double accuracy = 0.0;  // argmax next-token accuracy on target positions
  long target_tokens = 0;
};

class InferenceSession;

class LanguageModel {
 public:
  explicit LanguageModel(LMConfig config);

  const LMConfig& config() const { return config_; }
  long step() const { return step_; }

  // tokens.size() x vocab logits; row i predicts token i + 1.
  Matrix forward_logits(std::span<const int> tokens) const;

  // Mean next-token cross-entropy over target positions. With `backprop`
  // the parameter gradients are filled (and previous ones cleared).
  double compute_loss(std::span<const mixture::TrainingExample> batch, bool backprop);
  StepReport train_step(std::span<const mixture::TrainingExample> batch);
  EvalStats evaluate(std::span<const mixture::TrainingExample> batch) const;

  // Restarts the learning-rate schedule (used when fine-tuning from a
  // pretrained state).
  void set_schedule(double learning_rate, long warmup_steps, long total_steps);
  double current_learning_rate() const;

  // Grows the vocabulary; old rows stay bit-identical.
  void resize_vocab(int new_size);

  InferenceSession session() const;

  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }

  void save(const std::filesystem::path& dir) const;
  static LanguageModel load(const std::filesystem::path& dir);

 private:
  friend class InferenceSession;

  struct BlockIds {
    int ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
    int ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };

  void build();
  nn::Var forward(nn::Graph& g, const std::vector<int>& ids, const std::vector<int>& positions,
                  const std::vector<int>& offsets, bool train);
  nn::Var forward_const(nn::Graph& g, const std::vector<int>& ids,
                        const std::vector<int>& positions,
                        const std::vector<int>& offsets) const;
  template <class Store>
  nn::Var forward_impl(nn::Graph& g, Store& store, const std::vector<int>& ids,
                       const std::vector<int>& positions, const std::vector<int>& offsets,
                       bool train) const;

  LMConfig config_;
  nn::ParameterStore params_;
  nn::Adam optimizer_;
  long step_ = 0;
  long schedule_origin_ = 0;

  int tok_emb_ = -1, pos_emb_ = -1, lnf_g_ = -1, lnf_b_ = -1, head_w_ = -1, head_b_ = -1;
  std::vector<BlockIds> blocks_;
};

// Incremental decoding with a key/value cache. Matches forward_logits.
class InferenceSession {
 public:
  explicit InferenceSession(const LanguageModel& model);

  // Appends one token; returns logits for the next position.
  Eigen::VectorXd push(int token);
  int length() const { return length_; }
  void reset();

 private:
  const LanguageModel* model_;
  int length_ = 0;
  std::vector<Matrix> keys_;    // per layer, context_length x d
  std::vector<Matrix> values_;
};

}  // namespace umind::lm
