#include "umind/lm.hpp"

#include <cmath>
#include <string>

#include "json_io.hpp"
#include "umind/checkpoint.hpp"
#include "umind/error.hpp"
#include "umind/random.hpp"

namespace umind::lm {

using nn::Graph;
using nn::Var;

void LMConfig::validate() const {
  require(vocab_size >= 1, ErrorCode::kConfig, "vocab_size must be >= 1");
  require(context_length >= 16, ErrorCode::kConfig, "context_length must be >= 16");
  require(layers >= 1 && heads >= 1 && model_dim >= 1 && feedforward_dim >= 1,
          ErrorCode::kConfig, "model sizes must be positive");
  require(model_dim % heads == 0, ErrorCode::kConfig, "model_dim must be divisible by heads");
  require(dropout >= 0.0 && dropout < 1.0, ErrorCode::kConfig, "dropout must lie in [0, 1)");
  require(learning_rate >= 0.0 && warmup_steps >= 0 && total_steps >= 0, ErrorCode::kConfig,
          "schedule values must be non-negative");
}

std::size_t parameter_count(const LMConfig& c) {
  const auto v = static_cast<std::size_t>(c.vocab_size);
  const auto n = static_cast<std::size_t>(c.context_length);
  const auto d = static_cast<std::size_t>(c.model_dim);
  const auto f = static_cast<std::size_t>(c.feedforward_dim);
  const std::size_t block = 2 * d            // ln1
                            + d * 3 * d + 3 * d  // qkv
                            + d * d + d          // proj
                            + 2 * d              // ln2
                            + d * f + f          // fc1
                            + f * d + d;         // fc2
  return v * d + n * d + static_cast<std::size_t>(c.layers) * block + 2 * d + d * v + v;
}

namespace {

Var bind(Graph& g, nn::ParameterStore& s, int id) { return g.parameter(s[id]); }
Var bind(Graph& g, const nn::ParameterStore& s, int id) { return g.constant(s[id].value); }

Matrix normal_matrix(Rng& rng, int rows, int cols, double std) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
  return m;
}

struct Packed {
  std::vector<int> ids;
  std::vector<int> positions;
  std::vector<int> offsets{0};
  std::vector<int> targets;
  std::vector<double> weights;
};

Packed pack(std::span<const mixture::TrainingExample> batch, int context, int vocab) {
  require(!batch.empty(), ErrorCode::kInvalidArgument, "empty batch");
  Packed p;
  for (const auto& ex : batch) {
    const std::size_t n = ex.prompt.size() + ex.target.size();
    require(n <= static_cast<std::size_t>(context), ErrorCode::kContextOverflow,
            "example of length " + std::to_string(n) + " exceeds the context length");
    require(n >= 2, ErrorCode::kInvalidArgument, "example needs at least two tokens");
    std::vector<int> seq(ex.prompt);
    seq.insert(seq.end(), ex.target.begin(), ex.target.end());
    for (int id : seq) {
      require(id >= 0 && id < vocab, ErrorCode::kInvalidId,
              "token id outside the vocabulary: " + std::to_string(id));
    }
    // Inputs are seq[0..n-2]; row i predicts seq[i + 1].
    for (std::size_t i = 0; i + 1 < n; ++i) {
      p.ids.push_back(seq[i]);
      p.positions.push_back(static_cast<int>(i));
      p.targets.push_back(seq[i + 1]);
      p.weights.push_back(i + 1 >= ex.prompt.size() ? 1.0 : 0.0);
    }
    p.offsets.push_back(static_cast<int>(p.ids.size()));
  }
  return p;
}

}  // namespace

LanguageModel::LanguageModel(LMConfig config)
    : config_(std::move(config)),
      optimizer_(nn::AdamConfig{0.9, 0.95, 1e-8, config_.weight_decay, config_.grad_clip}) {
  config_.validate();
  build();
}

void LanguageModel::build() {
  const int d = config_.model_dim;
  const int f = config_.feedforward_dim;
  Rng rng(derive_seed(config_.seed, 0x1A4));
  const double std = 0.02;
  const double proj_std = std / std::sqrt(2.0 * config_.layers);
  tok_emb_ = params_.add("tok_emb", normal_matrix(rng, config_.vocab_size, d, std));
  pos_emb_ = params_.add("pos_emb", normal_matrix(rng, config_.context_length, d, std));
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    BlockIds b{};
    b.ln1_g = params_.add(p + "ln1.g", Matrix::Ones(1, d));
    b.ln1_b = params_.add(p + "ln1.b", Matrix::Zero(1, d));
    b.qkv_w = params_.add(p + "attn.qkv.w", normal_matrix(rng, d, 3 * d, std));
    b.qkv_b = params_.add(p + "attn.qkv.b", Matrix::Zero(1, 3 * d));
    b.proj_w = params_.add(p + "attn.proj.w", normal_matrix(rng, d, d, proj_std));
    b.proj_b = params_.add(p + "attn.proj.b", Matrix::Zero(1, d));
    b.ln2_g = params_.add(p + "ln2.g", Matrix::Ones(1, d));
    b.ln2_b = params_.add(p + "ln2.b", Matrix::Zero(1, d));
    b.fc1_w = params_.add(p + "mlp.fc1.w", normal_matrix(rng, d, f, std));
    b.fc1_b = params_.add(p + "mlp.fc1.b", Matrix::Zero(1, f));
    b.fc2_w = params_.add(p + "mlp.fc2.w", normal_matrix(rng, f, d, proj_std));
    b.fc2_b = params_.add(p + "mlp.fc2.b", Matrix::Zero(1, d));
    blocks_.push_back(b);
  }
  lnf_g_ = params_.add("lnf.g", Matrix::Ones(1, d));
  lnf_b_ = params_.add("lnf.b", Matrix::Zero(1, d));
  head_w_ = params_.add("head.w", normal_matrix(rng, d, config_.vocab_size, std));
  head_b_ = params_.add("head.b", Matrix::Zero(1, config_.vocab_size));
}

template <class Store>
Var LanguageModel::forward_impl(Graph& g, Store& store, const std::vector<int>& ids,
                                const std::vector<int>& positions,
                                const std::vector<int>& offsets, bool train) const {
  const bool drop = train && config_.dropout > 0.0;
  std::uint64_t drop_stream = 0;
  auto maybe_drop = [&](Var v) {
    if (!drop) return v;
    return g.dropout(v, config_.dropout,
                     derive_seed(config_.seed, static_cast<std::uint64_t>(step_),
                                 ++drop_stream));
  };
  Var x = g.add(g.embedding(bind(g, store, tok_emb_), ids),
                g.embedding(bind(g, store, pos_emb_), positions));
  x = maybe_drop(x);
  for (const BlockIds& b : blocks_) {
    Var h = g.layer_norm(x, bind(g, store, b.ln1_g), bind(g, store, b.ln1_b));
    Var qkv = g.add_row(g.matmul(h, bind(g, store, b.qkv_w)), bind(g, store, b.qkv_b));
    Var a = g.causal_attention(qkv, config_.heads, offsets);
    a = g.add_row(g.matmul(a, bind(g, store, b.proj_w)), bind(g, store, b.proj_b));
    x = g.add(x, maybe_drop(a));
    h = g.layer_norm(x, bind(g, store, b.ln2_g), bind(g, store, b.ln2_b));
    h = g.gelu(g.add_row(g.matmul(h, bind(g, store, b.fc1_w)), bind(g, store, b.fc1_b)));
    h = g.add_row(g.matmul(h, bind(g, store, b.fc2_w)), bind(g, store, b.fc2_b));
    x = g.add(x, maybe_drop(h));
  }
  x = g.layer_norm(x, bind(g, store, lnf_g_), bind(g, store, lnf_b_));
  return g.add_row(g.matmul(x, bind(g, store, head_w_)), bind(g, store, head_b_));
}

Var LanguageModel::forward(Graph& g, const std::vector<int>& ids,
                           const std::vector<int>& positions, const std::vector<int>& offsets,
                           bool train) {
  return forward_impl(g, params_, ids, positions, offsets, train);
}

Var LanguageModel::forward_const(Graph& g, const std::vector<int>& ids,
                                 const std::vector<int>& positions,
                                 const std::vector<int>& offsets) const {
  return forward_impl(g, params_, ids, positions, offsets, false);
}

Matrix LanguageModel::forward_logits(std::span<const int> tokens) const {
  require(tokens.size() <= static_cast<std::size_t>(config_.context_length),
          ErrorCode::kContextOverflow, "input exceeds the context length");
  if (tokens.empty()) {
    // No tokens: the position-0 embedding alone through the output head.
    Graph g(false);
    Matrix pos = params_[pos_emb_].value.row(0);
    Var x = g.constant(pos);
    x = g.layer_norm(x, g.constant(params_[lnf_g_].value), g.constant(params_[lnf_b_].value));
    return g.value(g.add_row(g.matmul(x, g.constant(params_[head_w_].value)),
                             g.constant(params_[head_b_].value)));
  }
  std::vector<int> ids(tokens.begin(), tokens.end());
  for (int id : ids) {
    require(id >= 0 && id < config_.vocab_size, ErrorCode::kInvalidId,
            "token id outside the vocabulary: " + std::to_string(id));
  }
  std::vector<int> positions(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
  Graph g(false);
  return g.value(forward_const(g, ids, positions, {0, static_cast<int>(ids.size())}));
}

double LanguageModel::compute_loss(std::span<const mixture::TrainingExample> batch,
                                   bool backprop) {
  const Packed p = pack(batch, config_.context_length, config_.vocab_size);
  Graph g(backprop);
  Var logits = forward(g, p.ids, p.positions, p.offsets, backprop);
  Var loss = g.cross_entropy(logits, p.targets, p.weights);
  if (backprop) {
    params_.zero_grad();
    g.backward(loss);
  }
  return g.scalar(loss);
}

double LanguageModel::current_learning_rate() const {
  return nn::cosine_schedule(step_ - schedule_origin_, config_.learning_rate,
                             config_.warmup_steps, config_.total_steps, config_.min_lr_ratio);
}

StepReport LanguageModel::train_step(std::span<const mixture::TrainingExample> batch) {
  StepReport r;
  r.step = step_;
  r.loss = compute_loss(batch, true);
  if (!std::isfinite(r.loss)) {
    throw TrainingDivergedError(step_, "language model loss is not finite");
  }
  r.learning_rate = current_learning_rate();
  r.grad_norm = optimizer_.step(params_, r.learning_rate);
  if (!std::isfinite(r.grad_norm)) {
    throw TrainingDivergedError(step_, "language model gradient is not finite");
  }
  ++step_;
  return r;
}

EvalStats LanguageModel::evaluate(std::span<const mixture::TrainingExample> batch) const {
  const Packed p = pack(batch, config_.context_length, config_.vocab_size);
  Graph g(false);
  Var logits = forward_const(g, p.ids, p.positions, p.offsets);
  EvalStats s;
  s.loss = g.scalar(g.cross_entropy(logits, p.targets, p.weights));
  long correct = 0;
  const Matrix& z = g.value(logits);
  for (std::size_t i = 0; i < p.targets.size(); ++i) {
    if (p.weights[i] == 0.0) continue;
    Eigen::Index best = 0;
    z.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
    correct += best == p.targets[i] ? 1 : 0;
    ++s.target_tokens;
  }
  s.accuracy = s.target_tokens > 0
                   ? static_cast<double>(correct) / static_cast<double>(s.target_tokens)
                   : 0.0;
  return s;
}

void LanguageModel::set_schedule(double learning_rate, long warmup_steps, long total_steps) {
  config_.learning_rate = learning_rate;
  config_.warmup_steps = warmup_steps;
  config_.total_steps = total_steps;
  schedule_origin_ = step_;
}

void LanguageModel::resize_vocab(int new_size) {
  require(new_size >= config_.vocab_size, ErrorCode::kUnsupported,
          "vocabulary cannot shrink");
  if (new_size == config_.vocab_size) return;
  const int old = config_.vocab_size;
  const int extra = new_size - old;
  Rng rng(derive_seed(config_.seed, 0x5E51, static_cast<std::uint64_t>(new_size)));

  // New rows follow the per-dimension mean and spread of the old ones.
  auto grow_rows = [&](const Matrix& m) {
    const Eigen::RowVectorXd mean = m.colwise().mean();
    const Eigen::RowVectorXd sd =
        ((m.rowwise() - mean).array().square().colwise().sum() / std::max(1, old - 1))
            .sqrt();
    Matrix out(new_size, m.cols());
    out.topRows(old) = m;
    for (int r = 0; r < extra; ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        out(old + r, c) = mean(c) + sd(c) * rng.normal();
      }
    }
    nn::round_to_float(out);
    out.topRows(old) = m;
    return out;
  };
  params_[tok_emb_].value = grow_rows(params_[tok_emb_].value);
  params_[head_w_].value = grow_rows(params_[head_w_].value.transpose()).transpose();
  Matrix bias(1, new_size);
  bias.leftCols(old) = params_[head_b_].value;
  bias.rightCols(extra).setConstant(params_[head_b_].value.mean());
  nn::round_to_float(bias);
  bias.leftCols(old) = params_[head_b_].value;
  params_[head_b_].value = bias;
  for (auto& p : params_) p.grad.resize(0, 0);
  config_.vocab_size = new_size;
  optimizer_.sync_shapes(params_);
}

InferenceSession LanguageModel::session() const { return InferenceSession(*this); }

void LanguageModel::save(const std::filesystem::path& dir) const {
  checkpoint::Checkpoint ck;
  ck.kind = "lm";
  nlohmann::json meta;
  meta["config"] = config_;
  meta["step"] = step_;
  meta["schedule_origin"] = schedule_origin_;
  meta["optimizer_steps"] = optimizer_.steps();
  meta["seed"] = config_.seed;
  ck.metadata_json = meta.dump();
  for (const auto& p : params_) ck.arrays.push_back({p.name, p.value});
  const auto& m = optimizer_.first_moments();
  const auto& v = optimizer_.second_moments();
  for (std::size_t i = 0; i < m.size(); ++i) {
    ck.arrays.push_back({"opt.m." + params_[static_cast<int>(i)].name, m[i]});
    ck.arrays.push_back({"opt.v." + params_[static_cast<int>(i)].name, v[i]});
  }
  checkpoint::write(dir, ck);
}

LanguageModel LanguageModel::load(const std::filesystem::path& dir) {
  const checkpoint::Checkpoint ck = checkpoint::read(dir);
  require(ck.kind == "lm", ErrorCode::kCheckpointFormat,
          "checkpoint is not a language model: " + ck.kind);
  nlohmann::json meta;
  LMConfig cfg;
  try {
    meta = nlohmann::json::parse(ck.metadata_json);
    cfg = meta.at("config").get<LMConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCheckpointFormat, e.what());
  }
  LanguageModel model(cfg);
  for (auto& p : model.params_) {
    const Matrix& src = ck.array(p.name);
    require(src.rows() == p.value.rows() && src.cols() == p.value.cols(),
            ErrorCode::kCheckpointFormat, "array shape mismatch for " + p.name);
    p.value = src;
  }
  model.optimizer_.sync_shapes(model.params_);
  for (int i = 0; i < model.params_.size(); ++i) {
    const std::string& name = model.params_[i].name;
    for (const auto& a : ck.arrays) {
      if (a.name == "opt.m." + name) {
        model.optimizer_.first_moments()[static_cast<std::size_t>(i)] = a.value;
      } else if (a.name == "opt.v." + name) {
        model.optimizer_.second_moments()[static_cast<std::size_t>(i)] = a.value;
      }
    }
  }
  model.step_ = meta.value("step", 0L);
  model.schedule_origin_ = meta.value("schedule_origin", 0L);
  model.optimizer_.set_steps(meta.value("optimizer_steps", 0L));
  return model;
}

namespace {

Eigen::RowVectorXd layer_norm_row(const Eigen::RowVectorXd& x, const Matrix& g,
                                  const Matrix& b) {
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  const double rstd = 1.0 / std::sqrt(var + 1e-5);
  return ((x.array() - mean) * rstd * g.row(0).array() + b.row(0).array()).matrix();
}

double gelu(double t) {
  return 0.5 * t * (1.0 + std::tanh(0.7978845608028654 * (t + 0.044715 * t * t * t)));
}

}  // namespace

InferenceSession::InferenceSession(const LanguageModel& model) : model_(&model) { reset(); }

void InferenceSession::reset() {
  length_ = 0;
  const auto& c = model_->config_;
  keys_.assign(static_cast<std::size_t>(c.layers), Matrix(c.context_length, c.model_dim));
  values_.assign(static_cast<std::size_t>(c.layers), Matrix(c.context_length, c.model_dim));
}

Eigen::VectorXd InferenceSession::push(int token) {
  const auto& c = model_->config_;
  const auto& P = model_->params_;
  require(length_ < c.context_length, ErrorCode::kContextOverflow,
          "inference session is at the context length");
  require(token >= 0 && token < c.vocab_size, ErrorCode::kInvalidId,
          "token id outside the vocabulary: " + std::to_string(token));
  const int d = c.model_dim;
  const int hd = d / c.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const int pos = length_;
  Eigen::RowVectorXd x = P[model_->tok_emb_].value.row(token) + P[model_->pos_emb_].value.row(pos);
  for (std::size_t l = 0; l < model_->blocks_.size(); ++l) {
    const auto& b = model_->blocks_[l];
    Eigen::RowVectorXd h = layer_norm_row(x, P[b.ln1_g].value, P[b.ln1_b].value);
    const Eigen::RowVectorXd qkv = h * P[b.qkv_w].value + P[b.qkv_b].value;
    keys_[l].row(pos) = qkv.segment(d, d);
    values_[l].row(pos) = qkv.segment(2 * d, d);
    Eigen::RowVectorXd att(d);
    for (int head = 0; head < c.heads; ++head) {
      const auto q = qkv.segment(head * hd, hd);
      Eigen::VectorXd s =
          (keys_[l].block(0, head * hd, pos + 1, hd) * q.transpose()) * scale;
      const double mx = s.maxCoeff();
      s = (s.array() - mx).exp();
      s /= s.sum();
      att.segment(head * hd, hd) =
          s.transpose() * values_[l].block(0, head * hd, pos + 1, hd);
    }
    x += att * P[b.proj_w].value + P[b.proj_b].value;
    h = layer_norm_row(x, P[b.ln2_g].value, P[b.ln2_b].value);
    Eigen::RowVectorXd f = h * P[b.fc1_w].value + P[b.fc1_b].value;
    f = f.unaryExpr([](double t) { return gelu(t); });
    x += f * P[b.fc2_w].value + P[b.fc2_b].value;
  }
  x = layer_norm_row(x, P[model_->lnf_g_].value, P[model_->lnf_b_].value);
  ++length_;
  return (x * P[model_->head_w_].value + P[model_->head_b_].value).transpose();
}

}  // namespace umind::lm
