#include "umind/motion_codec.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "json_io.hpp"
#include "umind/checkpoint.hpp"
#include "umind/error.hpp"
#include "umind/random.hpp"

namespace umind::codec {

using nn::Graph;
using nn::Var;

void CodecConfig::validate() const {
  require(num_residual_layers >= 1, ErrorCode::kConfig, "num_residual_layers must be >= 1");
  require(downsample_ratio >= 1 && (downsample_ratio & (downsample_ratio - 1)) == 0,
          ErrorCode::kConfig, "downsample_ratio must be a power of two");
  require(codebook_size >= 2, ErrorCode::kConfig, "codebook_size must be >= 2");
  require(latent_dim >= 1 && joints >= 1, ErrorCode::kConfig,
          "latent_dim and joints must be positive");
  require(!channel_widths.empty(), ErrorCode::kConfig, "channel_widths is empty");
  for (int w : channel_widths) {
    require(w >= 1, ErrorCode::kConfig, "channel widths must be positive");
  }
  require(ema_momentum >= 0.0 && ema_momentum <= 1.0, ErrorCode::kConfig,
          "ema_momentum must lie in [0, 1]");
  require(commitment_weight >= 0.0, ErrorCode::kConfig, "commitment_weight must be >= 0");
  require(window >= downsample_ratio, ErrorCode::kConfig,
          "window must cover at least one latent step");
  require(batch_size >= 1 && steps_per_epoch >= 1, ErrorCode::kConfig,
          "batch_size and steps_per_epoch must be positive");
  require(fps > 0.0, ErrorCode::kConfig, "fps must be positive");
}

CodecConfig CodecConfig::desk() {
  CodecConfig c;
  c.learning_rate = 2e-3;
  c.steps_per_epoch = 10;  // milestones land at steps 500 / 1500 / 2500
  c.batch_size = 32;
  c.window = 32;
  return c;
}

QuantizeResult quantize_residual(const Matrix& z, std::span<const Codebook> codebooks,
                                 double commitment_weight) {
  require(!codebooks.empty(), ErrorCode::kConfig, "no codebooks");
  const auto n = z.rows();
  const auto layers = static_cast<int>(codebooks.size());
  QuantizeResult out;
  out.tokens.timesteps = static_cast<int>(n);
  out.tokens.layers = layers;
  out.tokens.indices.assign(static_cast<std::size_t>(n * layers), 0);
  out.quantized = Matrix::Zero(n, z.cols());
  for (int l = 0; l < layers; ++l) {
    const Matrix& entries = codebooks[static_cast<std::size_t>(l)].entries;
    require(entries.rows() >= 1, ErrorCode::kConfig, "empty codebook");
    require(entries.cols() == z.cols(), ErrorCode::kShapeMismatch,
            "codebook width differs from latent width");
    Matrix residual = z - out.quantized;
    const Eigen::VectorXd entry_norms = entries.rowwise().squaredNorm();
    const Matrix cross = residual * entries.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double best_d = entry_norms(0) - 2.0 * cross(i, 0);
      for (Eigen::Index k = 1; k < entries.rows(); ++k) {
        const double d = entry_norms(k) - 2.0 * cross(i, k);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      out.tokens.indices[static_cast<std::size_t>(i * layers + l)] = static_cast<int>(best);
      out.quantized.row(i) += entries.row(best);
    }
    out.layer_inputs.push_back(std::move(residual));
    out.residual_energy.push_back(
        n > 0 ? (z - out.quantized).rowwise().squaredNorm().mean() : 0.0);
  }
  out.commit_loss =
      n > 0 ? commitment_weight * (z - out.quantized).squaredNorm() /
                  static_cast<double>(z.size())
            : 0.0;
  return out;
}

namespace {

Var bind(Graph& g, nn::ParameterStore& store, int id) { return g.parameter(store[id]); }
Var bind(Graph& g, const nn::ParameterStore& store, int id) {
  return g.constant(store[id].value);
}

int width_at(const CodecConfig& c, int level) {
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(level),
                                       c.channel_widths.size() - 1);
  return c.channel_widths[i];
}

int num_down_blocks(int ratio) {
  int n = 0;
  while ((1 << n) < ratio) ++n;
  return n;
}

}  // namespace

MotionCodec::MotionCodec(CodecConfig config)
    : config_(std::move(config)),
      optimizer_(nn::AdamConfig{config_.adam_beta1, config_.adam_beta2, 1e-8,
                                config_.weight_decay, 0.0}) {
  config_.validate();
  build();
  codebooks_.resize(static_cast<std::size_t>(config_.num_residual_layers));
  for (auto& cb : codebooks_) {
    cb.entries = Matrix::Zero(config_.codebook_size, config_.latent_dim);
    cb.cluster_size = Eigen::VectorXd::Zero(config_.codebook_size);
    cb.embed_sum = Matrix::Zero(config_.codebook_size, config_.latent_dim);
  }
}

MotionCodec::ConvIds MotionCodec::add_conv(const std::string& name, int kernel, int cin,
                                           int cout, double gain) {
  Rng rng(derive_seed(config_.seed, 0xC0DEC, static_cast<std::uint64_t>(params_.size())));
  const double std = gain / std::sqrt(static_cast<double>(kernel * cin));
  Matrix w(kernel * cin, cout);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = std * rng.normal();
  ConvIds ids;
  ids.w = params_.add(name + ".w", std::move(w));
  ids.b = params_.add(name + ".b", Matrix::Zero(1, cout));
  return ids;
}

MotionCodec::ResIds MotionCodec::add_res(const std::string& name, int width) {
  ResIds r;
  r.first = add_conv(name + ".c1", 3, width, width, 1.0);
  r.second = add_conv(name + ".c2", 3, width, width, 0.5);
  return r;
}

void MotionCodec::build() {
  const int in_dim = config_.joints * 6;
  const int blocks = num_down_blocks(config_.downsample_ratio);
  enc_in_ = add_conv("enc.in", 3, in_dim, width_at(config_, 0), 1.0);
  for (int b = 0; b < blocks; ++b) {
    const std::string tag = "enc.block" + std::to_string(b);
    enc_res_.push_back(add_res(tag + ".res", width_at(config_, b)));
    enc_down_.push_back(
        add_conv(tag + ".down", 4, width_at(config_, b), width_at(config_, b + 1), 1.0));
  }
  enc_mid_ = add_res("enc.mid", width_at(config_, blocks));
  enc_out_ = add_conv("enc.out", 3, width_at(config_, blocks), config_.latent_dim, 1.0);

  dec_in_ = add_conv("dec.in", 3, config_.latent_dim, width_at(config_, blocks), 1.0);
  dec_mid_ = add_res("dec.mid", width_at(config_, blocks));
  dec_up_.resize(static_cast<std::size_t>(blocks));
  dec_res_.resize(static_cast<std::size_t>(blocks));
  for (int b = blocks - 1; b >= 0; --b) {
    const std::string tag = "dec.block" + std::to_string(b);
    dec_up_[static_cast<std::size_t>(b)] =
        add_conv(tag + ".up", 3, width_at(config_, b + 1), width_at(config_, b), 1.0);
    dec_res_[static_cast<std::size_t>(b)] = add_res(tag + ".res", width_at(config_, b));
  }
  dec_out_ = add_conv("dec.out", 3, width_at(config_, 0), in_dim, 0.5);
}

template <class Store>
Var MotionCodec::conv(Graph& g, Store& store, const ConvIds& c, Var x,
                      nn::ConvShape shape) const {
  return g.conv1d(x, bind(g, store, c.w), bind(g, store, c.b), shape);
}

template <class Store>
Var MotionCodec::res(Graph& g, Store& store, const ResIds& r, Var x, int batch) const {
  const nn::ConvShape same{3, 1, 1, batch};
  Var h = conv(g, store, r.first, g.gelu(x), same);
  h = conv(g, store, r.second, g.gelu(h), same);
  return g.add(x, h);
}

template <class Store>
Var MotionCodec::encoder(Graph& g, Store& store, Var x, int batch) const {
  const nn::ConvShape same{3, 1, 1, batch};
  Var h = conv(g, store, enc_in_, x, same);
  for (std::size_t b = 0; b < enc_down_.size(); ++b) {
    h = res(g, store, enc_res_[b], h, batch);
    h = conv(g, store, enc_down_[b], g.gelu(h), nn::ConvShape{4, 2, 1, batch});
  }
  h = res(g, store, enc_mid_, h, batch);
  return conv(g, store, enc_out_, g.gelu(h), same);
}

template <class Store>
Var MotionCodec::decoder(Graph& g, Store& store, Var z, int batch) const {
  const nn::ConvShape same{3, 1, 1, batch};
  Var h = conv(g, store, dec_in_, z, same);
  h = res(g, store, dec_mid_, h, batch);
  for (int b = static_cast<int>(dec_up_.size()) - 1; b >= 0; --b) {
    h = g.upsample(h, 2);
    h = conv(g, store, dec_up_[static_cast<std::size_t>(b)], h, same);
    h = res(g, store, dec_res_[static_cast<std::size_t>(b)], h, batch);
  }
  return conv(g, store, dec_out_, g.gelu(h), same);
}

int MotionCodec::latent_length(int frames) const {
  return (frames + config_.downsample_ratio - 1) / config_.downsample_ratio;
}

Matrix MotionCodec::stack_padded(std::span<const PoseSequence> batch, int* frames) const {
  require(!batch.empty(), ErrorCode::kInvalidArgument, "empty batch");
  const int t = batch.front().frames();
  require(t >= config_.downsample_ratio, ErrorCode::kTooShort,
          "sequence shorter than the downsample ratio");
  const int padded = latent_length(t) * config_.downsample_ratio;
  const int width = config_.joints * 6;
  Matrix x(static_cast<Eigen::Index>(batch.size()) * padded, width);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const PoseSequence& seq = batch[b];
    require(seq.frames() == t, ErrorCode::kShapeMismatch,
            "batch sequences must share one length");
    require(seq.joints() == config_.joints, ErrorCode::kShapeMismatch,
            "joint count differs from codec config");
    const auto base = static_cast<Eigen::Index>(b) * padded;
    x.middleRows(base, t) = seq.data();
    for (int r = t; r < padded; ++r) x.row(base + r) = seq.data().row(t - 1);
  }
  if (frames != nullptr) *frames = padded;
  return x;
}

Matrix MotionCodec::encode_stacked(const Matrix& x, int batch) const {
  Graph g(false);
  Var z = encoder(g, params_, g.constant(x), batch);
  return g.value(z);
}

Matrix MotionCodec::encode(const PoseSequence& x) const {
  require(x.frames() >= config_.downsample_ratio, ErrorCode::kTooShort,
          "sequence shorter than the downsample ratio");
  require(x.data().allFinite(), ErrorCode::kInvalidArgument, "non-finite pose data");
  return encode_stacked(stack_padded(std::span(&x, 1), nullptr), 1);
}

QuantizeResult MotionCodec::quantize(const Matrix& z) const {
  return quantize_residual(z, codebooks_, config_.commitment_weight);
}

MotionTokenGrid MotionCodec::tokenize(const PoseSequence& x) const {
  return quantize(encode(x)).tokens;
}

PoseSequence MotionCodec::decode(const MotionTokenGrid& tokens) const {
  require(tokens.layers == config_.num_residual_layers, ErrorCode::kInvalidToken,
          "token grid layer count differs from codec config");
  require(tokens.timesteps >= 0 &&
              tokens.indices.size() ==
                  static_cast<std::size_t>(tokens.timesteps * tokens.layers),
          ErrorCode::kInvalidToken, "token grid size mismatch");
  for (int idx : tokens.indices) {
    require(idx >= 0 && idx < config_.codebook_size, ErrorCode::kInvalidToken,
            "codebook index out of range: " + std::to_string(idx));
  }
  if (tokens.timesteps == 0) return PoseSequence(0, config_.joints, config_.fps);
  Matrix z = Matrix::Zero(tokens.timesteps, config_.latent_dim);
  for (int t = 0; t < tokens.timesteps; ++t) {
    for (int l = 0; l < tokens.layers; ++l) {
      z.row(t) += codebooks_[static_cast<std::size_t>(l)].entries.row(tokens.at(t, l));
    }
  }
  Graph g(false);
  Var out = decoder(g, params_, g.constant(z), 1);
  return PoseSequence(g.value(out), config_.joints, config_.fps);
}

PoseSequence MotionCodec::reconstruct(const PoseSequence& x) const {
  PoseSequence full = decode(tokenize(x));
  PoseSequence cropped = full.slice(0, x.frames());
  return PoseSequence(cropped.data(), x.joints(), x.fps());
}

void MotionCodec::init_codebooks(std::span<const PoseSequence> batch) {
  const Matrix z = encode_stacked(stack_padded(batch, nullptr),
                                  static_cast<int>(batch.size()));
  Rng rng(derive_seed(config_.seed, 0xB00C));
  Matrix quantized = Matrix::Zero(z.rows(), z.cols());
  for (std::size_t l = 0; l < codebooks_.size(); ++l) {
    Codebook& cb = codebooks_[l];
    const Matrix residual = z - quantized;
    const auto n = static_cast<std::size_t>(residual.rows());
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = 0; i + 1 < n; ++i) std::swap(order[i], order[i + rng.index(n - i)]);
    for (int k = 0; k < config_.codebook_size; ++k) {
      const auto pick = static_cast<std::size_t>(k) < n ? order[static_cast<std::size_t>(k)]
                                                         : rng.index(n);
      cb.entries.row(k) = residual.row(static_cast<Eigen::Index>(pick));
    }
    nn::round_to_float(cb.entries);
    cb.cluster_size.setOnes();
    cb.embed_sum = cb.entries;
    const QuantizeResult q =
        quantize_residual(residual, std::span(&cb, 1), config_.commitment_weight);
    quantized += q.quantized;
  }
  initialized_ = true;
}

void MotionCodec::ema_update(int layer, const Matrix& inputs,
                             std::span<const int> assignment) {
  require(layer >= 0 && layer < config_.num_residual_layers, ErrorCode::kInvalidArgument,
          "layer out of range");
  require(static_cast<Eigen::Index>(assignment.size()) == inputs.rows(),
          ErrorCode::kShapeMismatch, "assignment length differs from inputs");
  Codebook& cb = codebooks_[static_cast<std::size_t>(layer)];
  const double m = config_.ema_momentum;
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(config_.codebook_size);
  Matrix sums = Matrix::Zero(config_.codebook_size, config_.latent_dim);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    counts(assignment[i]) += 1.0;
    sums.row(assignment[i]) += inputs.row(static_cast<Eigen::Index>(i));
  }
  cb.cluster_size = m * cb.cluster_size + (1.0 - m) * counts;
  cb.embed_sum = m * cb.embed_sum + (1.0 - m) * sums;
  Rng rng(derive_seed(config_.seed, 0xDEAD, static_cast<std::uint64_t>(step_) * 64 +
                                                static_cast<std::uint64_t>(layer)));
  for (int k = 0; k < config_.codebook_size; ++k) {
    if (cb.cluster_size(k) >= config_.dead_threshold) {
      cb.entries.row(k) = cb.embed_sum.row(k) / cb.cluster_size(k);
    } else if (inputs.rows() > 0) {
      const auto pick = static_cast<Eigen::Index>(
          rng.index(static_cast<std::size_t>(inputs.rows())));
      cb.entries.row(k) = inputs.row(pick);
      cb.embed_sum.row(k) = inputs.row(pick) * cb.cluster_size(k);
    }
  }
  nn::round_to_float(cb.entries);
}

MotionCodec::FrozenQuantizer MotionCodec::freeze_quantizer(
    std::span<const PoseSequence> batch) const {
  FrozenQuantizer f;
  f.latents = encode_stacked(stack_padded(batch, nullptr), static_cast<int>(batch.size()));
  f.quantized = quantize(f.latents).quantized;
  return f;
}

CodecObjective MotionCodec::evaluate_objective(std::span<const PoseSequence> batch,
                                               const FrozenQuantizer* frozen,
                                               bool backprop) {
  const int b = static_cast<int>(batch.size());
  const Matrix x = stack_padded(batch, nullptr);
  Graph g(backprop);
  Var z = encoder(g, params_, g.constant(x), b);
  Matrix quantized, offset;
  if (frozen != nullptr) {
    require(frozen->quantized.rows() == g.value(z).rows() &&
                frozen->quantized.cols() == g.value(z).cols() &&
                frozen->latents.rows() == frozen->quantized.rows() &&
                frozen->latents.cols() == frozen->quantized.cols(),
            ErrorCode::kShapeMismatch, "frozen quantizer has the wrong shape");
    quantized = frozen->quantized;
    offset = frozen->quantized - frozen->latents;
  } else {
    quantized = quantize(g.value(z)).quantized;
    offset = quantized - g.value(z);
  }
  Var zq = g.add(z, g.constant(offset));
  Var recon = g.mse(decoder(g, params_, zq, b), x);
  Var commit = g.scale(g.mse(z, quantized), config_.commitment_weight);
  Var loss = g.add(recon, commit);
  if (backprop) {
    params_.zero_grad();
    g.backward(loss);
  }
  return CodecObjective{g.scalar(recon), g.scalar(commit), g.scalar(loss)};
}

CodecTrainReport MotionCodec::train_step(std::span<const PoseSequence> batch) {
  require(!batch.empty(), ErrorCode::kInvalidArgument, "empty training batch");
  if (!initialized_) init_codebooks(batch);
  const int b = static_cast<int>(batch.size());
  const Matrix x = stack_padded(batch, nullptr);

  Graph g(true);
  Var z = encoder(g, params_, g.constant(x), b);
  const QuantizeResult q = quantize(g.value(z));
  Var zq = g.add(z, g.constant(q.quantized - g.value(z)));
  Var recon = g.mse(decoder(g, params_, zq, b), x);
  Var commit = g.scale(g.mse(z, q.quantized), config_.commitment_weight);
  Var loss = g.add(recon, commit);

  CodecTrainReport report;
  report.step = step_;
  report.recon_loss = g.scalar(recon);
  report.commit_loss = g.scalar(commit);
  if (!std::isfinite(g.scalar(loss))) {
    throw TrainingDivergedError(step_, "motion codec loss is not finite");
  }
  params_.zero_grad();
  g.backward(loss);
  report.learning_rate =
      nn::multistep_schedule(step_, config_.learning_rate, config_.milestones,
                             config_.lr_decay, config_.steps_per_epoch);
  optimizer_.step(params_, report.learning_rate);

  for (int l = 0; l < config_.num_residual_layers; ++l) {
    std::vector<int> assign(static_cast<std::size_t>(q.tokens.timesteps));
    std::vector<char> used(static_cast<std::size_t>(config_.codebook_size), 0);
    for (int t = 0; t < q.tokens.timesteps; ++t) {
      assign[static_cast<std::size_t>(t)] = q.tokens.at(t, l);
      used[static_cast<std::size_t>(q.tokens.at(t, l))] = 1;
    }
    report.utilization.push_back(
        static_cast<double>(std::count(used.begin(), used.end(), 1)) /
        config_.codebook_size);
    ema_update(l, q.layer_inputs[static_cast<std::size_t>(l)], assign);
  }
  ++step_;
  return report;
}

void MotionCodec::save(const std::filesystem::path& dir) const {
  checkpoint::Checkpoint ck;
  ck.kind = "motion_codec";
  nlohmann::json meta;
  meta["config"] = config_;
  meta["step"] = step_;
  meta["seed"] = config_.seed;
  meta["initialized"] = initialized_;
  meta["optimizer_steps"] = optimizer_.steps();
  ck.metadata_json = meta.dump();
  for (const auto& p : params_) ck.arrays.push_back({p.name, p.value});
  for (std::size_t l = 0; l < codebooks_.size(); ++l) {
    const std::string tag = "codebook." + std::to_string(l);
    ck.arrays.push_back({tag + ".entries", codebooks_[l].entries});
    ck.arrays.push_back({tag + ".cluster_size", codebooks_[l].cluster_size});
    ck.arrays.push_back({tag + ".embed_sum", codebooks_[l].embed_sum});
  }
  const auto& m = optimizer_.first_moments();
  const auto& v = optimizer_.second_moments();
  for (std::size_t i = 0; i < m.size(); ++i) {
    ck.arrays.push_back({"opt.m." + params_[static_cast<int>(i)].name, m[i]});
    ck.arrays.push_back({"opt.v." + params_[static_cast<int>(i)].name, v[i]});
  }
  checkpoint::write(dir, ck);
}

MotionCodec MotionCodec::load(const std::filesystem::path& dir) {
  const checkpoint::Checkpoint ck = checkpoint::read(dir);
  require(ck.kind == "motion_codec", ErrorCode::kCheckpointFormat,
          "checkpoint is not a motion codec: " + ck.kind);
  nlohmann::json meta;
  CodecConfig cfg;
  try {
    meta = nlohmann::json::parse(ck.metadata_json);
    cfg = meta.at("config").get<CodecConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCheckpointFormat, e.what());
  }
  MotionCodec codec(cfg);
  auto copy_into = [](Matrix& dst, const Matrix& src, const std::string& name) {
    require(dst.rows() == src.rows() && dst.cols() == src.cols(),
            ErrorCode::kCheckpointFormat, "array shape mismatch for " + name);
    dst = src;
  };
  for (auto& p : codec.params_) copy_into(p.value, ck.array(p.name), p.name);
  for (std::size_t l = 0; l < codec.codebooks_.size(); ++l) {
    const std::string tag = "codebook." + std::to_string(l);
    Codebook& cb = codec.codebooks_[l];
    copy_into(cb.entries, ck.array(tag + ".entries"), tag);
    Matrix cs = cb.cluster_size;
    copy_into(cs, ck.array(tag + ".cluster_size"), tag);
    cb.cluster_size = cs.col(0);
    copy_into(cb.embed_sum, ck.array(tag + ".embed_sum"), tag);
  }
  codec.optimizer_.sync_shapes(codec.params_);
  for (int i = 0; i < codec.params_.size(); ++i) {
    const std::string& name = codec.params_[i].name;
    for (const auto& a : ck.arrays) {
      if (a.name == "opt.m." + name) {
        codec.optimizer_.first_moments()[static_cast<std::size_t>(i)] = a.value;
      } else if (a.name == "opt.v." + name) {
        codec.optimizer_.second_moments()[static_cast<std::size_t>(i)] = a.value;
      }
    }
  }
  codec.step_ = meta.value("step", 0L);
  codec.initialized_ = meta.value("initialized", false);
  codec.optimizer_.set_steps(meta.value("optimizer_steps", 0L));
  return codec;
}

}  // namespace umind::codec
