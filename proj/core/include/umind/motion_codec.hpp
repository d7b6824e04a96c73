#pragma once

// Residual-VQ autoencoder turning 6D pose sequences into per-timestep stacks
// of codebook indices and back. Codebooks are updated by EMA; the encoder and
// decoder are trained through a straight-through quantizer.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "umind/nn/graph.hpp"
#include "umind/nn/optim.hpp"
#include "umind/rotgeom.hpp"

namespace umind::codec {

using nn::Matrix;
using rotgeom::PoseSequence;

struct CodecConfig {
  int num_residual_layers = 4;
  int downsample_ratio = 4;  // power of two
  int codebook_size = 512;
  int latent_dim = 64;
  int joints = 4;
  std::vector<int> channel_widths{64, 64};
  double commitment_weight = 0.25;
  double ema_momentum = 0.99;
  double dead_threshold = 1e-3;

  double learning_rate = 1e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double weight_decay = 0.0;
  std::vector<int> milestones{50, 150, 250};  // epochs
  double lr_decay = 0.4;
  int steps_per_epoch = 1;
  int batch_size = 256;
  int window = 64;  // training crop length in frames
  double fps = 20.0;
  std::uint64_t seed = 0;

  void validate() const;
  // Same optimizer shape, rescaled for short single-CPU runs.
  static CodecConfig desk();
};

struct Codebook {
  Matrix entries;                // codebook_size x latent_dim
  Eigen::VectorXd cluster_size;  // EMA assignment counts
  Matrix embed_sum;              // EMA per-entry vector sums
};

// timesteps x layers grid of codebook indices, stored timestep-major.
struct MotionTokenGrid {
  int timesteps = 0;
  int layers = 0;
  std::vector<int> indices;

  int at(int t, int layer) const {
    return indices[static_cast<std::size_t>(t * layers + layer)];
  }
  bool operator==(const MotionTokenGrid&) const = default;
};

struct QuantizeResult {
  MotionTokenGrid tokens;
  Matrix quantized;                 // sum of the selected entries over layers
  double commit_loss = 0.0;         // already scaled by the commitment weight
  std::vector<Matrix> layer_inputs; // residual seen by each layer
  std::vector<double> residual_energy;  // mean ||z - sum_{l<=k} q_l||^2 per k
};

// Nearest-neighbour residual quantization of the rows of z.
QuantizeResult quantize_residual(const Matrix& z, std::span<const Codebook> codebooks,
                                 double commitment_weight);

struct CodecTrainReport {
  long step = 0;
  double recon_loss = 0.0;
  double commit_loss = 0.0;
  double learning_rate = 0.0;
  std::vector<double> utilization;  // per layer, fraction of entries used
};

struct CodecObjective {
  double recon = 0.0;
  double commit = 0.0;
  double total = 0.0;
};

class MotionCodec {
 public:
  explicit MotionCodec(CodecConfig config);

  const CodecConfig& config() const { return config_; }
  int latent_length(int frames) const;
  bool codebooks_initialized() const { return initialized_; }

  // Latents (latent_length(T) x latent_dim). Right-pads by edge replication.
  Matrix encode(const PoseSequence& x) const;
  QuantizeResult quantize(const Matrix& z) const;
  MotionTokenGrid tokenize(const PoseSequence& x) const;
  // Produces timesteps * downsample_ratio frames.
  PoseSequence decode(const MotionTokenGrid& tokens) const;
  // tokenize + decode, cropped back to the input length.
  PoseSequence reconstruct(const PoseSequence& x) const;

  // Seeds every layer's codebook from encoder outputs (and their residuals).
  void init_codebooks(std::span<const PoseSequence> batch);
  CodecTrainReport train_step(std::span<const PoseSequence> batch);
  // EMA codebook update of one layer from its inputs and assignments,
  // followed by dead-entry restarts drawn from `inputs`.
  void ema_update(int layer, const Matrix& inputs, std::span<const int> assignment);

  // Quantizer output and the latents it was computed from.
  struct FrozenQuantizer {
    Matrix latents;
    Matrix quantized;
  };

  // Straight-through training objective. With `frozen` the quantizer
  // offset and the commitment target are held fixed, which makes the
  // objective a smooth function of the network parameters whose gradient is
  // the straight-through one. `backprop` fills parameter grads.
  CodecObjective evaluate_objective(std::span<const PoseSequence> batch,
                                    const FrozenQuantizer* frozen, bool backprop);
  FrozenQuantizer freeze_quantizer(std::span<const PoseSequence> batch) const;

  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }
  std::vector<Codebook>& codebooks() { return codebooks_; }
  const std::vector<Codebook>& codebooks() const { return codebooks_; }
  long step() const { return step_; }

  void save(const std::filesystem::path& dir) const;
  static MotionCodec load(const std::filesystem::path& dir);

 private:
  struct ConvIds {
    int w = -1;
    int b = -1;
  };
  struct ResIds {
    ConvIds first;
    ConvIds second;
  };

  void build();
  ConvIds add_conv(const std::string& name, int kernel, int cin, int cout, double gain);
  ResIds add_res(const std::string& name, int width);

  template <class Store>
  nn::Var conv(nn::Graph& g, Store& store, const ConvIds& c, nn::Var x,
               nn::ConvShape shape) const;
  template <class Store>
  nn::Var res(nn::Graph& g, Store& store, const ResIds& r, nn::Var x, int batch) const;
  template <class Store>
  nn::Var encoder(nn::Graph& g, Store& store, nn::Var x, int batch) const;
  template <class Store>
  nn::Var decoder(nn::Graph& g, Store& store, nn::Var z, int batch) const;

  Matrix stack_padded(std::span<const PoseSequence> batch, int* frames) const;
  Matrix encode_stacked(const Matrix& x, int batch) const;

  CodecConfig config_;
  nn::ParameterStore params_;
  nn::Adam optimizer_;
  std::vector<Codebook> codebooks_;
  bool initialized_ = false;
  long step_ = 0;

  ConvIds enc_in_, enc_out_, dec_in_, dec_out_;
  std::vector<ResIds> enc_res_, dec_res_;
  std::vector<ConvIds> enc_down_, dec_up_;
  ResIds enc_mid_, dec_mid_;
};

}  // namespace umind::codec
