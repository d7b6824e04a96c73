#pragma once

// Minimal reverse-mode autodiff over row-major matrices. A Graph records one
// forward pass; backward() accumulates into Parameter::grad.

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace umind::nn {

using Real = double;
using Matrix =
    Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;  // empty until the first backward pass touches it
};

// Rounds every entry to the nearest float32. Parameters are kept on the
// float32 grid so that float32 checkpoints reload bit-exactly.
void round_to_float(Matrix& m);

class ParameterStore {
 public:
  int add(std::string name, Matrix init);
  Parameter& operator[](int index) { return params_[static_cast<std::size_t>(index)]; }
  const Parameter& operator[](int index) const {
    return params_[static_cast<std::size_t>(index)];
  }
  int size() const { return static_cast<int>(params_.size()); }
  // -1 when absent.
  int find(std::string_view name) const;
  void zero_grad();
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
};

struct Var {
  int id = -1;
};

struct ConvShape {
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  int batch = 1;  // equal-length sequences stacked along rows
};

class Graph {
 public:
  explicit Graph(bool track_gradients = true) : track_(track_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  Var parameter(Parameter& p);

  const Matrix& value(Var v) const { return nodes_[idx(v)].value; }
  Real scalar(Var v) const { return nodes_[idx(v)].value(0, 0); }
  // Gradient of the last backward() target w.r.t. v; empty if unreached.
  const Matrix& grad(Var v) const { return nodes_[idx(v)].grad; }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  // Adds a 1 x m row to every row of a.
  Var add_row(Var a, Var row);
  Var scale(Var a, Real s);
  Var gelu(Var a);
  Var layer_norm(Var x, Var gamma, Var beta, Real eps = 1e-5);
  Var embedding(Var table, std::vector<int> ids);
  // qkv is n x 3d; rows [offsets[s], offsets[s+1]) form one causal sequence.
  Var causal_attention(Var qkv, int heads, std::vector<int> offsets);
  // x: (batch*T) x Cin, weight: (kernel*Cin) x Cout, bias: 1 x Cout.
  Var conv1d(Var x, Var weight, Var bias, ConvShape shape);
  // Repeats every row `factor` times (nearest-neighbour temporal upsampling).
  Var upsample(Var x, int factor);
  Var dropout(Var x, Real rate, std::uint64_t seed);
  // Mean squared difference against a constant target.
  Var mse(Var a, const Matrix& target);
  // Weighted mean next-token cross-entropy; rows with weight 0 are ignored.
  Var cross_entropy(Var logits, std::vector<int> targets, std::vector<Real> weights);

  void backward(Var loss);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Parameter* param = nullptr;
    bool needs_grad = false;
    std::function<void()> back;
  };

  static std::size_t idx(Var v) { return static_cast<std::size_t>(v.id); }
  bool needs(Var v) const { return nodes_[idx(v)].needs_grad; }
  Var push(Matrix value, bool needs_grad);
  void accumulate(Var v, const Matrix& g);
  template <class Expr>
  void accumulate_expr(Var v, const Expr& g);

  bool track_;
  std::vector<Node> nodes_;
};

}  // namespace umind::nn
