#include "umind/nn/graph.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <utility>

#include "umind/error.hpp"
#include "umind/random.hpp"

namespace umind::nn {

void round_to_float(Matrix& m) {
  m = m.unaryExpr([](Real x) { return static_cast<Real>(static_cast<float>(x)); });
}

int ParameterStore::add(std::string name, Matrix init) {
  require(find(name) < 0, ErrorCode::kInternal, "duplicate parameter " + name);
  round_to_float(init);
  params_.push_back(Parameter{std::move(name), std::move(init), Matrix()});
  return static_cast<int>(params_.size()) - 1;
}

int ParameterStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.grad.resize(0, 0);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

Var Graph::push(Matrix value, bool needs_grad) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = track_ && needs_grad;
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class Expr>
void Graph::accumulate_expr(Var v, const Expr& g) {
  Node& n = nodes_[idx(v)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Graph::accumulate(Var v, const Matrix& g) { accumulate_expr(v, g); }

Var Graph::constant(Matrix value) { return push(std::move(value), false); }

Var Graph::parameter(Parameter& p) {
  Var v = push(p.value, true);
  nodes_[idx(v)].param = &p;
  return v;
}

Var Graph::matmul(Var a, Var b) {
  require(value(a).cols() == value(b).rows(), ErrorCode::kShapeMismatch,
          "matmul inner dimensions differ");
  Matrix out = value(a) * value(b);
  Var v = push(std::move(out), needs(a) || needs(b));
  if (nodes_[idx(v)].needs_grad) {
    nodes_[idx(v)].back = [this, v, a, b] {
      const Matrix& g = grad(v);
      if (needs(a)) accumulate_expr(a, g * value(b).transpose());
      if (needs(b)) accumulate_expr(b, value(a).transpose() * g);
    };
  }
  return v;
}

Var Graph::add(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
          ErrorCode::kShapeMismatch, "add operands differ in shape");
  Var v = push(value(a) + value(b), needs(a) || needs(b));
  if (nodes_[idx(v)].needs_grad) {
    nodes_[idx(v)].back = [this, v, a, b] {
      accumulate(a, grad(v));
      accumulate(b, grad(v));
    };
  }
  return v;
}

Var Graph::add_row(Var a, Var row) {
  require(value(row).rows() == 1 && value(row).cols() == value(a).cols(),
          ErrorCode::kShapeMismatch, "add_row expects a 1 x cols row");
  Matrix out = value(a).rowwise() + value(row).row(0);
  Var v = push(std::move(out), needs(a) || needs(row));
  if (nodes_[idx(v)].needs_grad) {
    nodes_[idx(v)].back = [this, v, a, row] {
      accumulate(a, grad(v));
      if (needs(row)) accumulate_expr(row, grad(v).colwise().sum());
    };
  }
  return v;
}

Var Graph::scale(Var a, Real s) {
  Var v = push(value(a) * s, needs(a));
  if (nodes_[idx(v)].needs_grad) {
    nodes_[idx(v)].back = [this, v, a, s] { accumulate_expr(a, grad(v) * s); };
  }
  return v;
}

namespace {
constexpr Real kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr Real kGeluA = 0.044715;
}  // namespace

Var Graph::gelu(Var a) {
  const Matrix& x = value(a);
  Matrix out = x.unaryExpr([](Real t) {
    return 0.5 * t * (1.0 + std::tanh(kGeluC * (t + kGeluA * t * t * t)));
  });
  Var v = push(std::move(out), needs(a));
  if (nodes_[idx(v)].needs_grad) {
    nodes_[idx(v)].back = [this, v, a] {
      const Matrix& x = value(a);
      Matrix d = x.unaryExpr([](Real t) {
        const Real th = std::tanh(kGeluC * (t + kGeluA * t * t * t));
        return 0.5 * (1.0 + th) +
               0.5 * t * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * t * t);
      });
      accumulate_expr(a, grad(v).cwiseProduct(d));
    };
  }
  return v;
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, Real eps) {
  const Matrix& in = value(x);
  const auto n = in.rows();
  const auto d = in.cols();
  require(value(gamma).size() == d && value(beta).size() == d,
          ErrorCode::kShapeMismatch, "layer_norm affine size mismatch");
  auto xhat = std::make_shared<Matrix>(n, d);
  auto rstd = std::make_shared<Eigen::VectorXd>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Real mean = in.row(i).mean();
    const Real var = (in.row(i).array() - mean).square().mean();
    (*rstd)(i) = 1.0 / std::sqrt(var + eps);
    xhat->row(i) = (in.row(i).array() - mean) * (*rstd)(i);
  }
  Matrix out = (xhat->array().rowwise() * value(gamma).row(0).array()).rowwise() +
               value(beta).row(0).array();
  Var v = push(std::move(out), needs(x) || needs(gamma) || needs(beta));
  if (nodes_[idx(v)].needs_grad) {
    nodes_[idx(v)].back = [this, v, x, gamma, beta, xhat, rstd] {
      const Matrix& g = grad(v);
      if (needs(gamma)) accumulate_expr(gamma, g.cwiseProduct(*xhat).colwise().sum());
      if (needs(beta)) accumulate_expr(beta, g.colwise().sum());
      if (needs(x)) {
        const Matrix dxhat = g.array().rowwise() * value(gamma).row(0).array();
        Matrix dx(dxhat.rows(), dxhat.cols());
        for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
          const Real m1 = dxhat.row(i).mean();
          const Real m2 = dxhat.row(i).cwiseProduct(xhat->row(i)).mean();
          dx.row(i) = (*rstd)(i) *
                      (dxhat.row(i).array() - m1 - xhat->row(i).array() * m2);
        }
        accumulate(x, dx);
      }
    };
  }
  return v;
}

Var Graph::embedding(Var table, std::vector<int> ids) {
  const Matrix& t = value(table);
  Matrix out(static_cast<Eigen::Index>(ids.size()), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < t.rows(), ErrorCode::kInvalidId,
            "embedding id out of range: " + std::to_string(ids[i]));
    out.row(static_cast<Eigen::Index>(i)) = t.row(ids[i]);
  }
  Var v = push(std::move(out), needs(table));
  if (nodes_[idx(v)].needs_grad) {
    nodes_[idx(v)].back = [this, v, table, ids = std::move(ids)] {
      Matrix g = Matrix::Zero(value(table).rows(), value(table).cols());
      const Matrix& gv = grad(v);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        g.row(ids[i]) += gv.row(static_cast<Eigen::Index>(i));
      }
      accumulate(table, g);
    };
  }
  return v;
}

Var Graph::causal_attention(Var qkv, int heads, std::vector<int> offsets) {
  const Matrix& in = value(qkv);
  require(heads >= 1 && in.cols() % (3 * heads) == 0, ErrorCode::kShapeMismatch,
          "qkv width must be 3 * heads * head_dim");
  require(!offsets.empty() && offsets.front() == 0 && offsets.back() == in.rows(),
          ErrorCode::kShapeMismatch, "attention offsets must span all rows");
  const int d = static_cast<int>(in.cols() / 3);
  const int hd = d / heads;
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(hd));
  const std::size_t seqs = offsets.size() - 1;
  const auto nh = static_cast<std::size_t>(heads);
  auto probs = std::make_shared<std::vector<Matrix>>(seqs * nh);
  Matrix out = Matrix::Zero(in.rows(), d);
  for (std::size_t s = 0; s < seqs; ++s) {
    const int o = offsets[s];
    const int n = offsets[s + 1] - o;
    if (n <= 0) continue;
    for (int h = 0; h < heads; ++h) {
      const auto q = in.block(o, h * hd, n, hd);
      const auto k = in.block(o, d + h * hd, n, hd);
      const auto val = in.block(o, 2 * d + h * hd, n, hd);
      Matrix p = (q * k.transpose()) * scale;
      for (int i = 0; i < n; ++i) {
        const Real mx = p.row(i).head(i + 1).maxCoeff();
        Real sum = 0.0;
        for (int j = 0; j <= i; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          sum += p(i, j);
        }
        const Real inv = 1.0 / sum;
        for (int j = 0; j <= i; ++j) p(i, j) *= inv;
        for (int j = i + 1; j < n; ++j) p(i, j) = 0.0;
      }
      out.block(o, h * hd, n, hd).noalias() = p * val;
      (*probs)[s * nh + static_cast<std::size_t>(h)] = std::move(p);
    }
  }
  Var v = push(std::move(out), needs(qkv));
  if (nodes_[idx(v)].needs_grad) {
    nodes_[idx(v)].back = [this, v, qkv, heads, offsets = std::move(offsets), probs,
                           d, hd, scale, nh] {
      const Matrix& in = value(qkv);
      const Matrix& g = grad(v);
      Matrix dqkv = Matrix::Zero(in.rows(), in.cols());
      for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        const int o = offsets[s];
        const int n = offsets[s + 1] - o;
        if (n <= 0) continue;
        for (int h = 0; h < heads; ++h) {
          const Matrix& p = (*probs)[s * nh + static_cast<std::size_t>(h)];
          const auto q = in.block(o, h * hd, n, hd);
          const auto k = in.block(o, d + h * hd, n, hd);
          const auto val = in.block(o, 2 * d + h * hd, n, hd);
          const auto dout = g.block(o, h * hd, n, hd);
          const Matrix dp = dout * val.transpose();
          dqkv.block(o, 2 * d + h * hd, n, hd).noalias() = p.transpose() * dout;
          const Eigen::VectorXd rows = dp.cwiseProduct(p).rowwise().sum();
          const Matrix ds = p.cwiseProduct(dp.colwise() - rows) * scale;
          dqkv.block(o, h * hd, n, hd).noalias() = ds * k;
          dqkv.block(o, d + h * hd, n, hd).noalias() = ds.transpose() * q;
        }
      }
      accumulate(qkv, dqkv);
    };
  }
  return v;
}

Var Graph::conv1d(Var x, Var weight, Var bias, ConvShape shape) {
  const Matrix& in = value(x);
  const int cin = static_cast<int>(in.cols());
  const int k = shape.kernel;
  require(shape.batch >= 1 && in.rows() % shape.batch == 0, ErrorCode::kShapeMismatch,
          "conv1d rows must split evenly into the batch");
  require(value(weight).rows() == k * cin, ErrorCode::kShapeMismatch,
          "conv1d weight rows must equal kernel * in_channels");
  const int cout = static_cast<int>(value(weight).cols());
  require(value(bias).rows() == 1 && value(bias).cols() == cout,
          ErrorCode::kShapeMismatch, "conv1d bias shape");
  const int t_in = static_cast<int>(in.rows()) / shape.batch;
  const int t_out = (t_in + 2 * shape.padding - k) / shape.stride + 1;
  require(t_out >= 1, ErrorCode::kTooShort, "conv1d input shorter than kernel");

  auto cols = std::make_shared<Matrix>(Matrix::Zero(shape.batch * t_out, k * cin));
  for (int b = 0; b < shape.batch; ++b) {
    for (int t = 0; t < t_out; ++t) {
      for (int j = 0; j < k; ++j) {
        const int src = t * shape.stride - shape.padding + j;
        if (src < 0 || src >= t_in) continue;
        cols->block(b * t_out + t, j * cin, 1, cin) = in.row(b * t_in + src);
      }
    }
  }
  Matrix out = (*cols) * value(weight);
  out.rowwise() += value(bias).row(0);
  Var v = push(std::move(out), needs(x) || needs(weight) || needs(bias));
  if (nodes_[idx(v)].needs_grad) {
    nodes_[idx(v)].back = [this, v, x, weight, bias, cols, shape, t_in, t_out, cin,
                           k] {
      const Matrix& g = grad(v);
      if (needs(weight)) accumulate_expr(weight, cols->transpose() * g);
      if (needs(bias)) accumulate_expr(bias, g.colwise().sum());
      if (needs(x)) {
        const Matrix dcols = g * value(weight).transpose();
        Matrix dx = Matrix::Zero(shape.batch * t_in, cin);
        for (int b = 0; b < shape.batch; ++b) {
          for (int t = 0; t < t_out; ++t) {
            for (int j = 0; j < k; ++j) {
              const int src = t * shape.stride - shape.padding + j;
              if (src < 0 || src >= t_in) continue;
              dx.row(b * t_in + src) += dcols.block(b * t_out + t, j * cin, 1, cin);
            }
          }
        }
        accumulate(x, dx);
      }
    };
  }
  return v;
}

Var Graph::upsample(Var x, int factor) {
  const Matrix& in = value(x);
  Matrix out(in.rows() * factor, in.cols());
  for (Eigen::Index i = 0; i < in.rows(); ++i) {
    for (int r = 0; r < factor; ++r) out.row(i * factor + r) = in.row(i);
  }
  Var v = push(std::move(out), needs(x));
  if (nodes_[idx(v)].needs_grad) {
    nodes_[idx(v)].back = [this, v, x, factor] {
      const Matrix& g = grad(v);
      Matrix dx = Matrix::Zero(g.rows() / factor, g.cols());
      for (Eigen::Index i = 0; i < dx.rows(); ++i) {
        for (int r = 0; r < factor; ++r) dx.row(i) += g.row(i * factor + r);
      }
      accumulate(x, dx);
    };
  }
  return v;
}

Var Graph::dropout(Var x, Real rate, std::uint64_t seed) {
  if (rate <= 0.0 || !track_) return x;
  require(rate < 1.0, ErrorCode::kConfig, "dropout rate must be < 1");
  Rng rng(seed);
  const Real keep = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<Matrix>(value(x).rows(), value(x).cols());
  for (Eigen::Index i = 0; i < mask->size(); ++i) {
    mask->data()[i] = rng.uniform() < rate ? 0.0 : keep;
  }
  Var v = push(value(x).cwiseProduct(*mask), needs(x));
  if (nodes_[idx(v)].needs_grad) {
    nodes_[idx(v)].back = [this, v, x, mask] {
      accumulate_expr(x, grad(v).cwiseProduct(*mask));
    };
  }
  return v;
}

Var Graph::mse(Var a, const Matrix& target) {
  require(value(a).rows() == target.rows() && value(a).cols() == target.cols(),
          ErrorCode::kShapeMismatch, "mse target shape mismatch");
  auto diff = std::make_shared<Matrix>(value(a) - target);
  const Real n = static_cast<Real>(diff->size());
  Matrix out(1, 1);
  out(0, 0) = diff->squaredNorm() / n;
  Var v = push(std::move(out), needs(a));
  if (nodes_[idx(v)].needs_grad) {
    nodes_[idx(v)].back = [this, v, a, diff, n] {
      accumulate_expr(a, (*diff) * (2.0 * grad(v)(0, 0) / n));
    };
  }
  return v;
}

Var Graph::cross_entropy(Var logits, std::vector<int> targets, std::vector<Real> weights) {
  const Matrix& z = value(logits);
  require(static_cast<Eigen::Index>(targets.size()) == z.rows() &&
              targets.size() == weights.size(),
          ErrorCode::kShapeMismatch, "cross_entropy targets/weights length");
  Real total_weight = 0.0;
  for (Real w : weights) total_weight += w;
  auto probs = std::make_shared<Matrix>(z.rows(), z.cols());
  Real loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const Real mx = z.row(i).maxCoeff();
    probs->row(i) = (z.row(i).array() - mx).exp();
    const Real sum = probs->row(i).sum();
    probs->row(i) /= sum;
    const Real w = weights[static_cast<std::size_t>(i)];
    if (w == 0.0) continue;
    const int t = targets[static_cast<std::size_t>(i)];
    require(t >= 0 && t < z.cols(), ErrorCode::kInvalidId, "cross_entropy target id");
    loss += w * (std::log(sum) + mx - z(i, t));
  }
  Matrix out(1, 1);
  out(0, 0) = total_weight > 0.0 ? loss / total_weight : 0.0;
  Var v = push(std::move(out), needs(logits));
  if (nodes_[idx(v)].needs_grad) {
    nodes_[idx(v)].back = [this, v, logits, probs, targets = std::move(targets),
                           weights = std::move(weights), total_weight] {
      if (total_weight <= 0.0) return;
      const Real g = grad(v)(0, 0) / total_weight;
      Matrix dz = Matrix::Zero(probs->rows(), probs->cols());
      for (Eigen::Index i = 0; i < dz.rows(); ++i) {
        const Real w = weights[static_cast<std::size_t>(i)];
        if (w == 0.0) continue;
        dz.row(i) = probs->row(i) * (w * g);
        dz(i, targets[static_cast<std::size_t>(i)]) -= w * g;
      }
      accumulate(logits, dz);
    };
  }
  return v;
}

void Graph::backward(Var loss) {
  require(value(loss).size() == 1, ErrorCode::kInternal, "backward needs a scalar");
  require(track_, ErrorCode::kInternal, "backward on a graph without gradients");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  Node& root = nodes_[idx(loss)];
  if (!root.needs_grad) return;
  root.grad = Matrix::Ones(1, 1);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0) continue;
    if (n.back) n.back();
    if (n.param != nullptr) {
      if (n.param->grad.size() == 0) {
        n.param->grad = n.grad;
      } else {
        n.param->grad += n.grad;
      }
    }
  }
}

}  // namespace umind::nn
