#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "devi/errors.hpp"

namespace devi {

using MatF = Eigen::MatrixXf;
using VecF = Eigen::VectorXf;

namespace nn {

/// One Adam-updated parameter tensor with its gradient accumulator.
struct Param {
  MatF value, grad, m, v;

  void init(int rows, int cols, float scale, std::mt19937_64& rng) {
    std::normal_distribution<float> g(0.f, scale);
    value.setZero(rows, cols);
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < rows; ++r) value(r, c) = g(rng);
    grad.setZero(rows, cols);
    m.setZero(rows, cols);
    v.setZero(rows, cols);
  }
  void init_zero(int rows, int cols) {
    value.setZero(rows, cols);
    grad.setZero(rows, cols);
    m.setZero(rows, cols);
    v.setZero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }
};

struct AdamOpt {
  double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step_count = 0;

  void step(std::vector<Param*>& params) {
    ++step_count;
    const float bc1 = 1.f - std::pow(static_cast<float>(beta1), step_count);
    const float bc2 = 1.f - std::pow(static_cast<float>(beta2), step_count);
    for (Param* p : params) {
      p->m = static_cast<float>(beta1) * p->m + (1.f - static_cast<float>(beta1)) * p->grad;
      p->v = static_cast<float>(beta2) * p->v +
             (1.f - static_cast<float>(beta2)) * p->grad.cwiseProduct(p->grad);
      p->value.array() -= static_cast<float>(lr) * (p->m.array() / bc1) /
                          ((p->v.array() / bc2).sqrt() + static_cast<float>(eps));
      p->grad.setZero();
    }
  }
};

/// Clip the concatenated gradient to a global norm; returns the norm seen.
inline double clip_grad_norm(std::vector<Param*>& params, double max_norm) {
  double sq = 0;
  for (Param* p : params) sq += p->grad.cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (Param* p : params) p->grad *= s;
  }
  return norm;
}

/// Columns are samples: y = W x + b.
struct Linear {
  Param W, b;
  MatF x_cache;

  void init(int in, int out, std::mt19937_64& rng, float scale = -1.f) {
    if (scale < 0) scale = std::sqrt(2.f / in);
    W.init(out, in, scale, rng);
    b.init_zero(out, 1);
  }

  MatF forward(const MatF& x, bool keep = true) {
    if (keep) x_cache = x;
    return (W.value * x).colwise() + VecF(b.value.col(0));
  }

  MatF backward(const MatF& dy) {
    W.grad.noalias() += dy * x_cache.transpose();
    b.grad.col(0) += dy.rowwise().sum();
    return W.value.transpose() * dy;
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&W);
    out.push_back(&b);
  }
};

struct Relu {
  MatF mask;
  MatF forward(const MatF& x, bool keep = true) {
    MatF y = x.cwiseMax(0.f);
    if (keep) mask = (x.array() > 0.f).cast<float>();
    return y;
  }
  MatF backward(const MatF& dy) { return dy.cwiseProduct(mask); }
};

/// ReLU MLP; the final layer is linear.
struct Mlp {
  std::vector<Linear> layers;
  std::vector<Relu> acts;

  void init(int in, const std::vector<int>& widths, std::mt19937_64& rng,
            float last_scale = -1.f) {
    layers.resize(widths.size());
    acts.resize(widths.size() > 0 ? widths.size() - 1 : 0);
    int d = in;
    for (size_t i = 0; i < widths.size(); ++i) {
      const bool last = i + 1 == widths.size();
      layers[i].init(d, widths[i], rng, last && last_scale >= 0 ? last_scale : -1.f);
      d = widths[i];
    }
  }

  MatF forward(const MatF& x, bool keep = true) {
    MatF h = x;
    for (size_t i = 0; i < layers.size(); ++i) {
      h = layers[i].forward(h, keep);
      if (i + 1 < layers.size()) h = acts[i].forward(h, keep);
    }
    return h;
  }

  MatF backward(const MatF& dy) {
    MatF g = dy;
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
      if (i + 1 < static_cast<int>(layers.size())) g = acts[i].backward(g);
      g = layers[i].backward(g);
    }
    return g;
  }

  void collect(std::vector<Param*>& out) {
    for (auto& l : layers) l.collect(out);
  }
};

/// Multi-head self-attention over exactly three tokens per sample, with
/// learned positional embeddings and a residual connection. Input/output
/// layout: (width) x (3 * batch), token-major within each sample.
struct SelfAttention3 {
  int width = 0, heads = 4;
  Linear wq, wk, wv, wo;
  Param pos;  // width x 3
  MatF q_cache, k_cache, v_cache, attn_cache, x_cache;

  void init(int w, int h, std::mt19937_64& rng) {
    width = w;
    heads = h;
    if (w % h != 0) throw ShapeMismatch("attention width % heads");
    wq.init(w, w, rng);
    wk.init(w, w, rng);
    wv.init(w, w, rng);
    wo.init(w, w, rng, 0.01f);
    pos.init(w, 3, 0.02f, rng);
  }

  MatF forward(const MatF& tokens, bool keep = true) {
    const int cols = static_cast<int>(tokens.cols());
    const int B = cols / 3;
    MatF x = tokens;
    for (int c = 0; c < cols; ++c) x.col(c) += pos.value.col(c % 3);
    if (keep) x_cache = x;
    MatF Q = wq.forward(x, keep), K = wk.forward(x, keep), V = wv.forward(x, keep);
    const int dh = width / heads;
    const float inv = 1.f / std::sqrt(static_cast<float>(dh));
    MatF attn_out = MatF::Zero(width, cols);
    MatF attn(heads * 3, cols);  // a(i,j) rows grouped by head, per column i
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < heads; ++h) {
        Eigen::Matrix3f S;
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j)
            S(i, j) = Q.block(h * dh, 3 * b + i, dh, 1).col(0).dot(
                          K.block(h * dh, 3 * b + j, dh, 1).col(0)) *
                      inv;
        Eigen::Matrix3f A;
        for (int i = 0; i < 3; ++i) {
          const float mx = S.row(i).maxCoeff();
          Eigen::Vector3f e = (S.row(i).array() - mx).exp();
          A.row(i) = e.transpose() / e.sum();
        }
        for (int i = 0; i < 3; ++i) {
          for (int j = 0; j < 3; ++j)
            attn_out.block(h * dh, 3 * b + i, dh, 1) +=
                A(i, j) * V.block(h * dh, 3 * b + j, dh, 1);
          attn.block(h * 3, 3 * b + i, 3, 1) = A.row(i).transpose();
        }
      }
    }
    if (keep) {
      q_cache = Q;
      k_cache = K;
      v_cache = V;
      attn_cache = attn;
    }
    return tokens + wo.forward(attn_out, keep);
  }

  MatF backward(const MatF& dy) {
    const int cols = static_cast<int>(dy.cols());
    const int B = cols / 3;
    const int dh = width / heads;
    const float inv = 1.f / std::sqrt(static_cast<float>(dh));
    MatF d_attn_out = wo.backward(dy);
    MatF dQ = MatF::Zero(width, cols), dK = MatF::Zero(width, cols),
         dV = MatF::Zero(width, cols);
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < heads; ++h) {
        Eigen::Matrix3f A, dA = Eigen::Matrix3f::Zero();
        for (int i = 0; i < 3; ++i) A.row(i) = attn_cache.block(h * 3, 3 * b + i, 3, 1).transpose();
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) {
            dV.block(h * dh, 3 * b + j, dh, 1) +=
                A(i, j) * d_attn_out.block(h * dh, 3 * b + i, dh, 1);
            dA(i, j) = d_attn_out.block(h * dh, 3 * b + i, dh, 1)
                           .col(0)
                           .dot(v_cache.block(h * dh, 3 * b + j, dh, 1).col(0));
          }
        for (int i = 0; i < 3; ++i) {
          const float dot = A.row(i).dot(dA.row(i));
          for (int j = 0; j < 3; ++j) {
            const float ds = A(i, j) * (dA(i, j) - dot) * inv;
            dQ.block(h * dh, 3 * b + i, dh, 1) += ds * k_cache.block(h * dh, 3 * b + j, dh, 1);
            dK.block(h * dh, 3 * b + j, dh, 1) += ds * q_cache.block(h * dh, 3 * b + i, dh, 1);
          }
        }
      }
    }
    MatF dx = wq.backward(dQ) + wk.backward(dK) + wv.backward(dV);
    for (int c = 0; c < cols; ++c) pos.grad.col(c % 3) += dx.col(c);
    return dy + dx;  // residual path
  }

  void collect(std::vector<Param*>& out) {
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    wo.collect(out);
    out.push_back(&pos);
  }
};

// ---------------------------------------------------------------------------
// Checkpoint text format: format-version line, then one tensor per `tensor`
// row (name rows cols) followed by one line of row-major values.

inline void save_tensors(const std::vector<std::pair<std::string, const MatF*>>& tensors,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "format-version 1\n[tensors]\n";
  for (const auto& [name, mat] : tensors) {
    out << "tensor " << name << " " << mat->rows() << " " << mat->cols() << "\n";
    for (int r = 0; r < mat->rows(); ++r)
      for (int c = 0; c < mat->cols(); ++c) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>((*mat)(r, c)));
        out << buf << (r + 1 == mat->rows() && c + 1 == mat->cols() ? "\n" : " ");
      }
  }
}

inline void load_tensors(const std::vector<std::pair<std::string, MatF*>>& tensors,
                         const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("format-version", 0) != 0)
    throw ParseError(path + ": expected leading format-version line");
  std::getline(in, line);  // [tensors]
  for (const auto& [name, mat] : tensors) {
    std::string tag, got;
    int rows, cols;
    in >> tag >> got >> rows >> cols;
    if (tag != "tensor" || got != name) throw ParseError(path + ": expected tensor " + name);
    mat->resize(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) in >> (*mat)(r, c);
    if (!in) throw ParseError(path + ": truncated tensor " + name);
  }
}

}  // namespace nn
}  // namespace devi
