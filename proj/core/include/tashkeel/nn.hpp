#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tashkeel/ops.hpp"
#include "tashkeel/rng.hpp"

namespace tashkeel::numerics {

/// One direction of one LSTM layer. Wx is [in x 4H], Wh is [H x 4H],
/// bias is [4H] with the forget slice initialized to 1.
template <typename T>
struct LstmParams {
  TP<T> Wx, Wh, bias;
  int hidden = 0;
  bool reverse = false;

  int input_dim() const { return Wx ? Wx->rows() : 0; }
};

template <typename T>
struct AttentionParams {
  TP<T> Wq, bq;  // query dim  -> d_K
  TP<T> Wk, bk;  // context    -> d_K
  TP<T> Wv, bv;  // context    -> d_V
  TP<T> Wo, bo;  // d_V        -> output
  int d_k() const { return Wq ? Wq->cols() : 0; }
  int out_dim() const { return Wo ? Wo->cols() : 0; }
};

/// Named parameter list with deterministic order (insertion order is
/// checkpoint order is optimizer order).
template <typename T>
struct ParamSet {
  std::vector<std::pair<std::string, TP<T>>> items;

  TP<T> add(const std::string& name, TP<T> t) {
    items.emplace_back(name, t);
    return t;
  }
  TP<T> find(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return t;
    return nullptr;
  }
  int64_t count_trainable() const {
    int64_t n = 0;
    for (const auto& [name, t] : items)
      if (t->requires_grad) n += t->size();
    return n;
  }
  void zero_grads() {
    for (auto& [name, t] : items)
      if (t->requires_grad) t->zero_grad();
  }
};

/// Glorot-uniform init: +-sqrt(6 / (fan_in + fan_out)).
template <typename T>
void init_glorot(Tensor<T>& t, int fan_in, int fan_out, RngStream& rng) {
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
LstmParams<T> make_lstm_params(ParamSet<T>& params, const std::string& prefix, int input,
                               int hidden, bool reverse, RngStream& rng, bool trainable = true) {
  LstmParams<T> p;
  p.hidden = hidden;
  p.reverse = reverse;
  p.Wx = make_tensor<T>({input, 4 * hidden}, trainable);
  p.Wh = make_tensor<T>({hidden, 4 * hidden}, trainable);
  p.bias = make_tensor<T>({4 * hidden}, trainable);
  init_glorot(*p.Wx, input, 4 * hidden, rng);
  init_glorot(*p.Wh, hidden, 4 * hidden, rng);
  // forget-gate bias starts at 1 so early training does not forget
  for (int i = hidden; i < 2 * hidden; ++i) p.bias->data[size_t(i)] = T(1);
  params.add(prefix + ".Wx", p.Wx);
  params.add(prefix + ".Wh", p.Wh);
  params.add(prefix + ".b", p.bias);
  return p;
}

template <typename T>
AttentionParams<T> make_attention_params(ParamSet<T>& params, const std::string& prefix,
                                         int query_dim, int context_dim, int d_k, int d_v,
                                         int out_dim, RngStream& rng, bool trainable = true) {
  AttentionParams<T> p;
  auto mk = [&](const char* name, int in, int out) {
    auto W = make_tensor<T>({in, out}, trainable);
    init_glorot(*W, in, out, rng);
    params.add(prefix + "." + name + ".W", W);
    auto b = make_tensor<T>({out}, trainable);
    params.add(prefix + "." + name + ".b", b);
    return std::pair{W, b};
  };
  std::tie(p.Wq, p.bq) = mk("q", query_dim, d_k);
  std::tie(p.Wk, p.bk) = mk("k", context_dim, d_k);
  std::tie(p.Wv, p.bv) = mk("v", context_dim, d_v);
  std::tie(p.Wo, p.bo) = mk("o", d_v, out_dim);
  return p;
}

/// Spec-level single step: h_prev optionally masked by a per-step
/// recurrent dropout mask.
template <typename T>
std::pair<TP<T>, TP<T>> lstm_step(Tape<T>* tape, const LstmParams<T>& p, const TP<T>& x,
                                  const TP<T>& h_prev, const TP<T>& c_prev,
                                  const TP<T>& rec_mask = nullptr) {
  return lstm_cell(tape, x, h_prev, c_prev, p.Wx, p.Wh, p.bias, rec_mask);
}

/// Draws one recurrent-dropout mask (0/1, unscaled) per call.
template <typename T>
TP<T> draw_recurrent_mask(int rows, int cols, double p, RngStream& rng) {
  auto m = make_tensor<T>({rows, cols});
  for (auto& v : m->data) v = rng.uniform() < p ? T(0) : T(1);
  return m;
}

/// Bidirectional LSTM over a packed batch.
///
/// Inputs are step-major: xs[t] holds the rows still active at step t,
/// which requires rows sorted by length descending (lengths[r] = number
/// of valid steps for row r). Output[t] has xs[t].rows() rows of
/// concat(forward h_t, backward h_t). Padded (inactive) positions are
/// simply absent, which is equivalent to "carry state, emit zeros".
///
/// When `rec_dropout_p > 0` and `rng` is given, a fresh hidden mask is
/// drawn for every (direction, step).
template <typename T>
std::vector<TP<T>> bilstm(Tape<T>* tape, const LstmParams<T>& fwd, const LstmParams<T>& bwd,
                          const std::vector<TP<T>>& xs, const std::vector<int>& lengths,
                          double rec_dropout_p = 0.0, RngStream* rng = nullptr) {
  int steps = static_cast<int>(xs.size());
  if (steps == 0) throw ShapeError("bilstm: empty sequence");
  for (size_t r = 1; r < lengths.size(); ++r) {
    if (lengths[r] > lengths[r - 1]) throw ShapeError("bilstm: rows must be sorted by length desc");
  }
  std::vector<int> active(static_cast<size_t>(steps), 0);
  for (int t = 0; t < steps; ++t) {
    int m = 0;
    for (int len : lengths)
      if (len > t) ++m;
    active[size_t(t)] = m;
    if (xs[size_t(t)]->rows() != m) {
      throw ShapeError("bilstm: xs[" + std::to_string(t) + "] rows " +
                       std::to_string(xs[size_t(t)]->rows()) + " != active " + std::to_string(m));
    }
  }

  int H = fwd.hidden;
  std::vector<TP<T>> out_f(static_cast<size_t>(steps)), out_b(static_cast<size_t>(steps));

  // forward direction: active set shrinks, slice state down
  {
    TP<T> h = make_tensor<T>({active[0], H});
    TP<T> c = make_tensor<T>({active[0], H});
    for (int t = 0; t < steps; ++t) {
      int m = active[size_t(t)];
      if (m == 0) break;
      if (h->rows() != m) {
        h = slice_rows(tape, h, 0, m);
        c = slice_rows(tape, c, 0, m);
      }
      TP<T> mask = nullptr;
      if (rec_dropout_p > 0 && rng) mask = draw_recurrent_mask<T>(m, H, rec_dropout_p, *rng);
      std::tie(h, c) = lstm_step(tape, fwd, xs[size_t(t)], h, c, mask);
      out_f[size_t(t)] = h;
    }
  }
  // backward direction: active set grows as t decreases, pad state with
  // zero rows when new sequences begin
  {
    TP<T> h, c;
    for (int t = steps - 1; t >= 0; --t) {
      int m = active[size_t(t)];
      if (m == 0) continue;
      if (!h) {
        h = make_tensor<T>({m, H});
        c = make_tensor<T>({m, H});
      } else if (h->rows() != m) {
        h = pad_rows(tape, h, m - h->rows());
        c = pad_rows(tape, c, m - c->rows());
      }
      TP<T> mask = nullptr;
      if (rec_dropout_p > 0 && rng) mask = draw_recurrent_mask<T>(m, H, rec_dropout_p, *rng);
      std::tie(h, c) = lstm_step(tape, bwd, xs[size_t(t)], h, c, mask);
      out_b[size_t(t)] = h;
    }
  }

  std::vector<TP<T>> out(static_cast<size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    if (active[size_t(t)] == 0) {
      out[size_t(t)] = make_tensor<T>({0, 2 * H});
      continue;
    }
    out[size_t(t)] = concat_cols(tape, out_f[size_t(t)], out_b[size_t(t)]);
  }
  return out;
}

/// Scaled dot-product attention collapsed to a single output per query:
/// out = Wo(softmax(Wq(u) . Wk(X)^T / sqrt(d_k)) Wv(X)).
/// `additive_mask` is [queries x contexts], 0 or -inf. Empty X gives a
/// zero output and an empty weight matrix.
template <typename T>
struct AttendResult {
  TP<T> output;   // [queries x out_dim]
  TP<T> weights;  // [queries x contexts]
};

template <typename T>
AttendResult<T> attend_reduce(Tape<T>* tape, const AttentionParams<T>& p, const TP<T>& queries,
                              const TP<T>& context, const TP<T>& additive_mask = nullptr) {
  int nq = queries->rows();
  if (context->rows() == 0) {
    return {make_tensor<T>({nq, p.out_dim()}), make_tensor<T>({nq, 0})};
  }
  auto q = linear(tape, queries, p.Wq, p.bq);
  auto k = linear(tape, context, p.Wk, p.bk);
  auto v = linear(tape, context, p.Wv, p.bv);
  auto scores = scale(tape, matmul_nt(tape, q, k), T(1) / std::sqrt(static_cast<T>(p.d_k())));
  auto weights = softmax_rows(tape, scores, additive_mask);
  auto mixed = matmul(tape, weights, v);
  auto out = linear(tape, mixed, p.Wo, p.bo);
  return {out, weights};
}

// ---------------------------------------------------------------------------
// dropout family
// ---------------------------------------------------------------------------

enum class DropoutMode { Vertical, Recurrent, Feature, Sentence };

/// Returns (masked tensor, mask). Vertical and feature masks are
/// inverted-scaled by 1/(1-p); recurrent and sentence masks are plain
/// 0/1. Feature mode draws one mask row per input row, intended to be
/// reused across time steps by the caller. Sentence mode zeroes whole
/// rows, keeping positions.
template <typename T>
std::pair<TP<T>, TP<T>> dropout(Tape<T>* tape, const TP<T>& x, DropoutMode mode, double p,
                                RngStream& rng) {
  if (p < 0 || p >= 1) {
    throw ConfigError("InvalidProbability: dropout p=" + std::to_string(p));
  }
  auto mask = make_tensor<T>(x->shape);
  T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  switch (mode) {
    case DropoutMode::Vertical:
    case DropoutMode::Feature:
      for (auto& v : mask->data) v = rng.uniform() < p ? T(0) : keep_scale;
      break;
    case DropoutMode::Recurrent:
      for (auto& v : mask->data) v = rng.uniform() < p ? T(0) : T(1);
      break;
    case DropoutMode::Sentence: {
      int m = x->rows(), n = x->cols();
      for (int r = 0; r < m; ++r) {
        T v = rng.uniform() < p ? T(0) : T(1);
        for (int c = 0; c < n; ++c) mask->data[size_t(r * n + c)] = v;
      }
      break;
    }
  }
  return {mul_mask(tape, x, mask), mask};
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

/// Adam with bias correction. Moment buffers align with the trainable
/// entries of the ParamSet it first sees.
template <typename T>
struct Adam {
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  int64_t t = 0;
  std::vector<std::vector<T>> m, v;

  void step(ParamSet<T>& params, T lr) {
    std::vector<TP<T>> trainable;
    for (auto& [name, p] : params.items)
      if (p->requires_grad) trainable.push_back(p);
    if (m.empty()) {
      for (auto& p : trainable) {
        m.emplace_back(p->data.size(), T(0));
        v.emplace_back(p->data.size(), T(0));
      }
    }
    if (m.size() != trainable.size()) throw ShapeError("Adam: parameter set changed");
    ++t;
    T c1 = T(1) - std::pow(beta1, static_cast<T>(t));
    T c2 = T(1) - std::pow(beta2, static_cast<T>(t));
    for (size_t i = 0; i < trainable.size(); ++i) {
      auto& p = *trainable[i];
      if (p.grad.size() != p.data.size()) throw ShapeError("Adam: missing grad");
      for (size_t j = 0; j < p.data.size(); ++j) {
        T g = p.grad[j];
        m[i][j] = beta1 * m[i][j] + (T(1) - beta1) * g;
        v[i][j] = beta2 * v[i][j] + (T(1) - beta2) * g * g;
        T mhat = m[i][j] / c1;
        T vhat = v[i][j] / c2;
        p.data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

/// Spec-level entry point: one optimizer step over a parameter set.
template <typename T>
void adam_step(Adam<T>& state, ParamSet<T>& params, T lr) {
  state.step(params, lr);
}

}  // namespace tashkeel::numerics
