#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "tashkeel/rng.hpp"
#include "tashkeel/tensor.hpp"

namespace tashkeel::numerics {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

template <typename T>
EMap<T> mat(Tensor<T>& t) {
  return EMap<T>(t.data.data(), t.rows(), t.cols());
}
template <typename T>
ECMap<T> cmat(const Tensor<T>& t) {
  return ECMap<T>(t.data.data(), t.rows(), t.cols());
}
template <typename T>
EMap<T> gmat(Tensor<T>& t) {
  return EMap<T>(t.grad.data(), t.rows(), t.cols());
}

namespace detail {

template <typename T>
bool any_grad(Tape<T>* tape) {
  return tape != nullptr && false;
}
template <typename T, typename... Rest>
bool any_grad(Tape<T>* tape, const TP<T>& first, const Rest&... rest) {
  if (tape == nullptr) return false;
  if (first && first->requires_grad) return true;
  return any_grad(tape, rest...);
}

template <typename T>
void check_2d(const TP<T>& t, int rows, int cols, const char* what) {
  if (t->rows() != rows || t->cols() != cols) {
    throw ShapeError(std::string(what) + " expected " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", got " + std::to_string(t->rows()) + "x" +
                     std::to_string(t->cols()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and linear algebra
// ---------------------------------------------------------------------------

template <typename T>
TP<T> add(Tape<T>* tape, const TP<T>& a, const TP<T>& b) {
  if (a->shape != b->shape) {
    throw ShapeError("add " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  }
  auto out = make_tensor<T>(a->shape);
  for (int64_t i = 0; i < a->size(); ++i) out->data[size_t(i)] = a->data[size_t(i)] + b->data[size_t(i)];
  if (detail::any_grad(tape, a, b)) {
    out->ensure_grad();
    tape->push([a, b, out] {
      if (a->requires_grad)
        for (int64_t i = 0; i < a->size(); ++i) a->grad[size_t(i)] += out->grad[size_t(i)];
      if (b->requires_grad)
        for (int64_t i = 0; i < b->size(); ++i) b->grad[size_t(i)] += out->grad[size_t(i)];
    });
  }
  return out;
}

template <typename T>
TP<T> mul(Tape<T>* tape, const TP<T>& a, const TP<T>& b) {
  if (a->shape != b->shape) {
    throw ShapeError("mul " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  }
  auto out = make_tensor<T>(a->shape);
  for (int64_t i = 0; i < a->size(); ++i) out->data[size_t(i)] = a->data[size_t(i)] * b->data[size_t(i)];
  if (detail::any_grad(tape, a, b)) {
    out->ensure_grad();
    tape->push([a, b, out] {
      if (a->requires_grad)
        for (int64_t i = 0; i < a->size(); ++i) a->grad[size_t(i)] += out->grad[size_t(i)] * b->data[size_t(i)];
      if (b->requires_grad)
        for (int64_t i = 0; i < b->size(); ++i) b->grad[size_t(i)] += out->grad[size_t(i)] * a->data[size_t(i)];
    });
  }
  return out;
}

template <typename T>
TP<T> scale(Tape<T>* tape, const TP<T>& a, T factor) {
  auto out = make_tensor<T>(a->shape);
  for (int64_t i = 0; i < a->size(); ++i) out->data[size_t(i)] = a->data[size_t(i)] * factor;
  if (detail::any_grad(tape, a)) {
    out->ensure_grad();
    tape->push([a, out, factor] {
      for (int64_t i = 0; i < a->size(); ++i) a->grad[size_t(i)] += out->grad[size_t(i)] * factor;
    });
  }
  return out;
}

template <typename T>
TP<T> sigmoid(Tape<T>* tape, const TP<T>& a) {
  auto out = make_tensor<T>(a->shape);
  mat(*out).array() = T(1) / (T(1) + (-cmat(*a).array()).exp());
  if (detail::any_grad(tape, a)) {
    out->ensure_grad();
    tape->push([a, out] {
      gmat(*a).array() += gmat(*out).array() * cmat(*out).array() * (T(1) - cmat(*out).array());
    });
  }
  return out;
}

template <typename T>
TP<T> tanh_op(Tape<T>* tape, const TP<T>& a) {
  auto out = make_tensor<T>(a->shape);
  mat(*out).array() = cmat(*a).array().tanh();
  if (detail::any_grad(tape, a)) {
    out->ensure_grad();
    tape->push([a, out] {
      gmat(*a).array() += gmat(*out).array() * (T(1) - cmat(*out).array().square());
    });
  }
  return out;
}

/// y = x * W (+ bias broadcast over rows). W is [in x out].
template <typename T>
TP<T> linear(Tape<T>* tape, const TP<T>& x, const TP<T>& W, const TP<T>& bias = nullptr) {
  int m = x->rows(), k = x->cols();
  if (W->rows() != k) {
    throw ShapeError("linear: x cols " + std::to_string(k) + " vs W rows " +
                     std::to_string(W->rows()));
  }
  int n = W->cols();
  if (bias && bias->size() != n) throw ShapeError("linear: bias size");
  auto out = make_tensor<T>({m, n});
  mat(*out).noalias() = cmat(*x) * cmat(*W);
  if (bias) {
    auto bv = Eigen::Map<const Eigen::RowVector<T, Eigen::Dynamic>>(bias->data.data(), n);
    mat(*out).rowwise() += bv;
  }
  if (detail::any_grad(tape, x, W, bias)) {
    out->ensure_grad();
    tape->push([x, W, bias, out] {
      if (x->requires_grad) gmat(*x).noalias() += gmat(*out) * cmat(*W).transpose();
      if (W->requires_grad) gmat(*W).noalias() += cmat(*x).transpose() * gmat(*out);
      if (bias && bias->requires_grad) {
        auto bg = Eigen::Map<Eigen::RowVector<T, Eigen::Dynamic>>(bias->grad.data(), bias->size());
        bg += gmat(*out).colwise().sum();
      }
    });
  }
  return out;
}

/// y = a * b, [m x k][k x n].
template <typename T>
TP<T> matmul(Tape<T>* tape, const TP<T>& a, const TP<T>& b) {
  int m = a->rows(), k = a->cols();
  if (b->rows() != k) throw ShapeError("matmul inner dims");
  int n = b->cols();
  auto out = make_tensor<T>({m, n});
  mat(*out).noalias() = cmat(*a) * cmat(*b);
  if (detail::any_grad(tape, a, b)) {
    out->ensure_grad();
    tape->push([a, b, out] {
      if (a->requires_grad) gmat(*a).noalias() += gmat(*out) * cmat(*b).transpose();
      if (b->requires_grad) gmat(*b).noalias() += cmat(*a).transpose() * gmat(*out);
    });
  }
  return out;
}

/// y = a * b^T, a [m x k], b [n x k].
template <typename T>
TP<T> matmul_nt(Tape<T>* tape, const TP<T>& a, const TP<T>& b) {
  int m = a->rows(), k = a->cols();
  if (b->cols() != k) throw ShapeError("matmul_nt inner dims");
  int n = b->rows();
  auto out = make_tensor<T>({m, n});
  mat(*out).noalias() = cmat(*a) * cmat(*b).transpose();
  if (detail::any_grad(tape, a, b)) {
    out->ensure_grad();
    tape->push([a, b, out] {
      if (a->requires_grad) gmat(*a).noalias() += gmat(*out) * cmat(*b);
      if (b->requires_grad) gmat(*b).noalias() += gmat(*out).transpose() * cmat(*a);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// layout: concat / slice / gather / pad
// ---------------------------------------------------------------------------

template <typename T>
TP<T> concat_cols(Tape<T>* tape, const TP<T>& a, const TP<T>& b) {
  int m = a->rows();
  if (b->rows() != m) throw ShapeError("concat_cols row mismatch");
  int ca = a->cols(), cb = b->cols();
  auto out = make_tensor<T>({m, ca + cb});
  mat(*out).leftCols(ca) = cmat(*a);
  mat(*out).rightCols(cb) = cmat(*b);
  if (detail::any_grad(tape, a, b)) {
    out->ensure_grad();
    tape->push([a, b, out, ca, cb] {
      if (a->requires_grad) gmat(*a) += gmat(*out).leftCols(ca);
      if (b->requires_grad) gmat(*b) += gmat(*out).rightCols(cb);
    });
  }
  return out;
}

template <typename T>
TP<T> concat_rows(Tape<T>* tape, const std::vector<TP<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty list");
  int cols = parts[0]->cols();
  int rows = 0;
  for (const auto& p : parts) {
    if (p->cols() != cols) throw ShapeError("concat_rows column mismatch");
    rows += p->rows();
  }
  auto out = make_tensor<T>({rows, cols});
  int at = 0;
  for (const auto& p : parts) {
    mat(*out).middleRows(at, p->rows()) = cmat(*p);
    at += p->rows();
  }
  bool grad = false;
  for (const auto& p : parts) grad = grad || (tape && p->requires_grad);
  if (grad) {
    out->ensure_grad();
    tape->push([parts, out] {
      int at = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) gmat(*p) += gmat(*out).middleRows(at, p->rows());
        at += p->rows();
      }
    });
  }
  return out;
}

template <typename T>
TP<T> slice_rows(Tape<T>* tape, const TP<T>& x, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > x->rows()) throw ShapeError("slice_rows range");
  auto out = make_tensor<T>({count, x->cols()});
  mat(*out) = cmat(*x).middleRows(begin, count);
  if (detail::any_grad(tape, x)) {
    out->ensure_grad();
    tape->push([x, out, begin, count] { gmat(*x).middleRows(begin, count) += gmat(*out); });
  }
  return out;
}

/// Appends `extra` zero rows.
template <typename T>
TP<T> pad_rows(Tape<T>* tape, const TP<T>& x, int extra) {
  if (extra < 0) throw ShapeError("pad_rows negative");
  auto out = make_tensor<T>({x->rows() + extra, x->cols()});
  mat(*out).topRows(x->rows()) = cmat(*x);
  if (detail::any_grad(tape, x)) {
    out->ensure_grad();
    tape->push([x, out] { gmat(*x) += gmat(*out).topRows(x->rows()); });
  }
  return out;
}

/// out.row(r) = x.row(idx[r]). Rows may repeat; backward scatter-adds.
template <typename T>
TP<T> gather_rows(Tape<T>* tape, const TP<T>& x, std::vector<int> idx) {
  auto out = make_tensor<T>({static_cast<int>(idx.size()), x->cols()});
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= x->rows()) throw ShapeError("gather_rows index");
    mat(*out).row(static_cast<int>(r)) = cmat(*x).row(idx[r]);
  }
  if (detail::any_grad(tape, x)) {
    out->ensure_grad();
    tape->push([x, out, idx = std::move(idx)] {
      for (size_t r = 0; r < idx.size(); ++r) {
        gmat(*x).row(idx[r]) += gmat(*out).row(static_cast<int>(r));
      }
    });
  }
  return out;
}

/// Elementwise product with a constant mask (no grad into the mask).
template <typename T>
TP<T> mul_mask(Tape<T>* tape, const TP<T>& x, const TP<T>& mask) {
  if (x->shape != mask->shape) throw ShapeError("mul_mask shape");
  auto out = make_tensor<T>(x->shape);
  for (int64_t i = 0; i < x->size(); ++i) out->data[size_t(i)] = x->data[size_t(i)] * mask->data[size_t(i)];
  if (detail::any_grad(tape, x)) {
    out->ensure_grad();
    tape->push([x, mask, out] {
      for (int64_t i = 0; i < x->size(); ++i) x->grad[size_t(i)] += out->grad[size_t(i)] * mask->data[size_t(i)];
    });
  }
  return out;
}

/// Scales each row by a constant factor.
template <typename T>
TP<T> row_mul(Tape<T>* tape, const TP<T>& x, std::vector<T> factors) {
  if (static_cast<int>(factors.size()) != x->rows()) throw ShapeError("row_mul factor count");
  auto out = make_tensor<T>(x->shape);
  for (int r = 0; r < x->rows(); ++r) mat(*out).row(r) = cmat(*x).row(r) * factors[size_t(r)];
  if (detail::any_grad(tape, x)) {
    out->ensure_grad();
    tape->push([x, out, factors = std::move(factors)] {
      for (int r = 0; r < x->rows(); ++r) gmat(*x).row(r) += gmat(*out).row(r) * factors[size_t(r)];
    });
  }
  return out;
}

/// Embedding lookup: out.row(r) = table.row(ids[r]).
template <typename T>
TP<T> embedding(Tape<T>* tape, const TP<T>& table, std::vector<int> ids) {
  auto out = make_tensor<T>({static_cast<int>(ids.size()), table->cols()});
  for (size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= table->rows()) throw ShapeError("embedding id out of range");
    mat(*out).row(static_cast<int>(r)) = cmat(*table).row(ids[r]);
  }
  if (detail::any_grad(tape, table)) {
    out->ensure_grad();
    tape->push([table, out, ids = std::move(ids)] {
      for (size_t r = 0; r < ids.size(); ++r) {
        gmat(*table).row(ids[r]) += gmat(*out).row(static_cast<int>(r));
      }
    });
  }
  return out;
}

template <typename T>
TP<T> sum_all(Tape<T>* tape, const TP<T>& x) {
  auto out = make_tensor<T>({1});
  T s = 0;
  for (int64_t i = 0; i < x->size(); ++i) s += x->data[size_t(i)];
  out->data[0] = s;
  if (detail::any_grad(tape, x)) {
    out->ensure_grad();
    tape->push([x, out] {
      for (int64_t i = 0; i < x->size(); ++i) x->grad[size_t(i)] += out->grad[0];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax and loss
// ---------------------------------------------------------------------------

/// Row softmax with an optional additive mask (0 for allowed entries,
/// -inf for excluded ones). Rows with every entry excluded come out as
/// all zeros instead of NaN — that is the "empty context" case.
template <typename T>
TP<T> softmax_rows(Tape<T>* tape, const TP<T>& x, const TP<T>& additive_mask = nullptr) {
  if (additive_mask && additive_mask->shape != x->shape) throw ShapeError("softmax mask shape");
  int m = x->rows(), n = x->cols();
  auto out = make_tensor<T>(x->shape);
  const T neg_inf = -std::numeric_limits<T>::infinity();
  for (int r = 0; r < m; ++r) {
    T maxv = neg_inf;
    for (int c = 0; c < n; ++c) {
      T v = x->data[size_t(r * n + c)];
      if (additive_mask) v += additive_mask->data[size_t(r * n + c)];
      if (v > maxv) maxv = v;
    }
    if (maxv == neg_inf) continue;  // fully masked row stays zero
    T sum = 0;
    for (int c = 0; c < n; ++c) {
      T v = x->data[size_t(r * n + c)];
      if (additive_mask) v += additive_mask->data[size_t(r * n + c)];
      T e = std::isinf(v) ? T(0) : std::exp(v - maxv);
      out->data[size_t(r * n + c)] = e;
      sum += e;
    }
    for (int c = 0; c < n; ++c) out->data[size_t(r * n + c)] /= sum;
  }
  if (detail::any_grad(tape, x)) {
    out->ensure_grad();
    tape->push([x, out, m, n] {
      for (int r = 0; r < m; ++r) {
        T dot = 0;
        for (int c = 0; c < n; ++c) {
          dot += out->grad[size_t(r * n + c)] * out->data[size_t(r * n + c)];
        }
        for (int c = 0; c < n; ++c) {
          size_t i = size_t(r * n + c);
          x->grad[i] += out->data[i] * (out->grad[i] - dot);
        }
      }
    });
  }
  return out;
}

/// Mean cross-entropy over rows with weight > 0; a fused
/// log-softmax + NLL. Returns a scalar. All-zero weights give loss 0.
template <typename T>
TP<T> cross_entropy_mean(Tape<T>* tape, const TP<T>& logits, std::vector<int> targets,
                         std::vector<T> weights) {
  int m = logits->rows(), n = logits->cols();
  if (static_cast<int>(targets.size()) != m || static_cast<int>(weights.size()) != m) {
    throw ShapeError("cross_entropy_mean targets/weights length");
  }
  T total_w = 0;
  for (T w : weights) total_w += w;
  auto out = make_tensor<T>({1});
  auto probs = std::make_shared<std::vector<T>>(logits->data.size());
  T loss = 0;
  for (int r = 0; r < m; ++r) {
    T maxv = -std::numeric_limits<T>::infinity();
    for (int c = 0; c < n; ++c) maxv = std::max(maxv, logits->data[size_t(r * n + c)]);
    T sum = 0;
    for (int c = 0; c < n; ++c) {
      T e = std::exp(logits->data[size_t(r * n + c)] - maxv);
      (*probs)[size_t(r * n + c)] = e;
      sum += e;
    }
    for (int c = 0; c < n; ++c) (*probs)[size_t(r * n + c)] /= sum;
    if (weights[size_t(r)] > 0) {
      if (targets[size_t(r)] < 0 || targets[size_t(r)] >= n) {
        throw ShapeError("cross_entropy_mean target out of range");
      }
      T p = (*probs)[size_t(r * n + targets[size_t(r)])];
      loss -= weights[size_t(r)] * std::log(std::max(p, std::numeric_limits<T>::min()));
    }
  }
  out->data[0] = total_w > 0 ? loss / total_w : T(0);
  if (detail::any_grad(tape, logits) && total_w > 0) {
    out->ensure_grad();
    tape->push([logits, out, probs, targets = std::move(targets), weights = std::move(weights),
                total_w, m, n] {
      T go = out->grad[0] / total_w;
      for (int r = 0; r < m; ++r) {
        if (weights[size_t(r)] <= 0) continue;
        T wr = weights[size_t(r)] * go;
        for (int c = 0; c < n; ++c) {
          size_t i = size_t(r * n + c);
          T delta = (c == targets[size_t(r)]) ? T(1) : T(0);
          logits->grad[i] += wr * ((*probs)[i] - delta);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// recurrent cell
// ---------------------------------------------------------------------------

/// One LSTM step, gates ordered [input, forget, cell, output] along the
/// 4H axis. `rec_mask`, when present, multiplies h_prev before the
/// recurrent matmul (per-step dropout mask, no scaling).
template <typename T>
std::pair<TP<T>, TP<T>> lstm_cell(Tape<T>* tape, const TP<T>& x, const TP<T>& h_prev,
                                  const TP<T>& c_prev, const TP<T>& Wx, const TP<T>& Wh,
                                  const TP<T>& bias, const TP<T>& rec_mask = nullptr) {
  int m = x->rows();
  int H = Wh->rows();
  if (Wx->rows() != x->cols() || Wx->cols() != 4 * H || Wh->cols() != 4 * H) {
    throw ShapeError("lstm_cell weight shapes");
  }
  detail::check_2d(h_prev, m, H, "lstm_cell h_prev");
  detail::check_2d(c_prev, m, H, "lstm_cell c_prev");
  if (bias->size() != 4 * H) throw ShapeError("lstm_cell bias");
  if (rec_mask) detail::check_2d(rec_mask, m, H, "lstm_cell rec_mask");

  auto hm = make_tensor<T>({m, H});
  if (rec_mask) {
    mat(*hm).array() = cmat(*h_prev).array() * cmat(*rec_mask).array();
  } else {
    mat(*hm) = cmat(*h_prev);
  }

  auto gates = make_tensor<T>({m, 4 * H});
  auto bv = Eigen::Map<const Eigen::RowVector<T, Eigen::Dynamic>>(bias->data.data(), 4 * H);
  mat(*gates).noalias() = cmat(*x) * cmat(*Wx);
  mat(*gates).noalias() += cmat(*hm) * cmat(*Wh);
  mat(*gates).rowwise() += bv;

  auto G = mat(*gates);
  G.middleCols(0, H).array() = T(1) / (T(1) + (-G.middleCols(0, H).array()).exp());
  G.middleCols(H, H).array() = T(1) / (T(1) + (-G.middleCols(H, H).array()).exp());
  G.middleCols(2 * H, H).array() = G.middleCols(2 * H, H).array().tanh();
  G.middleCols(3 * H, H).array() = T(1) / (T(1) + (-G.middleCols(3 * H, H).array()).exp());

  auto c_new = make_tensor<T>({m, H});
  auto h_new = make_tensor<T>({m, H});
  auto tc = std::make_shared<std::vector<T>>(static_cast<size_t>(m) * H);
  EMap<T> tc_map(tc->data(), m, H);
  mat(*c_new).array() = G.middleCols(H, H).array() * cmat(*c_prev).array() +
                        G.middleCols(0, H).array() * G.middleCols(2 * H, H).array();
  tc_map.array() = cmat(*c_new).array().tanh();
  mat(*h_new).array() = G.middleCols(3 * H, H).array() * tc_map.array();

  if (detail::any_grad(tape, x, h_prev, c_prev, Wx, Wh, bias)) {
    h_new->ensure_grad();
    c_new->ensure_grad();
    tape->push([x, h_prev, c_prev, Wx, Wh, bias, rec_mask, hm, gates, c_new, h_new, tc, m, H] {
      ECMap<T> tc_map(tc->data(), m, H);
      auto G = cmat(*gates);
      auto gi = G.middleCols(0, H).array();
      auto gf = G.middleCols(H, H).array();
      auto gg = G.middleCols(2 * H, H).array();
      auto go = G.middleCols(3 * H, H).array();

      EMat<T> dpre(m, 4 * H);
      // dc_total = dc_new + dh * o * (1 - tanh(c)^2)
      EMat<T> dc_total = gmat(*c_new);
      dc_total.array() += gmat(*h_new).array() * go * (T(1) - tc_map.array().square());

      dpre.middleCols(0, H).array() =
          dc_total.array() * gg * gi * (T(1) - gi);                       // input gate
      dpre.middleCols(H, H).array() =
          dc_total.array() * cmat(*c_prev).array() * gf * (T(1) - gf);    // forget gate
      dpre.middleCols(2 * H, H).array() =
          dc_total.array() * gi * (T(1) - gg.square());                   // cell candidate
      dpre.middleCols(3 * H, H).array() =
          gmat(*h_new).array() * tc_map.array() * go * (T(1) - go);       // output gate

      if (c_prev->requires_grad) gmat(*c_prev).array() += dc_total.array() * gf;
      if (x->requires_grad) gmat(*x).noalias() += dpre * cmat(*Wx).transpose();
      if (h_prev->requires_grad) {
        if (rec_mask) {
          gmat(*h_prev).array() += (dpre * cmat(*Wh).transpose()).array() * cmat(*rec_mask).array();
        } else {
          gmat(*h_prev).noalias() += dpre * cmat(*Wh).transpose();
        }
      }
      if (Wx->requires_grad) gmat(*Wx).noalias() += cmat(*x).transpose() * dpre;
      if (Wh->requires_grad) gmat(*Wh).noalias() += cmat(*hm).transpose() * dpre;
      if (bias->requires_grad) {
        auto bg = Eigen::Map<Eigen::RowVector<T, Eigen::Dynamic>>(bias->grad.data(), 4 * H);
        bg += dpre.colwise().sum();
      }
    });
  }
  return {h_new, c_new};
}

}  // namespace tashkeel::numerics
