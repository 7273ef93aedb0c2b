#include "tashkeel/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tashkeel::model {

using numerics::LstmParams;
using numerics::RngStream;

// ---------------------------------------------------------------------------
// batch stacking
// ---------------------------------------------------------------------------

int Batch::char_at(int b, int i, int j) const {
  int u = unit_at(b, i);
  if (u < 0) return -1;
  if (j >= unit_len[size_t(u)]) return -1;
  return unit_char_off[size_t(u)] + j;
}

int Batch::unit_at(int b, int i) const {
  for (int u = seg_unit_off[size_t(b)]; u < seg_unit_off[size_t(b) + 1]; ++u) {
    if (unit_slot[size_t(u)] == i) return u;
  }
  return -1;
}

Batch Batch::stack(const std::vector<const corpus::Segment*>& segments) {
  Batch out;
  out.B = static_cast<int>(segments.size());
  if (segments.empty()) return out;
  out.Ts = segments[0]->Ts;
  out.Tw = segments[0]->Tw;
  out.seg_unit_off.push_back(0);
  out.seg_char_off.push_back(0);
  out.unit_char_off.push_back(0);
  for (int b = 0; b < out.B; ++b) {
    const corpus::Segment& s = *segments[size_t(b)];
    if (s.Ts != out.Ts || s.Tw != out.Tw) throw ShapeError("Batch::stack mixed segment sizes");
    for (int i = 0; i < s.Ts; ++i) {
      if (!s.word_mask[size_t(i)]) continue;
      int u = out.n_units();
      out.unit_seg.push_back(b);
      out.unit_slot.push_back(i);
      out.unit_len.push_back(s.unit_len[size_t(i)]);
      out.unit_word_id.push_back(s.word_ids[size_t(i)]);
      for (int j = 0; j < s.unit_len[size_t(i)]; ++j) {
        size_t slot = static_cast<size_t>(i * s.Tw + j);
        out.char_unit.push_back(u);
        out.char_j.push_back(j);
        out.char_id.push_back(s.char_ids[slot]);
        out.char_label.push_back(s.labels[slot]);
      }
      out.unit_char_off.push_back(out.n_chars());
    }
    out.seg_unit_off.push_back(out.n_units());
    out.seg_char_off.push_back(out.n_chars());
  }
  return out;
}

Batch Batch::stack(const std::vector<corpus::Segment>& segments) {
  std::vector<const corpus::Segment*> ptrs;
  ptrs.reserve(segments.size());
  for (const auto& s : segments) ptrs.push_back(&s);
  return stack(ptrs);
}

namespace {

/// Stable argsort by descending key.
std::vector<int> sort_desc(const std::vector<int>& keys) {
  std::vector<int> order(keys.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return keys[size_t(a)] > keys[size_t(b)]; });
  return order;
}

std::vector<int> active_counts(const std::vector<int>& sorted_lens, int steps) {
  std::vector<int> active(static_cast<size_t>(steps), 0);
  for (int t = 0; t < steps; ++t) {
    int m = 0;
    for (int len : sorted_lens) {
      if (len > t) ++m;
      else break;
    }
    active[size_t(t)] = m;
  }
  return active;
}

}  // namespace

// ---------------------------------------------------------------------------
// D2
// ---------------------------------------------------------------------------

template <typename T>
D2Model<T> D2Model<T>::init(const D2Config& cfg, uint64_t seed) {
  D2Model<T> m;
  m.cfg = cfg;
  RngStream rng(seed, "init");

  m.word_emb = numerics::make_tensor<T>({cfg.word_vocab, cfg.word_emb}, !cfg.freeze_word_emb);
  m.char_emb = numerics::make_tensor<T>({cfg.char_vocab, cfg.char_emb}, true);
  for (auto& v : m.word_emb->data) v = static_cast<T>(rng.uniform(-0.1, 0.1));
  for (auto& v : m.char_emb->data) v = static_cast<T>(rng.uniform(-0.1, 0.1));
  m.params.add("word_emb", m.word_emb);
  m.params.add("char_emb", m.char_emb);

  for (int l = 0; l < cfg.word_layers; ++l) {
    int in = l == 0 ? cfg.word_emb : cfg.word_feat_dim();
    std::string p = "word_enc.l" + std::to_string(l);
    m.word_enc.push_back(make_lstm_params(m.params, p + ".fwd", in, cfg.word_hidden, false, rng));
    m.word_enc.push_back(make_lstm_params(m.params, p + ".bwd", in, cfg.word_hidden, true, rng));
  }
  for (int l = 0; l < cfg.char_layers; ++l) {
    int in = l == 0 ? cfg.char_emb + cfg.word_feat_dim() : cfg.char_out_dim();
    std::string p = "char_enc.l" + std::to_string(l);
    m.char_enc.push_back(make_lstm_params(m.params, p + ".fwd", in, cfg.char_hidden, false, rng));
    m.char_enc.push_back(make_lstm_params(m.params, p + ".bwd", in, cfg.char_hidden, true, rng));
  }
  if (cfg.use_attention) {
    m.attn = make_attention_params(m.params, "attn", cfg.char_out_dim(), cfg.word_feat_dim(),
                                   cfg.attn_dk, cfg.attn_dv, cfg.attn_out, rng);
  }
  m.cls_W = numerics::make_tensor<T>({cfg.z_dim(), cfg.classes}, true);
  init_glorot(*m.cls_W, cfg.z_dim(), cfg.classes, rng);
  m.cls_b = numerics::make_tensor<T>({cfg.classes}, true);
  m.params.add("cls.W", m.cls_W);
  m.params.add("cls.b", m.cls_b);
  return m;
}

template <typename T>
EncoderOut<T> D2Model<T>::encode(Tape<T>* tape, const Batch& batch, const TrainFlags& flags) const {
  EncoderOut<T> enc;
  const int n_units = batch.n_units();
  const int n_chars = batch.n_chars();
  if (n_chars == 0) {
    enc.unit_feats = numerics::make_tensor<T>({0, cfg.word_feat_dim()});
    enc.g = numerics::make_tensor<T>({0, cfg.char_out_dim()});
    enc.z = numerics::make_tensor<T>({0, cfg.z_dim()});
    enc.seg_attention.assign(static_cast<size_t>(batch.B), nullptr);
    return enc;
  }

  const bool train = flags.training;
  RngStream rng_sdo(flags.seed, "sentence_dropout", flags.epoch, flags.batch);
  RngStream rng_feat(flags.seed, "feature_dropout", flags.epoch, flags.batch);
  RngStream rng_vert(flags.seed, "vertical_dropout", flags.epoch, flags.batch);
  RngStream rng_rec(flags.seed, "recurrent_dropout", flags.epoch, flags.batch);
  const double rec_p = train ? flags.recurrent_dropout : 0.0;

  auto vertical = [&](std::vector<TP<T>>& xs) {
    if (!train || flags.vertical_dropout <= 0) return;
    for (auto& x : xs) {
      if (x->rows() == 0) continue;
      x = numerics::dropout(tape, x, numerics::DropoutMode::Vertical, flags.vertical_dropout,
                            rng_vert)
              .first;
    }
  };

  // ---- word-level encoder over units, rows = segments ----
  std::vector<int> seg_units(static_cast<size_t>(batch.B));
  for (int b = 0; b < batch.B; ++b) {
    seg_units[size_t(b)] = batch.seg_unit_off[size_t(b) + 1] - batch.seg_unit_off[size_t(b)];
  }
  std::vector<int> seg_order = sort_desc(seg_units);
  std::vector<int> seg_rank(seg_units.size());
  for (size_t r = 0; r < seg_order.size(); ++r) seg_rank[size_t(seg_order[r])] = static_cast<int>(r);
  std::vector<int> sorted_units;
  for (int b : seg_order) sorted_units.push_back(seg_units[size_t(b)]);
  int max_units = sorted_units.empty() ? 0 : sorted_units[0];
  std::vector<int> seg_active = active_counts(sorted_units, max_units);

  // sentence dropout: one keep/drop draw per unit, canonical order
  std::vector<T> sdo_keep(static_cast<size_t>(n_units), T(1));
  if (train && flags.sentence_dropout > 0) {
    for (auto& v : sdo_keep) v = rng_sdo.uniform() < flags.sentence_dropout ? T(0) : T(1);
  }

  std::vector<TP<T>> word_xs(static_cast<size_t>(max_units));
  for (int t = 0; t < max_units; ++t) {
    int mrows = seg_active[size_t(t)];
    std::vector<int> ids(static_cast<size_t>(mrows));
    std::vector<T> keep(static_cast<size_t>(mrows));
    for (int r = 0; r < mrows; ++r) {
      int b = seg_order[size_t(r)];
      int u = batch.seg_unit_off[size_t(b)] + t;  // units are slot-ordered per segment
      ids[size_t(r)] = batch.unit_word_id[size_t(u)];
      keep[size_t(r)] = sdo_keep[size_t(u)];
    }
    auto x = numerics::embedding(tape, word_emb, std::move(ids));
    if (train && flags.sentence_dropout > 0) x = numerics::row_mul(tape, x, std::move(keep));
    word_xs[size_t(t)] = x;
  }
  vertical(word_xs);
  auto w1 = numerics::bilstm(tape, word_enc[0], word_enc[1], word_xs, sorted_units, rec_p, &rng_rec);
  vertical(w1);
  auto w2 = numerics::bilstm(tape, word_enc[2], word_enc[3], w1, sorted_units, rec_p, &rng_rec);

  // back to canonical unit order
  std::vector<int> word_step_off(static_cast<size_t>(max_units) + 1, 0);
  for (int t = 0; t < max_units; ++t) {
    word_step_off[size_t(t) + 1] = word_step_off[size_t(t)] + seg_active[size_t(t)];
  }
  std::vector<int> unit_perm(static_cast<size_t>(n_units));
  for (int u = 0; u < n_units; ++u) {
    int b = batch.unit_seg[size_t(u)];
    int t = u - batch.seg_unit_off[size_t(b)];
    unit_perm[size_t(u)] = word_step_off[size_t(t)] + seg_rank[size_t(b)];
  }
  enc.unit_feats = numerics::gather_rows(tape, numerics::concat_rows(tape, w2), std::move(unit_perm));

  // ---- char-level encoder, rows = units packed by length ----
  std::vector<int> uorder = sort_desc(batch.unit_len);
  std::vector<int> urank(uorder.size());
  for (size_t r = 0; r < uorder.size(); ++r) urank[size_t(uorder[r])] = static_cast<int>(r);
  std::vector<int> sorted_lens;
  for (int u : uorder) sorted_lens.push_back(batch.unit_len[size_t(u)]);
  int max_len = sorted_lens.empty() ? 0 : sorted_lens[0];
  std::vector<int> char_active = active_counts(sorted_lens, max_len);

  // feature dropout: one mask row per unit, shared across its time steps
  int in_dim = cfg.char_emb + cfg.word_feat_dim();
  std::vector<T> feat_mask;
  if (train && flags.feature_dropout > 0) {
    feat_mask.resize(static_cast<size_t>(n_units) * static_cast<size_t>(in_dim));
    T scale = static_cast<T>(1.0 / (1.0 - flags.feature_dropout));
    for (auto& v : feat_mask) v = rng_feat.uniform() < flags.feature_dropout ? T(0) : scale;
  }

  std::vector<TP<T>> char_xs(static_cast<size_t>(max_len));
  for (int j = 0; j < max_len; ++j) {
    int mrows = char_active[size_t(j)];
    std::vector<int> cid(static_cast<size_t>(mrows));
    std::vector<int> urows(static_cast<size_t>(mrows));
    for (int r = 0; r < mrows; ++r) {
      int u = uorder[size_t(r)];
      urows[size_t(r)] = u;
      cid[size_t(r)] = batch.char_id[size_t(batch.unit_char_off[size_t(u)] + j)];
    }
    auto ce = numerics::embedding(tape, char_emb, std::move(cid));
    auto wf = numerics::gather_rows(tape, enc.unit_feats, urows);
    auto x = numerics::concat_cols(tape, ce, wf);
    if (!feat_mask.empty()) {
      auto mask = numerics::make_tensor<T>({mrows, in_dim});
      for (int r = 0; r < mrows; ++r) {
        int u = urows[size_t(r)];
        std::copy_n(feat_mask.begin() + static_cast<long>(u) * in_dim, in_dim,
                    mask->data.begin() + static_cast<long>(r) * in_dim);
      }
      x = numerics::mul_mask(tape, x, mask);
    }
    char_xs[size_t(j)] = x;
  }
  auto c1 = numerics::bilstm(tape, char_enc[0], char_enc[1], char_xs, sorted_lens, rec_p, &rng_rec);
  vertical(c1);
  auto c2 = numerics::bilstm(tape, char_enc[2], char_enc[3], c1, sorted_lens, rec_p, &rng_rec);

  std::vector<int> char_step_off(static_cast<size_t>(max_len) + 1, 0);
  for (int j = 0; j < max_len; ++j) {
    char_step_off[size_t(j) + 1] = char_step_off[size_t(j)] + char_active[size_t(j)];
  }
  std::vector<int> char_perm(static_cast<size_t>(n_chars));
  for (int c = 0; c < n_chars; ++c) {
    int u = batch.char_unit[size_t(c)];
    int j = batch.char_j[size_t(c)];
    char_perm[size_t(c)] = char_step_off[size_t(j)] + urank[size_t(u)];
  }
  enc.g = numerics::gather_rows(tape, numerics::concat_rows(tape, c2), std::move(char_perm));

  // ---- cross-level attention, per segment ----
  if (cfg.use_attention) {
    enc.seg_attention.assign(static_cast<size_t>(batch.B), nullptr);
    std::vector<TP<T>> fstar_parts;
    const T neg_inf = -std::numeric_limits<T>::infinity();
    for (int b = 0; b < batch.B; ++b) {
      int c0 = batch.seg_char_off[size_t(b)], c1b = batch.seg_char_off[size_t(b) + 1];
      int u0 = batch.seg_unit_off[size_t(b)], u1 = batch.seg_unit_off[size_t(b) + 1];
      int nc = c1b - c0, nu = u1 - u0;
      if (nc == 0) continue;
      auto q = numerics::slice_rows(tape, enc.g, c0, nc);
      auto x = numerics::slice_rows(tape, enc.unit_feats, u0, nu);
      auto mask = numerics::make_tensor<T>({nc, nu});
      for (int c = 0; c < nc; ++c) {
        int own = batch.char_unit[size_t(c0 + c)] - u0;
        mask->data[static_cast<size_t>(c * nu + own)] = neg_inf;  // never attend the own word
      }
      auto att = numerics::attend_reduce(tape, attn, q, x, mask);
      // a fully masked row (single-word window) contributes a zero view
      if (nu == 1) {
        std::vector<T> zero(static_cast<size_t>(nc), T(0));
        att.output = numerics::row_mul(tape, att.output, std::move(zero));
      }
      fstar_parts.push_back(att.output);
      enc.seg_attention[size_t(b)] = att.weights;
    }
    enc.fstar = numerics::concat_rows(tape, fstar_parts);
    enc.z = numerics::concat_cols(tape, enc.g, enc.fstar);
  } else {
    enc.z = enc.g;
  }
  return enc;
}

template <typename T>
D2Result<T> D2Model<T>::forward(Tape<T>* tape, const Batch& batch, const TrainFlags& flags) const {
  D2Result<T> out;
  out.enc = encode(tape, batch, flags);
  out.logits = numerics::linear(tape, out.enc.z, cls_W, cls_b);
  return out;
}

// ---------------------------------------------------------------------------
// D3
// ---------------------------------------------------------------------------

template <typename T>
D3Model<T> D3Model<T>::init(const D3Config& cfg, const D2Model<T>& d2, uint64_t seed) {
  if (d2.cfg.z_dim() != cfg.d2.z_dim() || d2.cfg.char_vocab != cfg.d2.char_vocab ||
      d2.cfg.word_vocab != cfg.d2.word_vocab) {
    throw ConfigError("D3 init: encoder checkpoint does not match config");
  }
  D3Model<T> m;
  m.cfg = cfg;
  m.encoder.cfg = d2.cfg;

  // frozen copies of the encoder parameters, bytes preserved
  auto freeze_copy = [&](const TP<T>& src) {
    auto t = numerics::make_tensor<T>(src->shape);
    t->data = src->data;
    t->requires_grad = false;
    return t;
  };
  for (const auto& [name, src] : d2.params.items) {
    m.params.add(name, freeze_copy(src));
  }
  auto find = [&](const std::string& n) { return m.params.find(n); };
  m.encoder.word_emb = find("word_emb");
  m.encoder.char_emb = find("char_emb");
  for (int l = 0; l < d2.cfg.word_layers; ++l) {
    for (const char* dir : {"fwd", "bwd"}) {
      std::string p = "word_enc.l" + std::to_string(l) + "." + dir;
      LstmParams<T> lp;
      lp.Wx = find(p + ".Wx");
      lp.Wh = find(p + ".Wh");
      lp.bias = find(p + ".b");
      lp.hidden = d2.cfg.word_hidden;
      lp.reverse = dir[0] == 'b';
      m.encoder.word_enc.push_back(lp);
    }
  }
  for (int l = 0; l < d2.cfg.char_layers; ++l) {
    for (const char* dir : {"fwd", "bwd"}) {
      std::string p = "char_enc.l" + std::to_string(l) + "." + dir;
      LstmParams<T> lp;
      lp.Wx = find(p + ".Wx");
      lp.Wh = find(p + ".Wh");
      lp.bias = find(p + ".b");
      lp.hidden = d2.cfg.char_hidden;
      lp.reverse = dir[0] == 'b';
      m.encoder.char_enc.push_back(lp);
    }
  }
  if (d2.cfg.use_attention) {
    m.encoder.attn.Wq = find("attn.q.W");
    m.encoder.attn.bq = find("attn.q.b");
    m.encoder.attn.Wk = find("attn.k.W");
    m.encoder.attn.bk = find("attn.k.b");
    m.encoder.attn.Wv = find("attn.v.W");
    m.encoder.attn.bv = find("attn.v.b");
    m.encoder.attn.Wo = find("attn.o.W");
    m.encoder.attn.bo = find("attn.o.b");
  }
  m.encoder.cls_W = find("cls.W");
  m.encoder.cls_b = find("cls.b");

  RngStream rng(seed, "init_d3");
  m.decoder = make_lstm_params(m.params, "dec.l0.fwd", cfg.decoder_input_dim(),
                               cfg.decoder_hidden, false, rng);
  m.cls_W = numerics::make_tensor<T>({cfg.decoder_hidden, cfg.d2.classes}, true);
  init_glorot(*m.cls_W, cfg.decoder_hidden, cfg.d2.classes, rng);
  m.cls_b = numerics::make_tensor<T>({cfg.d2.classes}, true);
  m.params.add("d3cls.W", m.cls_W);
  m.params.add("d3cls.b", m.cls_b);
  return m;
}

namespace {

/// Shared packed-step scaffolding for the decoder.
struct DecoderPlan {
  std::vector<int> uorder, urank, sorted_lens, active, step_off;
  int max_len = 0;
};

DecoderPlan make_decoder_plan(const Batch& batch) {
  DecoderPlan p;
  p.uorder = sort_desc(batch.unit_len);
  p.urank.resize(p.uorder.size());
  for (size_t r = 0; r < p.uorder.size(); ++r) p.urank[size_t(p.uorder[r])] = static_cast<int>(r);
  for (int u : p.uorder) p.sorted_lens.push_back(batch.unit_len[size_t(u)]);
  p.max_len = p.sorted_lens.empty() ? 0 : p.sorted_lens[0];
  p.active = active_counts(p.sorted_lens, p.max_len);
  p.step_off.assign(static_cast<size_t>(p.max_len) + 1, 0);
  for (int j = 0; j < p.max_len; ++j) {
    p.step_off[size_t(j) + 1] = p.step_off[size_t(j)] + p.active[size_t(j)];
  }
  return p;
}

}  // namespace

template <typename T>
TP<T> D3Model<T>::decode_with_signal(Tape<T>* tape, const Batch& batch, const EncoderOut<T>& enc,
                                     const TP<T>& prev_onehot, const TrainFlags& flags) const {
  const int n_chars = batch.n_chars();
  if (n_chars == 0) return numerics::make_tensor<T>({0, cfg.d2.classes});
  if (prev_onehot->rows() != n_chars || prev_onehot->cols() != D3Config::kPrevOneHot) {
    throw ShapeError("decode_with_signal: prev_onehot shape");
  }
  DecoderPlan plan = make_decoder_plan(batch);
  RngStream rng_vert(flags.seed, "decoder_vertical", flags.epoch, flags.batch);
  RngStream rng_rec(flags.seed, "decoder_recurrent", flags.epoch, flags.batch);
  const bool train = flags.training;

  TP<T> h, c;
  std::vector<TP<T>> outs(static_cast<size_t>(plan.max_len));
  for (int j = 0; j < plan.max_len; ++j) {
    int mrows = plan.active[size_t(j)];
    std::vector<int> rows(static_cast<size_t>(mrows));
    for (int r = 0; r < mrows; ++r) {
      rows[size_t(r)] = batch.unit_char_off[size_t(plan.uorder[size_t(r)])] + j;
    }
    auto zj = numerics::gather_rows(tape, enc.z, rows);
    auto pj = numerics::gather_rows(tape, prev_onehot, std::move(rows));
    auto x = numerics::concat_cols(tape, zj, pj);
    if (train && flags.vertical_dropout > 0) {
      x = numerics::dropout(tape, x, numerics::DropoutMode::Vertical, flags.vertical_dropout,
                            rng_vert)
              .first;
    }
    if (j == 0) {
      h = numerics::make_tensor<T>({mrows, cfg.decoder_hidden});
      c = numerics::make_tensor<T>({mrows, cfg.decoder_hidden});
    } else if (h->rows() != mrows) {
      h = numerics::slice_rows(tape, h, 0, mrows);
      c = numerics::slice_rows(tape, c, 0, mrows);
    }
    TP<T> rmask = nullptr;
    if (train && flags.recurrent_dropout > 0) {
      rmask = numerics::draw_recurrent_mask<T>(mrows, cfg.decoder_hidden,
                                               flags.recurrent_dropout, rng_rec);
    }
    std::tie(h, c) = numerics::lstm_step(tape, decoder, x, h, c, rmask);
    outs[size_t(j)] = h;
  }

  std::vector<int> char_perm(static_cast<size_t>(n_chars));
  for (int ch = 0; ch < n_chars; ++ch) {
    int u = batch.char_unit[size_t(ch)];
    int j = batch.char_j[size_t(ch)];
    char_perm[size_t(ch)] = plan.step_off[size_t(j)] + plan.urank[size_t(u)];
  }
  auto hidden = numerics::gather_rows(tape, numerics::concat_rows(tape, outs), std::move(char_perm));
  return numerics::linear(tape, hidden, cls_W, cls_b);
}

template <typename T>
std::vector<int> D3Model<T>::decode_free(const Batch& batch, const EncoderOut<T>& enc,
                                         const std::vector<int>& hint_class) const {
  const int n_chars = batch.n_chars();
  std::vector<int> pred(static_cast<size_t>(n_chars), 0);
  if (n_chars == 0) return pred;
  if (static_cast<int>(hint_class.size()) != n_chars) {
    throw ShapeError("decode_free: hint_class length");
  }
  DecoderPlan plan = make_decoder_plan(batch);
  constexpr int kH = D3Config::kPrevOneHot;

  Tape<T>* tape = nullptr;
  TP<T> h, c;
  // signal fed forward per unit: hint if present, else own argmax
  std::vector<int> carried(static_cast<size_t>(batch.n_units()), -1);
  for (int j = 0; j < plan.max_len; ++j) {
    int mrows = plan.active[size_t(j)];
    std::vector<int> rows(static_cast<size_t>(mrows));
    auto onehot = numerics::make_tensor<T>({mrows, kH});
    for (int r = 0; r < mrows; ++r) {
      int u = plan.uorder[size_t(r)];
      rows[size_t(r)] = batch.unit_char_off[size_t(u)] + j;
      if (j == 0) {
        onehot->data[size_t(r * kH + 15)] = T(1);  // beginning-of-word bit
      } else if (carried[size_t(u)] >= 0) {
        onehot->data[size_t(r * kH + carried[size_t(u)])] = T(1);
      }
    }
    auto zj = numerics::gather_rows(tape, enc.z, rows);
    auto x = numerics::concat_cols(tape, zj, onehot);
    if (j == 0) {
      h = numerics::make_tensor<T>({mrows, cfg.decoder_hidden});
      c = numerics::make_tensor<T>({mrows, cfg.decoder_hidden});
    } else if (h->rows() != mrows) {
      h = numerics::slice_rows(tape, h, 0, mrows);
      c = numerics::slice_rows(tape, c, 0, mrows);
    }
    std::tie(h, c) = numerics::lstm_step(tape, decoder, x, h, c);
    auto logits = numerics::linear(tape, h, cls_W, cls_b);
    std::vector<int> step_pred = argmax_rows(*logits);
    for (int r = 0; r < mrows; ++r) {
      int u = plan.uorder[size_t(r)];
      int ch = rows[size_t(r)];
      pred[size_t(ch)] = step_pred[size_t(r)];
      carried[size_t(u)] = hint_class[size_t(ch)] >= 0 ? hint_class[size_t(ch)] : step_pred[size_t(r)];
    }
  }
  return pred;
}

template <typename T>
TP<T> build_prev_signal(const Batch& batch, const std::vector<int>& prev_class,
                        const std::vector<uint8_t>& use_prev) {
  const int n = batch.n_chars();
  constexpr int kH = D3Config::kPrevOneHot;
  auto out = numerics::make_tensor<T>({n, kH});
  for (int c = 0; c < n; ++c) {
    if (batch.char_j[size_t(c)] == 0) {
      out->data[size_t(c * kH + 15)] = T(1);
    } else if (use_prev[size_t(c)]) {
      int cls = prev_class[size_t(c) - 1];  // previous char is adjacent in canonical order
      if (cls < 0 || cls >= 15) throw ShapeError("build_prev_signal class id");
      out->data[size_t(c * kH + cls)] = T(1);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// flat baseline
// ---------------------------------------------------------------------------

template <typename T>
FlatModel<T> FlatModel<T>::init(const FlatConfig& cfg, uint64_t seed) {
  FlatModel<T> m;
  m.cfg = cfg;
  RngStream rng(seed, "init_flat");
  m.char_emb = numerics::make_tensor<T>({cfg.table_rows(), cfg.char_emb}, true);
  for (auto& v : m.char_emb->data) v = static_cast<T>(rng.uniform(-0.1, 0.1));
  m.params.add("char_emb", m.char_emb);
  for (int l = 0; l < cfg.layers; ++l) {
    int in = l == 0 ? cfg.char_emb : 2 * cfg.hidden;
    std::string p = "flat.l" + std::to_string(l);
    m.layers.push_back(make_lstm_params(m.params, p + ".fwd", in, cfg.hidden, false, rng));
    m.layers.push_back(make_lstm_params(m.params, p + ".bwd", in, cfg.hidden, true, rng));
  }
  m.cls_W = numerics::make_tensor<T>({2 * cfg.hidden, cfg.classes}, true);
  init_glorot(*m.cls_W, 2 * cfg.hidden, cfg.classes, rng);
  m.cls_b = numerics::make_tensor<T>({cfg.classes}, true);
  m.params.add("cls.W", m.cls_W);
  m.params.add("cls.b", m.cls_b);
  return m;
}

template <typename T>
TP<T> FlatModel<T>::forward(Tape<T>* tape, const Batch& batch, const TrainFlags& flags) const {
  const int n_chars = batch.n_chars();
  if (n_chars == 0) return numerics::make_tensor<T>({0, cfg.classes});
  const bool train = flags.training;
  RngStream rng_sdo(flags.seed, "sentence_dropout", flags.epoch, flags.batch);
  RngStream rng_vert(flags.seed, "vertical_dropout", flags.epoch, flags.batch);
  RngStream rng_rec(flags.seed, "recurrent_dropout", flags.epoch, flags.batch);
  const double rec_p = train ? flags.recurrent_dropout : 0.0;

  // char stream per segment: unit chars joined by the separator symbol
  std::vector<std::vector<int>> stream_ids(static_cast<size_t>(batch.B));
  std::vector<std::vector<int>> stream_char(static_cast<size_t>(batch.B));  // canonical idx or -1
  std::vector<std::vector<T>> stream_keep(static_cast<size_t>(batch.B));
  std::vector<T> sdo_keep(static_cast<size_t>(batch.n_units()), T(1));
  if (train && flags.sentence_dropout > 0) {
    for (auto& v : sdo_keep) v = rng_sdo.uniform() < flags.sentence_dropout ? T(0) : T(1);
  }
  for (int b = 0; b < batch.B; ++b) {
    for (int u = batch.seg_unit_off[size_t(b)]; u < batch.seg_unit_off[size_t(b) + 1]; ++u) {
      if (u > batch.seg_unit_off[size_t(b)]) {
        stream_ids[size_t(b)].push_back(cfg.sep_id());
        stream_char[size_t(b)].push_back(-1);
        stream_keep[size_t(b)].push_back(T(1));
      }
      for (int c = batch.unit_char_off[size_t(u)]; c < batch.unit_char_off[size_t(u) + 1]; ++c) {
        stream_ids[size_t(b)].push_back(batch.char_id[size_t(c)]);
        stream_char[size_t(b)].push_back(c);
        stream_keep[size_t(b)].push_back(sdo_keep[size_t(u)]);
      }
    }
  }

  std::vector<int> lens(static_cast<size_t>(batch.B));
  for (int b = 0; b < batch.B; ++b) lens[size_t(b)] = static_cast<int>(stream_ids[size_t(b)].size());
  std::vector<int> order = sort_desc(lens);
  std::vector<int> rank(order.size());
  for (size_t r = 0; r < order.size(); ++r) rank[size_t(order[r])] = static_cast<int>(r);
  std::vector<int> sorted_lens;
  for (int b : order) sorted_lens.push_back(lens[size_t(b)]);
  while (!sorted_lens.empty() && sorted_lens.back() == 0) sorted_lens.pop_back();
  int max_len = sorted_lens.empty() ? 0 : sorted_lens[0];
  if (max_len == 0) return numerics::make_tensor<T>({0, cfg.classes});
  if (max_len > cfg.Ts * (cfg.Tw + 1)) throw ShapeError("flat stream longer than Ts*(Tw+1)");
  std::vector<int> active = active_counts(sorted_lens, max_len);

  std::vector<TP<T>> xs(static_cast<size_t>(max_len));
  for (int t = 0; t < max_len; ++t) {
    int mrows = active[size_t(t)];
    std::vector<int> ids(static_cast<size_t>(mrows));
    std::vector<T> keep(static_cast<size_t>(mrows));
    for (int r = 0; r < mrows; ++r) {
      int b = order[size_t(r)];
      ids[size_t(r)] = stream_ids[size_t(b)][size_t(t)];
      keep[size_t(r)] = stream_keep[size_t(b)][size_t(t)];
    }
    auto x = numerics::embedding(tape, char_emb, std::move(ids));
    if (train && flags.sentence_dropout > 0) x = numerics::row_mul(tape, x, std::move(keep));
    xs[size_t(t)] = x;
  }

  auto vertical = [&](std::vector<TP<T>>& hs) {
    if (!train || flags.vertical_dropout <= 0) return;
    for (auto& x : hs) {
      if (x->rows() == 0) continue;
      x = numerics::dropout(tape, x, numerics::DropoutMode::Vertical, flags.vertical_dropout,
                            rng_vert)
              .first;
    }
  };
  vertical(xs);
  std::vector<TP<T>> hs = xs;
  for (size_t l = 0; l + 1 < layers.size(); l += 2) {
    hs = numerics::bilstm(tape, layers[l], layers[l + 1], hs, sorted_lens, rec_p, &rng_rec);
    if (l + 2 < layers.size()) vertical(hs);
  }

  std::vector<int> step_off(static_cast<size_t>(max_len) + 1, 0);
  for (int t = 0; t < max_len; ++t) step_off[size_t(t) + 1] = step_off[size_t(t)] + active[size_t(t)];
  std::vector<int> char_perm(static_cast<size_t>(n_chars), -1);
  for (int b = 0; b < batch.B; ++b) {
    for (int t = 0; t < lens[size_t(b)]; ++t) {
      int c = stream_char[size_t(b)][size_t(t)];
      if (c >= 0) char_perm[size_t(c)] = step_off[size_t(t)] + rank[size_t(b)];
    }
  }
  auto hidden = numerics::gather_rows(tape, numerics::concat_rows(tape, hs), std::move(char_perm));
  return numerics::linear(tape, hidden, cls_W, cls_b);
}

// ---------------------------------------------------------------------------
// utilities
// ---------------------------------------------------------------------------

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& t) {
  int m = t.rows(), n = t.cols();
  std::vector<int> out(static_cast<size_t>(m), 0);
  for (int r = 0; r < m; ++r) {
    int best = 0;
    T bv = t.data[size_t(r * n)];
    for (int c = 1; c < n; ++c) {
      T v = t.data[size_t(r * n + c)];
      if (v > bv) {
        bv = v;
        best = c;
      }
    }
    out[size_t(r)] = best;
  }
  return out;
}

template <typename T>
std::vector<T> dense_logits(const Batch& batch, const Tensor<T>& logits) {
  int classes = logits.cols();
  std::vector<T> out(static_cast<size_t>(batch.B) * batch.Ts * batch.Tw * classes, T(0));
  for (int c = 0; c < batch.n_chars(); ++c) {
    int u = batch.char_unit[size_t(c)];
    int b = batch.unit_seg[size_t(u)];
    int i = batch.unit_slot[size_t(u)];
    int j = batch.char_j[size_t(c)];
    size_t at = static_cast<size_t>(batch.dense_index(b, i, j)) * classes;
    for (int k = 0; k < classes; ++k) out[at + k] = logits.data[size_t(c * classes + k)];
  }
  return out;
}

template <typename T>
std::vector<T> dense_attention(const Batch& batch, const EncoderOut<T>& enc) {
  int Ts = batch.Ts, Tw = batch.Tw;
  std::vector<T> out(static_cast<size_t>(batch.B) * Ts * Tw * (Ts - 1), T(0));
  if (enc.seg_attention.empty()) return out;
  for (int b = 0; b < batch.B; ++b) {
    const auto& w = enc.seg_attention[size_t(b)];
    if (!w) continue;
    int c0 = batch.seg_char_off[size_t(b)];
    int u0 = batch.seg_unit_off[size_t(b)];
    int nu = batch.seg_unit_off[size_t(b) + 1] - u0;
    for (int c = 0; c < w->rows(); ++c) {
      int ch = c0 + c;
      int u = batch.char_unit[size_t(ch)];
      int i = batch.unit_slot[size_t(u)];
      int j = batch.char_j[size_t(ch)];
      size_t at = static_cast<size_t>((b * Ts + i) * Tw + j) * (Ts - 1);
      for (int lu = 0; lu < nu; ++lu) {
        int slot = batch.unit_slot[size_t(u0 + lu)];
        if (slot == i) continue;
        int col = slot < i ? slot : slot - 1;
        out[at + static_cast<size_t>(col)] = w->data[size_t(c * nu + lu)];
      }
    }
  }
  return out;
}

int64_t count_params_d2(const D2Config& cfg) {
  return D2Model<float>::init(cfg, 0).params.count_trainable();
}

int64_t count_params_d3(const D3Config& cfg) {
  auto d2 = D2Model<float>::init(cfg.d2, 0);
  return D3Model<float>::init(cfg, d2, 0).params.count_trainable();
}

int64_t count_params_flat(const FlatConfig& cfg) {
  return FlatModel<float>::init(cfg, 0).params.count_trainable();
}

// explicit instantiations
template struct D2Model<float>;
template struct D2Model<double>;
template struct D3Model<float>;
template struct D3Model<double>;
template struct FlatModel<float>;
template struct FlatModel<double>;
template TP<float> build_prev_signal<float>(const Batch&, const std::vector<int>&,
                                            const std::vector<uint8_t>&);
template TP<double> build_prev_signal<double>(const Batch&, const std::vector<int>&,
                                              const std::vector<uint8_t>&);
template std::vector<int> argmax_rows<float>(const Tensor<float>&);
template std::vector<int> argmax_rows<double>(const Tensor<double>&);
template std::vector<float> dense_logits<float>(const Batch&, const Tensor<float>&);
template std::vector<double> dense_logits<double>(const Batch&, const Tensor<double>&);
template std::vector<float> dense_attention<float>(const Batch&, const EncoderOut<float>&);
template std::vector<double> dense_attention<double>(const Batch&, const EncoderOut<double>&);

}  // namespace tashkeel::model
