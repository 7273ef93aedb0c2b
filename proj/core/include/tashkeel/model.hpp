#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tashkeel/corpus.hpp"
#include "tashkeel/nn.hpp"

namespace tashkeel::model {

using numerics::ParamSet;
using numerics::Tape;
using numerics::Tensor;
using numerics::TP;

struct D2Config {
  int char_emb = 32;
  int word_emb = 300;
  int word_hidden = 256;
  int word_layers = 2;
  int char_hidden = 512;
  int char_layers = 2;
  bool use_attention = true;
  int attn_dk = 256;
  int attn_dv = 256;
  int attn_out = 256;
  int classes = 15;
  int Ts = 10;
  int Tw = 13;
  int word_vocab = 0;
  int char_vocab = 0;
  bool freeze_word_emb = false;

  int word_feat_dim() const { return 2 * word_hidden; }
  int char_out_dim() const { return 2 * char_hidden; }
  int z_dim() const { return char_out_dim() + (use_attention ? attn_out : 0); }
};

struct D3Config {
  D2Config d2;
  int decoder_hidden = 1024;
  static constexpr int kPrevOneHot = 16;  // 15 classes + beginning-of-word bit
  int decoder_input_dim() const { return d2.z_dim() + kPrevOneHot; }
};

struct FlatConfig {
  int char_emb = 32;
  int hidden = 406;  // matches the hierarchical core budget at reference scale
  int layers = 4;
  int classes = 15;
  int Ts = 10;
  int Tw = 13;
  int char_vocab = 0;

  int sep_id() const { return char_vocab; }  // word separator symbol
  int table_rows() const { return char_vocab + 1; }
};

/// A stacked batch of segments plus index maps between the dense
/// (segment, slot, char) grid and the compact "real entries only"
/// row layout the forward passes run on.
struct Batch {
  int B = 0, Ts = 0, Tw = 0;

  // canonical unit order: segment-major, slot-minor; real units only
  std::vector<int> unit_seg;       // unit -> segment
  std::vector<int> unit_slot;      // unit -> slot i
  std::vector<int> unit_len;       // unit -> char count
  std::vector<int> unit_word_id;   // unit -> vocab word id
  std::vector<int> seg_unit_off;   // B+1 prefix sums

  // canonical char order: unit-major, j-minor; real chars only
  std::vector<int> char_unit;      // char -> unit
  std::vector<int> char_j;         // char -> position in unit
  std::vector<int> char_id;        // char -> vocab char id
  std::vector<int> char_label;     // char -> gold class id
  std::vector<int> unit_char_off;  // n_units+1 prefix sums
  std::vector<int> seg_char_off;   // B+1

  int n_units() const { return static_cast<int>(unit_len.size()); }
  int n_chars() const { return static_cast<int>(char_id.size()); }
  int dense_index(int b, int i, int j) const { return (b * Ts + i) * Tw + j; }
  /// canonical char index for dense (b, i, j), or -1
  int char_at(int b, int i, int j) const;
  int unit_at(int b, int i) const;

  static Batch stack(const std::vector<const corpus::Segment*>& segments);
  static Batch stack(const std::vector<corpus::Segment>& segments);
};

struct TrainFlags {
  bool training = false;
  double feature_dropout = 0.0;
  double sentence_dropout = 0.0;
  double vertical_dropout = 0.0;
  double recurrent_dropout = 0.0;
  uint64_t seed = 0;
  uint64_t epoch = 0;
  uint64_t batch = 0;
};

/// Shared two-level encoder output, in canonical row layouts.
template <typename T>
struct EncoderOut {
  TP<T> unit_feats;  // [n_units x 2*word_hidden]
  TP<T> g;           // [n_chars x 2*char_hidden]
  TP<T> fstar;       // [n_chars x attn_out], null without attention
  TP<T> z;           // [n_chars x z_dim]
  std::vector<TP<T>> seg_attention;  // per segment [seg chars x seg units]
};

template <typename T>
struct D2Result {
  TP<T> logits;  // [n_chars x classes]
  EncoderOut<T> enc;
};

template <typename T>
struct D2Model {
  D2Config cfg;
  ParamSet<T> params;
  TP<T> word_emb, char_emb;
  std::vector<numerics::LstmParams<T>> word_enc;  // fwd0, bwd0, fwd1, bwd1, ...
  std::vector<numerics::LstmParams<T>> char_enc;
  numerics::AttentionParams<T> attn;
  TP<T> cls_W, cls_b;

  static D2Model init(const D2Config& cfg, uint64_t seed);

  EncoderOut<T> encode(Tape<T>* tape, const Batch& batch, const TrainFlags& flags) const;
  D2Result<T> forward(Tape<T>* tape, const Batch& batch, const TrainFlags& flags) const;
};

template <typename T>
struct D3Model {
  D3Config cfg;
  D2Model<T> encoder;     // parameters frozen during D3 training
  ParamSet<T> params;     // all named parameters (encoder + decoder head)
  numerics::LstmParams<T> decoder;
  TP<T> cls_W, cls_b;

  static D3Model init(const D3Config& cfg, const D2Model<T>& d2, uint64_t seed);

  /// Teacher-forced / precomputed-signal pass: prev_onehot is
  /// [n_chars x 16] built by the caller (gold, zeros, or hints).
  TP<T> decode_with_signal(Tape<T>* tape, const Batch& batch, const EncoderOut<T>& enc,
                           const TP<T>& prev_onehot, const TrainFlags& flags) const;

  /// Free-running pass: each step consumes the previous step's argmax,
  /// unless `hint_class[char] >= 0` forces that char's label as the
  /// signal flowing forward. Returns per-char argmax predictions.
  std::vector<int> decode_free(const Batch& batch, const EncoderOut<T>& enc,
                               const std::vector<int>& hint_class) const;
};

template <typename T>
struct FlatModel {
  FlatConfig cfg;
  ParamSet<T> params;
  TP<T> char_emb;
  std::vector<numerics::LstmParams<T>> layers;
  TP<T> cls_W, cls_b;

  static FlatModel init(const FlatConfig& cfg, uint64_t seed);

  /// Logits over every real char of the batch, canonical char order.
  TP<T> forward(Tape<T>* tape, const Batch& batch, const TrainFlags& flags) const;
};

/// Builds the [n_chars x 16] previous-label signal: BOW bit at j=0,
/// one-hot of the previous char's class where `use_prev[char]` is set,
/// zeros otherwise.
template <typename T>
TP<T> build_prev_signal(const Batch& batch, const std::vector<int>& prev_class,
                        const std::vector<uint8_t>& use_prev);

/// Per-row argmax of a [rows x classes] tensor.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& t);

/// Dense export helpers for the public forward contract.
template <typename T>
std::vector<T> dense_logits(const Batch& batch, const Tensor<T>& logits);
template <typename T>
std::vector<T> dense_attention(const Batch& batch, const EncoderOut<T>& enc);

int64_t count_params_d2(const D2Config& cfg);
int64_t count_params_d3(const D3Config& cfg);
int64_t count_params_flat(const FlatConfig& cfg);

}  // namespace tashkeel::model
