#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "tashkeel/checkpoint.hpp"
#include "tashkeel/config.hpp"
#include "tashkeel/corpus.hpp"
#include "tashkeel/model.hpp"

namespace tashkeel::training {

struct TrainConfig {
  std::string model = "d2";  // d2 | d3 | flat

  double lr = 0.002;
  int batch = 128;
  int plateau_halve_after = 1;   // epochs without dev improvement before halving
  int early_stop_patience = 3;   // consecutive non-improving epochs before stopping
  int max_epochs = 100;

  double sentence_dropout = 0.2;
  double feature_dropout = 0.2;
  double vertical_dropout = 0.25;
  double recurrent_dropout = 0.25;

  int tf_ramp_epochs = 10;       // teacher forcing reaches 100% here
  double tf_ramp_step = 0.10;

  uint64_t seed = 1;

  int Ts_train = 10, stride_train = 1;
  int Ts_eval = 20, stride_eval = 2;
  int Tw = 13;
  int min_count = 1;

  // model dimensions
  int char_emb = 32;
  int word_emb = 128;
  int word_hidden = 256;
  int char_hidden = 512;
  int attn_dk = 256, attn_dv = 256, attn_out = 256;
  bool use_attention = true;
  int decoder_hidden = 1024;
  int flat_hidden = 406;
  int flat_layers = 4;
  bool freeze_word_emb = false;
  std::string word_vectors;  // optional plain-text embedding file

  static TrainConfig from_keyvalues(const config::KeyValues& kv);
  config::KeyValues to_keyvalues() const;
  void validate() const;

  model::D2Config d2_config(int word_vocab, int char_vocab) const;
  model::D3Config d3_config(int word_vocab, int char_vocab) const;
  model::FlatConfig flat_config(int char_vocab) const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double dev_loss = 0;
  double lr = 0;
  double tf_p = 0;  // teacher-forcing probability (d3 only, else 0)
  double seconds = 0;
  std::string to_json() const;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_dev = 0;
  int epochs_run = 0;
  std::string checkpoint_path;
};

struct Splits {
  std::vector<textkit::AnnotatedSentence> train;
  std::vector<textkit::AnnotatedSentence> dev;
  corpus::LoadStats train_stats, dev_stats;
};

/// Reads train.txt and dev.txt from a corpus directory.
Result<Splits> load_splits(const std::string& dir);

/// Non-improving-dev schedule shared by every trainer: halve after
/// `halve_after` consecutive non-improving epochs, stop after
/// `patience`. Re-halves on every further non-improving epoch.
struct PlateauSchedule {
  double lr;
  int halve_after;
  int patience;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;

  bool improved(double dev) const { return dev < best; }
  /// Returns true when training should stop.
  bool observe(double dev) {
    if (dev < best) {
      best = dev;
      since_best = 0;
      return false;
    }
    ++since_best;
    if (since_best >= halve_after) lr *= 0.5;
    return since_best >= patience;
  }
};

/// Zeroes whole word-embedding rows with probability p, keeping
/// positions. Training-time only; callers skip it in eval mode.
template <typename T>
numerics::TP<T> sentence_dropout_apply(numerics::Tape<T>* tape, const numerics::TP<T>& word_embs,
                                       double p, numerics::RngStream& rng) {
  return numerics::dropout(tape, word_embs, numerics::DropoutMode::Sentence, p, rng).first;
}

template <typename T>
TrainResult train_d2(const TrainConfig& cfg, const Splits& splits, const std::string& out_path,
                     std::ostream* log_stream);

template <typename T>
TrainResult train_d3(const TrainConfig& cfg, const Splits& splits,
                     const std::string& d2_checkpoint, const std::string& out_path,
                     std::ostream* log_stream);

template <typename T>
TrainResult train_flat(const TrainConfig& cfg, const Splits& splits, const std::string& out_path,
                       std::ostream* log_stream);

/// Precision-dispatching front door used by the CLI.
TrainResult run_training(const TrainConfig& cfg, const std::string& corpus_dir,
                         const std::string& out_path, int precision,
                         const std::string& d2_checkpoint, std::ostream* log_stream);

}  // namespace tashkeel::training
