#include "tashkeel/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tashkeel::training {

using corpus::Segment;
using corpus::Vocabulary;
using model::Batch;
using model::TrainFlags;
using numerics::Adam;
using numerics::RngStream;
using numerics::Tape;
using numerics::TP;

TrainConfig TrainConfig::from_keyvalues(const config::KeyValues& kv) {
  TrainConfig c;
  using namespace config;
  c.model = get_string(kv, "model", c.model);
  c.lr = get_double(kv, "lr", c.lr);
  c.batch = get_int(kv, "batch", c.batch);
  c.plateau_halve_after = get_int(kv, "plateau_halve_after", c.plateau_halve_after);
  c.early_stop_patience = get_int(kv, "early_stop_patience", c.early_stop_patience);
  c.max_epochs = get_int(kv, "max_epochs", c.max_epochs);
  c.sentence_dropout = get_double(kv, "sentence_dropout", c.sentence_dropout);
  c.feature_dropout = get_double(kv, "feature_dropout", c.feature_dropout);
  c.vertical_dropout = get_double(kv, "vertical_dropout", c.vertical_dropout);
  c.recurrent_dropout = get_double(kv, "recurrent_dropout", c.recurrent_dropout);
  c.tf_ramp_epochs = get_int(kv, "tf_ramp_epochs", c.tf_ramp_epochs);
  c.tf_ramp_step = get_double(kv, "tf_ramp_step", c.tf_ramp_step);
  c.seed = get_u64(kv, "seed", c.seed);
  c.Ts_train = get_int(kv, "Ts_train", c.Ts_train);
  c.stride_train = get_int(kv, "stride_train", c.stride_train);
  c.Ts_eval = get_int(kv, "Ts_eval", c.Ts_eval);
  c.stride_eval = get_int(kv, "stride_eval", c.stride_eval);
  c.Tw = get_int(kv, "Tw", c.Tw);
  c.min_count = get_int(kv, "min_count", c.min_count);
  c.char_emb = get_int(kv, "char_emb", c.char_emb);
  c.word_emb = get_int(kv, "word_emb", c.word_emb);
  c.word_hidden = get_int(kv, "word_hidden", c.word_hidden);
  c.char_hidden = get_int(kv, "char_hidden", c.char_hidden);
  c.attn_dk = get_int(kv, "attn_dk", c.attn_dk);
  c.attn_dv = get_int(kv, "attn_dv", c.attn_dv);
  c.attn_out = get_int(kv, "attn_out", c.attn_out);
  c.use_attention = get_bool(kv, "use_attention", c.use_attention);
  c.decoder_hidden = get_int(kv, "decoder_hidden", c.decoder_hidden);
  c.flat_hidden = get_int(kv, "flat_hidden", c.flat_hidden);
  c.flat_layers = get_int(kv, "flat_layers", c.flat_layers);
  c.freeze_word_emb = get_bool(kv, "freeze_word_emb", c.freeze_word_emb);
  c.word_vectors = get_string(kv, "word_vectors", c.word_vectors);
  return c;
}

config::KeyValues TrainConfig::to_keyvalues() const {
  config::KeyValues kv;
  auto put = [&](const std::string& k, auto v) {
    std::ostringstream os;
    os << v;
    kv[k] = os.str();
  };
  put("model", model);
  put("lr", lr);
  put("batch", batch);
  put("plateau_halve_after", plateau_halve_after);
  put("early_stop_patience", early_stop_patience);
  put("max_epochs", max_epochs);
  put("sentence_dropout", sentence_dropout);
  put("feature_dropout", feature_dropout);
  put("vertical_dropout", vertical_dropout);
  put("recurrent_dropout", recurrent_dropout);
  put("tf_ramp_epochs", tf_ramp_epochs);
  put("tf_ramp_step", tf_ramp_step);
  put("seed", seed);
  put("Ts_train", Ts_train);
  put("stride_train", stride_train);
  put("Ts_eval", Ts_eval);
  put("stride_eval", stride_eval);
  put("Tw", Tw);
  put("min_count", min_count);
  put("char_emb", char_emb);
  put("word_emb", word_emb);
  put("word_hidden", word_hidden);
  put("char_hidden", char_hidden);
  put("attn_dk", attn_dk);
  put("attn_dv", attn_dv);
  put("attn_out", attn_out);
  put("use_attention", use_attention ? 1 : 0);
  put("decoder_hidden", decoder_hidden);
  put("flat_hidden", flat_hidden);
  put("flat_layers", flat_layers);
  put("freeze_word_emb", freeze_word_emb ? 1 : 0);
  if (!word_vectors.empty()) put("word_vectors", word_vectors);
  return kv;
}

void TrainConfig::validate() const {
  auto prob = [](double p, const char* what) {
    if (p < 0 || p >= 1) throw ConfigError(std::string(what) + " must be in [0,1)");
  };
  prob(sentence_dropout, "sentence_dropout");
  prob(feature_dropout, "feature_dropout");
  prob(vertical_dropout, "vertical_dropout");
  prob(recurrent_dropout, "recurrent_dropout");
  if (early_stop_patience < plateau_halve_after) {
    throw ConfigError("early_stop_patience must be >= plateau_halve_after");
  }
  if (batch < 1 || max_epochs < 1) throw ConfigError("batch and max_epochs must be positive");
  if (Ts_train < 1 || stride_train < 1 || stride_train > Ts_train) {
    throw ConfigError("need Ts_train >= 1, 1 <= stride_train <= Ts_train");
  }
  if (model != "d2" && model != "d3" && model != "flat") {
    throw ConfigError("model must be d2, d3 or flat");
  }
}

model::D2Config TrainConfig::d2_config(int word_vocab, int char_vocab) const {
  model::D2Config m;
  m.char_emb = char_emb;
  m.word_emb = word_emb;
  m.word_hidden = word_hidden;
  m.char_hidden = char_hidden;
  m.attn_dk = attn_dk;
  m.attn_dv = attn_dv;
  m.attn_out = attn_out;
  m.use_attention = use_attention;
  m.Ts = Ts_train;
  m.Tw = Tw;
  m.word_vocab = word_vocab;
  m.char_vocab = char_vocab;
  m.freeze_word_emb = freeze_word_emb;
  return m;
}

model::D3Config TrainConfig::d3_config(int word_vocab, int char_vocab) const {
  model::D3Config m;
  m.d2 = d2_config(word_vocab, char_vocab);
  m.decoder_hidden = decoder_hidden;
  return m;
}

model::FlatConfig TrainConfig::flat_config(int char_vocab) const {
  model::FlatConfig m;
  m.char_emb = char_emb;
  m.hidden = flat_hidden;
  m.layers = flat_layers;
  m.Ts = Ts_train;
  m.Tw = Tw;
  m.char_vocab = char_vocab;
  return m;
}

std::string EpochLog::to_json() const {
  std::ostringstream os;
  os << "{\"epoch\":" << epoch << ",\"train_loss\":" << train_loss << ",\"dev_loss\":" << dev_loss
     << ",\"lr\":" << lr << ",\"p\":" << tf_p << ",\"seconds\":" << seconds << "}";
  return os.str();
}

Result<Splits> load_splits(const std::string& dir) {
  Splits s;
  auto train = corpus::load_corpus(dir + "/train.txt", &s.train_stats);
  if (!train.ok()) return train.error();
  s.train = std::move(train).value();
  auto dev = corpus::load_corpus(dir + "/dev.txt", &s.dev_stats);
  if (!dev.ok()) return dev.error();
  s.dev = std::move(dev).value();
  return s;
}

namespace {

std::vector<Segment> make_segments(const std::vector<textkit::AnnotatedSentence>& sentences,
                                   const Vocabulary& vocab, int Ts, int stride, int Tw) {
  std::vector<Segment> out;
  for (size_t i = 0; i < sentences.size(); ++i) {
    auto segs = corpus::segment_sentence(sentences[i], static_cast<int>(i), vocab, Ts, stride, Tw);
    out.insert(out.end(), segs.begin(), segs.end());
  }
  return out;
}

template <typename T>
void init_from_vector_file(const TP<T>& table, const Vocabulary& vocab, const std::string& path) {
  auto vecs = corpus::load_word_vectors(path);
  if (!vecs.ok()) throw IoError(vecs.error().to_string());
  int dim = table->cols();
  int hits = 0;
  for (const auto& [word, vec] : vecs.value()) {
    auto it = vocab.word_ids.find(word);
    if (it == vocab.word_ids.end()) continue;
    if (static_cast<int>(vec.size()) != dim) {
      throw ConfigError("word vector width " + std::to_string(vec.size()) +
                        " does not match word_emb=" + std::to_string(dim));
    }
    for (int c = 0; c < dim; ++c) table->data[size_t(it->second * dim + c)] = static_cast<T>(vec[size_t(c)]);
    ++hits;
  }
  if (hits == 0) throw ConfigError("no vocabulary word found in " + path);
}

template <typename T>
std::vector<std::vector<T>> snapshot(const numerics::ParamSet<T>& params) {
  std::vector<std::vector<T>> out;
  out.reserve(params.items.size());
  for (const auto& [name, t] : params.items) out.push_back(t->data);
  return out;
}

template <typename T>
void restore(numerics::ParamSet<T>& params, const std::vector<std::vector<T>>& snap) {
  for (size_t i = 0; i < params.items.size(); ++i) params.items[i].second->data = snap[i];
}

template <typename T>
std::string param_norms(const numerics::ParamSet<T>& params) {
  std::ostringstream os;
  for (const auto& [name, t] : params.items) {
    double n2 = 0;
    for (T v : t->data) n2 += double(v) * double(v);
    os << " " << name << "=" << std::sqrt(n2);
  }
  return os.str();
}

/// One full plateau-scheduled run; the model specifics come in through
/// the two closures.
template <typename T>
TrainResult run_loop(const TrainConfig& cfg, std::vector<Segment> train_segs,
                     const std::vector<Segment>& dev_segs, numerics::ParamSet<T>& params,
                     const std::function<TP<T>(Tape<T>*, const Batch&, int, uint64_t)>& loss_fn,
                     const std::function<double(const Batch&)>& dev_loss_fn,
                     const std::function<double(int)>& tf_p, int schedule_start,
                     std::ostream* log_stream) {
  using Clock = std::chrono::steady_clock;
  Adam<T> adam;
  PlateauSchedule sched{cfg.lr, cfg.plateau_halve_after, cfg.early_stop_patience};
  TrainResult res;
  std::vector<std::vector<T>> best;

  std::vector<int> order(train_segs.size());
  std::iota(order.begin(), order.end(), 0);

  auto batch_of = [&](const std::vector<Segment>& segs, const std::vector<int>& idx, size_t begin,
                      size_t count) {
    std::vector<const Segment*> ptrs;
    ptrs.reserve(count);
    for (size_t k = begin; k < begin + count; ++k) ptrs.push_back(&segs[size_t(idx[k])]);
    return Batch::stack(ptrs);
  };

  std::vector<int> dev_order(dev_segs.size());
  std::iota(dev_order.begin(), dev_order.end(), 0);

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    auto t0 = Clock::now();
    RngStream shuffle_rng(cfg.seed, "shuffle", static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[size_t(shuffle_rng.below(i))]);
    }

    double loss_sum = 0;
    int64_t char_sum = 0;
    uint64_t batch_index = 0;
    for (size_t at = 0; at < order.size(); at += size_t(cfg.batch)) {
      size_t count = std::min(size_t(cfg.batch), order.size() - at);
      Batch b = batch_of(train_segs, order, at, count);
      Tape<T> tape;
      TP<T> loss = loss_fn(&tape, b, epoch, batch_index);
      double lv = loss->data[0];
      if (!std::isfinite(lv)) {
        throw std::runtime_error("NonFiniteLoss: epoch " + std::to_string(epoch) + " batch " +
                                 std::to_string(batch_index) + "; param norms:" +
                                 param_norms(params));
      }
      loss_sum += lv * double(b.n_chars());
      char_sum += b.n_chars();
      params.zero_grads();
      tape.backward(loss);
      numerics::adam_step(adam, params, static_cast<T>(sched.lr));
      ++batch_index;
    }

    double dev_sum = 0;
    int64_t dev_chars = 0;
    for (size_t at = 0; at < dev_order.size(); at += size_t(cfg.batch)) {
      size_t count = std::min(size_t(cfg.batch), dev_order.size() - at);
      Batch b = batch_of(dev_segs, dev_order, at, count);
      dev_sum += dev_loss_fn(b) * double(b.n_chars());
      dev_chars += b.n_chars();
    }
    double dev = dev_chars ? dev_sum / double(dev_chars) : 0.0;

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = char_sum ? loss_sum / double(char_sum) : 0.0;
    log.dev_loss = dev;
    log.lr = sched.lr;
    log.tf_p = tf_p(epoch);
    log.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    res.log.push_back(log);
    res.epochs_run = epoch + 1;
    if (log_stream) (*log_stream) << log.to_json() << "\n" << std::flush;

    if (epoch >= schedule_start) {
      if (sched.improved(dev)) {
        best = snapshot(params);
        res.best_epoch = epoch;
        res.best_dev = dev;
      }
      if (sched.observe(dev)) break;
    }
  }

  if (!best.empty()) {
    restore(params, best);
  } else {
    res.best_epoch = res.epochs_run - 1;
    res.best_dev = res.log.empty() ? 0.0 : res.log.back().dev_loss;
  }
  return res;
}

template <typename T>
nlohmann::json metrics_json(const TrainResult& res) {
  nlohmann::json m;
  m["best_dev_loss"] = res.best_dev;
  m["best_epoch"] = res.best_epoch;
  m["epochs_run"] = res.epochs_run;
  if (!res.log.empty()) m["final_train_loss"] = res.log.back().train_loss;
  return m;
}

}  // namespace

template <typename T>
TrainResult train_d2(const TrainConfig& cfg, const Splits& splits, const std::string& out_path,
                     std::ostream* log_stream) {
  cfg.validate();
  auto vocab_r = corpus::build_vocab(splits.train, cfg.min_count, cfg.Tw);
  if (!vocab_r.ok()) throw std::runtime_error(vocab_r.error().to_string());
  Vocabulary vocab = std::move(vocab_r).value();

  auto d2cfg = cfg.d2_config(vocab.word_count(), vocab.char_count());
  auto mdl = model::D2Model<T>::init(d2cfg, cfg.seed);
  if (!cfg.word_vectors.empty()) init_from_vector_file(mdl.word_emb, vocab, cfg.word_vectors);

  auto train_segs = make_segments(splits.train, vocab, cfg.Ts_train, cfg.stride_train, cfg.Tw);
  auto dev_segs = make_segments(splits.dev, vocab, cfg.Ts_train, cfg.stride_train, cfg.Tw);

  auto flags_for = [&](int epoch, uint64_t batch) {
    TrainFlags f;
    f.training = true;
    f.feature_dropout = cfg.feature_dropout;
    f.sentence_dropout = cfg.sentence_dropout;
    f.vertical_dropout = cfg.vertical_dropout;
    f.recurrent_dropout = cfg.recurrent_dropout;
    f.seed = cfg.seed;
    f.epoch = static_cast<uint64_t>(epoch);
    f.batch = batch;
    return f;
  };
  auto loss_fn = [&](Tape<T>* tape, const Batch& b, int epoch, uint64_t batch) {
    auto out = mdl.forward(tape, b, flags_for(epoch, batch));
    std::vector<T> w(static_cast<size_t>(b.n_chars()), T(1));
    return numerics::cross_entropy_mean(tape, out.logits, b.char_label, std::move(w));
  };
  auto dev_loss_fn = [&](const Batch& b) {
    TrainFlags eval;
    auto out = mdl.forward(nullptr, b, eval);
    std::vector<T> w(static_cast<size_t>(b.n_chars()), T(1));
    auto loss = numerics::cross_entropy_mean<T>(nullptr, out.logits, b.char_label, std::move(w));
    return double(loss->data[0]);
  };

  TrainResult res = run_loop<T>(cfg, std::move(train_segs), dev_segs, mdl.params, loss_fn,
                                dev_loss_fn, [](int) { return 0.0; }, 0, log_stream);
  if (!out_path.empty()) {
    checkpoint::save(out_path, "d2", checkpoint::to_json(d2cfg), vocab, mdl.params,
                     res.best_epoch, metrics_json<T>(res));
    res.checkpoint_path = out_path;
  }
  return res;
}

template <typename T>
TrainResult train_d3(const TrainConfig& cfg, const Splits& splits,
                     const std::string& d2_checkpoint, const std::string& out_path,
                     std::ostream* log_stream) {
  cfg.validate();
  auto ckpt = checkpoint::load(d2_checkpoint);
  if (ckpt.model_kind() != "d2") throw ConfigError("train d3 expects a d2 checkpoint");
  auto d2 = checkpoint::load_d2<T>(ckpt);
  Vocabulary vocab = ckpt.vocab;

  model::D3Config d3cfg;
  d3cfg.d2 = d2.cfg;
  d3cfg.decoder_hidden = cfg.decoder_hidden;
  auto mdl = model::D3Model<T>::init(d3cfg, d2, cfg.seed);

  auto train_segs = make_segments(splits.train, vocab, cfg.Ts_train, cfg.stride_train, cfg.Tw);
  auto dev_segs = make_segments(splits.dev, vocab, cfg.Ts_train, cfg.stride_train, cfg.Tw);

  auto tf_p = [&](int epoch) {
    return std::min(1.0, cfg.tf_ramp_step * std::min(epoch, cfg.tf_ramp_epochs));
  };
  auto loss_fn = [&](Tape<T>* tape, const Batch& b, int epoch, uint64_t batch) {
    TrainFlags f;
    f.training = true;
    f.feature_dropout = cfg.feature_dropout;
    f.sentence_dropout = cfg.sentence_dropout;
    f.vertical_dropout = cfg.vertical_dropout;
    f.recurrent_dropout = cfg.recurrent_dropout;
    f.seed = cfg.seed;
    f.epoch = static_cast<uint64_t>(epoch);
    f.batch = batch;
    auto enc = mdl.encoder.encode(tape, b, f);
    double p = tf_p(epoch);
    RngStream coin(cfg.seed, "teacher_forcing", static_cast<uint64_t>(epoch), batch);
    std::vector<uint8_t> use_prev(static_cast<size_t>(b.n_chars()), 0);
    for (int c = 0; c < b.n_chars(); ++c) {
      if (b.char_j[size_t(c)] == 0) continue;
      use_prev[size_t(c)] = coin.uniform() < p ? 1 : 0;
    }
    auto signal = model::build_prev_signal<T>(b, b.char_label, use_prev);
    auto logits = mdl.decode_with_signal(tape, b, enc, signal, f);
    std::vector<T> w(static_cast<size_t>(b.n_chars()), T(1));
    return numerics::cross_entropy_mean(tape, logits, b.char_label, std::move(w));
  };
  auto dev_loss_fn = [&](const Batch& b) {
    TrainFlags eval;
    auto enc = mdl.encoder.encode(nullptr, b, eval);
    std::vector<uint8_t> use_prev(static_cast<size_t>(b.n_chars()), 1);
    auto signal = model::build_prev_signal<T>(b, b.char_label, use_prev);
    auto logits = mdl.decode_with_signal(nullptr, b, enc, signal, eval);
    std::vector<T> w(static_cast<size_t>(b.n_chars()), T(1));
    auto loss = numerics::cross_entropy_mean<T>(nullptr, logits, b.char_label, std::move(w));
    return double(loss->data[0]);
  };

  // the plateau schedule arms only once the ramp has reached 100%
  TrainResult res = run_loop<T>(cfg, std::move(train_segs), dev_segs, mdl.params, loss_fn,
                                dev_loss_fn, tf_p, cfg.tf_ramp_epochs, log_stream);
  if (!out_path.empty()) {
    checkpoint::save(out_path, "d3", checkpoint::to_json(d3cfg), vocab, mdl.params,
                     res.best_epoch, metrics_json<T>(res));
    res.checkpoint_path = out_path;
  }
  return res;
}

template <typename T>
TrainResult train_flat(const TrainConfig& cfg, const Splits& splits, const std::string& out_path,
                       std::ostream* log_stream) {
  cfg.validate();
  auto vocab_r = corpus::build_vocab(splits.train, cfg.min_count, cfg.Tw);
  if (!vocab_r.ok()) throw std::runtime_error(vocab_r.error().to_string());
  Vocabulary vocab = std::move(vocab_r).value();

  auto fcfg = cfg.flat_config(vocab.char_count());
  auto mdl = model::FlatModel<T>::init(fcfg, cfg.seed);

  auto train_segs = make_segments(splits.train, vocab, cfg.Ts_train, cfg.stride_train, cfg.Tw);
  auto dev_segs = make_segments(splits.dev, vocab, cfg.Ts_train, cfg.stride_train, cfg.Tw);

  auto loss_fn = [&](Tape<T>* tape, const Batch& b, int epoch, uint64_t batch) {
    TrainFlags f;
    f.training = true;
    f.sentence_dropout = cfg.sentence_dropout;
    f.vertical_dropout = cfg.vertical_dropout;
    f.recurrent_dropout = cfg.recurrent_dropout;
    f.seed = cfg.seed;
    f.epoch = static_cast<uint64_t>(epoch);
    f.batch = batch;
    auto logits = mdl.forward(tape, b, f);
    std::vector<T> w(static_cast<size_t>(b.n_chars()), T(1));
    return numerics::cross_entropy_mean(tape, logits, b.char_label, std::move(w));
  };
  auto dev_loss_fn = [&](const Batch& b) {
    TrainFlags eval;
    auto logits = mdl.forward(nullptr, b, eval);
    std::vector<T> w(static_cast<size_t>(b.n_chars()), T(1));
    auto loss = numerics::cross_entropy_mean<T>(nullptr, logits, b.char_label, std::move(w));
    return double(loss->data[0]);
  };

  TrainResult res = run_loop<T>(cfg, std::move(train_segs), dev_segs, mdl.params, loss_fn,
                                dev_loss_fn, [](int) { return 0.0; }, 0, log_stream);
  if (!out_path.empty()) {
    checkpoint::save(out_path, "flat", checkpoint::to_json(fcfg), vocab, mdl.params,
                     res.best_epoch, metrics_json<T>(res));
    res.checkpoint_path = out_path;
  }
  return res;
}

TrainResult run_training(const TrainConfig& cfg, const std::string& corpus_dir,
                         const std::string& out_path, int precision,
                         const std::string& d2_checkpoint, std::ostream* log_stream) {
  auto splits_r = load_splits(corpus_dir);
  if (!splits_r.ok()) throw IoError(splits_r.error().to_string());
  Splits splits = std::move(splits_r).value();
  if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");

  if (cfg.model == "d2") {
    return precision == 32 ? train_d2<float>(cfg, splits, out_path, log_stream)
                           : train_d2<double>(cfg, splits, out_path, log_stream);
  }
  if (cfg.model == "d3") {
    if (d2_checkpoint.empty()) throw ConfigError("training d3 requires --from-d2 <checkpoint>");
    return precision == 32 ? train_d3<float>(cfg, splits, d2_checkpoint, out_path, log_stream)
                           : train_d3<double>(cfg, splits, d2_checkpoint, out_path, log_stream);
  }
  return precision == 32 ? train_flat<float>(cfg, splits, out_path, log_stream)
                         : train_flat<double>(cfg, splits, out_path, log_stream);
}

template TrainResult train_d2<float>(const TrainConfig&, const Splits&, const std::string&,
                                     std::ostream*);
template TrainResult train_d2<double>(const TrainConfig&, const Splits&, const std::string&,
                                      std::ostream*);
template TrainResult train_d3<float>(const TrainConfig&, const Splits&, const std::string&,
                                     const std::string&, std::ostream*);
template TrainResult train_d3<double>(const TrainConfig&, const Splits&, const std::string&,
                                      const std::string&, std::ostream*);
template TrainResult train_flat<float>(const TrainConfig&, const Splits&, const std::string&,
                                       std::ostream*);
template TrainResult train_flat<double>(const TrainConfig&, const Splits&, const std::string&,
                                        std::ostream*);

}  // namespace tashkeel::training
