#include "tashkeel/bench.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <thread>

#include "tashkeel/model.hpp"
#include "tashkeel/nn.hpp"

namespace tashkeel::bench {

using corpus::Segment;
using corpus::Vocabulary;
using model::Batch;
using model::TrainFlags;
using textkit::AnnotatedSentence;

namespace {

using Clock = std::chrono::steady_clock;

model::D2Config scaled_d2(const BenchConfig& cfg, const Vocabulary& vocab) {
  auto dim = [&](int reference) {
    return std::max(8, static_cast<int>(std::lround(reference * cfg.scale)));
  };
  model::D2Config c;
  c.word_emb = dim(300);
  c.word_hidden = dim(256);
  c.char_hidden = dim(512);
  c.use_attention = false;
  c.Ts = cfg.Ts;
  c.Tw = cfg.Tw;
  c.word_vocab = vocab.word_count();
  c.char_vocab = vocab.char_count();
  // the reference setup uses fixed pretrained word vectors, so the
  // word table stays out of the trainable budget
  c.freeze_word_emb = true;
  return c;
}

/// Flat hidden size whose parameter count best matches `target`.
model::FlatConfig matched_flat(const BenchConfig& cfg, const Vocabulary& vocab, int64_t target) {
  model::FlatConfig c;
  c.Ts = cfg.Ts;
  c.Tw = cfg.Tw;
  c.char_vocab = vocab.char_count();
  int lo = 8, hi = 2048;
  while (lo < hi) {
    int mid = (lo + hi) / 2;
    c.hidden = mid;
    if (model::count_params_flat(c) < target)
      lo = mid + 1;
    else
      hi = mid;
  }
  int64_t best_diff = INT64_MAX;
  int best_h = lo;
  for (int h = std::max(8, lo - 2); h <= lo + 2; ++h) {
    c.hidden = h;
    int64_t diff = std::llabs(model::count_params_flat(c) - target);
    if (diff < best_diff) {
      best_diff = diff;
      best_h = h;
    }
  }
  c.hidden = best_h;
  return c;
}

struct Workload {
  std::vector<AnnotatedSentence> sentences;
  std::vector<std::vector<Segment>> eval_segments;  // per sentence
  std::vector<std::vector<Segment>> train_batches;  // fixed-content batches
  int64_t words = 0;
};

Workload make_workload(const std::vector<AnnotatedSentence>& corpus, const Vocabulary& vocab,
                       const BenchConfig& cfg) {
  Workload w;
  for (const auto& s : corpus) {
    if (static_cast<int>(w.sentences.size()) >= cfg.max_sentences) break;
    w.sentences.push_back(s);
  }
  for (size_t i = 0; i < w.sentences.size(); ++i) {
    w.eval_segments.push_back(corpus::segment_sentence(w.sentences[i], static_cast<int>(i), vocab,
                                                       cfg.Ts, cfg.stride, cfg.Tw));
    w.words += static_cast<int64_t>(w.sentences[i].words.size());
  }
  std::vector<Segment> all_train;
  for (size_t i = 0; i < w.sentences.size(); ++i) {
    auto segs = corpus::segment_sentence(w.sentences[i], static_cast<int>(i), vocab, cfg.Ts_train,
                                         cfg.stride_train, cfg.Tw);
    all_train.insert(all_train.end(), segs.begin(), segs.end());
  }
  for (size_t at = 0; at < all_train.size(); at += size_t(cfg.train_batch)) {
    if (static_cast<int>(w.train_batches.size()) >= cfg.max_train_batches) break;
    size_t count = std::min(size_t(cfg.train_batch), all_train.size() - at);
    w.train_batches.emplace_back(all_train.begin() + static_cast<long>(at),
                                 all_train.begin() + static_cast<long>(at + count));
  }
  return w;
}

template <typename Fn>
double time_inference(const Workload& w, int threads, int passes, const Fn& predict) {
  // predict(batch) -> per-char classes; votes merged per sentence
  auto run_pass = [&] {
    for (size_t s = 0; s < w.eval_segments.size(); ++s) {
      const auto& segs = w.eval_segments[s];
      if (segs.empty()) continue;
      int nt = std::max(1, std::min<int>(threads, static_cast<int>(segs.size())));
      std::vector<std::vector<std::pair<int, int>>> votes(static_cast<size_t>(nt));
      auto worker = [&](int tid) {
        std::vector<const Segment*> part;
        for (size_t i = size_t(tid); i < segs.size(); i += size_t(nt)) part.push_back(&segs[i]);
        if (part.empty()) return;
        Batch batch = Batch::stack(part);
        std::vector<int> pred = predict(batch);
        auto& sink = votes[size_t(tid)];
        for (int c = 0; c < batch.n_chars(); ++c) {
          int u = batch.char_unit[size_t(c)];
          int b = batch.unit_seg[size_t(u)];
          int slot = batch.unit_slot[size_t(u)];
          int pos = part[size_t(b)]->char_pos[size_t(slot * batch.Tw + batch.char_j[size_t(c)])];
          sink.emplace_back(pos, pred[size_t(c)]);
        }
      };
      if (nt == 1) {
        worker(0);
      } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nt; ++t) pool.emplace_back(worker, t);
        for (auto& t : pool) t.join();
      }
      // majority per position, lowest id on ties
      std::map<int, std::array<int, 15>> counts;
      for (const auto& sink : votes) {
        for (auto [pos, cls] : sink) {
          auto& row = counts.try_emplace(pos).first->second;
          row[size_t(cls)] += 1;
        }
      }
      volatile int consume = 0;
      for (const auto& [pos, row] : counts) {
        int best = 0;
        for (int c = 1; c < 15; ++c)
          if (row[size_t(c)] > row[size_t(best)]) best = c;
        consume += best;
      }
      (void)consume;
    }
  };
  run_pass();  // warm-up
  auto t0 = Clock::now();
  for (int p = 0; p < passes; ++p) run_pass();
  return std::chrono::duration<double>(Clock::now() - t0).count() / passes;
}

template <typename Fn>
double time_train_epoch(const Workload& w, const Fn& train_batch_fn) {
  auto t0 = Clock::now();
  uint64_t bi = 0;
  for (const auto& segs : w.train_batches) {
    Batch batch = Batch::stack(segs);
    train_batch_fn(batch, bi++);
  }
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

nlohmann::json BenchReport::to_json() const {
  nlohmann::json j;
  j["config"] = config;
  j["words_per_pass"] = words;
  for (const auto& m : models) {
    j["models"][m.name] = {{"params", m.params},
                           {"wps_single", m.wps_single},
                           {"wps_multi", m.wps_multi},
                           {"train_epoch_seconds", m.train_epoch_seconds}};
  }
  j["ratios"] = {{"wps_single", ratio_single},
                 {"wps_multi", ratio_multi},
                 {"train_epoch", train_ratio}};
  return j;
}

Result<BenchReport> run_bench(const std::string& corpus_file, const BenchConfig& cfg) {
  auto loaded = corpus::load_corpus(corpus_file);
  if (!loaded.ok()) return loaded.error();
  auto vocab_r = corpus::build_vocab(loaded.value(), 1, cfg.Tw);
  if (!vocab_r.ok()) return vocab_r.error();
  Vocabulary vocab = std::move(vocab_r).value();
  Workload w = make_workload(loaded.value(), vocab, cfg);
  if (w.words == 0) return Error{ErrorKind::EmptyCorpus, corpus_file + " has no usable sentences"};

  model::D2Config d2cfg = scaled_d2(cfg, vocab);
  int64_t target = model::count_params_d2(d2cfg);
  model::FlatConfig fcfg = matched_flat(cfg, vocab, target);

  BenchReport report;
  report.words = w.words;
  report.config = {{"scale", cfg.scale},
                   {"threads", cfg.threads},
                   {"Ts", cfg.Ts},
                   {"stride", cfg.stride},
                   {"Tw", cfg.Tw},
                   {"sentences", w.sentences.size()},
                   {"train_batches", w.train_batches.size()},
                   {"passes", cfg.passes},
                   {"d2_noattn", {{"word_hidden", d2cfg.word_hidden},
                                  {"char_hidden", d2cfg.char_hidden},
                                  {"word_emb", d2cfg.word_emb}}},
                   {"flat", {{"hidden", fcfg.hidden}, {"layers", fcfg.layers}}}};

  for (const std::string& name : cfg.models) {
    ModelBench mb;
    mb.name = name;
    if (name == "d2-noattn" || name == "d2") {
      model::D2Config mc = d2cfg;
      mc.use_attention = name == "d2";
      auto mdl = model::D2Model<float>::init(mc, cfg.seed);
      mb.params = mdl.params.count_trainable();
      TrainFlags eval;
      auto predict = [&](const Batch& b) {
        return model::argmax_rows(*mdl.forward(nullptr, b, eval).logits);
      };
      mb.wps_single = double(w.words) / time_inference(w, 1, cfg.passes, predict);
      mb.wps_multi = double(w.words) / time_inference(w, cfg.threads, cfg.passes, predict);
      numerics::Adam<float> adam;
      mb.train_epoch_seconds = time_train_epoch(w, [&](const Batch& b, uint64_t bi) {
        TrainFlags f;
        f.training = true;
        f.feature_dropout = 0.2;
        f.sentence_dropout = 0.2;
        f.vertical_dropout = 0.25;
        f.recurrent_dropout = 0.25;
        f.seed = cfg.seed;
        f.batch = bi;
        numerics::Tape<float> tape;
        auto out = mdl.forward(&tape, b, f);
        std::vector<float> wts(static_cast<size_t>(b.n_chars()), 1.0f);
        auto loss = numerics::cross_entropy_mean(&tape, out.logits, b.char_label, std::move(wts));
        mdl.params.zero_grads();
        tape.backward(loss);
        numerics::adam_step(adam, mdl.params, 0.002f);
      });
    } else if (name == "flat") {
      auto mdl = model::FlatModel<float>::init(fcfg, cfg.seed);
      mb.params = mdl.params.count_trainable();
      TrainFlags eval;
      auto predict = [&](const Batch& b) {
        return model::argmax_rows(*mdl.forward(nullptr, b, eval));
      };
      mb.wps_single = double(w.words) / time_inference(w, 1, cfg.passes, predict);
      mb.wps_multi = double(w.words) / time_inference(w, cfg.threads, cfg.passes, predict);
      numerics::Adam<float> adam;
      mb.train_epoch_seconds = time_train_epoch(w, [&](const Batch& b, uint64_t bi) {
        TrainFlags f;
        f.training = true;
        f.sentence_dropout = 0.2;
        f.vertical_dropout = 0.25;
        f.recurrent_dropout = 0.25;
        f.seed = cfg.seed;
        f.batch = bi;
        numerics::Tape<float> tape;
        auto logits = mdl.forward(&tape, b, f);
        std::vector<float> wts(static_cast<size_t>(b.n_chars()), 1.0f);
        auto loss = numerics::cross_entropy_mean(&tape, logits, b.char_label, std::move(wts));
        mdl.params.zero_grads();
        tape.backward(loss);
        numerics::adam_step(adam, mdl.params, 0.002f);
      });
    } else {
      return Error{ErrorKind::ConfigMismatch, "unknown bench model " + name};
    }
    report.models.push_back(mb);
  }

  const ModelBench* hier = report.find("d2-noattn");
  if (!hier) hier = report.find("d2");
  const ModelBench* flat = report.find("flat");
  if (hier && flat && flat->wps_single > 0) {
    report.ratio_single = hier->wps_single / flat->wps_single;
    report.ratio_multi = hier->wps_multi / flat->wps_multi;
    if (hier->train_epoch_seconds > 0) {
      report.train_ratio = flat->train_epoch_seconds / hier->train_epoch_seconds;
    }
  }
  return report;
}

}  // namespace tashkeel::bench
