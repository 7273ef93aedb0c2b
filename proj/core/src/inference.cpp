#include "tashkeel/inference.hpp"

#include <algorithm>
#include <fstream>
#include <thread>

#include "tashkeel/utf8.hpp"

namespace tashkeel::inference {

using corpus::Segment;
using model::Batch;
using textkit::AnnotatedSentence;
using textkit::CharKind;
using textkit::DiacriticClass;

nlohmann::json VoteTable::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& row : rows) {
    arr.push_back({{"pos", row.position}, {"counts", row.counts}});
  }
  return arr;
}

Result<std::vector<DiacriticClass>> vote(const VoteTable& table, TiePolicy policy, uint64_t seed,
                                         uint64_t stream_tag) {
  std::vector<DiacriticClass> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    if (row.total() == 0) {
      return Error{ErrorKind::EmptyTable,
                   "no votes at position " + std::to_string(row.position)};
    }
    int best = 0;
    for (int c = 1; c < textkit::kNumClasses; ++c) {
      if (row.counts[size_t(c)] > row.counts[size_t(best)]) best = c;
    }
    if (policy == TiePolicy::SeededRandom) {
      std::vector<int> tied;
      for (int c = 0; c < textkit::kNumClasses; ++c) {
        if (row.counts[size_t(c)] == row.counts[size_t(best)]) tied.push_back(c);
      }
      if (tied.size() > 1) {
        numerics::RngStream rng(seed, "vote_tie", stream_tag,
                                static_cast<uint64_t>(row.position));
        best = tied[size_t(rng.below(tied.size()))];
      }
    }
    out.push_back(static_cast<DiacriticClass>(best));
  }
  return out;
}

namespace {

struct ForwardOut {
  std::vector<int> pred;  // canonical char order
  // per segment of the batch: row-major [chars x units] weights
  std::vector<std::vector<double>> seg_attn;
  std::vector<int> seg_attn_units;  // unit count per segment
};

template <typename T>
ForwardOut run_d2(const model::D2Model<T>& m, const Batch& batch, bool want_attention) {
  model::TrainFlags eval;
  auto res = m.forward(nullptr, batch, eval);
  ForwardOut out;
  out.pred = model::argmax_rows(*res.logits);
  if (want_attention && m.cfg.use_attention) {
    for (int b = 0; b < batch.B; ++b) {
      const auto& w = res.enc.seg_attention[size_t(b)];
      std::vector<double> vals;
      if (w) vals.assign(w->data.begin(), w->data.end());
      out.seg_attn.push_back(std::move(vals));
      out.seg_attn_units.push_back(batch.seg_unit_off[size_t(b) + 1] -
                                   batch.seg_unit_off[size_t(b)]);
    }
  }
  return out;
}

template <typename T>
ForwardOut run_d3(const model::D3Model<T>& m, const Batch& batch,
                  const std::vector<int>& hint_class, bool want_attention) {
  model::TrainFlags eval;
  auto enc = m.encoder.encode(nullptr, batch, eval);
  ForwardOut out;
  out.pred = m.decode_free(batch, enc, hint_class);
  if (want_attention && m.encoder.cfg.use_attention) {
    for (int b = 0; b < batch.B; ++b) {
      const auto& w = enc.seg_attention[size_t(b)];
      std::vector<double> vals;
      if (w) vals.assign(w->data.begin(), w->data.end());
      out.seg_attn.push_back(std::move(vals));
      out.seg_attn_units.push_back(batch.seg_unit_off[size_t(b) + 1] -
                                   batch.seg_unit_off[size_t(b)]);
    }
  }
  return out;
}

template <typename T>
ForwardOut run_flat(const model::FlatModel<T>& m, const Batch& batch) {
  model::TrainFlags eval;
  auto logits = m.forward(nullptr, batch, eval);
  ForwardOut out;
  out.pred = model::argmax_rows(*logits);
  return out;
}

}  // namespace

int Diacritizer::Tw() const {
  return std::visit(
      [](const auto& m) -> int {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, std::monostate>) {
          throw ConfigError("empty diacritizer");
        } else if constexpr (std::is_same_v<M, model::D3Model<float>> ||
                             std::is_same_v<M, model::D3Model<double>>) {
          return m.cfg.d2.Tw;
        } else {
          return m.cfg.Tw;
        }
      },
      *model_);
}

Diacritizer Diacritizer::load(const std::string& path, int precision) {
  if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");
  auto ckpt = checkpoint::load(path);
  Diacritizer d;
  d.kind_ = ckpt.model_kind();
  d.vocab_ = ckpt.vocab;
  d.file_hash_ = checkpoint::file_hash(path);
  d.model_ = std::make_shared<ModelVariant>();
  if (d.kind_ == "d2") {
    if (precision == 32)
      *d.model_ = checkpoint::load_d2<float>(ckpt);
    else
      *d.model_ = checkpoint::load_d2<double>(ckpt);
  } else if (d.kind_ == "d3") {
    if (precision == 32)
      *d.model_ = checkpoint::load_d3<float>(ckpt);
    else
      *d.model_ = checkpoint::load_d3<double>(ckpt);
  } else if (d.kind_ == "flat") {
    if (precision == 32)
      *d.model_ = checkpoint::load_flat<float>(ckpt);
    else
      *d.model_ = checkpoint::load_flat<double>(ckpt);
  } else {
    throw ConfigError("unknown model kind " + d.kind_);
  }
  return d;
}

Result<DiacritizeResult> Diacritizer::diacritize(const std::string& line,
                                                 const DiacritizeOptions& opts) const {
  auto parsed = textkit::parse_diacritics(line);
  if (!parsed.ok()) {
    return Error{ErrorKind::ParseError, parsed.error().to_string()};
  }
  AnnotatedSentence sentence = std::move(parsed).value();

  DiacritizeResult result;
  result.classes.assign(sentence.chars.size(), DiacriticClass::None);
  if (sentence.words.empty()) {
    result.text = sentence.raw;
    return result;
  }

  // hints: explicit set plus any marks already present in the input
  std::map<int, DiacriticClass> hints;
  if (accepts_hints()) {
    for (size_t c = 0; c < sentence.chars.size(); ++c) {
      if (sentence.chars[c].gold != DiacriticClass::None) {
        hints[static_cast<int>(c)] = sentence.chars[c].gold;
      }
    }
  }
  for (const auto& [pos, cls] : opts.hints.by_char) {
    if (!accepts_hints()) {
      return Error{ErrorKind::HintsOnD2Model, "hints require a d3 model, this is " + kind_};
    }
    if (pos < 0 || pos >= static_cast<int>(sentence.chars.size())) {
      return Error{ErrorKind::ParseError, "hint position " + std::to_string(pos) + " out of range"};
    }
    if (sentence.chars[size_t(pos)].kind != CharKind::ArabicLetter) {
      return Error{ErrorKind::ParseError,
                   "hint position " + std::to_string(pos) + " is not an Arabic letter"};
    }
    hints[pos] = cls;
  }

  const int Tw = this->Tw();
  auto segments = corpus::segment_sentence(sentence, static_cast<int>(opts.line_index), vocab_,
                                           opts.Ts, opts.stride, Tw);

  std::vector<std::array<int, textkit::kNumClasses>> counts(sentence.chars.size());
  for (auto& a : counts) a.fill(0);
  std::vector<std::vector<double>> seg_attn(segments.size());
  std::vector<int> seg_attn_units(segments.size(), 0);

  int threads = std::max(1, opts.threads);
  threads = std::min<int>(threads, static_cast<int>(segments.size()));
  std::vector<std::vector<std::pair<int, int>>> votes_by_thread(static_cast<size_t>(threads));

  auto worker = [&](int tid) {
    std::vector<const Segment*> part;
    std::vector<int> part_index;
    for (size_t s = size_t(tid); s < segments.size(); s += size_t(threads)) {
      part.push_back(&segments[s]);
      part_index.push_back(static_cast<int>(s));
    }
    if (part.empty()) return;
    Batch batch = Batch::stack(part);

    std::vector<int> hint_class(static_cast<size_t>(batch.n_chars()), -1);
    if (!hints.empty()) {
      for (int c = 0; c < batch.n_chars(); ++c) {
        int u = batch.char_unit[size_t(c)];
        int b = batch.unit_seg[size_t(u)];
        int slot = batch.unit_slot[size_t(u)];
        int pos = part[size_t(b)]->char_pos[size_t(slot * Tw + batch.char_j[size_t(c)])];
        auto it = hints.find(pos);
        if (it != hints.end()) hint_class[size_t(c)] = static_cast<int>(it->second);
      }
    }

    ForwardOut out = std::visit(
        [&](const auto& m) -> ForwardOut {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, std::monostate>) {
            throw ConfigError("empty diacritizer");
          } else if constexpr (std::is_same_v<M, model::D2Model<float>> ||
                               std::is_same_v<M, model::D2Model<double>>) {
            return run_d2(m, batch, opts.collect_attention);
          } else if constexpr (std::is_same_v<M, model::D3Model<float>> ||
                               std::is_same_v<M, model::D3Model<double>>) {
            return run_d3(m, batch, hint_class, opts.collect_attention);
          } else {
            return run_flat(m, batch);
          }
        },
        *model_);

    auto& sink = votes_by_thread[size_t(tid)];
    for (int c = 0; c < batch.n_chars(); ++c) {
      int u = batch.char_unit[size_t(c)];
      int b = batch.unit_seg[size_t(u)];
      int slot = batch.unit_slot[size_t(u)];
      int pos = part[size_t(b)]->char_pos[size_t(slot * Tw + batch.char_j[size_t(c)])];
      sink.emplace_back(pos, out.pred[size_t(c)]);
    }
    if (opts.collect_attention && !out.seg_attn.empty()) {
      for (size_t b = 0; b < part.size(); ++b) {
        seg_attn[size_t(part_index[b])] = std::move(out.seg_attn[b]);
        seg_attn_units[size_t(part_index[b])] = out.seg_attn_units[b];
      }
    }
  };

  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& t : pool) t.join();
  }

  for (const auto& sink : votes_by_thread) {
    for (const auto& [pos, cls] : sink) counts[size_t(pos)][size_t(cls)] += 1;
  }

  for (size_t pos = 0; pos < counts.size(); ++pos) {
    int total = 0;
    for (int c : counts[pos]) total += c;
    if (total == 0) continue;
    VoteTable::Row row;
    row.position = static_cast<int>(pos);
    row.counts = counts[pos];
    result.votes.rows.push_back(row);
  }
  auto voted = vote(result.votes, opts.tie, opts.seed, opts.line_index);
  if (!voted.ok()) return voted.error();
  for (size_t r = 0; r < result.votes.rows.size(); ++r) {
    size_t pos = static_cast<size_t>(result.votes.rows[r].position);
    if (sentence.chars[pos].kind == CharKind::ArabicLetter) {
      result.classes[pos] = voted.value()[r];
    }
  }
  if (opts.hints.mode == HintMode::MaskedOutput) {
    for (const auto& [pos, cls] : hints) result.classes[size_t(pos)] = cls;
  }

  auto text = textkit::reconstruct(sentence, result.classes);
  if (!text.ok()) return text.error();
  result.text = std::move(text).value();

  if (opts.collect_attention) {
    auto units = corpus::make_units(sentence, Tw);
    nlohmann::json jsegs = nlohmann::json::array();
    for (size_t s = 0; s < segments.size(); ++s) {
      const Segment& seg = segments[s];
      nlohmann::json jseg;
      jseg["start_unit"] = seg.start_unit;
      nlohmann::json junits = nlohmann::json::array();
      std::vector<int> real_units;
      for (int i = 0; i < seg.Ts; ++i) {
        if (!seg.word_mask[size_t(i)]) continue;
        const auto& u = units[size_t(seg.start_unit + i)];
        std::u32string cps;
        for (int c = u.char_begin; c < u.char_end; ++c) cps.push_back(sentence.chars[size_t(c)].base);
        junits.push_back(utf8::encode(cps));
        real_units.push_back(i);
      }
      jseg["units"] = junits;
      int nu = seg_attn_units[s];
      const auto& w = seg_attn[s];
      nlohmann::json jchars = nlohmann::json::array();
      int crow = 0;
      for (int i = 0; i < seg.Ts; ++i) {
        if (!seg.word_mask[size_t(i)]) continue;
        int local_u = static_cast<int>(std::find(real_units.begin(), real_units.end(), i) -
                                       real_units.begin());
        for (int j = 0; j < seg.unit_len[size_t(i)]; ++j, ++crow) {
          nlohmann::json jc;
          jc["unit"] = local_u;
          jc["offset"] = j;
          jc["pos"] = seg.char_pos[size_t(i * seg.Tw + j)];
          jc["glyph"] = utf8::encode(sentence.chars[size_t(seg.char_pos[size_t(i * seg.Tw + j)])].base);
          nlohmann::json jw = nlohmann::json::array();
          if (!w.empty()) {
            for (int t = 0; t < nu; ++t) {
              if (t == local_u) continue;
              jw.push_back({{"unit", t}, {"weight", w[size_t(crow * nu + t)]}});
            }
          }
          jc["weights"] = jw;
          jchars.push_back(jc);
        }
      }
      jseg["chars"] = jchars;
      jsegs.push_back(jseg);
    }
    result.attention["text"] = sentence.raw;
    result.attention["Ts"] = opts.Ts;
    result.attention["stride"] = opts.stride;
    result.attention["segments"] = jsegs;
  }
  return result;
}

Result<nlohmann::json> Diacritizer::export_attention(const std::string& line, int Ts,
                                                     int stride) const {
  if (kind_ == "flat") {
    return Error{ErrorKind::ConfigMismatch, "flat models have no attention to export"};
  }
  DiacritizeOptions opts;
  opts.Ts = Ts;
  opts.stride = stride;
  opts.collect_attention = true;
  auto res = diacritize(line, opts);
  if (!res.ok()) return res.error();
  return res.value().attention;
}

Result<std::map<uint64_t, HintSet>> load_hints(const std::string& path, HintMode mode) {
  std::ifstream in(path);
  if (!in) return Error{ErrorKind::IoError, "cannot open hints file " + path};
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_array()) {
    return Error{ErrorKind::ParseError, path + ": expected a JSON array of hints"};
  }
  std::map<uint64_t, HintSet> out;
  for (const auto& h : j) {
    if (!h.contains("line") || !h.contains("pos") || !h.contains("class")) {
      return Error{ErrorKind::ParseError, "hint entries need line, pos and class"};
    }
    uint64_t line = h["line"].get<uint64_t>();
    int pos = h["pos"].get<int>();
    int cls = -1;
    if (h["class"].is_number_integer()) {
      cls = h["class"].get<int>();
    } else {
      std::string name = h["class"].get<std::string>();
      for (int c = 0; c < textkit::kNumClasses; ++c) {
        if (name == textkit::class_name(static_cast<DiacriticClass>(c))) cls = c;
      }
    }
    if (cls < 0 || cls >= textkit::kNumClasses) {
      return Error{ErrorKind::ParseError, "bad hint class at line " + std::to_string(line)};
    }
    out[line].mode = mode;
    out[line].by_char[pos] = static_cast<DiacriticClass>(cls);
  }
  return out;
}

}  // namespace tashkeel::inference
