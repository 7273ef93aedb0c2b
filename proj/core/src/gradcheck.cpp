#include "tashkeel/gradcheck.hpp"

#include <chrono>
#include <sstream>

#include "tashkeel/model.hpp"
#include "tashkeel/nn.hpp"

namespace tashkeel::numerics {

namespace {

using Clock = std::chrono::steady_clock;

TP<double> randn(Shape shape, RngStream& rng, double scale = 1.0, bool grad = true) {
  auto t = make_tensor<double>(std::move(shape), grad);
  for (auto& v : t->data) v = rng.uniform(-scale, scale);
  return t;
}

GradCheckEntry check(const std::string& name, double tol,
                     const std::function<TP<double>(Tape<double>*)>& f,
                     const std::vector<TP<double>>& inputs) {
  auto t0 = Clock::now();
  GradCheckEntry e;
  e.name = name;
  e.tolerance = tol;
  e.max_rel_err = gradient_check(f, inputs);
  e.pass = e.max_rel_err < tol;
  e.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return e;
}

GradCheckEntry check_linear(RngStream& rng) {
  auto x = randn({3, 5}, rng);
  auto W = randn({5, 4}, rng);
  auto b = randn({4}, rng);
  auto f = [&](Tape<double>* tape) {
    return sum_all(tape, tanh_op(tape, linear(tape, x, W, b)));
  };
  return check("linear", 1e-7, f, {x, W, b});
}

GradCheckEntry check_softmax_ce(RngStream& rng) {
  auto logits = randn({6, 15}, rng, 2.0);
  std::vector<int> targets = {0, 3, 14, 7, 7, 1};
  std::vector<double> weights = {1, 1, 0, 1, 1, 1};
  auto f = [&](Tape<double>* tape) {
    return cross_entropy_mean(tape, logits, targets, weights);
  };
  return check("softmax_cross_entropy", 1e-6, f, {logits});
}

GradCheckEntry check_lstm_cell(RngStream& rng) {
  int H = 4, I = 3, B = 2;
  ParamSet<double> ps;
  auto p = make_lstm_params(ps, "cell", I, H, false, rng);
  auto x = randn({B, I}, rng);
  auto h0 = randn({B, H}, rng, 0.5);
  auto c0 = randn({B, H}, rng, 0.5);
  auto rec_mask = make_tensor<double>({B, H});
  for (size_t i = 0; i < rec_mask->data.size(); ++i) rec_mask->data[i] = (i % 3 == 0) ? 0.0 : 1.0;
  auto f = [&](Tape<double>* tape) {
    auto [h, c] = lstm_step(tape, p, x, h0, c0, rec_mask);
    return sum_all(tape, add(tape, h, c));
  };
  return check("lstm_cell", 1e-4, f, {x, h0, c0, p.Wx, p.Wh, p.bias});
}

GradCheckEntry check_bilstm(RngStream& rng) {
  int H = 3, I = 4;
  ParamSet<double> ps;
  auto fwd = make_lstm_params(ps, "f", I, H, false, rng);
  auto bwd = make_lstm_params(ps, "b", I, H, true, rng);
  std::vector<int> lengths = {3, 2};
  std::vector<TP<double>> xs = {randn({2, I}, rng), randn({2, I}, rng), randn({1, I}, rng)};
  auto f = [&](Tape<double>* tape) {
    auto outs = bilstm(tape, fwd, bwd, xs, lengths);
    return sum_all(tape, concat_rows(tape, outs));
  };
  std::vector<TP<double>> inputs = {xs[0], xs[1], xs[2], fwd.Wx, fwd.Wh, fwd.bias,
                                    bwd.Wx, bwd.Wh, bwd.bias};
  return check("bilstm", 1e-4, f, inputs);
}

GradCheckEntry check_attend_reduce(RngStream& rng) {
  ParamSet<double> ps;
  auto p = make_attention_params(ps, "attn", 6, 5, 4, 4, 3, rng);
  auto q = randn({4, 6}, rng);
  auto x = randn({3, 5}, rng);
  auto mask = make_tensor<double>({4, 3});
  mask->data[1] = -std::numeric_limits<double>::infinity();  // one excluded position
  auto f = [&](Tape<double>* tape) {
    auto att = attend_reduce(tape, p, q, x, mask);
    return sum_all(tape, tanh_op(tape, att.output));
  };
  std::vector<TP<double>> inputs = {q, x, p.Wq, p.bq, p.Wk, p.bk, p.Wv, p.bv, p.Wo, p.bo};
  return check("attend_reduce", 1e-4, f, inputs);
}

GradCheckEntry check_d2_micro(uint64_t seed) {
  model::D2Config cfg;
  cfg.char_emb = 3;
  cfg.word_emb = 4;
  cfg.word_hidden = 4;
  cfg.char_hidden = 4;
  cfg.attn_dk = 3;
  cfg.attn_dv = 3;
  cfg.attn_out = 3;
  cfg.Ts = 3;
  cfg.Tw = 4;
  cfg.word_vocab = 7;
  cfg.char_vocab = 9;
  auto m = model::D2Model<double>::init(cfg, seed);

  corpus::Segment seg;
  seg.Ts = cfg.Ts;
  seg.Tw = cfg.Tw;
  seg.word_ids = {3, 4, 5};
  seg.word_mask = {1, 1, 1};
  seg.unit_len = {4, 2, 3};
  seg.char_ids.assign(12, 0);
  seg.labels.assign(12, 0);
  seg.char_mask.assign(12, 0);
  seg.char_pos.assign(12, -1);
  int ids[9] = {2, 3, 4, 5, 6, 7, 8, 3, 5};
  int labels[9] = {1, 0, 9, 7, 3, 5, 0, 2, 14};
  int at = 0;
  for (int i = 0; i < cfg.Ts; ++i) {
    for (int j = 0; j < seg.unit_len[size_t(i)]; ++j, ++at) {
      seg.char_ids[size_t(i * cfg.Tw + j)] = ids[at];
      seg.labels[size_t(i * cfg.Tw + j)] = labels[at];
      seg.char_mask[size_t(i * cfg.Tw + j)] = 1;
    }
  }
  auto batch = model::Batch::stack(std::vector<corpus::Segment>{seg});

  model::TrainFlags flags;  // evaluation mode: dropout off, loss only
  auto f = [&](Tape<double>* tape) {
    auto res = m.forward(tape, batch, flags);
    std::vector<double> w(static_cast<size_t>(batch.n_chars()), 1.0);
    return cross_entropy_mean(tape, res.logits, batch.char_label, w);
  };
  std::vector<TP<double>> inputs;
  for (auto& [name, t] : m.params.items) inputs.push_back(t);
  return check("d2_micro_model", 1e-4, f, inputs);
}

}  // namespace

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << (e.pass ? "PASS" : "FAIL") << "  " << e.name << "  max_rel_err=" << e.max_rel_err
       << "  tol=" << e.tolerance << "  (" << e.seconds << "s)\n";
  }
  return os.str();
}

GradCheckReport run_gradcheck_suite(uint64_t seed) {
  RngStream rng(seed, "gradcheck");
  GradCheckReport report;
  report.entries.push_back(check_linear(rng));
  report.entries.push_back(check_softmax_ce(rng));
  report.entries.push_back(check_lstm_cell(rng));
  report.entries.push_back(check_bilstm(rng));
  report.entries.push_back(check_attend_reduce(rng));
  report.entries.push_back(check_d2_micro(seed));
  return report;
}

}  // namespace tashkeel::numerics
