#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tashkeel/bench.hpp"
#include "tashkeel/checkpoint.hpp"
#include "tashkeel/config.hpp"
#include "tashkeel/eval.hpp"
#include "tashkeel/gradcheck.hpp"
#include "tashkeel/inference.hpp"
#include "tashkeel/training.hpp"

namespace fs = std::filesystem;
using namespace tashkeel;

namespace {

struct GlobalOpts {
  uint64_t seed = 1;
  bool seed_given = false;
  std::string config_path;
  int precision = 32;
  std::vector<std::string> overrides;  // key=value
};

config::KeyValues gather_config(const GlobalOpts& g) {
  config::KeyValues kv;
  if (!g.config_path.empty()) {
    auto file = config::parse_file(g.config_path);
    if (!file.ok()) throw IoError(file.error().to_string());
    kv = file.value();
  }
  config::KeyValues extra;
  for (const auto& kvpair : g.overrides) {
    auto parsed = config::parse_text(kvpair);
    for (auto& [k, v] : parsed) extra[k] = v;
  }
  return config::merge(kv, extra);
}

void repro_header(const GlobalOpts& g, const config::KeyValues& kv,
                  const std::string& checkpoint_path) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(config::hash(kv)));
  std::cerr << "# seed=" << g.seed << " config_hash=" << buf;
  if (!checkpoint_path.empty() && fs::exists(checkpoint_path)) {
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(checkpoint::file_hash(checkpoint_path)));
    std::cerr << " checkpoint_hash=" << buf;
  }
  std::cerr << "\n";
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << content;
}

int cmd_prepare(const GlobalOpts& g, const std::string& corpus_dir, const std::string& out_dir,
                int min_count, int Tw) {
  auto kv = gather_config(g);
  repro_header(g, kv, "");
  corpus::LoadStats stats;
  auto sentences = corpus::load_corpus(corpus_dir + "/train.txt", &stats);
  if (!sentences.ok()) throw IoError(sentences.error().to_string());
  auto vocab = corpus::build_vocab(sentences.value(), min_count, Tw);
  if (!vocab.ok()) throw IoError(vocab.error().to_string());

  fs::create_directories(out_dir);
  write_file(out_dir + "/vocab.json", vocab.value().to_json());
  write_file(out_dir + "/classes.json", textkit::classes_json());

  int64_t words = 0, chars = 0;
  for (const auto& s : sentences.value()) {
    words += static_cast<int64_t>(s.words.size());
    for (const auto& c : s.chars)
      if (c.kind == textkit::CharKind::ArabicLetter) ++chars;
  }
  nlohmann::json j;
  j["sentences"] = stats.loaded;
  j["skipped"] = stats.skipped;
  j["words"] = words;
  j["arabic_letters"] = chars;
  j["word_vocab"] = vocab.value().word_count();
  j["char_vocab"] = vocab.value().char_count();
  write_file(out_dir + "/stats.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_train(const GlobalOpts& g, const std::string& model, const std::string& corpus_dir,
              const std::string& out_path, const std::string& from_d2) {
  auto kv = gather_config(g);
  kv["model"] = model;
  if (g.seed_given) kv["seed"] = std::to_string(g.seed);
  auto cfg = training::TrainConfig::from_keyvalues(kv);
  repro_header(g, config::merge(cfg.to_keyvalues(), {}), from_d2);

  std::ofstream log_file(out_path + ".log", std::ios::trunc);
  auto res = training::run_training(cfg, corpus_dir, out_path, g.precision, from_d2, &log_file);
  std::cout << "best_epoch=" << res.best_epoch << " best_dev_loss=" << res.best_dev
            << " epochs_run=" << res.epochs_run << " checkpoint=" << res.checkpoint_path << "\n";
  return 0;
}

int cmd_diacritize(const GlobalOpts& g, const std::string& model_path, const std::string& input,
                   const std::string& output, const std::string& hints_path,
                   const std::string& mode, int Ts, int stride, const std::string& tie,
                   int threads, const std::string& dump_votes, const std::string& dump_attention) {
  auto kv = gather_config(g);
  repro_header(g, kv, model_path);

  auto hint_mode = mode == "masked" ? inference::HintMode::MaskedOutput
                                    : inference::HintMode::RawOutput;
  std::map<uint64_t, inference::HintSet> hints;
  if (!hints_path.empty()) {
    auto loaded = inference::load_hints(hints_path, hint_mode);
    if (!loaded.ok()) throw IoError(loaded.error().to_string());
    hints = std::move(loaded).value();
  }

  auto dia = inference::Diacritizer::load(model_path, g.precision);

  std::istream* in = &std::cin;
  std::ifstream fin;
  if (!input.empty()) {
    fin.open(input, std::ios::binary);
    if (!fin) throw IoError("cannot open " + input);
    in = &fin;
  }
  std::ostream* out = &std::cout;
  std::ofstream fout;
  if (!output.empty()) {
    fout.open(output, std::ios::binary | std::ios::trunc);
    if (!fout) throw IoError("cannot write " + output);
    out = &fout;
  }

  nlohmann::json votes_dump = nlohmann::json::array();
  nlohmann::json attn_dump = nlohmann::json::array();

  std::string line;
  uint64_t line_index = 0;
  while (std::getline(*in, line)) {
    inference::DiacritizeOptions opts;
    opts.Ts = Ts;
    opts.stride = stride;
    opts.tie = tie == "random" ? inference::TiePolicy::SeededRandom
                               : inference::TiePolicy::LowestId;
    opts.seed = g.seed;
    opts.line_index = line_index;
    opts.threads = threads;
    opts.collect_attention = !dump_attention.empty();
    auto it = hints.find(line_index);
    if (it != hints.end()) opts.hints = it->second;
    opts.hints.mode = hint_mode;

    auto res = dia.diacritize(line, opts);
    if (!res.ok()) throw std::runtime_error(res.error().to_string());
    (*out) << res.value().text << "\n";
    if (!dump_votes.empty()) {
      votes_dump.push_back({{"line", line_index}, {"votes", res.value().votes.to_json()}});
    }
    if (!dump_attention.empty()) attn_dump.push_back(res.value().attention);
    ++line_index;
  }
  if (!dump_votes.empty()) write_file(dump_votes, votes_dump.dump(2) + "\n");
  if (!dump_attention.empty()) write_file(dump_attention, attn_dump.dump(2) + "\n");
  return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& gold_path, const std::string& pred_path,
             const std::string& out_path, const std::string& confusion_prefix) {
  auto kv = gather_config(g);
  repro_header(g, kv, "");
  auto gold = corpus::load_corpus(gold_path);
  if (!gold.ok()) throw IoError(gold.error().to_string());
  auto pred = corpus::load_corpus(pred_path);
  if (!pred.ok()) throw IoError(pred.error().to_string());
  auto rep = eval::error_reports(pred.value(), gold.value());
  if (!rep.ok()) throw std::runtime_error(rep.error().to_string());

  std::cout << rep.value().format_table();
  if (!out_path.empty()) write_file(out_path, rep.value().to_json() + "\n");
  if (!confusion_prefix.empty()) {
    write_file(confusion_prefix + "_ce.csv", eval::EvalReport::confusion_csv(rep.value().ce_confusion));
    write_file(confusion_prefix + "_core.csv",
               eval::EvalReport::confusion_csv(rep.value().core_confusion));
  }
  return 0;
}

int cmd_bench(const GlobalOpts& g, const std::string& models, const std::string& corpus_dir,
              double scale, int threads, const std::string& out_path) {
  auto kv = gather_config(g);
  repro_header(g, kv, "");
  bench::BenchConfig cfg;
  cfg.scale = scale;
  cfg.threads = threads;
  cfg.seed = g.seed;
  cfg.models.clear();
  std::stringstream ss(models);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) cfg.models.push_back(tok);
  }
  std::string file = corpus_dir;
  if (fs::is_directory(corpus_dir)) {
    file = fs::exists(corpus_dir + "/test.txt") ? corpus_dir + "/test.txt"
                                                : corpus_dir + "/train.txt";
  }
  auto rep = bench::run_bench(file, cfg);
  if (!rep.ok()) throw std::runtime_error(rep.error().to_string());
  std::string json = rep.value().to_json().dump(2);
  std::cout << json << "\n";
  if (!out_path.empty()) write_file(out_path, json + "\n");
  return 0;
}

int cmd_gradcheck(const GlobalOpts& g, const std::string& out_path) {
  auto kv = gather_config(g);
  repro_header(g, kv, "");
  auto report = numerics::run_gradcheck_suite(g.seed);
  std::cout << report.to_string();
  if (!out_path.empty()) write_file(out_path, report.to_string());
  if (!report.all_pass()) {
    std::cerr << "gradcheck: FAILED\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-level hierarchical Arabic diacritization: training, inference, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  GlobalOpts g;
  app.add_option("--seed", g.seed, "Global RNG seed")->each([&](const std::string&) {
    g.seed_given = true;
  });
  app.add_option("--config", g.config_path, "key=value config file");
  app.add_option("--precision", g.precision, "Float width: 32 or 64")
      ->check(CLI::IsMember({32, 64}));
  app.add_option("--set", g.overrides, "Override a config key (key=value), repeatable");

  auto* prepare = app.add_subcommand("prepare", "Build vocabulary and corpus stats");
  std::string corpus_dir, out_dir = "prepared";
  int min_count = 1, Tw = 13;
  prepare->add_option("--corpus", corpus_dir, "Corpus directory (train/dev/test .txt)")
      ->required();
  prepare->add_option("--out", out_dir, "Output directory");
  prepare->add_option("--min-count", min_count, "Minimum word frequency");
  prepare->add_option("--Tw", Tw, "Maximum word length");

  auto* train = app.add_subcommand("train", "Train a model");
  std::string model = "d2", train_out = "model.ckpt", from_d2;
  train->add_option("--model", model, "d2 | d3 | flat")
      ->check(CLI::IsMember({"d2", "d3", "flat"}));
  train->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  train->add_option("--out", train_out, "Checkpoint output path");
  train->add_option("--from-d2", from_d2, "D2 checkpoint to build the d3 decoder on");

  auto* dia = app.add_subcommand("diacritize", "Diacritize text (stdin or --input)");
  std::string model_path, input, output, hints_path, mode = "raw", tie = "lowest";
  std::string dump_votes, dump_attention;
  int Ts = 20, stride = 2, threads = 1;
  dia->add_option("--model", model_path, "Checkpoint path")->required();
  dia->add_option("--input", input, "Input file (default stdin)");
  dia->add_option("--output", output, "Output file (default stdout)");
  dia->add_option("--hints", hints_path, "Hints JSON file");
  dia->add_option("--mode", mode, "Hint handling: raw | masked")
      ->check(CLI::IsMember({"raw", "masked"}));
  dia->add_option("--Ts", Ts, "Evaluation window size");
  dia->add_option("--stride", stride, "Evaluation window stride");
  dia->add_option("--tie", tie, "Vote tie policy: lowest | random")
      ->check(CLI::IsMember({"lowest", "random"}));
  dia->add_option("--threads", threads, "Segments evaluated concurrently");
  dia->add_option("--dump-votes", dump_votes, "Write vote tables JSON");
  dia->add_option("--dump-attention", dump_attention, "Write attention weights JSON");

  auto* ev = app.add_subcommand("eval", "Score predictions against gold");
  std::string gold_path, pred_path, eval_out, confusion_prefix;
  ev->add_option("--gold", gold_path, "Gold corpus file")->required();
  ev->add_option("--pred", pred_path, "Predicted corpus file")->required();
  ev->add_option("--out", eval_out, "Report JSON path");
  ev->add_option("--confusion-csv", confusion_prefix, "Prefix for confusion CSVs");

  auto* bn = app.add_subcommand("bench", "Throughput comparison at matched budgets");
  std::string bench_models = "d2-noattn,flat", bench_out;
  double scale = 0.5;
  int bench_threads = 2;
  bn->add_option("--models", bench_models, "Comma list: d2-noattn,flat[,d2]");
  bn->add_option("--corpus", corpus_dir, "Corpus directory or file")->required();
  bn->add_option("--scale", scale, "Fraction of reference model widths");
  bn->add_option("--threads", bench_threads, "Multi-thread mode worker count");
  bn->add_option("--out", bench_out, "Report JSON path");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  std::string gc_out;
  gc->add_option("--out", gc_out, "Report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (prepare->parsed()) return cmd_prepare(g, corpus_dir, out_dir, min_count, Tw);
    if (train->parsed()) return cmd_train(g, model, corpus_dir, train_out, from_d2);
    if (dia->parsed()) {
      return cmd_diacritize(g, model_path, input, output, hints_path, mode, Ts, stride, tie,
                            threads, dump_votes, dump_attention);
    }
    if (ev->parsed()) return cmd_eval(g, gold_path, pred_path, eval_out, confusion_prefix);
    if (bn->parsed()) return cmd_bench(g, bench_models, corpus_dir, scale, bench_threads, bench_out);
    if (gc->parsed()) return cmd_gradcheck(g, gc_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
