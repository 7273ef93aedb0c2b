#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tashkeel/result.hpp"

namespace tashkeel::bench {

struct BenchConfig {
  double scale = 0.5;     // fraction of the reference model widths
  int threads = 2;        // multi-thread mode worker count
  int Ts = 20, stride = 2, Tw = 13;
  int Ts_train = 10, stride_train = 1;
  int train_batch = 128;
  int max_sentences = 48;   // inference workload size
  int max_train_batches = 4;
  int passes = 2;           // timed passes after one warm-up
  uint64_t seed = 7;
  std::vector<std::string> models = {"d2-noattn", "flat"};
};

struct ModelBench {
  std::string name;
  int64_t params = 0;
  double wps_single = 0;
  double wps_multi = 0;
  double train_epoch_seconds = 0;
};

struct BenchReport {
  std::vector<ModelBench> models;
  double ratio_single = 0;  // hierarchical wps / flat wps
  double ratio_multi = 0;
  double train_ratio = 0;   // flat epoch seconds / hierarchical epoch seconds
  int64_t words = 0;
  nlohmann::json config;

  const ModelBench* find(const std::string& name) const {
    for (const auto& m : models)
      if (m.name == name) return &m;
    return nullptr;
  }
  nlohmann::json to_json() const;
};

/// Inference throughput (words/sec, single and multi thread) and one
/// training-epoch wall time for each requested model, on identical
/// sentence and batch content, at matched parameter budgets.
Result<BenchReport> run_bench(const std::string& corpus_file, const BenchConfig& cfg);

}  // namespace tashkeel::bench
