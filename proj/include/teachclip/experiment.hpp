#pragma once

// Distillation comparison: per seed, train one student with InfoNCE alone and
// one with InfoNCE plus both teaching losses from identical initial weights,
// then compare test SumR and how well AFA weights track planted relevance.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "teachclip/core_math.hpp"
#include "teachclip/retrieval.hpp"
#include "teachclip/student.hpp"
#include "teachclip/synth_data.hpp"
#include "teachclip/trainer.hpp"

namespace teachclip {

/// Default budget: one temporal layer, 20 epochs at lr 1e-3 (about a minute
/// per seed on the default corpus).
inline TrainConfig distill_train_defaults() {
  TrainConfig t;
  t.epochs = 20;
  t.learning_rate = 1e-3;
  t.teacher = TeacherKind::kOracle;
  return t;
}

struct DistillConfig {
  CorpusManifest manifest;  // seed is overridden per run
  StudentConfig student{.layers = 1};
  TrainConfig train = distill_train_defaults();  // losses and seed are overridden per arm/run
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

struct DistillArm {
  RetrievalReport report;
  double afa_rho = 0.0;  // mean Pearson rho of AFA weights vs planted relevance
};

struct DistillSeedResult {
  std::uint64_t seed = 0;
  DistillArm in_only;
  DistillArm taught;
};

struct DistillReport {
  std::vector<DistillSeedResult> runs;
  double median_sum_r_in = 0.0;
  double median_sum_r_taught = 0.0;
  double mean_rho_in = 0.0;
  double mean_rho_taught = 0.0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidInput("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

/// Mean over pairs of rho(AFA weights, planted relevance).
inline double mean_afa_relevance_rho(const StudentParams& params, const CorpusSplit& split) {
  if (split.truths.size() != split.videos.size() || split.videos.empty()) {
    throw UnsupportedCorpus("afa relevance: split carries no planted ground truth");
  }
  const auto traces = encode_videos(params, split.videos);
  double total = 0.0;
  for (std::size_t i = 0; i < traces.size(); ++i) total += pearson_rho(traces[i].afa_weights, split.truths[i].relevance);
  return total / static_cast<double>(traces.size());
}

inline DistillArm evaluate_arm(const StudentParams& params, const CorpusSplit& test) {
  DistillArm arm;
  const FeatureStore store = build_store(params, test.videos);
  const auto queries = paired_queries(params, test.texts, test.videos);
  arm.report = evaluate(store, queries);
  arm.afa_rho = mean_afa_relevance_rho(params, test);
  return arm;
}

inline DistillSeedResult run_distill_seed(const DistillConfig& config, std::uint64_t seed,
                                          std::ostream* log = nullptr) {
  CorpusManifest manifest = config.manifest;
  manifest.seed = seed;
  const Corpus corpus = generate_corpus(manifest);
  const CorpusSplit train_split = corpus.split(Split::kTrain);
  const CorpusSplit test_split = corpus.split(Split::kTest);

  StudentConfig sc = config.student;
  sc.dim = manifest.dim;
  sc.text_dim = manifest.text_dim;
  sc.max_frames = std::max(sc.max_frames, manifest.frames);
  const StudentParams init = init_student(sc, seed);

  TrainConfig tc = config.train;
  tc.seed = seed;
  TrainOptions options;
  options.log = log;

  DistillSeedResult out;
  out.seed = seed;
  tc.losses = {true, false, false};
  out.in_only = evaluate_arm(train(tc, train_split, init, options).params, test_split);
  tc.losses = {true, true, true};
  out.taught = evaluate_arm(train(tc, train_split, init, options).params, test_split);
  return out;
}

inline DistillReport summarize_distill(std::vector<DistillSeedResult> runs) {
  DistillReport r;
  r.runs = std::move(runs);
  std::vector<double> in, taught;
  for (const auto& run : r.runs) {
    in.push_back(run.in_only.report.sum_r);
    taught.push_back(run.taught.report.sum_r);
    r.mean_rho_in += run.in_only.afa_rho;
    r.mean_rho_taught += run.taught.afa_rho;
  }
  r.median_sum_r_in = median(in);
  r.median_sum_r_taught = median(taught);
  r.mean_rho_in /= static_cast<double>(r.runs.size());
  r.mean_rho_taught /= static_cast<double>(r.runs.size());
  return r;
}

inline DistillReport run_distill(const DistillConfig& config, std::ostream* log = nullptr) {
  if (config.seeds.empty()) throw InvalidConfig("distill: no seeds");
  std::vector<DistillSeedResult> runs;
  for (std::uint64_t seed : config.seeds) {
    runs.push_back(run_distill_seed(config, seed, log));
    if (log) {
      const auto& r = runs.back();
      *log << "seed " << seed << ": SumR in=" << r.in_only.report.sum_r << " taught=" << r.taught.report.sum_r
           << " rho in=" << r.in_only.afa_rho << " taught=" << r.taught.afa_rho << '\n';
    }
  }
  return summarize_distill(std::move(runs));
}

inline std::string format_distill_table(const DistillReport& r) {
  std::string out;
  char line[200];
  std::snprintf(line, sizeof line, "%-8s %12s %14s %10s %12s\n", "seed", "SumR(IN)", "SumR(IN+MgT)", "rho(IN)",
                "rho(IN+MgT)");
  out += line;
  for (const auto& run : r.runs) {
    std::snprintf(line, sizeof line, "%-8llu %12.2f %14.2f %10.4f %12.4f\n",
                  static_cast<unsigned long long>(run.seed), run.in_only.report.sum_r, run.taught.report.sum_r,
                  run.in_only.afa_rho, run.taught.afa_rho);
    out += line;
  }
  std::snprintf(line, sizeof line, "%-8s %12.2f %14.2f %10.4f %12.4f\n", "median", r.median_sum_r_in,
                r.median_sum_r_taught, r.mean_rho_in, r.mean_rho_taught);
  out += line;
  std::snprintf(line, sizeof line, "gain: %+.2f SumR (rho columns in the last row are means)\n",
                r.median_sum_r_taught - r.median_sum_r_in);
  out += line;
  return out;
}

inline nlohmann::ordered_json distill_report_json(const DistillReport& r) {
  nlohmann::ordered_json j;
  j["runs"] = nlohmann::ordered_json::array();
  for (const auto& run : r.runs) {
    j["runs"].push_back({{"seed", run.seed},
                         {"in", report_to_json(run.in_only.report)},
                         {"in_rho", run.in_only.afa_rho},
                         {"taught", report_to_json(run.taught.report)},
                         {"taught_rho", run.taught.afa_rho}});
  }
  j["median_sum_r_in"] = r.median_sum_r_in;
  j["median_sum_r_taught"] = r.median_sum_r_taught;
  j["mean_rho_in"] = r.mean_rho_in;
  j["mean_rho_taught"] = r.mean_rho_taught;
  return j;
}

}  // namespace teachclip
