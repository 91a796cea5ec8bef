#pragma once

// Training loop: seeded shuffling, full mini-batches, teacher query, combined
// loss, backward, Adam with a scheduled learning rate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "teachclip/autodiff.hpp"
#include "teachclip/errors.hpp"
#include "teachclip/losses.hpp"
#include "teachclip/retrieval.hpp"
#include "teachclip/student.hpp"
#include "teachclip/synth_data.hpp"
#include "teachclip/teachers.hpp"

namespace teachclip {

enum class LrSchedule { kCosine, kConstant };
enum class ModelSelection { kLast, kBestValidationSumR };

inline LrSchedule parse_schedule(const std::string& s) {
  if (s == "cosine") return LrSchedule::kCosine;
  if (s == "constant") return LrSchedule::kConstant;
  throw InvalidConfig("unknown lr schedule '" + s + "' (expected cosine|constant)");
}

inline const char* schedule_name(LrSchedule s) { return s == LrSchedule::kCosine ? "cosine" : "constant"; }

inline ModelSelection parse_selection(const std::string& s) {
  if (s == "last") return ModelSelection::kLast;
  if (s == "best-sumr") return ModelSelection::kBestValidationSumR;
  throw InvalidConfig("unknown model selection '" + s + "' (expected last|best-sumr)");
}

inline const char* selection_name(ModelSelection s) {
  return s == ModelSelection::kLast ? "last" : "best-sumr";
}

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  LrSchedule schedule = LrSchedule::kCosine;
  std::uint64_t seed = 0;
  LossTerms losses;
  TeacherKind teacher = TeacherKind::kXPoolLike;
  double sigma_temperature = 1.0;
  std::optional<double> afa_temperature;  // overrides the checkpoint's tau_A when set
  double teacher_temperature = kDefaultTeacherTemperature;
  LossWeights weights;
  ModelSelection selection = ModelSelection::kLast;

  /// Structural checks shared by every entry point; lr = 0 is admitted here
  /// so a null update can be run deliberately.
  void validate_structure() const {
    if (batch_size < 2) throw InvalidConfig("train: batch size must be >= 2");
    if (epochs < 1) throw InvalidConfig("train: epochs must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw InvalidConfig("train: learning rate must be finite and non-negative");
    }
    if (!(sigma_temperature > 0.0) || !(teacher_temperature > 0.0)) {
      throw InvalidConfig("train: temperatures must be positive");
    }
    if (afa_temperature && !(*afa_temperature > 0.0)) {
      throw InvalidConfig("train: afa temperature must be positive");
    }
    if (!losses.any()) throw InvalidConfig("train: no loss term enabled");
  }

  void validate() const {
    validate_structure();
    if (!(learning_rate > 0.0)) throw InvalidConfig("train: learning rate must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

inline double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps < 1 || step > total_steps) throw InvalidInput("cosine_lr: need 0 <= step <= total_steps >= 1");
  if (step == total_steps) return 0.0;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// Bias-corrected Adam. A non-finite gradient throws NonFiniteGradient before
/// anything is modified.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
                      double lr) {
  if (params.size() != grads.size()) throw InvalidShape("adam_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i])) {
      throw InvalidShape("adam_step: gradient " + std::to_string(i) + " has shape " + grads[i].shape_string() +
                         ", parameter has " + params[i]->shape_string());
    }
    if (!grads[i].all_finite()) {
      throw NonFiniteGradient("adam_step: non-finite gradient in parameter tensor " + std::to_string(i));
    }
  }
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->rows, p->cols);
      state.v.emplace_back(p->rows, p->cols);
    }
  }
  if (state.m.size() != params.size()) throw InvalidShape("adam_step: state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!state.m[i].same_shape(*params[i])) throw InvalidShape("adam_step: moment shape mismatch");
  }

  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->data;
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    const auto& g = grads[i].data;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Teacher query
// ---------------------------------------------------------------------------

struct TeacherBatch {
  std::span<const FrameFeatureSequence> videos;
  std::span<const TextFeatureInput> texts;
  std::span<const PlantedTruth> truths;  // may be empty unless the teacher is the oracle
  const Tensor* student_text = nullptr;  // b x d, detached student text embeddings
};

/// Teacher signal for text i against video j of the batch.
inline PairSignal teacher_pair(TeacherKind kind, const TeacherBatch& batch, std::size_t i, std::size_t j,
                               double temperature, std::vector<Tensor>& frame_cache) {
  if (kind == TeacherKind::kOracle) {
    if (batch.truths.size() != batch.videos.size()) {
      throw UnsupportedCorpus("oracle_teacher: corpus carries no planted ground truth");
    }
    return oracle_pair(batch.truths[i], batch.truths[j]);
  }
  if (frame_cache.empty()) {
    for (const auto& v : batch.videos) frame_cache.push_back(v.to_tensor());
  }
  const Tensor& frames = frame_cache[j];
  std::vector<double> text;
  if (batch.texts[i].feature.size() == frames.cols) {
    text.assign(batch.texts[i].feature.begin(), batch.texts[i].feature.end());
  } else {
    if (!batch.student_text) throw InvalidInput("teacher: text/frame dimensions differ and no projection given");
    auto row = batch.student_text->row(i);
    text.assign(row.begin(), row.end());
  }
  return kind == TeacherKind::kXPoolLike ? xpool_pair(frames, text, temperature) : meanpool_pair(frames, text);
}

/// Batch signals; with a cache, hits are reused and misses are stored.
inline TeacherSignals query_teacher(TeacherKind kind, const TeacherBatch& batch, double temperature,
                                    TeacherCache* cache = nullptr) {
  const std::size_t b = batch.videos.size();
  if (b == 0 || batch.texts.size() != b) throw InvalidInput("teacher: bad batch");
  std::vector<Tensor> frames;
  return detail::assemble_signals(b, batch.videos.front().frame_count, [&](std::size_t i, std::size_t j) {
    if (cache) {
      if (const PairSignal* hit = cache->find(batch.videos[j].video_id, batch.texts[i].text_id)) return *hit;
    }
    PairSignal p = teacher_pair(kind, batch, i, j, temperature, frames);
    if (cache) cache->put(batch.videos[j].video_id, batch.texts[i].text_id, p);
    return p;
  });
}

// ---------------------------------------------------------------------------
// Loop
// ---------------------------------------------------------------------------

struct TrainOptions {
  const CorpusSplit* validation = nullptr;  // required for best-SumR selection
  TeacherCache* cache = nullptr;
  std::ostream* log = nullptr;  // diagnostics such as skipped steps
  std::function<void(std::size_t step, const LossBreakdown&)> on_step;
};

struct TrainResult {
  StudentParams params;
  std::vector<LossBreakdown> history;  // one record per step
  std::size_t skipped_steps = 0;
  std::vector<double> validation_sum_r;  // per epoch, when a validation split was given
  std::size_t selected_epoch = 0;        // 1-based
};

inline std::size_t steps_per_epoch(std::size_t pairs, std::size_t batch_size) { return pairs / batch_size; }

inline double validation_sum_r(const StudentParams& params, const CorpusSplit& split) {
  const FeatureStore store = build_store(params, split.videos);
  const auto queries = paired_queries(params, split.texts, split.videos);
  return evaluate(store, queries).sum_r;
}

inline void check_train_inputs(const TrainConfig& config, const CorpusSplit& data, const StudentParams& params) {
  config.validate_structure();
  params.config.validate();
  if (data.videos.size() != data.texts.size()) throw InvalidConfig("train: video/text count mismatch");
  if (data.videos.size() < config.batch_size) throw InvalidConfig("train: fewer pairs than one batch");
  for (const auto& v : data.videos) {
    if (v.dim != params.config.dim) throw InvalidConfig("train: frame dim does not match the student");
    if (v.frame_count == 0 || v.frame_count > params.config.max_frames) {
      throw InvalidConfig("train: frame count exceeds the student's positional table");
    }
  }
  for (const auto& t : data.texts)
    if (t.feature.size() != params.config.text_dim) throw InvalidConfig("train: text dim does not match the student");
  if (config.teacher == TeacherKind::kOracle && config.losses.needs_teacher() &&
      data.truths.size() != data.videos.size()) {
    throw UnsupportedCorpus("train: oracle teacher needs planted ground truth");
  }
}

inline TrainResult train(const TrainConfig& config, const CorpusSplit& data, StudentParams params,
                         const TrainOptions& options = {}) {
  if (config.afa_temperature) params.config.afa_temperature = *config.afa_temperature;
  check_train_inputs(config, data, params);
  if (config.selection == ModelSelection::kBestValidationSumR && !options.validation) {
    throw InvalidConfig("train: best-sumr selection needs a validation split");
  }

  const std::size_t n = data.videos.size();
  const std::size_t b = config.batch_size;
  const std::size_t per_epoch = steps_per_epoch(n, b);
  const std::size_t total_steps = per_epoch * config.epochs;

  TrainResult result;
  result.history.reserve(total_steps);
  AdamState adam;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(n);
  std::optional<StudentParams> best;
  double best_sum_r = -1.0;

  std::vector<FrameFeatureSequence> videos(b);
  std::vector<TextFeatureInput> texts(b);
  std::vector<PlantedTruth> truths;

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t batch = 0; batch < per_epoch; ++batch, ++step) {
      truths.clear();
      for (std::size_t k = 0; k < b; ++k) {
        const std::size_t idx = order[batch * b + k];
        videos[k] = data.videos[idx];
        texts[k] = data.texts[idx];
        if (!data.truths.empty()) truths.push_back(data.truths[idx]);
      }

      Tape tape;
      BoundStudent s = bind_student(tape, params, true);
      BatchGraph g = batch_similarity_graph(s, tape, videos, texts);

      std::optional<TeacherSignals> signals;
      if (config.losses.needs_teacher()) {
        const Tensor student_text = g.text_embeddings.value();
        signals = query_teacher(config.teacher, {videos, texts, truths, &student_text},
                                config.teacher_temperature, options.cache);
      }
      TeachingTargets targets;
      if (signals) targets = {&signals->coarse, &signals->fine};

      LossGraph loss = total_loss(g.similarity, g.afa_weights, s.logit_scale, targets, config.sigma_temperature,
                                  config.losses, config.weights);
      result.history.push_back(loss.values);
      if (options.on_step) options.on_step(step, loss.values);

      const double lr = config.schedule == LrSchedule::kCosine
                            ? cosine_lr(step, total_steps, config.learning_rate)
                            : config.learning_rate;
      try {
        if (!std::isfinite(loss.values.total)) throw NonFiniteGradient("train: non-finite loss");
        tape.backward(loss.total);
        std::vector<Tensor> grads;
        grads.reserve(s.leaves.size());
        for (const Var& leaf : s.leaves) grads.push_back(tape.grad(leaf));
        adam_step(params.trainable(), grads, adam, lr);
        params.clamp_logit_scale();
      } catch (const NonFiniteGradient& e) {
        ++result.skipped_steps;
        if (options.log) *options.log << "warning: step " << step << " skipped: " << e.what() << '\n';
      }
    }

    if (options.validation) {
      const double sum_r = validation_sum_r(params, *options.validation);
      result.validation_sum_r.push_back(sum_r);
      if (config.selection == ModelSelection::kBestValidationSumR && sum_r > best_sum_r) {
        best_sum_r = sum_r;
        best = params;
        result.selected_epoch = epoch + 1;
      }
    }
  }

  if (config.selection == ModelSelection::kBestValidationSumR && best) {
    result.params = std::move(*best);
  } else {
    result.params = std::move(params);
    result.selected_epoch = config.epochs;
  }
  return result;
}

}  // namespace teachclip
