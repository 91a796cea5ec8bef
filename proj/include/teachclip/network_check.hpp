#pragma once

// Whole-student gradient check: the composed objective (IN + CgT + FgT with an
// X-Pool-like teacher held constant) against central differences over every
// trainable tensor.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "teachclip/autodiff.hpp"
#include "teachclip/losses.hpp"
#include "teachclip/student.hpp"
#include "teachclip/teachers.hpp"

namespace teachclip {

struct NetworkCheckConfig {
  std::size_t d = 8;
  std::size_t m = 4;
  std::size_t layers = 1;
  std::size_t b = 3;
  std::size_t heads = 1;
  double h = 1e-5;
};

inline std::vector<FrameFeatureSequence> gaussian_videos(std::mt19937_64& rng, std::size_t b, std::size_t m,
                                                         std::size_t d) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<FrameFeatureSequence> out;
  for (std::size_t i = 0; i < b; ++i) {
    FrameFeatureSequence v{"v" + std::to_string(i), m, d, std::vector<float>(m * d)};
    for (float& x : v.frames) x = static_cast<float>(g(rng));
    out.push_back(std::move(v));
  }
  return out;
}

inline std::vector<TextFeatureInput> gaussian_texts(std::mt19937_64& rng, std::size_t b, std::size_t dt) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<TextFeatureInput> out;
  for (std::size_t i = 0; i < b; ++i) {
    TextFeatureInput t{"t" + std::to_string(i), std::vector<float>(dt)};
    for (float& x : t.feature) x = static_cast<float>(g(rng));
    out.push_back(std::move(t));
  }
  return out;
}

/// Perturbs every parameter so biases, positional rows and gains are off
/// their initial values.
inline void jitter_params(StudentParams& p, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  for (Tensor* t : p.trainable())
    for (double& v : t->data) v += g(rng);
}

inline GradCheckReport network_grad_check(std::uint64_t seed, const NetworkCheckConfig& c = {}) {
  std::mt19937_64 rng(seed);
  StudentConfig cfg;
  cfg.dim = c.d;
  cfg.text_dim = c.d;
  cfg.max_frames = c.m;
  cfg.layers = c.layers;
  cfg.ff_dim = 4 * c.d;
  cfg.heads = c.heads;
  StudentParams params = init_student(cfg, seed);
  jitter_params(params, rng, 0.1);
  params.logit_scale(0, 0) = 1.0;

  const auto videos = gaussian_videos(rng, c.b, c.m, c.d);
  const auto texts = gaussian_texts(rng, c.b, c.d);
  std::vector<Tensor> frame_bank;
  for (const auto& v : videos) frame_bank.push_back(v.to_tensor());
  Tensor text_bank(c.b, c.d);
  for (std::size_t i = 0; i < c.b; ++i)
    for (std::size_t k = 0; k < c.d; ++k) text_bank(i, k) = texts[i].feature[k];
  const TeacherSignals teacher = xpool_teacher(frame_bank, text_bank);

  GraphFunction f = [&](Tape& tape, std::span<const Var> leaves) {
    BoundStudent s = bind_student(cfg, leaves);
    BatchGraph g = batch_similarity_graph(s, tape, videos, texts);
    return total_loss(g.similarity, g.afa_weights, s.logit_scale, {&teacher.coarse, &teacher.fine}).total;
  };
  return grad_check_report(f, params.trainable_copy(), c.h);
}

}  // namespace teachclip
