#pragma once

// The efficient student: temporal Transformer blocks over precomputed frame
// features, an attentional frame-feature aggregation (AFA) head that turns
// the enhanced frames into a convex combination, and a linear text
// projection. Retrieval only ever needs the final unit-norm video vector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "teachclip/autodiff.hpp"
#include "teachclip/binary_io.hpp"
#include "teachclip/core_math.hpp"
#include "teachclip/errors.hpp"
#include "teachclip/tensor.hpp"

namespace teachclip {

struct FrameFeatureSequence {
  std::string video_id;
  std::size_t frame_count = 0;
  std::size_t dim = 0;
  std::vector<float> frames;  // frame_count x dim, row-major

  Tensor to_tensor() const {
    if (frames.size() != frame_count * dim) throw InvalidInput("frame sequence: bad payload size");
    return Tensor(frame_count, dim, std::vector<double>(frames.begin(), frames.end()));
  }

  std::span<const float> frame(std::size_t k) const { return {frames.data() + k * dim, dim}; }
};

struct TextFeatureInput {
  std::string text_id;
  std::vector<float> feature;

  Tensor to_tensor() const {
    return Tensor(1, feature.size(), std::vector<double>(feature.begin(), feature.end()));
  }
};

struct StudentConfig {
  std::size_t dim = 64;         // d
  std::size_t text_dim = 48;    // d_t
  std::size_t max_frames = 12;  // m_max
  std::size_t layers = 4;       // L
  std::size_t ff_dim = 256;     // d_ff
  std::size_t heads = 1;
  double afa_temperature = 1.0;  // tau_A, fixed

  void validate() const {
    if (dim == 0 || text_dim == 0 || max_frames == 0 || ff_dim == 0 || heads == 0) {
      throw InvalidConfig("student config: dimensions must be positive");
    }
    if (dim % heads != 0) throw InvalidConfig("student config: dim must be divisible by heads");
    if (!(afa_temperature > 0.0) || !std::isfinite(afa_temperature)) {
      throw InvalidConfig("student config: afa temperature must be positive");
    }
  }

  friend bool operator==(const StudentConfig&, const StudentConfig&) = default;
};

struct TemporalBlockParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, wk, wv, wo;
  Tensor ln2_gain, ln2_bias;
  Tensor ff_in, ff_out;
};

inline const double kMaxLogitScale = std::log(100.0);

struct StudentParams {
  StudentConfig config;
  Tensor positional;  // m_max x d
  std::vector<TemporalBlockParams> blocks;
  Tensor afa_w1, afa_b1, afa_w2, afa_b2;  // d x d, 1 x d, d x 1, 1 x 1
  Tensor text_w, text_b;                  // d_t x d, 1 x d
  Tensor logit_scale;                     // 1 x 1, log domain

  /// Every trainable tensor in declared (checkpoint) order.
  std::vector<Tensor*> trainable() {
    std::vector<Tensor*> out{&positional};
    for (auto& b : blocks) {
      for (Tensor* t : {&b.ln1_gain, &b.ln1_bias, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_gain,
                        &b.ln2_bias, &b.ff_in, &b.ff_out})
        out.push_back(t);
    }
    for (Tensor* t : {&afa_w1, &afa_b1, &afa_w2, &afa_b2, &text_w, &text_b, &logit_scale})
      out.push_back(t);
    return out;
  }

  std::vector<const Tensor*> trainable() const {
    auto mut = const_cast<StudentParams*>(this)->trainable();
    return {mut.begin(), mut.end()};
  }

  std::vector<Tensor> trainable_copy() const {
    std::vector<Tensor> out;
    for (const Tensor* t : trainable()) out.push_back(*t);
    return out;
  }

  /// Keeps exp(logit_scale) <= 100.
  void clamp_logit_scale() {
    if (logit_scale.data[0] > kMaxLogitScale) logit_scale.data[0] = kMaxLogitScale;
  }

  bool all_finite() const {
    for (const Tensor* t : trainable())
      if (!t->all_finite()) return false;
    return true;
  }

  friend bool operator==(const StudentParams&, const StudentParams&);
};

inline bool operator==(const StudentParams& a, const StudentParams& b) {
  if (!(a.config == b.config)) return false;
  auto ta = a.trainable();
  auto tb = b.trainable();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (!(*ta[i] == *tb[i])) return false;
  return true;
}

/// Fresh parameters: weights ~ U(-1/sqrt(fan), 1/sqrt(fan)), biases and
/// positional embeddings zero, layer-norm gains one, logit scale ln(1/0.07).
inline StudentParams init_student(const StudentConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config.dim;
  auto uniform = [&](std::size_t r, std::size_t c, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(r, c);
    for (double& v : t.data) v = dist(rng);
    return t;
  };
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));

  StudentParams p;
  p.config = config;
  p.positional = Tensor(config.max_frames, d);
  for (std::size_t l = 0; l < config.layers; ++l) {
    TemporalBlockParams b;
    b.ln1_gain = Tensor(1, d, 1.0);
    b.ln1_bias = Tensor(1, d);
    b.wq = uniform(d, d, bound);
    b.wk = uniform(d, d, bound);
    b.wv = uniform(d, d, bound);
    b.wo = uniform(d, d, bound);
    b.ln2_gain = Tensor(1, d, 1.0);
    b.ln2_bias = Tensor(1, d);
    b.ff_in = uniform(d, config.ff_dim, bound);
    b.ff_out = uniform(config.ff_dim, d, bound);
    p.blocks.push_back(std::move(b));
  }
  p.afa_w1 = uniform(d, d, bound);
  p.afa_b1 = Tensor(1, d);
  p.afa_w2 = uniform(d, 1, bound);
  p.afa_b2 = Tensor(1, 1);
  p.text_w = uniform(config.text_dim, d, 1.0 / std::sqrt(static_cast<double>(config.text_dim)));
  p.text_b = Tensor(1, d);
  p.logit_scale = Tensor(1, 1, std::log(1.0 / 0.07));
  return p;
}

struct ParamCount {
  std::size_t total = 0;  // trainable scalars
  std::size_t afa = 0;
  std::size_t temporal = 0;
  std::size_t positional = 0;
  std::size_t text = 0;
  std::size_t logit = 0;
};

inline ParamCount count_params(const StudentParams& p) {
  ParamCount c;
  c.positional = p.positional.size();
  for (const auto& b : p.blocks) {
    for (const Tensor* t : {&b.ln1_gain, &b.ln1_bias, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_gain,
                            &b.ln2_bias, &b.ff_in, &b.ff_out})
      c.temporal += t->size();
  }
  c.afa = p.afa_w1.size() + p.afa_b1.size() + p.afa_w2.size() + p.afa_b2.size();
  c.text = p.text_w.size() + p.text_b.size();
  c.logit = p.logit_scale.size();
  c.total = c.positional + c.temporal + c.afa + c.text + c.logit;
  return c;
}

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

struct BoundBlock {
  Var ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, ff_in, ff_out;
};

/// Parameters as tape leaves, in the same layout as StudentParams.
struct BoundStudent {
  StudentConfig config;
  Var positional;
  std::vector<BoundBlock> blocks;
  Var afa_w1, afa_b1, afa_w2, afa_b2;
  Var text_w, text_b;
  Var logit_scale;
  std::vector<Var> leaves;  // declared order
};

inline std::size_t trainable_tensor_count(const StudentConfig& c) { return 1 + 10 * c.layers + 7; }

inline BoundStudent bind_student(const StudentConfig& config, std::span<const Var> leaves) {
  if (leaves.size() != trainable_tensor_count(config)) {
    throw InvalidInput("bind_student: wrong number of parameter leaves");
  }
  BoundStudent s;
  s.config = config;
  s.leaves.assign(leaves.begin(), leaves.end());
  std::size_t i = 0;
  s.positional = leaves[i++];
  for (std::size_t l = 0; l < config.layers; ++l) {
    BoundBlock b;
    b.ln1_gain = leaves[i++];
    b.ln1_bias = leaves[i++];
    b.wq = leaves[i++];
    b.wk = leaves[i++];
    b.wv = leaves[i++];
    b.wo = leaves[i++];
    b.ln2_gain = leaves[i++];
    b.ln2_bias = leaves[i++];
    b.ff_in = leaves[i++];
    b.ff_out = leaves[i++];
    s.blocks.push_back(b);
  }
  s.afa_w1 = leaves[i++];
  s.afa_b1 = leaves[i++];
  s.afa_w2 = leaves[i++];
  s.afa_b2 = leaves[i++];
  s.text_w = leaves[i++];
  s.text_b = leaves[i++];
  s.logit_scale = leaves[i++];
  return s;
}

inline BoundStudent bind_student(Tape& tape, const StudentParams& params, bool requires_grad) {
  std::vector<Var> leaves;
  for (const Tensor* t : params.trainable()) leaves.push_back(tape.leaf(*t, requires_grad));
  return bind_student(params.config, leaves);
}

struct VideoGraph {
  Var enhanced;     // m x d
  Var afa_weights;  // 1 x m
  Var pooled;       // 1 x d, sum_i w_i phi_i
  Var embedding;    // 1 x d, unit norm
};

/// Pre-norm residual block: x + Attn(LN(x)), then h + MLP(LN(h)).
inline Var temporal_block(const BoundBlock& b, std::size_t heads, Var x) {
  Var xn = layer_norm(x, b.ln1_gain, b.ln1_bias);
  Var q = matmul(xn, b.wq);
  Var k = matmul(xn, b.wk);
  Var v = matmul(xn, b.wv);
  const std::size_t d = x.cols();
  const std::size_t hd = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  Var attended;
  if (heads == 1) {
    Var a = row_softmax(scale(matmul(q, transpose(k)), inv_sqrt));
    attended = matmul(a, v);
  } else {
    std::vector<Var> outs;
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = slice_cols(q, h * hd, hd);
      Var kh = slice_cols(k, h * hd, hd);
      Var vh = slice_cols(v, h * hd, hd);
      Var a = row_softmax(scale(matmul(qh, transpose(kh)), inv_sqrt));
      outs.push_back(matmul(a, vh));
    }
    attended = concat_cols(outs);
  }
  Var h = add(x, matmul(attended, b.wo));
  Var hn = layer_norm(h, b.ln2_gain, b.ln2_bias);
  Var ff = matmul(relu(matmul(hn, b.ff_in)), b.ff_out);
  return add(h, ff);
}

inline VideoGraph encode_video_graph(const BoundStudent& s, Var frames) {
  const std::size_t m = frames.rows();
  if (m == 0 || m > s.config.max_frames) {
    throw InvalidInput("encode_video: frame count " + std::to_string(m) + " outside [1, " +
                       std::to_string(s.config.max_frames) + "]");
  }
  if (frames.cols() != s.config.dim) throw InvalidInput("encode_video: frame dim mismatch");
  Var x = add(frames, slice_rows(s.positional, 0, m));
  for (const BoundBlock& b : s.blocks) x = temporal_block(b, s.config.heads, x);

  // AFA: linear d x d, ReLU, linear d x 1, softmax over frames.
  Var hidden = relu(add(matmul(x, s.afa_w1), s.afa_b1));
  Var scores = add(matmul(hidden, s.afa_w2), s.afa_b2);
  Var weights = row_softmax(transpose(scores), s.config.afa_temperature);
  Var pooled = weighted_sum_rows(x, weights);
  return {x, weights, pooled, normalize_rows(pooled)};
}

inline Var encode_text_graph(const BoundStudent& s, Var text) {
  if (text.cols() != s.config.text_dim) throw InvalidInput("encode_text: text dim mismatch");
  return normalize_rows(add(matmul(text, s.text_w), s.text_b));
}

struct BatchGraph {
  Var similarity;       // b x b, row = text, column = video
  Var afa_weights;      // b x m
  Var text_embeddings;  // b x d
  Var video_embeddings; // b x d
  std::vector<VideoGraph> videos;
};

inline BatchGraph batch_similarity_graph(const BoundStudent& s, Tape& tape,
                                         std::span<const FrameFeatureSequence> videos,
                                         std::span<const TextFeatureInput> texts) {
  if (videos.size() != texts.size()) throw InvalidInput("batch_similarity: count mismatch");
  if (videos.size() < 2) throw InvalidInput("batch_similarity: need at least two pairs");
  BatchGraph out;
  std::vector<Var> video_rows, weight_rows, text_rows;
  const std::size_t m = videos.front().frame_count;
  for (const auto& v : videos) {
    if (v.frame_count != m) throw InvalidInput("batch_similarity: frame counts differ in batch");
    VideoGraph g = encode_video_graph(s, tape.constant(v.to_tensor()));
    video_rows.push_back(g.embedding);
    weight_rows.push_back(g.afa_weights);
    out.videos.push_back(g);
  }
  for (const auto& t : texts) {
    if (t.feature.size() != s.config.text_dim) throw InvalidInput("encode_text: text dim mismatch");
    text_rows.push_back(encode_text_graph(s, tape.constant(t.to_tensor())));
  }
  out.video_embeddings = concat_rows(video_rows);
  out.text_embeddings = concat_rows(text_rows);
  out.afa_weights = concat_rows(weight_rows);
  // Rows are unit norm, so the cosine matrix is a plain product.
  out.similarity = matmul(out.text_embeddings, transpose(out.video_embeddings));
  return out;
}

// ---------------------------------------------------------------------------
// Plain (non-differentiated) evaluation
// ---------------------------------------------------------------------------

struct StudentForwardTrace {
  Tensor enhanced;
  std::vector<double> afa_weights;
  std::vector<double> pooled;
  std::vector<double> video_embedding;
};

inline StudentForwardTrace trace_from_graph(const VideoGraph& g) {
  return {g.enhanced.value(), g.afa_weights.value().data, g.pooled.value().data,
          g.embedding.value().data};
}

inline StudentForwardTrace encode_video(const StudentParams& params, const FrameFeatureSequence& x) {
  if (x.dim != params.config.dim) throw InvalidInput("encode_video: frame dim mismatch");
  Tape tape;
  BoundStudent s = bind_student(tape, params, false);
  return trace_from_graph(encode_video_graph(s, tape.constant(x.to_tensor())));
}

/// Encodes many videos against one binding of the parameters.
inline std::vector<StudentForwardTrace> encode_videos(const StudentParams& params,
                                                      std::span<const FrameFeatureSequence> xs) {
  std::vector<StudentForwardTrace> out;
  out.reserve(xs.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < xs.size(); start += kChunk) {
    Tape tape;
    BoundStudent s = bind_student(tape, params, false);
    for (std::size_t i = start; i < std::min(xs.size(), start + kChunk); ++i) {
      if (xs[i].dim != params.config.dim) throw InvalidInput("encode_video: frame dim mismatch");
      out.push_back(trace_from_graph(encode_video_graph(s, tape.constant(xs[i].to_tensor()))));
    }
  }
  return out;
}

inline std::vector<double> encode_text(const StudentParams& params, const TextFeatureInput& t) {
  if (t.feature.size() != params.config.text_dim) throw InvalidInput("encode_text: text dim mismatch");
  const std::size_t d = params.config.dim;
  std::vector<double> proj(params.text_b.data);
  for (std::size_t k = 0; k < t.feature.size(); ++k)
    for (std::size_t j = 0; j < d; ++j) proj[j] += static_cast<double>(t.feature[k]) * params.text_w(k, j);
  double sq = 0.0;
  for (double v : proj) sq += v * v;
  const double nrm = std::sqrt(sq);
  if (!(nrm > kNormFloor)) throw DegenerateInput("encode_text: projection is the zero vector");
  for (double& v : proj) v /= nrm;
  return proj;
}

struct BatchSimilarity {
  Tensor similarity;  // row = text, column = video
  std::vector<StudentForwardTrace> traces;
  std::vector<std::vector<double>> text_embeddings;
};

inline BatchSimilarity batch_similarity(const StudentParams& params,
                                        std::span<const FrameFeatureSequence> videos,
                                        std::span<const TextFeatureInput> texts) {
  if (videos.size() != texts.size()) throw InvalidInput("batch_similarity: count mismatch");
  if (videos.size() < 2) throw InvalidInput("batch_similarity: need at least two pairs");
  BatchSimilarity out;
  out.traces = encode_videos(params, videos);
  for (const auto& t : texts) out.text_embeddings.push_back(encode_text(params, t));
  const std::size_t b = videos.size();
  out.similarity = Tensor(b, b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j)
      out.similarity(i, j) = std::clamp(dot(out.text_embeddings[i], out.traces[j].video_embedding),
                                        -1.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "TCKP", u32 version, u32 dims (d, d_t, m_max, L, d_ff, heads),
// then every parameter tensor in declared order as little-endian f32,
// finishing with the AFA temperature as a 1 x 1 tensor.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> checkpoint_bytes(const StudentParams& p) {
  BinaryWriter w;
  w.magic("TCKP");
  w.u32(kCheckpointVersion);
  const auto& c = p.config;
  for (std::size_t v : {c.dim, c.text_dim, c.max_frames, c.layers, c.ff_dim, c.heads})
    w.u32(static_cast<std::uint32_t>(v));
  for (const Tensor* t : p.trainable())
    for (double v : t->data) w.f32(static_cast<float>(v));
  w.f32(static_cast<float>(c.afa_temperature));
  return w.bytes();
}

inline StudentParams checkpoint_from_bytes(std::span<const std::uint8_t> bytes) {
  BinaryReader<CorpusIntegrity> r(bytes, "checkpoint");
  r.expect_magic("TCKP");
  if (r.u32() != kCheckpointVersion) r.fail("unsupported version");
  StudentConfig c;
  c.dim = r.u32();
  c.text_dim = r.u32();
  c.max_frames = r.u32();
  c.layers = r.u32();
  c.ff_dim = r.u32();
  c.heads = r.u32();
  try {
    c.validate();
  } catch (const InvalidConfig& e) {
    r.fail(e.what());
  }
  const std::uint64_t d = c.dim;
  const std::uint64_t expected = c.max_frames * d +
                                 c.layers * (4 * d * d + 4 * d + 2 * d * c.ff_dim) +
                                 (d * d + 2 * d + 1) + (c.text_dim * d + d) + 1 + 1;
  if (r.remaining() != expected * 4) r.fail("payload size does not match header dims");
  StudentParams p = init_student(c, 0);
  for (Tensor* t : p.trainable())
    for (double& v : t->data) v = r.f32();
  p.config.afa_temperature = r.f32();
  r.expect_end();
  if (!p.all_finite()) r.fail("non-finite parameter");
  if (!(p.config.afa_temperature > 0.0)) r.fail("non-positive afa temperature");
  return p;
}

inline void save_checkpoint(const std::filesystem::path& path, const StudentParams& p) {
  write_file_bytes(path, checkpoint_bytes(p));
}

inline StudentParams load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return checkpoint_from_bytes(bytes);
}

}  // namespace teachclip
