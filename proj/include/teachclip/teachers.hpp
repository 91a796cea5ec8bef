#pragma once

// Teachers supply two signals per batch: a coarse text-video score matrix
// (row = text, column = video) and, for each matched pair, a softmax-adjusted
// relevance distribution over the video's frames.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "teachclip/binary_io.hpp"
#include "teachclip/core_math.hpp"
#include "teachclip/errors.hpp"
#include "teachclip/tensor.hpp"

namespace teachclip {

enum class TeacherKind { kXPoolLike, kOracle, kMeanPool };

inline const char* teacher_name(TeacherKind k) {
  switch (k) {
    case TeacherKind::kXPoolLike: return "xpool";
    case TeacherKind::kOracle: return "oracle";
    case TeacherKind::kMeanPool: return "meanpool";
  }
  return "?";
}

inline TeacherKind parse_teacher(const std::string& s) {
  if (s == "xpool") return TeacherKind::kXPoolLike;
  if (s == "oracle") return TeacherKind::kOracle;
  if (s == "meanpool") return TeacherKind::kMeanPool;
  throw InvalidConfig("unknown teacher '" + s + "' (expected xpool|oracle|meanpool)");
}

inline constexpr double kDefaultTeacherTemperature = 0.1;

struct TeacherSignals {
  Tensor coarse;  // b x b, y_c
  Tensor fine;    // b x m, y_f of matched pairs
};

/// Teacher output for a single (text, video) pair.
struct PairSignal {
  double coarse = 0.0;
  std::vector<double> fine;  // over the video's frames
};

// ---------------------------------------------------------------------------
// X-Pool-like analytic matcher: per-frame cosine to the text, softmax into
// frame weights, weighted fusion of unit frames, cosine of the fused vector
// to the text.
// ---------------------------------------------------------------------------

inline PairSignal xpool_pair(const Tensor& frames, std::span<const double> text, double temperature) {
  if (frames.cols != text.size()) throw InvalidInput("xpool_teacher: frame/text dim mismatch");
  std::vector<double> sims(frames.rows);
  for (std::size_t k = 0; k < frames.rows; ++k) sims[k] = cosine(frames.row(k), text);
  PairSignal out;
  out.fine = softmax(sims, temperature);
  // Frames are unit-normalized before fusion so per-frame rescaling leaves
  // the coarse score unchanged too.
  std::vector<double> fused(frames.cols, 0.0);
  for (std::size_t k = 0; k < frames.rows; ++k) {
    const double n = l2_norm(frames.row(k));
    if (!(n > 0.0)) throw DegenerateInput("xpool_teacher: zero frame vector");
    for (std::size_t c = 0; c < frames.cols; ++c) fused[c] += out.fine[k] * frames(k, c) / n;
  }
  out.coarse = cosine(fused, text);
  return out;
}

inline PairSignal meanpool_pair(const Tensor& frames, std::span<const double> text) {
  if (frames.cols != text.size()) throw InvalidInput("meanpool_teacher: frame/text dim mismatch");
  if (frames.rows == 0) throw InvalidInput("meanpool_teacher: empty video");
  std::vector<double> mean(frames.cols, 0.0);
  for (std::size_t k = 0; k < frames.rows; ++k)
    for (std::size_t c = 0; c < frames.cols; ++c) mean[c] += frames(k, c);
  for (double& v : mean) v /= static_cast<double>(frames.rows);
  PairSignal out;
  out.coarse = cosine(mean, text);
  out.fine.assign(frames.rows, 1.0 / static_cast<double>(frames.rows));
  return out;
}

/// Ground truth planted by the synthetic generator for one pair.
struct PlantedTruth {
  std::uint32_t topic = 0;
  std::vector<double> topic_vector;
  std::vector<double> relevance;  // over the video's frames
};

/// Planted affinity: cosine of the two pairs' topics. Fine relevance is the
/// video's planted relevance when the topics agree, uniform otherwise.
/// Entries are clamped below at kLogClamp.
inline PairSignal oracle_pair(const PlantedTruth& text_truth, const PlantedTruth& video_truth) {
  if (text_truth.topic_vector.empty() || video_truth.topic_vector.empty() ||
      video_truth.relevance.empty()) {
    throw UnsupportedCorpus("oracle_teacher: corpus carries no planted ground truth");
  }
  PairSignal out;
  out.coarse = cosine(text_truth.topic_vector, video_truth.topic_vector);
  const std::size_t m = video_truth.relevance.size();
  if (text_truth.topic == video_truth.topic) {
    double total = 0.0;
    for (double v : video_truth.relevance) total += v;
    if (!(total > 0.0)) throw UnsupportedCorpus("oracle_teacher: relevance has no mass");
    out.fine.resize(m);
    for (std::size_t k = 0; k < m; ++k)
      out.fine[k] = std::max(video_truth.relevance[k] / total, kLogClamp);
  } else {
    out.fine.assign(m, 1.0 / static_cast<double>(m));
  }
  return out;
}

namespace detail {

template <class PairFn>
TeacherSignals assemble_signals(std::size_t b, std::size_t m, PairFn&& pair) {
  TeacherSignals s{Tensor(b, b), Tensor(b, m)};
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      PairSignal p = pair(i, j);
      s.coarse(i, j) = p.coarse;
      if (i == j) {
        if (p.fine.size() != m) throw InvalidInput("teacher: frame counts differ within batch");
        std::copy(p.fine.begin(), p.fine.end(), s.fine.row(i).begin());
      }
    }
  }
  return s;
}

inline void require_batch(std::span<const Tensor> frame_bank, std::size_t texts) {
  if (frame_bank.empty()) throw InvalidInput("teacher: empty batch");
  if (frame_bank.size() != texts) throw InvalidInput("teacher: video/text count mismatch");
}

}  // namespace detail

/// `frame_bank[j]` holds video j's m x d frames; `text_bank` row i is text i.
inline TeacherSignals xpool_teacher(std::span<const Tensor> frame_bank, const Tensor& text_bank,
                                    double temperature = kDefaultTeacherTemperature) {
  detail::require_batch(frame_bank, text_bank.rows);
  return detail::assemble_signals(text_bank.rows, frame_bank.front().rows, [&](auto i, auto j) {
    return xpool_pair(frame_bank[j], text_bank.row(i), temperature);
  });
}

inline TeacherSignals meanpool_teacher(std::span<const Tensor> frame_bank, const Tensor& text_bank) {
  detail::require_batch(frame_bank, text_bank.rows);
  return detail::assemble_signals(text_bank.rows, frame_bank.front().rows, [&](auto i, auto j) {
    return meanpool_pair(frame_bank[j], text_bank.row(i));
  });
}

/// `truths[i]` describes pair i (text i and video i share it).
inline TeacherSignals oracle_teacher(std::span<const PlantedTruth> truths) {
  if (truths.empty()) throw InvalidInput("oracle_teacher: empty batch");
  if (truths.front().relevance.empty()) {
    throw UnsupportedCorpus("oracle_teacher: corpus carries no planted ground truth");
  }
  return detail::assemble_signals(truths.size(), truths.front().relevance.size(),
                                  [&](auto i, auto j) { return oracle_pair(truths[i], truths[j]); });
}

// ---------------------------------------------------------------------------
// Teacher cache. File layout: "TSIG", u32 version, u32 m, u32 count, then per
// record: u32-length video id, u32-length text id, f64 coarse, m x f64 fine.
// ---------------------------------------------------------------------------

class TeacherCache {
 public:
  static constexpr std::uint32_t kVersion = 1;

  TeacherCache() = default;
  explicit TeacherCache(std::size_t frames) : frames_(frames) {}

  std::size_t frames() const noexcept { return frames_; }
  std::size_t size() const noexcept { return records_.size(); }

  void put(const std::string& video_id, const std::string& text_id, PairSignal signal) {
    if (frames_ == 0) frames_ = signal.fine.size();
    if (signal.fine.size() != frames_) throw InvalidInput("teacher cache: frame count mismatch");
    records_[{video_id, text_id}] = std::move(signal);
  }

  const PairSignal* find(const std::string& video_id, const std::string& text_id) const {
    auto it = records_.find({video_id, text_id});
    return it == records_.end() ? nullptr : &it->second;
  }

  /// Batch signals for pairs (video_ids[i], text_ids[i]); throws on a miss.
  TeacherSignals assemble(std::span<const std::string> video_ids,
                          std::span<const std::string> text_ids) const {
    if (video_ids.size() != text_ids.size()) throw InvalidInput("teacher cache: count mismatch");
    return detail::assemble_signals(text_ids.size(), frames_, [&](auto i, auto j) {
      const PairSignal* p = find(video_ids[j], text_ids[i]);
      if (!p) throw InvalidInput("teacher cache: no record for (" + video_ids[j] + ", " + text_ids[i] + ")");
      return *p;
    });
  }

  std::vector<std::uint8_t> to_bytes() const {
    BinaryWriter w;
    w.magic("TSIG");
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(frames_));
    w.u32(static_cast<std::uint32_t>(records_.size()));
    for (const auto& [key, rec] : records_) {
      w.string(key.first);
      w.string(key.second);
      w.f64(rec.coarse);
      for (double v : rec.fine) w.f64(v);
    }
    return w.bytes();
  }

  static TeacherCache from_bytes(std::span<const std::uint8_t> bytes) {
    BinaryReader<CorpusIntegrity> r(bytes, "teacher cache");
    r.expect_magic("TSIG");
    if (r.u32() != kVersion) r.fail("unsupported version");
    TeacherCache cache(r.u32());
    const std::uint32_t count = r.u32();
    for (std::uint32_t n = 0; n < count; ++n) {
      std::string vid = r.string();
      std::string tid = r.string();
      PairSignal p;
      p.coarse = r.f64();
      p.fine.resize(cache.frames_);
      for (double& v : p.fine) v = r.f64();
      if (!std::isfinite(p.coarse)) r.fail("non-finite coarse score");
      cache.records_[{std::move(vid), std::move(tid)}] = std::move(p);
    }
    r.expect_end();
    return cache;
  }

  void save(const std::filesystem::path& path) const { write_file_bytes(path, to_bytes()); }

  static TeacherCache load(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return from_bytes(bytes);
  }

 private:
  std::size_t frames_ = 0;
  std::map<std::pair<std::string, std::string>, PairSignal> records_;
};

}  // namespace teachclip
