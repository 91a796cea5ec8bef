#pragma once

// Retrieval stage: a precomputed store of unit-norm video vectors, exact
// brute-force top-k by dot product, and recall metrics.
//
// Store file: "VFS1", u32 version, u32 count, u32 dim, u8 dtype (0 = f32),
// count*dim little-endian f32, then count u32-length-prefixed ids.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "teachclip/binary_io.hpp"
#include "teachclip/errors.hpp"
#include "teachclip/student.hpp"

namespace teachclip {

struct FeatureStore {
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::uint8_t kDtypeF32 = 0;

  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<float> vectors;  // count x dim

  std::size_t size() const noexcept { return ids.size(); }
  std::span<const float> vector(std::size_t i) const { return {vectors.data() + i * dim, dim}; }

  void add(const std::string& id, std::span<const double> embedding) {
    if (embedding.size() != dim) throw InvalidInput("feature store: dimension mismatch");
    ids.push_back(id);
    for (double v : embedding) vectors.push_back(static_cast<float>(v));
  }

  std::vector<std::uint8_t> to_bytes() const {
    BinaryWriter w;
    w.magic("VFS1");
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(ids.size()));
    w.u32(static_cast<std::uint32_t>(dim));
    w.u8(kDtypeF32);
    for (float v : vectors) w.f32(v);
    for (const auto& id : ids) w.string(id);
    return w.bytes();
  }

  static FeatureStore from_bytes(std::span<const std::uint8_t> bytes) {
    BinaryReader<CorpusIntegrity> r(bytes, "feature store");
    r.expect_magic("VFS1");
    if (r.u32() != kVersion) r.fail("unsupported version");
    FeatureStore s;
    const std::uint32_t count = r.u32();
    s.dim = r.u32();
    if (r.u8() != kDtypeF32) r.fail("unsupported dtype");
    if (r.remaining() < static_cast<std::uint64_t>(count) * s.dim * 4) r.fail("truncated payload");
    s.vectors.resize(static_cast<std::size_t>(count) * s.dim);
    for (float& v : s.vectors) v = r.f32();
    std::unordered_set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
      s.ids.push_back(r.string());
      if (!seen.insert(s.ids.back()).second) r.fail("duplicate id " + s.ids.back());
    }
    r.expect_end();
    for (std::size_t i = 0; i < count; ++i) {
      double sq = 0.0;
      for (float v : s.vector(i)) {
        if (!std::isfinite(v)) r.fail("non-finite entry");
        sq += static_cast<double>(v) * v;
      }
      if (std::abs(std::sqrt(sq) - 1.0) > 1e-5) r.fail("vector " + s.ids[i] + " is not unit norm");
    }
    return s;
  }

  void save(const std::filesystem::path& path) const { write_file_bytes(path, to_bytes()); }

  static FeatureStore load(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return from_bytes(bytes);
  }
};

/// Encodes every video once; frame features are not retained.
inline FeatureStore build_store(const StudentParams& params, std::span<const FrameFeatureSequence> videos) {
  FeatureStore store;
  store.dim = params.config.dim;
  std::unordered_set<std::string> seen;
  for (const auto& v : videos)
    if (!seen.insert(v.video_id).second) throw InvalidCorpus("build_store: duplicate video id " + v.video_id);
  const auto traces = encode_videos(params, videos);
  for (std::size_t i = 0; i < videos.size(); ++i) store.add(videos[i].video_id, traces[i].video_embedding);
  return store;
}

struct RankedList {
  std::string query_id;
  std::vector<std::string> ids;
  std::vector<std::size_t> indices;  // insertion index in the store
  std::vector<double> scores;
  bool truncated = false;        // k exceeded the store size
  std::size_t dot_products = 0;  // one per stored video
};

namespace detail {

inline double store_dot(const FeatureStore& store, std::size_t i, std::span<const double> q) {
  double s = 0.0;
  const auto v = store.vector(i);
  for (std::size_t c = 0; c < v.size(); ++c) s += static_cast<double>(v[c]) * q[c];
  return s;
}

struct Scored {
  double score;
  std::size_t index;
};

// Descending score, then ascending insertion index.
inline bool ranks_before(const Scored& a, const Scored& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.index < b.index;
}

}  // namespace detail

/// Exact top-k. `shards` splits the store into contiguous partitions whose
/// partial top-k lists are merged; the result does not depend on it.
inline RankedList search(const FeatureStore& store, std::span<const double> query, std::size_t k,
                         std::size_t shards = 1, std::string query_id = {}) {
  if (k < 1) throw InvalidInput("search: k must be >= 1");
  if (store.size() == 0) throw InvalidInput("search: store is empty");
  if (query.size() != store.dim) throw InvalidInput("search: query dimension mismatch");
  shards = std::clamp<std::size_t>(shards, 1, store.size());

  RankedList out;
  out.query_id = std::move(query_id);
  out.truncated = k > store.size();
  const std::size_t keep = std::min(k, store.size());

  std::vector<detail::Scored> merged;
  const std::size_t per = (store.size() + shards - 1) / shards;
  for (std::size_t begin = 0; begin < store.size(); begin += per) {
    const std::size_t end = std::min(store.size(), begin + per);
    std::vector<detail::Scored> part;
    part.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) part.push_back({detail::store_dot(store, i, query), i});
    out.dot_products += end - begin;
    const std::size_t top = std::min(keep, part.size());
    std::partial_sort(part.begin(), part.begin() + top, part.end(), detail::ranks_before);
    merged.insert(merged.end(), part.begin(), part.begin() + top);
  }
  std::sort(merged.begin(), merged.end(), detail::ranks_before);
  merged.resize(keep);
  for (const auto& s : merged) {
    out.ids.push_back(store.ids[s.index]);
    out.indices.push_back(s.index);
    out.scores.push_back(s.score);
  }
  return out;
}

struct RetrievalReport {
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
  double sum_r = 0.0;  // 100 * (r1 + r5 + r10), range [0, 300]
  std::size_t query_count = 0;
  double median_rank = 0.0;
  double mean_rank = 0.0;
};

/// Metrics from 1-based ranks of each query's relevant video.
inline RetrievalReport report_from_ranks(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw InvalidEval("evaluate: no queries");
  RetrievalReport r;
  r.query_count = ranks.size();
  std::size_t hit1 = 0, hit5 = 0, hit10 = 0;
  double total = 0.0;
  for (std::size_t rank : ranks) {
    if (rank < 1) throw InvalidEval("evaluate: ranks are 1-based");
    hit1 += rank <= 1;
    hit5 += rank <= 5;
    hit10 += rank <= 10;
    total += static_cast<double>(rank);
  }
  const double n = static_cast<double>(ranks.size());
  r.r1 = hit1 / n;
  r.r5 = hit5 / n;
  r.r10 = hit10 / n;
  r.sum_r = 100.0 * (r.r1 + r.r5 + r.r10);
  r.mean_rank = total / n;
  std::vector<std::size_t> sorted(ranks.begin(), ranks.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  r.median_rank = sorted.size() % 2 ? static_cast<double>(sorted[mid])
                                    : 0.5 * static_cast<double>(sorted[mid - 1] + sorted[mid]);
  return r;
}

struct EvalQuery {
  std::string query_id;
  std::vector<double> embedding;
  std::string relevant_video_id;
};

/// 1-based rank of `relevant` under the store's ordering for `query`.
inline std::size_t rank_of(const FeatureStore& store, std::span<const double> query, std::size_t relevant) {
  const detail::Scored target{detail::store_dot(store, relevant, query), relevant};
  std::size_t rank = 1;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (i == relevant) continue;
    if (detail::ranks_before({detail::store_dot(store, i, query), i}, target)) ++rank;
  }
  return rank;
}

inline RetrievalReport evaluate(const FeatureStore& store, std::span<const EvalQuery> queries) {
  if (store.size() == 0) throw InvalidEval("evaluate: store is empty");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < store.size(); ++i) index.emplace(store.ids[i], i);
  std::vector<std::size_t> ranks;
  ranks.reserve(queries.size());
  for (const auto& q : queries) {
    auto it = index.find(q.relevant_video_id);
    if (q.relevant_video_id.empty() || it == index.end()) {
      throw InvalidEval("evaluate: query " + q.query_id + " has no relevant video in the store");
    }
    if (q.embedding.size() != store.dim) throw InvalidEval("evaluate: query dimension mismatch");
    ranks.push_back(rank_of(store, q.embedding, it->second));
  }
  return report_from_ranks(ranks);
}

/// Queries for a paired split: text i is relevant to video i.
inline std::vector<EvalQuery> paired_queries(const StudentParams& params,
                                             std::span<const TextFeatureInput> texts,
                                             std::span<const FrameFeatureSequence> videos) {
  if (texts.size() != videos.size()) throw InvalidEval("evaluate: text/video count mismatch");
  std::vector<EvalQuery> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i)
    out.push_back({texts[i].text_id, encode_text(params, texts[i]), videos[i].video_id});
  return out;
}

inline nlohmann::ordered_json report_to_json(const RetrievalReport& r) {
  return {{"r1", r.r1},       {"r5", r.r5},
          {"r10", r.r10},     {"sum_r", r.sum_r},
          {"query_count", r.query_count}, {"median_rank", r.median_rank},
          {"mean_rank", r.mean_rank}};
}

inline void save_report(const std::filesystem::path& path, const RetrievalReport& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << report_to_json(r).dump(2) << '\n';
}

}  // namespace teachclip
