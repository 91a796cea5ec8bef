#pragma once

// Seeded video-text corpora with planted latent topics.
//
// Each pair draws a topic. `r` of its `m` frames are the topic vector plus
// gaussian noise, the rest are other topics plus noise. The text is the topic
// pushed through a fixed random d -> d_t map, plus noise. Ground-truth frame
// relevance is softmax(cos(frame, topic) / relevance_temperature).
//
// On-disk layout of a corpus directory:
//   manifest.json
//   frames.bin     "VFRM" u32 version, count, m, d;   count*m*d f32
//   texts.bin      "VTXT" u32 version, count, d_t;    count*d_t f32
//   relevance.bin  "VREL" u32 version, count, m;      count*m f32
//   topics.bin     "VTOP" u32 version, count, n_topics, d;
//                  count u32 topic ids, n_topics*d f32 topic vectors
// Pairs are stored train, then val, then test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "teachclip/binary_io.hpp"
#include "teachclip/core_math.hpp"
#include "teachclip/errors.hpp"
#include "teachclip/student.hpp"
#include "teachclip/teachers.hpp"

namespace teachclip {

inline constexpr std::uint32_t kCorpusFormatVersion = 1;

struct CorpusManifest {
  std::size_t n_train = 2000;
  std::size_t n_val = 200;
  std::size_t n_test = 500;
  std::size_t frames = 12;        // m
  std::size_t dim = 64;           // d
  std::size_t text_dim = 48;      // d_t
  std::size_t n_topics = 100;
  std::size_t relevant_frames = 3;  // r
  double noise_std = 0.1;
  double relevance_temperature = 0.05;
  std::uint64_t seed = 0;
  std::uint32_t format_version = kCorpusFormatVersion;

  std::size_t total() const noexcept { return n_train + n_val + n_test; }

  void validate() const {
    if (n_train < 1 || n_val < 1 || n_test < 1) throw InvalidManifest("manifest: split counts must be >= 1");
    if (frames < 1 || dim < 1 || text_dim < 1) throw InvalidManifest("manifest: dimensions must be >= 1");
    if (n_topics < 2) throw InvalidManifest("manifest: need at least two topics");
    if (relevant_frames < 1 || relevant_frames > frames) {
      throw InvalidManifest("manifest: relevant frames must lie in [1, m]");
    }
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw InvalidManifest("manifest: noise_std must be >= 0");
    if (!(relevance_temperature > 0.0)) throw InvalidManifest("manifest: relevance temperature must be > 0");
    if (format_version != kCorpusFormatVersion) throw InvalidManifest("manifest: unsupported format version");
  }

  friend bool operator==(const CorpusManifest&, const CorpusManifest&) = default;
};

inline nlohmann::json manifest_to_json(const CorpusManifest& m) {
  return {{"n_train", m.n_train},
          {"n_val", m.n_val},
          {"n_test", m.n_test},
          {"m", m.frames},
          {"d", m.dim},
          {"d_t", m.text_dim},
          {"n_topics", m.n_topics},
          {"relevant_frames_per_video", m.relevant_frames},
          {"noise_std", m.noise_std},
          {"relevance_temperature", m.relevance_temperature},
          {"seed", m.seed},
          {"format_version", m.format_version}};
}

inline CorpusManifest manifest_from_json(const nlohmann::json& j) {
  CorpusManifest m;
  try {
    m.n_train = j.at("n_train").get<std::size_t>();
    m.n_val = j.at("n_val").get<std::size_t>();
    m.n_test = j.at("n_test").get<std::size_t>();
    m.frames = j.at("m").get<std::size_t>();
    m.dim = j.at("d").get<std::size_t>();
    m.text_dim = j.at("d_t").get<std::size_t>();
    m.n_topics = j.at("n_topics").get<std::size_t>();
    m.relevant_frames = j.at("relevant_frames_per_video").get<std::size_t>();
    m.noise_std = j.at("noise_std").get<double>();
    m.relevance_temperature = j.value("relevance_temperature", 0.05);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.format_version = j.at("format_version").get<std::uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CorpusIntegrity(std::string("manifest: ") + e.what());
  }
  return m;
}

enum class Split { kTrain, kVal, kTest };

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw InvalidConfig("unknown split '" + s + "' (expected train|val|test)");
}

/// A contiguous slice of the corpus with its planted ground truth.
struct CorpusSplit {
  std::vector<FrameFeatureSequence> videos;
  std::vector<TextFeatureInput> texts;
  std::vector<PlantedTruth> truths;

  std::size_t size() const noexcept { return videos.size(); }
};

struct Corpus {
  CorpusManifest manifest;
  std::vector<FrameFeatureSequence> videos;
  std::vector<TextFeatureInput> texts;
  std::vector<std::uint32_t> topic_ids;
  std::vector<std::vector<float>> relevance;
  Tensor topics;  // n_topics x d, stored values (f32-representable)

  CorpusSplit split(Split which) const {
    std::size_t begin = 0, count = manifest.n_train;
    if (which == Split::kVal) {
      begin = manifest.n_train;
      count = manifest.n_val;
    } else if (which == Split::kTest) {
      begin = manifest.n_train + manifest.n_val;
      count = manifest.n_test;
    }
    CorpusSplit out;
    for (std::size_t i = begin; i < begin + count; ++i) {
      out.videos.push_back(videos[i]);
      out.texts.push_back(texts[i]);
      PlantedTruth t;
      t.topic = topic_ids[i];
      const auto row = topics.row(topic_ids[i]);
      t.topic_vector.assign(row.begin(), row.end());
      t.relevance.assign(relevance[i].begin(), relevance[i].end());
      out.truths.push_back(std::move(t));
    }
    return out;
  }
};

inline std::string video_id_for(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "video-%06zu", i);
  return buf;
}

inline std::string text_id_for(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "text-%06zu", i);
  return buf;
}

/// Deterministic in-memory generation for `manifest.seed`.
inline Corpus generate_corpus(const CorpusManifest& manifest) {
  manifest.validate();
  const std::size_t m = manifest.frames, d = manifest.dim, dt = manifest.text_dim;
  std::mt19937_64 rng(manifest.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<std::uint32_t> pick_topic(0, static_cast<std::uint32_t>(manifest.n_topics - 1));

  Corpus c;
  c.manifest = manifest;
  c.topics = Tensor(manifest.n_topics, d);
  for (std::size_t t = 0; t < manifest.n_topics; ++t) {
    double nrm = 0.0;
    while (!(nrm > 1e-6)) {
      nrm = 0.0;
      for (double& v : c.topics.row(t)) {
        v = gauss(rng);
        nrm += v * v;
      }
      nrm = std::sqrt(nrm);
    }
    for (double& v : c.topics.row(t)) v = static_cast<float>(v / nrm);
  }
  Tensor text_map(d, dt);
  const double map_std = 1.0 / std::sqrt(static_cast<double>(dt));
  for (double& v : text_map.data) v = gauss(rng) * map_std;

  const bool enforce_mass = manifest.noise_std <= 0.05;
  constexpr int kMaxAttempts = 100;
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < manifest.total(); ++i) {
    const std::uint32_t topic = pick_topic(rng);
    std::vector<float> frames(m * d);
    std::vector<float> relevance(m);
    for (int attempt = 0;; ++attempt) {
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t k = 0; k < manifest.relevant_frames; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, m - 1);
        std::swap(order[k], order[pick(rng)]);
      }
      std::vector<bool> relevant(m, false);
      for (std::size_t k = 0; k < manifest.relevant_frames; ++k) relevant[order[k]] = true;

      std::vector<double> sims(m);
      for (std::size_t k = 0; k < m; ++k) {
        std::uint32_t source = topic;
        if (!relevant[k]) {
          do source = pick_topic(rng);
          while (source == topic);
        }
        std::vector<double> frame(d);
        for (std::size_t c2 = 0; c2 < d; ++c2) {
          const double v = c.topics(source, c2) + manifest.noise_std * gauss(rng);
          frames[k * d + c2] = static_cast<float>(v);
          frame[c2] = frames[k * d + c2];
        }
        double nrm = l2_norm(frame);
        sims[k] = nrm > 0.0 ? std::clamp(dot(frame, c.topics.row(topic)) / nrm, -1.0, 1.0) : 0.0;
      }
      const auto rel = softmax(sims, manifest.relevance_temperature);
      double planted_mass = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        relevance[k] = static_cast<float>(rel[k]);
        if (relevant[k]) planted_mass += rel[k];
      }
      if (!enforce_mass || planted_mass >= 0.9) break;
      if (attempt + 1 >= kMaxAttempts) {
        throw InvalidManifest("generate: cannot plant relevance mass >= 0.9 with these settings");
      }
    }

    std::vector<float> text(dt);
    for (std::size_t j = 0; j < dt; ++j) {
      double v = 0.0;
      for (std::size_t k = 0; k < d; ++k) v += c.topics(topic, k) * text_map(k, j);
      text[j] = static_cast<float>(v + manifest.noise_std * gauss(rng));
    }

    c.videos.push_back({video_id_for(i), m, d, std::move(frames)});
    c.texts.push_back({text_id_for(i), std::move(text)});
    c.topic_ids.push_back(topic);
    c.relevance.push_back(std::move(relevance));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

struct CorpusFiles {
  std::vector<std::uint8_t> frames, texts, relevance, topics;
  std::string manifest;
};

inline CorpusFiles corpus_files(const Corpus& c) {
  const auto& mf = c.manifest;
  const auto n = static_cast<std::uint32_t>(c.videos.size());
  CorpusFiles out;
  {
    BinaryWriter w;
    w.magic("VFRM");
    w.u32(kCorpusFormatVersion);
    w.u32(n);
    w.u32(static_cast<std::uint32_t>(mf.frames));
    w.u32(static_cast<std::uint32_t>(mf.dim));
    for (const auto& v : c.videos)
      for (float x : v.frames) w.f32(x);
    out.frames = w.bytes();
  }
  {
    BinaryWriter w;
    w.magic("VTXT");
    w.u32(kCorpusFormatVersion);
    w.u32(n);
    w.u32(static_cast<std::uint32_t>(mf.text_dim));
    for (const auto& t : c.texts)
      for (float x : t.feature) w.f32(x);
    out.texts = w.bytes();
  }
  {
    BinaryWriter w;
    w.magic("VREL");
    w.u32(kCorpusFormatVersion);
    w.u32(n);
    w.u32(static_cast<std::uint32_t>(mf.frames));
    for (const auto& r : c.relevance)
      for (float x : r) w.f32(x);
    out.relevance = w.bytes();
  }
  {
    BinaryWriter w;
    w.magic("VTOP");
    w.u32(kCorpusFormatVersion);
    w.u32(n);
    w.u32(static_cast<std::uint32_t>(mf.n_topics));
    w.u32(static_cast<std::uint32_t>(mf.dim));
    for (std::uint32_t t : c.topic_ids) w.u32(t);
    for (double x : c.topics.data) w.f32(static_cast<float>(x));
    out.topics = w.bytes();
  }
  out.manifest = manifest_to_json(mf).dump(2) + "\n";
  return out;
}

inline void write_corpus(const std::filesystem::path& dir, const Corpus& c) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create corpus directory " + dir.string() + ": " + ec.message());
  const CorpusFiles f = corpus_files(c);
  write_file_bytes(dir / "frames.bin", f.frames);
  write_file_bytes(dir / "texts.bin", f.texts);
  write_file_bytes(dir / "relevance.bin", f.relevance);
  write_file_bytes(dir / "topics.bin", f.topics);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << f.manifest;
}

inline Corpus generate(const CorpusManifest& manifest, const std::filesystem::path& dir) {
  Corpus c = generate_corpus(manifest);
  write_corpus(dir, c);
  return c;
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw CorpusIntegrity("corpus: missing manifest.json in " + dir.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CorpusIntegrity(std::string("manifest: ") + e.what());
    }
    c.manifest = manifest_from_json(j);
  }
  const auto& mf = c.manifest;
  try {
    mf.validate();
  } catch (const InvalidManifest& e) {
    throw CorpusIntegrity(e.what());
  }
  const std::size_t n = mf.total(), m = mf.frames, d = mf.dim, dt = mf.text_dim;

  auto read = [&](const char* name) {
    try {
      return read_file_bytes(dir / name);
    } catch (const IoError& e) {
      throw CorpusIntegrity(e.what());
    }
  };
  auto check_header = [&](auto& r, std::initializer_list<std::size_t> expected) {
    if (r.u32() != kCorpusFormatVersion) r.fail("unsupported version");
    for (std::size_t e : expected)
      if (r.u32() != e) r.fail("header does not match manifest");
  };
  auto finite = [](auto& r, float v) {
    if (!std::isfinite(v)) r.fail("non-finite value");
    return v;
  };

  {
    const auto bytes = read("frames.bin");
    BinaryReader<CorpusIntegrity> r(bytes, "frames.bin");
    r.expect_magic("VFRM");
    check_header(r, {n, m, d});
    for (std::size_t i = 0; i < n; ++i) {
      FrameFeatureSequence v{video_id_for(i), m, d, std::vector<float>(m * d)};
      for (float& x : v.frames) x = finite(r, r.f32());
      c.videos.push_back(std::move(v));
    }
    r.expect_end();
  }
  {
    const auto bytes = read("texts.bin");
    BinaryReader<CorpusIntegrity> r(bytes, "texts.bin");
    r.expect_magic("VTXT");
    check_header(r, {n, dt});
    for (std::size_t i = 0; i < n; ++i) {
      TextFeatureInput t{text_id_for(i), std::vector<float>(dt)};
      for (float& x : t.feature) x = finite(r, r.f32());
      c.texts.push_back(std::move(t));
    }
    r.expect_end();
  }
  {
    const auto bytes = read("relevance.bin");
    BinaryReader<CorpusIntegrity> r(bytes, "relevance.bin");
    r.expect_magic("VREL");
    check_header(r, {n, m});
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> rel(m);
      double total = 0.0;
      for (float& x : rel) {
        x = finite(r, r.f32());
        if (x < 0.0f) r.fail("negative relevance");
        total += x;
      }
      if (std::abs(total - 1.0) > 1e-4) r.fail("relevance row does not sum to 1");
      c.relevance.push_back(std::move(rel));
    }
    r.expect_end();
  }
  {
    const auto bytes = read("topics.bin");
    BinaryReader<CorpusIntegrity> r(bytes, "topics.bin");
    r.expect_magic("VTOP");
    check_header(r, {n, mf.n_topics, d});
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t t = r.u32();
      if (t >= mf.n_topics) r.fail("topic id out of range");
      c.topic_ids.push_back(t);
    }
    c.topics = Tensor(mf.n_topics, d);
    for (double& x : c.topics.data) x = finite(r, r.f32());
    r.expect_end();
  }
  return c;
}

inline CorpusSplit load_split(const std::filesystem::path& dir, Split which) {
  return load_corpus(dir).split(which);
}

}  // namespace teachclip
