#pragma once

// Analytic retrieval-stage cost per video-text pair: FLOPs of the similarity
// computation and bytes of precomputed features per video.
//
// FLOP convention: dot(n) = 2n - 1; matmul(a x b . b x c) = a*c*(2b - 1);
// softmax(n) = 5n; weighted_sum(dim, n) = n*dim + (n - 1)*dim.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "teachclip/errors.hpp"

namespace teachclip {

/// Affine-plus-product expression over the symbols m (frames), d (feature
/// dim) and words (text tokens): c + cd*d + cm*m + cw*words + cmw*m*words.
struct CostExpr {
  std::int64_t constant = 0;
  std::int64_t d = 0;
  std::int64_t m = 0;
  std::int64_t words = 0;
  std::int64_t m_words = 0;

  static CostExpr lit(std::int64_t v) { return {v}; }
  static CostExpr dim() { return {0, 1}; }
  static CostExpr frames() { return {0, 0, 1}; }

  std::int64_t eval(std::int64_t m_val, std::int64_t d_val, std::int64_t words_val) const {
    return constant + d * d_val + m * m_val + words * words_val + m_words * m_val * words_val;
  }

  friend CostExpr operator+(CostExpr a, const CostExpr& b) {
    a.constant += b.constant;
    a.d += b.d;
    a.m += b.m;
    a.words += b.words;
    a.m_words += b.m_words;
    return a;
  }

  bool operator==(const CostExpr&) const = default;
};

/// Parses "1 + m + words + words*m", "d", "3", "2*m". Products may combine an
/// integer with at most one of d/m, or m with words.
inline CostExpr parse_cost_expr(std::string_view text) {
  auto fail = [&](const std::string& why) -> CostExpr {
    throw InvalidSpec("cost expression '" + std::string(text) + "': " + why);
  };
  CostExpr out;
  std::string s;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
  if (s.empty()) return fail("empty");
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t end = std::min(s.find('+', pos), s.size());
    const std::string term = s.substr(pos, end - pos);
    if (term.empty()) return fail("empty term");
    std::int64_t coef = 1;
    int nm = 0, nd = 0, nw = 0;
    std::size_t f = 0;
    while (f <= term.size()) {
      const std::size_t fe = std::min(term.find('*', f), term.size());
      const std::string factor = term.substr(f, fe - f);
      if (factor == "m") {
        ++nm;
      } else if (factor == "d") {
        ++nd;
      } else if (factor == "words") {
        ++nw;
      } else if (!factor.empty() && std::all_of(factor.begin(), factor.end(), ::isdigit)) {
        coef *= std::stoll(factor);
      } else {
        return fail("unknown symbol '" + factor + "'");
      }
      f = fe + 1;
    }
    if (nm > 1 || nd > 1 || nw > 1 || (nd && (nm || nw))) return fail("unsupported product");
    if (nm && nw) out.m_words += coef;
    else if (nm) out.m += coef;
    else if (nw) out.words += coef;
    else if (nd) out.d += coef;
    else out.constant += coef;
    pos = end + 1;
  }
  return out;
}

enum class PrimitiveKind { kDot, kMatMul, kSoftmax, kWeightedSum };

inline const char* primitive_name(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::kDot: return "dot";
    case PrimitiveKind::kMatMul: return "matmul";
    case PrimitiveKind::kSoftmax: return "softmax";
    case PrimitiveKind::kWeightedSum: return "weighted_sum";
  }
  return "?";
}

inline PrimitiveKind parse_primitive(const std::string& s) {
  if (s == "dot") return PrimitiveKind::kDot;
  if (s == "matmul") return PrimitiveKind::kMatMul;
  if (s == "softmax") return PrimitiveKind::kSoftmax;
  if (s == "weighted_sum") return PrimitiveKind::kWeightedSum;
  throw InvalidSpec("unknown primitive '" + s + "'");
}

/// dims: dot {n}; matmul {a, b, c}; softmax {n}; weighted_sum {dim, n}.
struct CostPrimitive {
  PrimitiveKind kind = PrimitiveKind::kDot;
  std::vector<CostExpr> dims;
  CostExpr count = CostExpr::lit(1);
};

struct StoredVectors {
  CostExpr count;
  CostExpr dim;
};

struct MethodCostSpec {
  std::string name;
  std::vector<CostPrimitive> primitives;
  std::vector<StoredVectors> stored;
};

inline constexpr std::int64_t kDefaultWords = 32;

inline std::size_t primitive_arity(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::kDot: return 1;
    case PrimitiveKind::kMatMul: return 3;
    case PrimitiveKind::kSoftmax: return 1;
    case PrimitiveKind::kWeightedSum: return 2;
  }
  throw InvalidSpec("unknown primitive kind");
}

/// FLOPs of a single primitive instance with concrete dims.
inline std::int64_t primitive_flops(PrimitiveKind kind, std::span<const std::int64_t> dims) {
  if (dims.size() != primitive_arity(kind)) throw InvalidSpec(std::string("wrong arity for ") + primitive_name(kind));
  for (auto v : dims)
    if (v < 1) throw InvalidSpec(std::string("non-positive dim for ") + primitive_name(kind));
  switch (kind) {
    case PrimitiveKind::kDot: return 2 * dims[0] - 1;
    case PrimitiveKind::kMatMul: return dims[0] * dims[2] * (2 * dims[1] - 1);
    case PrimitiveKind::kSoftmax: return 5 * dims[0];
    case PrimitiveKind::kWeightedSum: return dims[1] * dims[0] + (dims[1] - 1) * dims[0];
  }
  throw InvalidSpec("unknown primitive kind");
}

inline void require_cost_args(std::int64_t m, std::int64_t d) {
  if (m < 1 || d < 1) throw InvalidInput("cost model: m and d must be >= 1");
}

inline std::int64_t flops(const MethodCostSpec& spec, std::int64_t m, std::int64_t d,
                          std::int64_t words = kDefaultWords) {
  require_cost_args(m, d);
  std::int64_t total = 0;
  for (const auto& p : spec.primitives) {
    std::vector<std::int64_t> dims;
    for (const auto& e : p.dims) dims.push_back(e.eval(m, d, words));
    const std::int64_t count = p.count.eval(m, d, words);
    if (count < 0) throw InvalidSpec(spec.name + ": negative primitive count");
    total += count * primitive_flops(p.kind, dims);
  }
  return total;
}

inline std::int64_t storage(const MethodCostSpec& spec, std::int64_t m, std::int64_t d,
                            std::int64_t bytes_per_scalar = 4, std::int64_t words = kDefaultWords) {
  require_cost_args(m, d);
  std::int64_t total = 0;
  for (const auto& s : spec.stored) {
    const std::int64_t count = s.count.eval(m, d, words);
    const std::int64_t dim = s.dim.eval(m, d, words);
    if (count < 0 || dim < 1) throw InvalidSpec(spec.name + ": bad stored-vector shape");
    total += count * dim * bytes_per_scalar;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Built-in specs
// ---------------------------------------------------------------------------

namespace cost_builtin {

inline CostPrimitive dot(CostExpr count) { return {PrimitiveKind::kDot, {CostExpr::dim()}, count}; }

inline MethodCostSpec single_vector(std::string name) {
  return {std::move(name), {dot(CostExpr::lit(1))}, {{CostExpr::lit(1), CostExpr::dim()}}};
}

}  // namespace cost_builtin

inline MethodCostSpec clip4clip_spec() { return cost_builtin::single_vector("CLIP4Clip"); }

// AFA runs only when the video is encoded offline; matching is one dot.
inline MethodCostSpec teachclip_spec() { return cost_builtin::single_vector("TeachCLIP"); }

inline MethodCostSpec ts2net_spec() {
  return {"TS2-Net", {cost_builtin::dot(CostExpr::frames())}, {{CostExpr::frames(), CostExpr::dim()}}};
}

inline MethodCostSpec xpool_spec() {
  using cost_builtin::dot;
  return {"X-Pool",
          {dot(CostExpr::frames()),
           {PrimitiveKind::kSoftmax, {CostExpr::frames()}, CostExpr::lit(1)},
           {PrimitiveKind::kWeightedSum, {CostExpr::dim(), CostExpr::frames()}, CostExpr::lit(1)},
           {PrimitiveKind::kMatMul, {CostExpr::lit(1), CostExpr::dim(), CostExpr::dim()}, CostExpr::lit(1)},
           dot(CostExpr::lit(1))},
          {{CostExpr::frames(), CostExpr::dim()}}};
}

// 1 video-text + m frame-text + words video-word + words*m frame-word.
inline MethodCostSpec xclip_spec() {
  return {"X-CLIP",
          {cost_builtin::dot(parse_cost_expr("1 + m + words + m*words"))},
          {{parse_cost_expr("1 + m"), CostExpr::dim()}}};
}

// Three segments: the low end of the 3~15 range, i.e. 12 frames in groups of 4.
inline MethodCostSpec centerclip_spec() {
  return {"CenterCLIP", {cost_builtin::dot(CostExpr::lit(3))}, {{CostExpr::lit(3), CostExpr::dim()}}};
}

inline std::vector<MethodCostSpec> builtin_specs() {
  return {clip4clip_spec(), teachclip_spec(), xpool_spec(), xclip_spec(), ts2net_spec(), centerclip_spec()};
}

inline MethodCostSpec builtin_spec(const std::string& name) {
  for (auto& s : builtin_specs())
    if (s.name == name) return s;
  throw InvalidSpec("unknown built-in method '" + name + "'");
}

// ---------------------------------------------------------------------------
// JSON specs:
// {"name": "...", "primitives": [{"op": "dot", "dims": ["d"], "count": "m"}],
//  "stored": [{"count": "m", "dim": "d"}]}
// ---------------------------------------------------------------------------

inline CostExpr json_expr(const nlohmann::json& j) {
  if (j.is_number_integer()) return CostExpr::lit(j.get<std::int64_t>());
  if (j.is_string()) return parse_cost_expr(j.get<std::string>());
  throw InvalidSpec("cost expression must be a string or integer");
}

inline MethodCostSpec spec_from_json(const nlohmann::json& j) {
  try {
    MethodCostSpec s;
    s.name = j.at("name").get<std::string>();
    for (const auto& p : j.at("primitives")) {
      CostPrimitive prim;
      prim.kind = parse_primitive(p.at("op").get<std::string>());
      for (const auto& d : p.at("dims")) prim.dims.push_back(json_expr(d));
      if (prim.dims.size() != primitive_arity(prim.kind)) {
        throw InvalidSpec(s.name + ": wrong dims for " + primitive_name(prim.kind));
      }
      if (p.contains("count")) prim.count = json_expr(p.at("count"));
      s.primitives.push_back(std::move(prim));
    }
    if (j.contains("stored"))
      for (const auto& v : j.at("stored")) s.stored.push_back({json_expr(v.at("count")), json_expr(v.at("dim"))});
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec(std::string("malformed method spec: ") + e.what());
  }
}

struct CostProfile {
  std::string name;
  std::int64_t flops_per_pair = 0;
  std::int64_t bytes_per_video = 0;
  std::int64_t m = 0;
  std::int64_t d = 0;
  std::int64_t words = kDefaultWords;
};

inline CostProfile profile(const MethodCostSpec& spec, std::int64_t m, std::int64_t d,
                           std::int64_t words = kDefaultWords) {
  return {spec.name, flops(spec, m, d, words), storage(spec, m, d, 4, words), m, d, words};
}

/// Profiles sorted by FLOPs; ties keep input order.
inline std::vector<CostProfile> compare(std::span<const MethodCostSpec> specs, std::int64_t m, std::int64_t d,
                                        std::int64_t words = kDefaultWords) {
  if (specs.size() < 2) throw InvalidInput("compare: need at least two specs");
  std::vector<CostProfile> rows;
  for (const auto& s : specs) rows.push_back(profile(s, m, d, words));
  std::stable_sort(rows.begin(), rows.end(),
                   [](const CostProfile& a, const CostProfile& b) { return a.flops_per_pair < b.flops_per_pair; });
  return rows;
}

inline constexpr const char* kEfficiencyFootnote =
    "note: the efficiency claim is usually quoted as \"CLIP4Clip and TeachText are the most efficient\"; "
    "the numbers above put TeachCLIP there. Kept as quoted, not resolved.";

inline std::string format_cost_table(std::span<const CostProfile> rows) {
  std::string out;
  char line[160];
  if (!rows.empty()) {
    std::snprintf(line, sizeof line, "# m=%lld d=%lld words=%lld flops: dot=2d-1 softmax=5n matmul=a*c*(2b-1)\n",
                  static_cast<long long>(rows.front().m), static_cast<long long>(rows.front().d),
                  static_cast<long long>(rows.front().words));
    out += line;
  }
  std::snprintf(line, sizeof line, "%-12s %16s %16s\n", "method", "flops/pair", "bytes/video");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-12s %16lld %16lld\n", r.name.c_str(),
                  static_cast<long long>(r.flops_per_pair), static_cast<long long>(r.bytes_per_video));
    out += line;
  }
  out += kEfficiencyFootnote;
  out += '\n';
  return out;
}

inline nlohmann::ordered_json cost_report_json(std::span<const CostProfile> rows) {
  nlohmann::ordered_json j;
  j["flop_convention"] = "dot(n)=2n-1; matmul(axb.bxc)=a*c*(2b-1); softmax(n)=5n; weighted_sum(dim,n)=(2n-1)*dim";
  j["note"] = kEfficiencyFootnote;
  j["methods"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    j["methods"].push_back({{"name", r.name},
                            {"flops_per_pair", r.flops_per_pair},
                            {"bytes_per_video", r.bytes_per_video},
                            {"m", r.m},
                            {"d", r.d},
                            {"words", r.words}});
  }
  return j;
}

}  // namespace teachclip
