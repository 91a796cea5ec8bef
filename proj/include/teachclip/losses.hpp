#pragma once

// Training objectives on the batch similarity matrix B (row = text,
// column = video):
//   * symmetric InfoNCE with in-batch negatives,
//   * coarse teaching: Pearson distance between softmaxed rows/columns of B
//     and of the teacher's coarse scores,
//   * fine teaching: cross entropy between teacher frame relevance and the
//     student's AFA weights on matched pairs.
// Each loss exists as a plain function and as a tape node with an analytic
// backward rule; the node's forward value is the plain function.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "teachclip/autodiff.hpp"
#include "teachclip/core_math.hpp"
#include "teachclip/errors.hpp"
#include "teachclip/tensor.hpp"

namespace teachclip {

namespace detail {

inline double logsumexp(std::span<const double> z) {
  double top = z[0];
  for (double v : z) top = std::max(top, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - top);
  return top + std::log(s);
}

inline Tensor transposed(const Tensor& a) {
  Tensor t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

inline void require_square(const Tensor& sim, const char* what) {
  if (sim.rows != sim.cols || sim.rows < 2) {
    throw InvalidInput(std::string(what) + ": similarity matrix must be b x b with b >= 2");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// InfoNCE
// ---------------------------------------------------------------------------

/// 0.5 * (mean row CE + mean column CE) of exp(logit_scale) * B with the
/// diagonal as targets.
inline double info_nce(const Tensor& sim, double logit_scale) {
  detail::require_square(sim, "info_nce");
  const double s = std::exp(logit_scale);
  const std::size_t b = sim.rows;
  double rows = 0.0, cols = 0.0;
  std::vector<double> z(b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) z[j] = s * sim(i, j);
    rows += detail::logsumexp(z) - z[i];
  }
  for (std::size_t j = 0; j < b; ++j) {
    for (std::size_t i = 0; i < b; ++i) z[i] = s * sim(i, j);
    cols += detail::logsumexp(z) - z[j];
  }
  return 0.5 * (rows + cols) / static_cast<double>(b);
}

inline Var info_nce(Var sim, Var logit_scale) {
  detail::same_tape(sim, logit_scale);
  const Tensor& B = sim.value();
  if (logit_scale.value().size() != 1) throw InvalidShape("info_nce: logit scale must be 1x1");
  const double ls = logit_scale.scalar();
  const double value = info_nce(B, ls);
  const Tensor Bc = B;
  const Var inputs[] = {sim, logit_scale};
  return custom_op(inputs, Tensor(1, 1, value),
                   [Bc, ls](const Tensor& g, std::span<Tensor* const> grads) {
    const std::size_t b = Bc.rows;
    const double s = std::exp(ls);
    // dL/dz for z = s * B.
    Tensor dz(b, b);
    std::vector<double> z(b);
    const double w = 0.5 / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < b; ++j) z[j] = s * Bc(i, j);
      const double lse = detail::logsumexp(z);
      for (std::size_t j = 0; j < b; ++j) dz(i, j) += w * (std::exp(z[j] - lse) - (i == j ? 1.0 : 0.0));
    }
    for (std::size_t j = 0; j < b; ++j) {
      for (std::size_t i = 0; i < b; ++i) z[i] = s * Bc(i, j);
      const double lse = detail::logsumexp(z);
      for (std::size_t i = 0; i < b; ++i) dz(i, j) += w * (std::exp(z[i] - lse) - (i == j ? 1.0 : 0.0));
    }
    const double go = g.data[0];
    if (Tensor* dB = grads[0])
      for (std::size_t k = 0; k < dz.size(); ++k) dB->data[k] += go * s * dz.data[k];
    if (Tensor* dls = grads[1]) {
      double ds = 0.0;
      for (std::size_t k = 0; k < dz.size(); ++k) ds += dz.data[k] * Bc.data[k];
      dls->data[0] += go * ds * s;
    }
  });
}

// ---------------------------------------------------------------------------
// Coarse-grained teaching
// ---------------------------------------------------------------------------

namespace detail {

// d_p(softmax(x/T), softmax(y/T)) and, when `grad` is set, its gradient
// with respect to x (accumulated, scaled by `weight`).
inline double pearson_softmax_term(std::span<const double> x, std::span<const double> y, double t,
                                   double weight, std::span<double> grad) {
  const std::vector<double> p = softmax(x, t);
  const std::vector<double> q = softmax(y, t);
  const std::size_t n = p.size();
  if (grad.empty()) return pearson_distance(p, q);

  double mp = 0.0, mq = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    mp += p[k];
    mq += q[k];
  }
  mp /= static_cast<double>(n);
  mq /= static_cast<double>(n);
  std::vector<double> pc(n), qc(n);
  double spp = 0.0, sqq = 0.0, spq = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    pc[k] = p[k] - mp;
    qc[k] = q[k] - mq;
    spp += pc[k] * pc[k];
    sqq += qc[k] * qc[k];
    spq += pc[k] * qc[k];
  }
  if (spp < kVarianceFloor || sqq < kVarianceFloor) return 1.0;  // rho := 0, flat
  const double np = std::sqrt(spp), nq = std::sqrt(sqq);
  const double rho = spq / (np * nq);
  // d(1 - rho)/dp, already mean-free.
  std::vector<double> gp(n);
  for (std::size_t k = 0; k < n; ++k) gp[k] = -(qc[k] / (np * nq) - rho * pc[k] / spp);
  double inner = 0.0;
  for (std::size_t k = 0; k < n; ++k) inner += p[k] * gp[k];
  for (std::size_t k = 0; k < n; ++k) grad[k] += weight * p[k] * (gp[k] - inner) / t;
  return 1.0 - std::clamp(rho, -1.0, 1.0);
}

}  // namespace detail

struct CgtTerms {
  double rows = 0.0;  // mean over rows, in [0, 2]
  double cols = 0.0;  // mean over columns, in [0, 2]
};

/// The two directional means of the coarse teaching loss.
inline CgtTerms cgt_terms(const Tensor& sim, const Tensor& coarse, double temperature = 1.0) {
  detail::require_square(sim, "cgt_loss");
  if (!sim.same_shape(coarse)) throw InvalidInput("cgt_loss: teacher matrix shape mismatch");
  const std::size_t b = sim.rows;
  const Tensor st = detail::transposed(sim), ct = detail::transposed(coarse);
  CgtTerms t;
  for (std::size_t i = 0; i < b; ++i)
    t.rows += detail::pearson_softmax_term(sim.row(i), coarse.row(i), temperature, 0.0, {});
  for (std::size_t j = 0; j < b; ++j)
    t.cols += detail::pearson_softmax_term(st.row(j), ct.row(j), temperature, 0.0, {});
  t.rows /= static_cast<double>(b);
  t.cols /= static_cast<double>(b);
  return t;
}

/// Mean Pearson distance over rows plus mean over columns, each between
/// softmax(B/T) and softmax(coarse/T). Range [0, 4].
inline double cgt_loss(const Tensor& sim, const Tensor& coarse, double temperature = 1.0) {
  const CgtTerms t = cgt_terms(sim, coarse, temperature);
  return t.rows + t.cols;
}

inline Var cgt_loss(Var sim, const Tensor& coarse, double temperature = 1.0) {
  const Tensor& B = sim.value();
  const double value = cgt_loss(B, coarse, temperature);
  const Tensor Bc = B;
  const Var inputs[] = {sim};
  return custom_op(inputs, Tensor(1, 1, value),
                   [Bc, coarse, temperature](const Tensor& g, std::span<Tensor* const> grads) {
    Tensor* dB = grads[0];
    if (!dB) return;
    const std::size_t b = Bc.rows;
    const double w = g.data[0] / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
      detail::pearson_softmax_term(Bc.row(i), coarse.row(i), temperature, w, dB->row(i));
    const Tensor st = detail::transposed(Bc), ct = detail::transposed(coarse);
    Tensor dt(b, b);
    for (std::size_t j = 0; j < b; ++j)
      detail::pearson_softmax_term(st.row(j), ct.row(j), temperature, w, dt.row(j));
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) (*dB)(i, j) += dt(j, i);
  });
}

// ---------------------------------------------------------------------------
// Fine-grained teaching
// ---------------------------------------------------------------------------

/// -(1/b) sum_i sum_k fine[i][k] log w[i][k], with w clamped at kLogClamp.
inline double fgt_loss(const Tensor& afa_weights, const Tensor& fine) {
  if (!afa_weights.same_shape(fine) || afa_weights.rows == 0) {
    throw InvalidInput("fgt_loss: shape mismatch " + afa_weights.shape_string() + " vs " +
                       fine.shape_string());
  }
  double total = 0.0;
  for (std::size_t i = 0; i < fine.rows; ++i) total += cross_entropy(fine.row(i), afa_weights.row(i));
  return total / static_cast<double>(fine.rows);
}

inline Var fgt_loss(Var afa_weights, const Tensor& fine) {
  const Tensor& W = afa_weights.value();
  const double value = fgt_loss(W, fine);
  const Tensor Wc = W;
  const Var inputs[] = {afa_weights};
  return custom_op(inputs, Tensor(1, 1, value),
                   [Wc, fine](const Tensor& g, std::span<Tensor* const> grads) {
    Tensor* dW = grads[0];
    if (!dW) return;
    const double scale = g.data[0] / static_cast<double>(Wc.rows);
    for (std::size_t k = 0; k < Wc.size(); ++k)
      if (Wc.data[k] >= kLogClamp) dW->data[k] -= scale * fine.data[k] / Wc.data[k];
  });
}

// ---------------------------------------------------------------------------
// Combined objective
// ---------------------------------------------------------------------------

struct LossTerms {
  bool in = true;
  bool cgt = true;
  bool fgt = true;

  bool any() const noexcept { return in || cgt || fgt; }
  bool needs_teacher() const noexcept { return cgt || fgt; }
  friend bool operator==(const LossTerms&, const LossTerms&) = default;
};

/// Parses a comma-separated subset of {in, cgt, fgt}; "all" selects every term.
inline LossTerms parse_loss_terms(const std::string& spec) {
  if (spec == "all") return {};
  LossTerms t{false, false, false};
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "in") t.in = true;
    else if (item == "cgt") t.cgt = true;
    else if (item == "fgt") t.fgt = true;
    else throw InvalidConfig("unknown loss term '" + item + "' (expected in, cgt, fgt)");
  }
  if (!t.any()) throw InvalidConfig("at least one loss term must be enabled");
  return t;
}

inline std::string loss_terms_string(const LossTerms& t) {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += ",";
    s += name;
  };
  add(t.in, "in");
  add(t.cgt, "cgt");
  add(t.fgt, "fgt");
  return s;
}

/// Optional coefficients; the reference objective is the plain sum.
struct LossWeights {
  double in = 1.0;
  double cgt = 1.0;
  double fgt = 1.0;
};

struct LossBreakdown {
  double l_in = 0.0;
  double l_cgt = 0.0;
  double l_fgt = 0.0;
  double total = 0.0;
};

struct TeachingTargets {
  const Tensor* coarse = nullptr;  // b x b
  const Tensor* fine = nullptr;    // b x m
};

inline void require_targets(const LossTerms& terms, const TeachingTargets& targets) {
  if (terms.cgt && !targets.coarse) throw InvalidInput("total_loss: coarse teaching needs y_c");
  if (terms.fgt && !targets.fine) throw InvalidInput("total_loss: fine teaching needs y_f");
  if (!terms.any()) throw InvalidInput("total_loss: no loss term enabled");
}

inline LossBreakdown total_loss(const Tensor& sim, const TeachingTargets& targets,
                                const Tensor& afa_weights, double logit_scale,
                                double sigma_temperature = 1.0, const LossTerms& terms = {},
                                const LossWeights& weights = {}) {
  require_targets(terms, targets);
  LossBreakdown out;
  if (terms.in) out.l_in = info_nce(sim, logit_scale);
  if (terms.cgt) out.l_cgt = cgt_loss(sim, *targets.coarse, sigma_temperature);
  if (terms.fgt) out.l_fgt = fgt_loss(afa_weights, *targets.fine);
  out.total = weights.in * out.l_in + weights.cgt * out.l_cgt + weights.fgt * out.l_fgt;
  return out;
}

struct LossGraph {
  Var total;
  LossBreakdown values;
};

inline LossGraph total_loss(Var sim, Var afa_weights, Var logit_scale, const TeachingTargets& targets,
                            double sigma_temperature = 1.0, const LossTerms& terms = {},
                            const LossWeights& weights = {}) {
  require_targets(terms, targets);
  LossGraph out;
  std::vector<Var> parts;
  if (terms.in) {
    Var l = info_nce(sim, logit_scale);
    out.values.l_in = l.scalar();
    parts.push_back(weights.in == 1.0 ? l : scale(l, weights.in));
  }
  if (terms.cgt) {
    Var l = cgt_loss(sim, *targets.coarse, sigma_temperature);
    out.values.l_cgt = l.scalar();
    parts.push_back(weights.cgt == 1.0 ? l : scale(l, weights.cgt));
  }
  if (terms.fgt) {
    Var l = fgt_loss(afa_weights, *targets.fine);
    out.values.l_fgt = l.scalar();
    parts.push_back(weights.fgt == 1.0 ? l : scale(l, weights.fgt));
  }
  Var total = parts[0];
  for (std::size_t k = 1; k < parts.size(); ++k) total = add(total, parts[k]);
  out.total = total;
  out.values.total = total.scalar();
  return out;
}

// ---------------------------------------------------------------------------
// Loss history: one "step,l_in,l_cgt,l_fgt,total" line per training step.
// ---------------------------------------------------------------------------

inline std::string format_loss_record(std::size_t step, const LossBreakdown& l) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g", step, l.l_in, l.l_cgt, l.l_fgt,
                l.total);
  return buf;
}

inline void write_loss_history(const std::filesystem::path& path,
                               std::span<const LossBreakdown> history, std::size_t first_step = 0) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (std::size_t k = 0; k < history.size(); ++k)
    out << format_loss_record(first_step + k, history[k]) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline void append_loss_record(const std::filesystem::path& path, std::size_t step,
                               const LossBreakdown& l) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open for appending: " + path.string());
  out << format_loss_record(step, l) << '\n';
}

inline std::vector<std::pair<std::size_t, LossBreakdown>> read_loss_history(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::vector<std::pair<std::size_t, LossBreakdown>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t step = 0;
    LossBreakdown l;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf", &step, &l.l_in, &l.l_cgt, &l.l_fgt,
                    &l.total) != 5) {
      throw CorpusIntegrity("loss history: malformed line '" + line + "'");
    }
    out.emplace_back(step, l);
  }
  return out;
}

}  // namespace teachclip
