#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "rdcd/error.hpp"
#include "rdcd/linalg.hpp"

namespace rdcd {

struct Temperatures {
  double tau_teacher = 0.04;
  double tau_student = 0.07;
  double tau_contrastive = 0.2;
};

struct LossWeights {
  double lambda_rel = 10.0;
  double lambda_con = 1.0;
  double lambda_hn = 5.0;
};

// Scalar loss plus gradients w.r.t. the op's documented input slots:
//   rsd_loss      -> { dH_student }
//   infonce_loss  -> { dZ_query, dZ_key }
//   hn_loss       -> { dS }
//   fkd_loss      -> { dH_student }
//   koleo_loss    -> { dZ }
// `skipped` marks a queue-consuming loss evaluated below its warm-up fill;
// `clamped` marks a koleo evaluation that hit near-coincident rows.
struct LossValue {
  double value = 0.0;
  std::vector<Mat> grads;
  bool skipped = false;
  bool clamped = false;
};

enum class HnMode { hardest, literal };

namespace detail {

struct RowNorms {
  Mat unit;   // rows scaled to unit length
  Vec norms;  // original row norms
};

inline RowNorms normalize_rows(const Mat& m) {
  RowNorms rn;
  rn.unit = m;
  rn.norms.resize(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto r = rn.unit.row(i);
    double n = norm(r);
    require(n >= 1e-12, Errc::zero_vector, "normalize_rows: zero row");
    rn.norms[i] = n;
    for (double& x : r) x /= n;
  }
  return rn;
}

// VJP of u = x/||x||: g_x = (g_u - (g_u . u) u) / ||x||.
inline void norm_vjp_row(std::span<const double> unit, double raw_norm,
                         std::span<const double> g_unit, std::span<double> g_raw) {
  double proj = dot(g_unit, unit);
  for (std::size_t i = 0; i < unit.size(); ++i)
    g_raw[i] = (g_unit[i] - proj * unit[i]) / raw_norm;
}

inline double logsumexp(std::span<const double> v) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : v) hi = std::max(hi, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - hi);
  return hi + std::log(s);
}

inline void check_finite(const LossValue& lv, const char* op) {
  require(std::isfinite(lv.value), Errc::non_finite, std::string(op) + ": non-finite value");
  for (const Mat& g : lv.grads)
    require(all_finite(g), Errc::non_finite, std::string(op) + ": non-finite gradient");
}

}  // namespace detail

// Cosine similarity of each (internally normalized) row of H against each
// unit-norm queue row.
inline Mat similarity_to_queue(const Mat& H, const Mat& queue) {
  require(H.cols == queue.cols, Errc::dim_mismatch, "similarity_to_queue: dim mismatch");
  require(rows_unit_norm(queue), Errc::not_normalized, "similarity_to_queue: queue rows not unit");
  Mat out(H.rows, queue.rows);
  for (std::size_t i = 0; i < H.rows; ++i) {
    Vec h(H.row(i).begin(), H.row(i).end());
    Vec u = l2_normalize(h);
    for (std::size_t j = 0; j < queue.rows; ++j) out(i, j) = dot(u, queue.row(j));
  }
  return out;
}

// Relational distillation: mean_i KL(p_teacher_i || p_student_i), where both
// distributions are temperature softmaxes of cosine similarities against the
// teacher queue. The teacher is frozen; the gradient targets the student's
// dimension-matched features only. d(value)/d(student logit) = (pS - pT)/(N*tauS),
// propagated through the row normalization.
inline LossValue rsd_loss(const Mat& H_teacher, const Mat& H_student, const Mat& queue,
                          const Temperatures& temps, std::size_t warmup_min_rows = 2) {
  require(H_teacher.rows == H_student.rows && H_teacher.cols == H_student.cols,
          Errc::shape_mismatch, "rsd_loss: teacher/student shape mismatch");
  require(H_teacher.cols == queue.cols, Errc::dim_mismatch, "rsd_loss: queue dim mismatch");
  require(queue.rows >= 2, Errc::queue_too_small, "rsd_loss: queue must hold at least 2 entries");
  require(temps.tau_teacher > 0.0 && temps.tau_student > 0.0, Errc::non_positive_temperature,
          "rsd_loss: temperatures must be positive");

  const std::size_t N = H_teacher.rows, D = H_teacher.cols, K = queue.rows;
  LossValue lv;
  lv.grads.assign(1, Mat(N, D));
  if (K < warmup_min_rows) {
    lv.skipped = true;
    return lv;
  }
  require(rows_unit_norm(queue), Errc::not_normalized, "rsd_loss: queue rows not unit");

  auto tn = detail::normalize_rows(H_teacher);
  auto sn = detail::normalize_rows(H_student);

  double total = 0.0;
  Vec logit_t(K), logit_s(K), g_unit(D);
  for (std::size_t i = 0; i < N; ++i) {
    auto t = tn.unit.row(i);
    auto s = sn.unit.row(i);
    for (std::size_t j = 0; j < K; ++j) {
      auto q = queue.row(j);
      logit_t[j] = dot(t, q) / temps.tau_teacher;
      logit_s[j] = dot(s, q) / temps.tau_student;
    }
    double lse_t = detail::logsumexp(logit_t);
    double lse_s = detail::logsumexp(logit_s);

    std::fill(g_unit.begin(), g_unit.end(), 0.0);
    double kl = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      double log_pt = logit_t[j] - lse_t;
      double log_ps = logit_s[j] - lse_s;
      double pt = std::exp(log_pt);
      double ps = std::exp(log_ps);
      kl += pt * (log_pt - log_ps);
      double coeff = (ps - pt) / (static_cast<double>(N) * temps.tau_student);
      auto q = queue.row(j);
      for (std::size_t d = 0; d < D; ++d) g_unit[d] += coeff * q[d];
    }
    total += kl;
    detail::norm_vjp_row(s, sn.norms[i], g_unit, lv.grads[0].row(i));
  }
  lv.value = total / static_cast<double>(N);
  detail::check_finite(lv, "rsd_loss");
  return lv;
}

struct InfoNceOptions {
  // The printed form of the objective omits the positive pair from the
  // denominator; the default keeps it (standard momentum-contrast form).
  bool exclude_positive = false;
  std::size_t warmup_min_rows = 1;
};

// InfoNCE with row-aligned positive pairs (Z_query_i, Z_key_i) and queue rows
// as negatives. Rows are normalized internally. Returns gradients for both
// the query and key sides; the queue never receives gradient. Below the
// warm-up fill the loss is skipped (zero value, zero gradients).
inline LossValue infonce_loss(const Mat& Z_query, const Mat& Z_key, const Mat& queue, double tau,
                              const InfoNceOptions& opts = {}) {
  require(Z_query.rows == Z_key.rows && Z_query.cols == Z_key.cols, Errc::shape_mismatch,
          "infonce_loss: query/key shape mismatch");
  require(Z_query.cols == queue.cols || queue.rows == 0, Errc::dim_mismatch,
          "infonce_loss: queue dim mismatch");
  require(tau > 0.0, Errc::non_positive_temperature, "infonce_loss: tau must be positive");

  const std::size_t N = Z_query.rows, D = Z_query.cols, K = queue.rows;
  LossValue lv;
  lv.grads.assign(2, Mat(N, D));
  if (K < std::max<std::size_t>(1, opts.warmup_min_rows)) {
    lv.skipped = true;
    return lv;
  }
  require(rows_unit_norm(queue), Errc::not_normalized, "infonce_loss: queue rows not unit");

  auto qn = detail::normalize_rows(Z_query);
  auto kn = detail::normalize_rows(Z_key);

  double total = 0.0;
  Vec logits(K + 1), gq_unit(D), gk_unit(D);
  for (std::size_t i = 0; i < N; ++i) {
    auto q = qn.unit.row(i);
    auto k = kn.unit.row(i);
    logits[0] = dot(q, k) / tau;
    for (std::size_t j = 0; j < K; ++j) logits[j + 1] = dot(q, queue.row(j)) / tau;

    std::fill(gq_unit.begin(), gq_unit.end(), 0.0);
    double inv_ntau = 1.0 / (static_cast<double>(N) * tau);
    if (!opts.exclude_positive) {
      double lse = detail::logsumexp(logits);
      total += lse - logits[0];
      double p0 = std::exp(logits[0] - lse);
      for (std::size_t d = 0; d < D; ++d) gq_unit[d] = (p0 - 1.0) * k[d] * inv_ntau;
      for (std::size_t j = 0; j < K; ++j) {
        double pj = std::exp(logits[j + 1] - lse) * inv_ntau;
        auto qu = queue.row(j);
        for (std::size_t d = 0; d < D; ++d) gq_unit[d] += pj * qu[d];
      }
      for (std::size_t d = 0; d < D; ++d) gk_unit[d] = (p0 - 1.0) * q[d] * inv_ntau;
    } else {
      std::span<const double> negs(logits.data() + 1, K);
      double lse = detail::logsumexp(negs);
      total += lse - logits[0];
      for (std::size_t d = 0; d < D; ++d) gq_unit[d] = -k[d] * inv_ntau;
      for (std::size_t j = 0; j < K; ++j) {
        double pj = std::exp(logits[j + 1] - lse) * inv_ntau;
        auto qu = queue.row(j);
        for (std::size_t d = 0; d < D; ++d) gq_unit[d] += pj * qu[d];
      }
      for (std::size_t d = 0; d < D; ++d) gk_unit[d] = -q[d] * inv_ntau;
    }
    detail::norm_vjp_row(q, qn.norms[i], gq_unit, lv.grads[0].row(i));
    detail::norm_vjp_row(k, kn.norms[i], gk_unit, lv.grads[1].row(i));
  }
  lv.value = total / static_cast<double>(N);
  detail::check_finite(lv, "infonce_loss");
  return lv;
}

// S(i,j) = cos(A_i, B_j) with both sides normalized internally.
inline Mat cross_view_similarity(const Mat& A, const Mat& B) {
  require(A.cols == B.cols, Errc::dim_mismatch, "cross_view_similarity: dim mismatch");
  auto an = detail::normalize_rows(A);
  auto bn = detail::normalize_rows(B);
  Mat s(A.rows, B.rows);
  for (std::size_t i = 0; i < A.rows; ++i)
    for (std::size_t j = 0; j < B.rows; ++j) s(i, j) = dot(an.unit.row(i), bn.unit.row(j));
  return s;
}

// Backprop a gradient on the cross-view similarity matrix to the raw inputs.
inline std::pair<Mat, Mat> cross_view_similarity_vjp(const Mat& A, const Mat& B, const Mat& G) {
  require(G.rows == A.rows && G.cols == B.rows, Errc::shape_mismatch,
          "cross_view_similarity_vjp: gradient shape mismatch");
  auto an = detail::normalize_rows(A);
  auto bn = detail::normalize_rows(B);
  const std::size_t D = A.cols;

  Mat gA(A.rows, D), gB(B.rows, D);
  Vec acc(D);
  for (std::size_t i = 0; i < A.rows; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t j = 0; j < B.rows; ++j) {
      double g = G(i, j);
      if (g == 0.0) continue;
      auto b = bn.unit.row(j);
      for (std::size_t d = 0; d < D; ++d) acc[d] += g * b[d];
    }
    detail::norm_vjp_row(an.unit.row(i), an.norms[i], acc, gA.row(i));
  }
  for (std::size_t j = 0; j < B.rows; ++j) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t i = 0; i < A.rows; ++i) {
      double g = G(i, j);
      if (g == 0.0) continue;
      auto a = an.unit.row(i);
      for (std::size_t d = 0; d < D; ++d) acc[d] += g * a[d];
    }
    detail::norm_vjp_row(bn.unit.row(j), bn.norms[j], acc, gB.row(j));
  }
  return {std::move(gA), std::move(gB)};
}

inline Mat off_diagonal_mask(std::size_t n) {
  Mat m(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 0.0;
  return m;
}

// Hard-negative penalty over a student cross-view similarity matrix. In
// `hardest` mode each row pays -log(1 - max_neg_sim + eps); `literal` mode is
// the single-log variant -(1/N) log sum_i max_neg(1 - S_ij), which selects
// each row's lowest negative similarity instead. Subgradient flows only to
// each row's selected entry, ties broken toward the lowest column index.
inline LossValue hn_loss(const Mat& S, const Mat& neg_mask, HnMode mode = HnMode::hardest) {
  require(S.rows == neg_mask.rows && S.cols == neg_mask.cols, Errc::shape_mismatch,
          "hn_loss: mask shape mismatch");
  const double eps = 1e-6;
  const std::size_t N = S.rows;
  LossValue lv;
  lv.grads.assign(1, Mat(S.rows, S.cols));

  std::vector<std::size_t> sel(N);
  for (std::size_t i = 0; i < N; ++i) {
    bool found = false;
    double best = 0.0;
    for (std::size_t j = 0; j < S.cols; ++j) {
      if (neg_mask(i, j) == 0.0) continue;
      double cand = (mode == HnMode::hardest) ? S(i, j) : (1.0 - S(i, j));
      if (!found || cand > best) {
        best = cand;
        sel[i] = j;
        found = true;
      }
    }
    require(found, Errc::row_without_negatives, "hn_loss: row has no negatives");
  }

  if (mode == HnMode::hardest) {
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      double margin = 1.0 - S(i, sel[i]) + eps;
      require(margin > 0.0, Errc::non_finite, "hn_loss: similarity at or above 1+eps");
      total -= std::log(margin);
      lv.grads[0](i, sel[i]) = 1.0 / (static_cast<double>(N) * margin);
    }
    lv.value = total / static_cast<double>(N);
  } else {
    double sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) sum += 1.0 - S(i, sel[i]);
    require(sum > 0.0, Errc::non_finite, "hn_loss: non-positive sum in literal mode");
    lv.value = -std::log(sum) / static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i)
      lv.grads[0](i, sel[i]) = 1.0 / (static_cast<double>(N) * sum);
  }
  detail::check_finite(lv, "hn_loss");
  return lv;
}

// Feature regression baseline: mean squared error between dimension-matched
// student features and teacher features, averaged over all entries.
inline LossValue fkd_loss(const Mat& H_student, const Mat& H_teacher) {
  require(H_student.rows == H_teacher.rows && H_student.cols == H_teacher.cols,
          Errc::shape_mismatch, "fkd_loss: shape mismatch");
  const double scale = 1.0 / static_cast<double>(H_student.rows * H_student.cols);
  LossValue lv;
  lv.grads.assign(1, Mat(H_student.rows, H_student.cols));
  double total = 0.0;
  for (std::size_t i = 0; i < H_student.data.size(); ++i) {
    double diff = H_student.data[i] - H_teacher.data[i];
    total += diff * diff;
    lv.grads[0].data[i] = 2.0 * scale * diff;
  }
  lv.value = scale * total;
  detail::check_finite(lv, "fkd_loss");
  return lv;
}

// Differential-entropy regularizer: -mean_i log(nearest-neighbor distance of
// row i + eps) over internally normalized rows. Coincident rows (distance
// below 1e-10) clamp the log argument and zero that pair's gradient.
inline LossValue koleo_loss(const Mat& Z, double eps = 1e-8) {
  require(Z.rows >= 2, Errc::invalid_sizes, "koleo_loss: need at least 2 rows");
  const std::size_t N = Z.rows, D = Z.cols;
  auto zn = detail::normalize_rows(Z);

  LossValue lv;
  lv.grads.assign(1, Mat(N, D));
  Mat g_unit(N, D);

  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t nn = 0;
    auto zi = zn.unit.row(i);
    for (std::size_t j = 0; j < N; ++j) {
      if (j == i) continue;
      double d2 = 0.0;
      auto zj = zn.unit.row(j);
      for (std::size_t d = 0; d < D; ++d) {
        double diff = zi[d] - zj[d];
        d2 += diff * diff;
      }
      double dist = std::sqrt(d2);
      if (dist < best || (dist == best && j < nn)) {
        best = dist;
        nn = j;
      }
    }
    if (best < 1e-10) {
      lv.clamped = true;
      total -= std::log(1e-10 + eps);
      continue;  // direction undefined; no gradient for this row's pair
    }
    total -= std::log(best + eps);
    double coeff = -1.0 / (static_cast<double>(N) * (best + eps) * best);
    auto zj = zn.unit.row(nn);
    for (std::size_t d = 0; d < D; ++d) {
      double diff = zi[d] - zj[d];
      g_unit(i, d) += coeff * diff;
      g_unit(nn, d) -= coeff * diff;
    }
  }
  for (std::size_t i = 0; i < N; ++i)
    detail::norm_vjp_row(zn.unit.row(i), zn.norms[i], g_unit.row(i), lv.grads[0].row(i));
  lv.value = total / static_cast<double>(N);
  detail::check_finite(lv, "koleo_loss");
  return lv;
}

namespace detail {

inline void append_scaled(std::vector<Mat>& into, const std::vector<Mat>& grads, double w) {
  for (const Mat& g : grads) {
    Mat scaled = g;
    for (double& x : scaled.data) x *= w;
    into.push_back(std::move(scaled));
  }
}

}  // namespace detail

// Weighted combination of the three training objectives. Gradient slots are
// the components' slots in order (rel, con, hn), each scaled by its weight.
// Skipped components contribute zero value and zero gradients.
inline LossValue rdcd_loss(const LossValue& rel, const LossValue& con, const LossValue& hn,
                           const LossWeights& w) {
  LossValue lv;
  lv.value = w.lambda_rel * rel.value + w.lambda_con * con.value + w.lambda_hn * hn.value;
  detail::append_scaled(lv.grads, rel.grads, w.lambda_rel);
  detail::append_scaled(lv.grads, con.grads, w.lambda_con);
  detail::append_scaled(lv.grads, hn.grads, w.lambda_hn);
  return lv;
}

}  // namespace rdcd
