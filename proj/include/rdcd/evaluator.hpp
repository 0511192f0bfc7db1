#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <unordered_map>
#include <vector>

#include "rdcd/encoder.hpp"
#include "rdcd/error.hpp"
#include "rdcd/linalg.hpp"
#include "rdcd/parallel.hpp"

namespace rdcd {

// Unit-norm descriptor rows with aligned ids.
struct DescriptorSet {
  std::vector<std::int64_t> ids;
  Mat matrix;

  void validate() const {
    require(ids.size() == matrix.rows, Errc::shape_mismatch,
            "DescriptorSet: id/row count mismatch");
    require(rows_unit_norm(matrix), Errc::not_normalized, "DescriptorSet: rows not unit-norm");
  }
};

struct PairEntry {
  std::int64_t query_id;
  std::int64_t ref_id;
  double score;
  bool is_gt = false;
};

// Confidence-sorted candidate pairs across all queries. Ordering: score
// descending, then (query_id, ref_id) ascending for determinism.
struct RankedPairList {
  std::vector<PairEntry> entries;
};

namespace detail {

inline bool pair_order(const PairEntry& a, const PairEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.query_id != b.query_id) return a.query_id < b.query_id;
  return a.ref_id < b.ref_id;
}

}  // namespace detail

// Forward each input row through the chosen head and L2-normalize the output.
inline DescriptorSet extract_descriptors(const EncoderParams& params, const Mat& inputs,
                                         const std::vector<std::int64_t>& ids, Head head,
                                         int threads = 1) {
  require(ids.size() == inputs.rows, Errc::shape_mismatch, "extract_descriptors: id count");
  std::size_t out_dim = head == Head::matcher    ? params.matcher_out_dim()
                        : head == Head::projector ? params.projector_out_dim()
                                                  : params.trunk_out_dim();
  DescriptorSet set;
  set.ids = ids;
  set.matrix = Mat(inputs.rows, out_dim);
  parallel_rows(inputs.rows, threads, [&](std::size_t i) {
    Vec x(inputs.row(i).begin(), inputs.row(i).end());
    Vec y = l2_normalize(forward_value(params, x, head));
    set.matrix.set_row(i, y);
  });
  return set;
}

// Exact nearest-neighbor search: per query the top_k references by cosine
// similarity, merged and globally sorted.
inline RankedPairList search(const DescriptorSet& queries, const DescriptorSet& refs,
                             std::size_t top_k, int threads = 1) {
  require(queries.matrix.cols == refs.matrix.cols, Errc::dim_mismatch, "search: dim mismatch");
  require(top_k >= 1, Errc::invalid_sizes, "search: top_k must be >= 1");
  const std::size_t nq = queries.matrix.rows, nr = refs.matrix.rows;
  const std::size_t keep = std::min(top_k, nr);

  std::vector<std::vector<PairEntry>> per_query(nq);
  parallel_rows(nq, threads, [&](std::size_t qi) {
    auto q = queries.matrix.row(qi);
    std::vector<PairEntry> cands(nr);
    for (std::size_t ri = 0; ri < nr; ++ri)
      cands[ri] = {queries.ids[qi], refs.ids[ri], dot(q, refs.matrix.row(ri)), false};
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                      cands.end(), detail::pair_order);
    cands.resize(keep);
    per_query[qi] = std::move(cands);
  });

  RankedPairList out;
  out.entries.reserve(nq * keep);
  for (std::size_t qi = 0; qi < nq; ++qi)
    out.entries.insert(out.entries.end(), per_query[qi].begin(), per_query[qi].end());
  std::sort(out.entries.begin(), out.entries.end(), detail::pair_order);
  return out;
}

inline void mark_ground_truth(RankedPairList& pairs,
                              const std::unordered_map<std::int64_t, std::int64_t>& gt_map) {
  for (PairEntry& e : pairs.entries) {
    auto it = gt_map.find(e.query_id);
    e.is_gt = (it != gt_map.end() && it->second == e.ref_id);
  }
}

// Micro average precision over the globally sorted pair list: sum of
// precision-at-i times the recall increment 1/total_gt at ground-truth
// positions. Unretrieved ground truth counts as lost recall.
inline double micro_ap(const RankedPairList& pairs, std::size_t total_gt) {
  require(total_gt >= 1, Errc::zero_ground_truth, "micro_ap: total_gt must be positive");
  std::size_t seen_gt = 0;
  double ap = 0.0;
  for (std::size_t i = 0; i < pairs.entries.size(); ++i) {
    if (!pairs.entries[i].is_gt) continue;
    ++seen_gt;
    double precision = static_cast<double>(seen_gt) / static_cast<double>(i + 1);
    ap += precision / static_cast<double>(total_gt);
  }
  require(seen_gt <= total_gt, Errc::zero_ground_truth,
          "micro_ap: more ground-truth hits than total_gt");
  return ap;
}

// Macro AP: average precision computed per query, averaged over the queries
// that have ground truth. Queries with ground truth but no retrieved pairs
// contribute zero.
inline double mean_ap(const RankedPairList& pairs,
                      const std::map<std::int64_t, std::size_t>& gt_count_per_query) {
  std::map<std::int64_t, std::pair<std::size_t, double>> acc;  // query -> (#seen_gt, ap)
  std::map<std::int64_t, std::size_t> position;
  for (const PairEntry& e : pairs.entries) {
    auto it = gt_count_per_query.find(e.query_id);
    if (it == gt_count_per_query.end() || it->second == 0) continue;
    std::size_t pos = ++position[e.query_id];
    if (!e.is_gt) continue;
    auto& a = acc[e.query_id];
    ++a.first;
    a.second += static_cast<double>(a.first) / static_cast<double>(pos) /
                static_cast<double>(it->second);
  }
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& [qid, count] : gt_count_per_query) {
    if (count == 0) continue;
    auto it = acc.find(qid);
    total += it == acc.end() ? 0.0 : it->second.second;
    ++n;
  }
  require(n > 0, Errc::no_evaluable_queries, "mean_ap: no query has ground truth");
  return total / static_cast<double>(n);
}

// Subtracts from each pair score a density estimate around its query: beta
// times the query's k-th highest similarity to the background set.
inline RankedPairList score_normalize(const RankedPairList& pairs, const DescriptorSet& queries,
                                      const DescriptorSet& background, std::size_t k,
                                      double beta = 1.0) {
  require(background.matrix.rows >= 1, Errc::background_too_small,
          "score_normalize: background is empty");
  require(k >= 1 && k <= background.matrix.rows, Errc::background_too_small,
          "score_normalize: k exceeds background size");
  require(queries.matrix.cols == background.matrix.cols, Errc::dim_mismatch,
          "score_normalize: dim mismatch");

  std::unordered_map<std::int64_t, double> kth_sim;
  for (std::size_t qi = 0; qi < queries.matrix.rows; ++qi) {
    Vec sims(background.matrix.rows);
    auto q = queries.matrix.row(qi);
    for (std::size_t bi = 0; bi < background.matrix.rows; ++bi)
      sims[bi] = dot(q, background.matrix.row(bi));
    std::nth_element(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k - 1), sims.end(),
                     std::greater<double>());
    kth_sim[queries.ids[qi]] = sims[k - 1];
  }

  RankedPairList out = pairs;
  for (PairEntry& e : out.entries) {
    auto it = kth_sim.find(e.query_id);
    require(it != kth_sim.end(), Errc::no_evaluable_queries,
            "score_normalize: pair query missing from query set");
    e.score -= beta * it->second;
  }
  std::sort(out.entries.begin(), out.entries.end(), detail::pair_order);
  return out;
}

struct SpectrumReport {
  Vec singular_values;  // eigenvalues of the descriptor covariance, descending
  Vec log_values;       // natural log, floored at log(1e-300)
  std::size_t rank = 0;
  double rpr = 0.0;     // rank / descriptor dimension
};

// Eigen-spectrum of the mean-centered descriptor covariance. Numerical rank
// counts eigenvalues above tol_rel relative to the largest one.
inline SpectrumReport spectrum(const DescriptorSet& descs, double tol_rel = 1e-6) {
  const std::size_t n = descs.matrix.rows, d = descs.matrix.cols;
  require(n >= 2, Errc::degenerate_set, "spectrum: need at least 2 descriptors");

  Vec mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += descs.matrix(i, j);
  for (double& m : mean) m /= static_cast<double>(n);

  Mat cov(d, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      double xa = descs.matrix(i, a) - mean[a];
      for (std::size_t b = a; b < d; ++b) cov(a, b) += xa * (descs.matrix(i, b) - mean[b]);
    }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) cov(b, a) = cov(a, b) /= static_cast<double>(n - 1);

  EigResult eig = sym_eig(cov);
  SpectrumReport rep;
  rep.singular_values = eig.values;
  rep.log_values.resize(d);
  const double floor = 1e-300;
  for (std::size_t i = 0; i < d; ++i)
    rep.log_values[i] = std::log(std::max(eig.values[i], floor));
  double top = eig.values.empty() ? 0.0 : eig.values[0];
  if (top > 0.0)
    for (double v : eig.values)
      if (v > tol_rel * top) ++rep.rank;
  rep.rpr = static_cast<double>(rep.rank) / static_cast<double>(d);
  return rep;
}

struct GapReport {
  struct Bin {
    double lo, hi;
    std::size_t count;
  };
  Vec gaps;  // one per evaluated query, in query order
  double mean = 0.0;
  std::vector<Bin> histogram;  // fixed bins of width 0.05 over [-1, 1]
  std::size_t skipped = 0;     // queries whose ground truth is the only reference
};

// Per query with ground truth: similarity to its reference minus the highest
// similarity among the other references.
inline GapReport similarity_gap(const DescriptorSet& queries, const DescriptorSet& refs,
                                const std::unordered_map<std::int64_t, std::int64_t>& gt_map) {
  require(!gt_map.empty(), Errc::no_ground_truth, "similarity_gap: no ground truth");
  require(queries.matrix.cols == refs.matrix.cols, Errc::dim_mismatch,
          "similarity_gap: dim mismatch");

  std::unordered_map<std::int64_t, std::size_t> ref_row;
  for (std::size_t i = 0; i < refs.ids.size(); ++i) ref_row[refs.ids[i]] = i;

  GapReport rep;
  for (std::size_t qi = 0; qi < queries.matrix.rows; ++qi) {
    auto it = gt_map.find(queries.ids[qi]);
    if (it == gt_map.end()) continue;
    auto rit = ref_row.find(it->second);
    require(rit != ref_row.end(), Errc::no_ground_truth,
            "similarity_gap: ground-truth reference missing");
    if (refs.matrix.rows < 2) {
      ++rep.skipped;
      continue;
    }
    auto q = queries.matrix.row(qi);
    double gt_sim = dot(q, refs.matrix.row(rit->second));
    double best_other = -2.0;
    for (std::size_t ri = 0; ri < refs.matrix.rows; ++ri) {
      if (ri == rit->second) continue;
      best_other = std::max(best_other, dot(q, refs.matrix.row(ri)));
    }
    rep.gaps.push_back(gt_sim - best_other);
  }
  require(!rep.gaps.empty(), Errc::no_ground_truth, "similarity_gap: no evaluable query");

  double sum = 0.0;
  for (double g : rep.gaps) sum += g;
  rep.mean = sum / static_cast<double>(rep.gaps.size());

  const int nbins = 40;  // [-1, 1] at width 0.05; out-of-range gaps land in edge bins
  rep.histogram.resize(nbins);
  for (int b = 0; b < nbins; ++b)
    rep.histogram[b] = {-1.0 + 0.05 * b, -1.0 + 0.05 * (b + 1), 0};
  for (double g : rep.gaps) {
    int b = static_cast<int>(std::floor((g + 1.0) / 0.05));
    b = std::clamp(b, 0, nbins - 1);
    ++rep.histogram[b].count;
  }
  return rep;
}

// PCA whitening fitted on a descriptor set: x -> Lambda^{-1/2} V^T (x - mean)
// restricted to the top target_dim eigenpairs.
struct PcaWhitening {
  Vec mean;
  Mat transform;  // target_dim x d

  Vec apply(std::span<const double> x) const {
    Vec centered(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) centered[i] = x[i] - mean[i];
    return matvec(transform, centered);
  }

  // Whitens every row; renormalize for cosine search.
  Mat apply_rows(const Mat& m, bool renormalize) const {
    Mat out(m.rows, transform.rows);
    for (std::size_t i = 0; i < m.rows; ++i) out.set_row(i, apply(m.row(i)));
    if (renormalize) l2_normalize_rows(out);
    return out;
  }
};

inline PcaWhitening fit_pca_whitening(const DescriptorSet& fit, std::size_t target_dim) {
  const std::size_t n = fit.matrix.rows, d = fit.matrix.cols;
  require(target_dim >= 1 && target_dim <= d, Errc::invalid_sizes,
          "fit_pca_whitening: target_dim out of range");
  require(n > d, Errc::degenerate_set, "fit_pca_whitening: need more samples than dimensions");

  Vec mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += fit.matrix(i, j);
  for (double& m : mean) m /= static_cast<double>(n);

  Mat cov(d, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      double xa = fit.matrix(i, a) - mean[a];
      for (std::size_t b = a; b < d; ++b) cov(a, b) += xa * (fit.matrix(i, b) - mean[b]);
    }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) cov(b, a) = cov(a, b) /= static_cast<double>(n - 1);

  EigResult eig = sym_eig(cov);
  const double floor = 1e-10;
  require(eig.values[0] >= floor, Errc::rank_deficient_fit,
          "fit_pca_whitening: top eigenvalue below floor");

  PcaWhitening w;
  w.mean = std::move(mean);
  w.transform = Mat(target_dim, d);
  for (std::size_t t = 0; t < target_dim; ++t) {
    double lambda = std::max(eig.values[t], floor);
    double inv_sqrt = 1.0 / std::sqrt(lambda);
    for (std::size_t j = 0; j < d; ++j) w.transform(t, j) = inv_sqrt * eig.vectors(j, t);
  }
  return w;
}

}  // namespace rdcd
