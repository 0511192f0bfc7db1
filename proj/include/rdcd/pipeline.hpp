#pragma once

#include "rdcd/encoder.hpp"
#include "rdcd/evaluator.hpp"
#include "rdcd/synthdata.hpp"

namespace rdcd {

struct EvalOptions {
  std::size_t top_k = 10;
  std::size_t sn_k = 10;
  double sn_beta = 1.0;
  double spectrum_tol_rel = 1e-6;
  Head head = Head::projector;
  std::size_t pca_dim = 0;  // 0 disables whitening
  bool score_normalize = false;
  int threads = 1;
};

struct EvalOutcome {
  double uap = 0.0;
  bool has_uap_sn = false;
  double uap_sn = 0.0;
  double map = 0.0;
  std::size_t total_gt = 0;
  RankedPairList pairs;      // raw (un-normalized) scores
  SpectrumReport spectrum;   // over the query descriptors as searched
  GapReport gaps;
};

// Full evaluation pass: extract descriptors for the reference, query and
// background splits, optionally whiten (fitted on the background split,
// outputs re-normalized), search, score, and run the collapse diagnostics.
inline EvalOutcome run_evaluation(const EncoderParams& params, const CopyCorpus& corpus,
                                  const EvalOptions& opts) {
  DescriptorSet refs = extract_descriptors(params, latents_matrix(corpus.references),
                                           ids_of(corpus.references), opts.head, opts.threads);
  DescriptorSet queries = extract_descriptors(params, latents_matrix(corpus.queries),
                                              ids_of(corpus.queries), opts.head, opts.threads);
  DescriptorSet background = extract_descriptors(params, latents_matrix(corpus.background),
                                                 ids_of(corpus.background), opts.head,
                                                 opts.threads);

  if (opts.pca_dim > 0) {
    PcaWhitening pca = fit_pca_whitening(background, opts.pca_dim);
    auto whiten = [&](DescriptorSet& set) {
      set.matrix = pca.apply_rows(set.matrix, /*renormalize=*/true);
    };
    whiten(refs);
    whiten(queries);
    whiten(background);
  }

  EvalOutcome out;
  out.total_gt = corpus.ground_truth.size();
  require(out.total_gt > 0, Errc::zero_ground_truth, "run_evaluation: corpus has no ground truth");

  auto gt = corpus.gt_map();
  out.pairs = search(queries, refs, opts.top_k, opts.threads);
  mark_ground_truth(out.pairs, gt);
  out.uap = micro_ap(out.pairs, out.total_gt);

  std::map<std::int64_t, std::size_t> gt_counts;
  for (const GtPair& p : corpus.ground_truth) gt_counts[p.query_id] = 1;
  out.map = mean_ap(out.pairs, gt_counts);

  if (opts.score_normalize) {
    RankedPairList normalized =
        score_normalize(out.pairs, queries, background, opts.sn_k, opts.sn_beta);
    out.uap_sn = micro_ap(normalized, out.total_gt);
    out.has_uap_sn = true;
  }

  out.spectrum = spectrum(queries, opts.spectrum_tol_rel);
  out.gaps = similarity_gap(queries, refs, gt);
  return out;
}

}  // namespace rdcd
