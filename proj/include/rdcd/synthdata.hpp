#pragma once

#include <cstdint>
#include <numeric>
#include <unordered_map>
#include <vector>

#include "rdcd/error.hpp"
#include "rdcd/linalg.hpp"
#include "rdcd/rng.hpp"

namespace rdcd {

enum class Role { train, reference, hard_negative, query_copy, distractor, background };

struct LatentImage {
  std::int64_t id = -1;
  Vec latent;
  Role role = Role::train;
  std::int64_t partner_id = -1;  // mutual for hard-negative twins
};

// Edit model standing in for image transformations: whole-vector scale,
// planar rotations on disjoint coordinate pairs, coordinate masking, and
// additive noise.
struct AugmentConfig {
  double noise_sigma = 0.5;
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  double mask_prob = 0.2;
  double rotation_strength = 0.8;  // angle bound in radians
};

struct DataConfig {
  std::size_t d_in = 32;
  std::size_t n_train = 2048;
  std::size_t n_refs = 512;
  std::size_t n_queries = 256;
  std::size_t n_distractors = 128;
  std::size_t n_background = 512;
  double hard_negative_fraction = 0.125;  // fraction of references living in HN twin pairs
  double hn_gap = 0.25;                   // ||delta|| relative to ||u||
  AugmentConfig augment;
};

struct GtPair {
  std::int64_t query_id;
  std::int64_t ref_id;
};

struct CopyCorpus {
  DataConfig config;
  std::uint64_t seed = 0;
  std::vector<LatentImage> train;
  std::vector<LatentImage> references;
  std::vector<LatentImage> queries;
  std::vector<LatentImage> background;
  std::vector<GtPair> ground_truth;  // ascending query id

  std::unordered_map<std::int64_t, std::int64_t> gt_map() const {
    std::unordered_map<std::int64_t, std::int64_t> m;
    for (const GtPair& p : ground_truth) m[p.query_id] = p.ref_id;
    return m;
  }
};

inline Mat latents_matrix(const std::vector<LatentImage>& items) {
  require(!items.empty(), Errc::invalid_sizes, "latents_matrix: empty split");
  Mat m(items.size(), items.front().latent.size());
  for (std::size_t i = 0; i < items.size(); ++i) m.set_row(i, items[i].latent);
  return m;
}

inline std::vector<std::int64_t> ids_of(const std::vector<LatentImage>& items) {
  std::vector<std::int64_t> ids(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) ids[i] = items[i].id;
  return ids;
}

// y = noise + mask(rotate(scale(x))). Consumes a fixed number of draws
// (1 + d/2 + d + d) regardless of the config values.
inline Vec augment(const Vec& latent, const AugmentConfig& cfg, Rng& rng) {
  require(cfg.scale_lo <= cfg.scale_hi, Errc::invalid_sizes, "augment: scale_lo > scale_hi");
  const std::size_t d = latent.size();
  Vec y = latent;

  double s = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  for (double& x : y) x *= s;

  for (std::size_t p = 0; p + 1 < d; p += 2) {
    double theta = rng.uniform(-cfg.rotation_strength, cfg.rotation_strength);
    double c = std::cos(theta), sn = std::sin(theta);
    double a = y[p], b = y[p + 1];
    y[p] = c * a - sn * b;
    y[p + 1] = sn * a + c * b;
  }

  for (double& x : y)
    if (rng.uniform() < cfg.mask_prob) x = 0.0;

  for (double& x : y) x += cfg.noise_sigma * rng.normal();
  return y;
}

namespace detail {

inline Vec gaussian_vec(std::size_t d, Rng& rng) {
  Vec v(d);
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace detail

// Builds the full synthetic corpus. References come first as independent
// latents, then hard-negative twin pairs (u, u + delta) with
// ||delta|| = hn_gap * ||u||. Copy queries are edited copies of every
// twin reference plus a random subset of the regular references; distractor
// queries have no ground truth. Ids are globally unique across splits.
inline CopyCorpus generate_corpus(const DataConfig& cfg, std::uint64_t seed) {
  require(cfg.d_in >= 2 && cfg.n_train > 0 && cfg.n_refs > 0 && cfg.n_queries > 0 &&
              cfg.n_background > 0,
          Errc::invalid_sizes, "generate_corpus: sizes must be positive (d_in >= 2)");
  require(cfg.n_distractors <= cfg.n_queries, Errc::invalid_sizes,
          "generate_corpus: more distractors than queries");
  require(cfg.hard_negative_fraction >= 0.0 && cfg.hard_negative_fraction < 1.0,
          Errc::invalid_sizes, "generate_corpus: hard_negative_fraction outside [0,1)");

  const std::size_t n_copy = cfg.n_queries - cfg.n_distractors;
  const std::size_t n_hn_pairs =
      static_cast<std::size_t>(cfg.hard_negative_fraction * static_cast<double>(cfg.n_refs) / 2.0);
  require(2 * n_hn_pairs <= cfg.n_refs, Errc::invalid_sizes,
          "generate_corpus: hard-negative pairs exceed reference count");
  require(2 * n_hn_pairs <= n_copy, Errc::invalid_sizes,
          "generate_corpus: not enough copy queries to cover hard-negative twins");
  require(n_copy <= cfg.n_refs, Errc::invalid_sizes,
          "generate_corpus: more copy queries than references");

  Rng root(seed);
  CopyCorpus corpus;
  corpus.config = cfg;
  corpus.seed = seed;

  std::int64_t next_id = 0;

  Rng r_train = root.split("train");
  corpus.train.reserve(cfg.n_train);
  for (std::size_t i = 0; i < cfg.n_train; ++i)
    corpus.train.push_back({next_id++, detail::gaussian_vec(cfg.d_in, r_train), Role::train, -1});

  Rng r_refs = root.split("refs");
  const std::size_t n_regular = cfg.n_refs - 2 * n_hn_pairs;
  corpus.references.reserve(cfg.n_refs);
  for (std::size_t i = 0; i < n_regular; ++i)
    corpus.references.push_back(
        {next_id++, detail::gaussian_vec(cfg.d_in, r_refs), Role::reference, -1});

  Rng r_hn = root.split("hard-negatives");
  for (std::size_t p = 0; p < n_hn_pairs; ++p) {
    Vec u = detail::gaussian_vec(cfg.d_in, r_hn);
    Vec dir = l2_normalize(detail::gaussian_vec(cfg.d_in, r_hn));
    double delta_len = cfg.hn_gap * norm(u);
    Vec twin(u.size());
    for (std::size_t d = 0; d < u.size(); ++d) twin[d] = u[d] + delta_len * dir[d];
    std::int64_t id_a = next_id++;
    std::int64_t id_b = next_id++;
    corpus.references.push_back({id_a, std::move(u), Role::hard_negative, id_b});
    corpus.references.push_back({id_b, std::move(twin), Role::hard_negative, id_a});
  }

  // Copy queries cover every twin plus a random subset of the regular refs.
  Rng r_pick = root.split("copy-subset");
  std::vector<std::size_t> regular_idx(n_regular);
  std::iota(regular_idx.begin(), regular_idx.end(), 0);
  for (std::size_t i = n_regular; i > 1; --i)
    std::swap(regular_idx[i - 1], regular_idx[r_pick.below(i)]);
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < n_copy - 2 * n_hn_pairs; ++i) chosen.push_back(regular_idx[i]);
  for (std::size_t i = n_regular; i < cfg.n_refs; ++i) chosen.push_back(i);
  std::sort(chosen.begin(), chosen.end());

  Rng r_aug = root.split("augment");
  corpus.queries.reserve(cfg.n_queries);
  for (std::size_t idx : chosen) {
    const LatentImage& ref = corpus.references[idx];
    std::int64_t qid = next_id++;
    corpus.queries.push_back({qid, augment(ref.latent, cfg.augment, r_aug), Role::query_copy, -1});
    corpus.ground_truth.push_back({qid, ref.id});
  }

  Rng r_distract = root.split("distractors");
  for (std::size_t i = 0; i < cfg.n_distractors; ++i)
    corpus.queries.push_back(
        {next_id++, detail::gaussian_vec(cfg.d_in, r_distract), Role::distractor, -1});

  Rng r_bg = root.split("background");
  corpus.background.reserve(cfg.n_background);
  for (std::size_t i = 0; i < cfg.n_background; ++i)
    corpus.background.push_back(
        {next_id++, detail::gaussian_vec(cfg.d_in, r_bg), Role::background, -1});

  return corpus;
}

// Generator self-check: fraction of twin copies that the identity encoder
// ranks behind their partner reference. The edit strength and twin gap are
// chosen so this sits well away from both 0 and 1.
inline double hn_confusion_rate(const CopyCorpus& corpus) {
  std::unordered_map<std::int64_t, const LatentImage*> by_id;
  for (const LatentImage& r : corpus.references) by_id[r.id] = &r;
  std::unordered_map<std::int64_t, const LatentImage*> query_by_id;
  for (const LatentImage& q : corpus.queries) query_by_id[q.id] = &q;

  std::size_t confused = 0, total = 0;
  for (const GtPair& gt : corpus.ground_truth) {
    const LatentImage* ref = by_id.at(gt.ref_id);
    if (ref->partner_id < 0) continue;
    const LatentImage* partner = by_id.at(ref->partner_id);
    const LatentImage* q = query_by_id.at(gt.query_id);
    Vec qn = l2_normalize(q->latent);
    double sim_ref = dot(qn, l2_normalize(ref->latent));
    double sim_partner = dot(qn, l2_normalize(partner->latent));
    if (sim_partner >= sim_ref) ++confused;
    ++total;
  }
  return total == 0 ? 0.0 : static_cast<double>(confused) / static_cast<double>(total);
}

}  // namespace rdcd
