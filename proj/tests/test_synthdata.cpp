#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "rdcd/synthdata.hpp"

using namespace rdcd;

namespace {

DataConfig small_config() {
  DataConfig cfg;
  cfg.d_in = 16;
  cfg.n_train = 128;
  cfg.n_refs = 64;
  cfg.n_queries = 32;
  cfg.n_distractors = 16;
  cfg.n_background = 48;
  cfg.hard_negative_fraction = 0.125;
  return cfg;
}

}  // namespace

TEST_CASE("generate_corpus is deterministic") {
  DataConfig cfg = small_config();
  CopyCorpus a = generate_corpus(cfg, 7);
  CopyCorpus b = generate_corpus(cfg, 7);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].latent == b.train[i].latent);
  for (std::size_t i = 0; i < a.queries.size(); ++i)
    CHECK(a.queries[i].latent == b.queries[i].latent);

  CopyCorpus c = generate_corpus(cfg, 8);
  CHECK(a.train[0].latent != c.train[0].latent);
}

TEST_CASE("corpus split sizes, disjoint ids, referential integrity") {
  DataConfig cfg = small_config();
  CopyCorpus corpus = generate_corpus(cfg, 7);

  CHECK(corpus.train.size() == cfg.n_train);
  CHECK(corpus.references.size() == cfg.n_refs);
  CHECK(corpus.queries.size() == cfg.n_queries);
  CHECK(corpus.background.size() == cfg.n_background);
  CHECK(corpus.ground_truth.size() == cfg.n_queries - cfg.n_distractors);

  std::set<std::int64_t> ids;
  auto collect = [&](const std::vector<LatentImage>& split) {
    for (const LatentImage& x : split) {
      CHECK(!ids.count(x.id));
      ids.insert(x.id);
    }
  };
  collect(corpus.train);
  collect(corpus.references);
  collect(corpus.queries);
  collect(corpus.background);

  std::set<std::int64_t> ref_ids;
  for (const LatentImage& r : corpus.references) ref_ids.insert(r.id);
  std::set<std::int64_t> query_ids;
  for (const LatentImage& q : corpus.queries) query_ids.insert(q.id);
  for (const GtPair& gt : corpus.ground_truth) {
    CHECK(ref_ids.count(gt.ref_id));
    CHECK(query_ids.count(gt.query_id));
  }

  // Distractor queries carry no ground truth entry.
  auto gmap = corpus.gt_map();
  for (const LatentImage& q : corpus.queries) {
    if (q.role == Role::distractor) CHECK(!gmap.count(q.id));
    if (q.role == Role::query_copy) CHECK(gmap.count(q.id));
  }
}

TEST_CASE("hard-negative partners are mutual; fraction 0 plants none") {
  DataConfig cfg = small_config();
  CopyCorpus corpus = generate_corpus(cfg, 7);

  std::unordered_map<std::int64_t, const LatentImage*> by_id;
  for (const LatentImage& r : corpus.references) by_id[r.id] = &r;
  std::size_t twins = 0;
  for (const LatentImage& r : corpus.references) {
    if (r.partner_id < 0) continue;
    ++twins;
    const LatentImage* partner = by_id.at(r.partner_id);
    CHECK(partner->partner_id == r.id);
    // ||delta|| = hn_gap * ||u|| for the pair's first member.
  }
  CHECK(twins == 2 * static_cast<std::size_t>(cfg.hard_negative_fraction * cfg.n_refs / 2.0));

  cfg.hard_negative_fraction = 0.0;
  CopyCorpus clean = generate_corpus(cfg, 7);
  for (const LatentImage& r : clean.references) CHECK(r.partner_id == -1);
}

TEST_CASE("generate_corpus validates sizes") {
  DataConfig cfg = small_config();
  cfg.n_distractors = cfg.n_queries + 1;
  CHECK_THROWS_AS(generate_corpus(cfg, 1), Error);

  DataConfig cfg2 = small_config();
  cfg2.hard_negative_fraction = 1.5;
  CHECK_THROWS_AS(generate_corpus(cfg2, 1), Error);

  DataConfig cfg3 = small_config();
  cfg3.n_queries = cfg3.n_refs + cfg3.n_distractors + 1;  // more copies than refs
  CHECK_THROWS_AS(generate_corpus(cfg3, 1), Error);
}

TEST_CASE("augment identity and degenerate configs") {
  AugmentConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.scale_lo = cfg.scale_hi = 1.0;
  cfg.mask_prob = 0.0;
  cfg.rotation_strength = 0.0;
  Vec x{1.0, -2.0, 3.0, 0.5};
  Rng rng(5);
  CHECK(augment(x, cfg, rng) == x);

  AugmentConfig all_mask = cfg;
  all_mask.mask_prob = 1.0;
  Rng rng2(5);
  CHECK(augment(x, all_mask, rng2) == Vec(4, 0.0));

  AugmentConfig def;
  Rng r1(9), r2(9);
  CHECK(augment(x, def, r1) == augment(x, def, r2));
}

TEST_CASE("copies are closer to their source than independent latents (3 sigma)") {
  // With the identity encoder, cos(u, augment(u)) must exceed cos(u, v) for
  // independent v on average.
  DataConfig cfg;
  cfg.d_in = 32;
  AugmentConfig aug = cfg.augment;
  Rng rng(123);
  const int n = 1500;
  double sum_copy = 0.0, sum_indep = 0.0, sq_copy = 0.0, sq_indep = 0.0;
  for (int i = 0; i < n; ++i) {
    Vec u(cfg.d_in), v(cfg.d_in);
    for (double& x : u) x = rng.normal();
    for (double& x : v) x = rng.normal();
    Vec un = l2_normalize(u);
    double c_copy = dot(un, l2_normalize(augment(u, aug, rng)));
    double c_indep = dot(un, l2_normalize(v));
    sum_copy += c_copy;
    sq_copy += c_copy * c_copy;
    sum_indep += c_indep;
    sq_indep += c_indep * c_indep;
  }
  double mean_copy = sum_copy / n, mean_indep = sum_indep / n;
  double var = (sq_copy / n - mean_copy * mean_copy) + (sq_indep / n - mean_indep * mean_indep);
  double sigma_of_diff = std::sqrt(var / n);
  CHECK(mean_copy - mean_indep > 3.0 * sigma_of_diff);
}

TEST_CASE("twin gap makes the identity encoder confuse a meaningful share") {
  DataConfig cfg;  // full defaults, including hn fraction and augment strength
  CopyCorpus corpus = generate_corpus(cfg, 7);
  double rate = hn_confusion_rate(corpus);
  CHECK(rate > 0.15);
  CHECK(rate < 0.65);
}
