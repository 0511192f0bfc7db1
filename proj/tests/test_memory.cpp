#include <catch2/catch_amalgamated.hpp>

#include "rdcd/memory.hpp"
#include "rdcd/rng.hpp"

using namespace rdcd;

namespace {

Mat unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  Mat m(n, d);
  for (double& x : m.data) x = rng.normal();
  l2_normalize_rows(m);
  return m;
}

}  // namespace

TEST_CASE("queue FIFO eviction") {
  Rng rng(1);
  InstanceQueue q(2, 4);
  Mat abc = unit_rows(3, 4, rng);
  q.enqueue_batch(abc);

  CHECK(q.fill() == 2);
  Mat snap = q.as_matrix();
  REQUIRE(snap.rows == 2);
  // Holds exactly the two most recent rows, oldest first.
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(snap(0, j) == abc(1, j));
    CHECK(snap(1, j) == abc(2, j));
  }
}

TEST_CASE("queue fill count and full replacement") {
  Rng rng(2);
  InstanceQueue q(4, 3);
  CHECK(q.fill() == 0);
  CHECK_THROWS_AS(q.as_matrix(), Error);

  q.enqueue_batch(unit_rows(1, 3, rng));
  CHECK(q.fill() == 1);

  Mat first = unit_rows(4, 3, rng);
  Mat second = unit_rows(4, 3, rng);
  InstanceQueue q2(4, 3);
  q2.enqueue_batch(first);
  q2.enqueue_batch(second);
  Mat snap = q2.as_matrix();
  CHECK(snap.data == second.data);
}

TEST_CASE("snapshot is immutable under later enqueues") {
  Rng rng(3);
  InstanceQueue q(3, 5);
  q.enqueue_batch(unit_rows(2, 5, rng));
  Mat snap = q.as_matrix();
  Mat copy = snap;
  q.enqueue_batch(unit_rows(3, 5, rng));
  CHECK(snap.data == copy.data);
}

TEST_CASE("queue rejects bad input") {
  Rng rng(4);
  InstanceQueue q(4, 4);
  Mat wrong_dim = unit_rows(2, 3, rng);
  CHECK_THROWS_AS(q.enqueue_batch(wrong_dim), Error);

  Mat not_unit(1, 4, 0.7);
  CHECK_THROWS_AS(q.enqueue_batch(not_unit), Error);
}

TEST_CASE("property: queue always holds the most recent K unit rows in order") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t cap = 1 + static_cast<std::size_t>(rng.below(8));
    InstanceQueue q(cap, 4);
    std::vector<Vec> history;
    int batches = 1 + static_cast<int>(rng.below(6));
    for (int b = 0; b < batches; ++b) {
      std::size_t n = 1 + static_cast<std::size_t>(rng.below(5));
      Mat batch = unit_rows(n, 4, rng);
      for (std::size_t i = 0; i < n; ++i)
        history.emplace_back(batch.row(i).begin(), batch.row(i).end());
      q.enqueue_batch(batch);
    }
    std::size_t expect = std::min(cap, history.size());
    CHECK(q.fill() == expect);
    Mat snap = q.as_matrix();
    REQUIRE(snap.rows == expect);
    for (std::size_t i = 0; i < expect; ++i) {
      const Vec& want = history[history.size() - expect + i];
      for (std::size_t j = 0; j < 4; ++j) CHECK(snap(i, j) == want[j]);
      CHECK(std::abs(norm(snap.row(i)) - 1.0) <= 1e-9);
    }
  }
}
