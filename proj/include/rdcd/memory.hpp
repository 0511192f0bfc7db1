#pragma once

#include <cstddef>

#include "rdcd/error.hpp"
#include "rdcd/linalg.hpp"

namespace rdcd {

// Fixed-capacity FIFO ring of unit-norm descriptors. After more than
// `capacity` enqueues the queue holds exactly the most recent `capacity`
// rows in insertion order.
class InstanceQueue {
 public:
  InstanceQueue(std::size_t capacity, std::size_t dim)
      : capacity_(capacity), dim_(dim), ring_(capacity, dim) {
    require(capacity > 0 && dim > 0, Errc::invalid_sizes, "InstanceQueue: capacity and dim must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t fill() const { return fill_; }

  void enqueue_batch(const Mat& batch) {
    require(batch.cols == dim_, Errc::dim_mismatch, "enqueue_batch: descriptor dim mismatch");
    require(rows_unit_norm(batch), Errc::not_normalized,
            "enqueue_batch: rows must be unit-normalized within 1e-9");
    for (std::size_t i = 0; i < batch.rows; ++i) {
      ring_.set_row(cursor_, batch.row(i));
      cursor_ = (cursor_ + 1) % capacity_;
      if (fill_ < capacity_) ++fill_;
    }
  }

  // Owned snapshot, rows ordered oldest to newest. Later enqueues do not
  // affect a snapshot already taken.
  Mat as_matrix() const {
    require(fill_ >= 1, Errc::empty_queue, "as_matrix: queue is empty");
    Mat out(fill_, dim_);
    // Oldest entry sits at the cursor once the ring has wrapped.
    std::size_t start = (fill_ == capacity_) ? cursor_ : 0;
    for (std::size_t i = 0; i < fill_; ++i)
      out.set_row(i, ring_.row((start + i) % capacity_));
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t dim_;
  Mat ring_;
  std::size_t cursor_ = 0;
  std::size_t fill_ = 0;
};

}  // namespace rdcd
