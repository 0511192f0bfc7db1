#pragma once

#include <stdexcept>
#include <string>

namespace rdcd {

// Failure categories shared across the library. The CLI maps these onto
// process exit codes, so the category must survive the throw.
enum class Errc {
  zero_vector,
  dim_mismatch,
  shape_mismatch,
  non_positive_temperature,
  not_symmetric,
  not_normalized,
  empty_spec,
  trace_mismatch,
  empty_queue,
  queue_too_small,
  non_finite,
  non_finite_grad,
  row_without_negatives,
  duplicate_rows,
  invalid_sizes,
  zero_ground_truth,
  no_evaluable_queries,
  no_ground_truth,
  background_too_small,
  degenerate_set,
  rank_deficient_fit,
  config_error,
  io_error,
  missing_artifact,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace rdcd
