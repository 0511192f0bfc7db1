#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "rdcd/encoder.hpp"
#include "rdcd/error.hpp"
#include "rdcd/losses.hpp"
#include "rdcd/memory.hpp"
#include "rdcd/parallel.hpp"
#include "rdcd/synthdata.hpp"

namespace rdcd {

enum class DistillMode { rsd, fkd };

struct TrainConfig {
  int epochs = 30;
  int teacher_epochs = 40;
  int batch_size = 64;
  int warmup_epochs = 5;
  double lr = 1e-3;
  double weight_decay = 1e-6;
  double momentum = 0.99;
  Temperatures temps;
  LossWeights weights;
  double koleo_weight = 1.0;
  std::size_t queue_teacher = 1024;
  std::size_t queue_student = 1024;
  std::size_t teacher_dim = 64;
  std::size_t trunk_hidden = 64;
  std::size_t trunk_out = 64;
  std::size_t proj_hidden = 32;
  std::size_t student_dim = 16;
  DistillMode distill_mode = DistillMode::rsd;
  HnMode hn_mode = HnMode::hardest;
  bool exclude_positive = false;
  std::uint64_t seed = 7;
  int threads = 1;

  void validate() const {
    require(batch_size >= 2, Errc::invalid_sizes, "TrainConfig: batch_size must be >= 2");
    require(epochs > 0 && teacher_epochs > 0, Errc::invalid_sizes,
            "TrainConfig: epochs must be positive");
    require(warmup_epochs >= 0 && warmup_epochs < epochs && warmup_epochs < teacher_epochs,
            Errc::invalid_sizes, "TrainConfig: warmup_epochs must be below epochs");
    require(momentum >= 0.0 && momentum <= 1.0, Errc::invalid_sizes,
            "TrainConfig: momentum outside [0,1]");
    require(temps.tau_teacher > 0.0 && temps.tau_student > 0.0 && temps.tau_contrastive > 0.0,
            Errc::non_positive_temperature, "TrainConfig: temperatures must be positive");
    require(weights.lambda_rel >= 0.0 && weights.lambda_con >= 0.0 && weights.lambda_hn >= 0.0,
            Errc::invalid_sizes, "TrainConfig: loss weights must be non-negative");
    require(weights.lambda_rel + weights.lambda_con + weights.lambda_hn > 0.0,
            Errc::invalid_sizes, "TrainConfig: loss weights are all zero");
    require(queue_teacher > 0 && queue_student > 0, Errc::invalid_sizes,
            "TrainConfig: queue sizes must be positive");
    require(teacher_dim > 0 && trunk_hidden > 0 && trunk_out > 0 && proj_hidden > 0 &&
                student_dim > 0,
            Errc::invalid_sizes, "TrainConfig: dims must be positive");
  }
};

// Linear warmup to base_lr, then cosine decay to zero at total_steps.
inline double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                    double base_lr) {
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  double t = static_cast<double>(step - warmup_steps) /
             static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step = 0;
  EncoderGrads m;
  EncoderGrads v;

  static AdamState init(const EncoderParams& p) {
    AdamState s;
    s.m = zero_grads(p);
    s.v = zero_grads(p);
    return s;
  }
};

namespace detail {

template <typename F>
void for_each_param(EncoderParams& p, const EncoderGrads& g, AdamState& st, F&& f) {
  auto visit = [&](Layer& layer, const LayerGrads& lg, LayerGrads& lm, LayerGrads& lv) {
    for (std::size_t i = 0; i < layer.W.data.size(); ++i)
      f(layer.W.data[i], lg.dW.data[i], lm.dW.data[i], lv.dW.data[i]);
    for (std::size_t i = 0; i < layer.b.size(); ++i)
      f(layer.b[i], lg.db[i], lm.db[i], lv.db[i]);
  };
  for (std::size_t l = 0; l < p.trunk.size(); ++l)
    visit(p.trunk[l], g.trunk[l], st.m.trunk[l], st.v.trunk[l]);
  visit(p.matcher, g.matcher, st.m.matcher, st.v.matcher);
  for (std::size_t l = 0; l < p.projector.size(); ++l)
    visit(p.projector[l], g.projector[l], st.m.projector[l], st.v.projector[l]);
}

inline void check_grads_finite(const EncoderGrads& g) {
  auto check = [](const LayerGrads& lg) {
    require(all_finite(lg.dW) && all_finite(std::span<const double>(lg.db)),
            Errc::non_finite_grad, "adam_step: non-finite gradient");
  };
  for (const LayerGrads& lg : g.trunk) check(lg);
  check(g.matcher);
  for (const LayerGrads& lg : g.projector) check(lg);
}

}  // namespace detail

// Bias-corrected Adam with decoupled weight decay applied before the update.
inline void adam_step(EncoderParams& params, const EncoderGrads& grads, AdamState& state,
                      double lr, double weight_decay) {
  detail::check_grads_finite(grads);
  ++state.step;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  double b1 = state.beta1, b2 = state.beta2, eps = state.eps;
  detail::for_each_param(params, grads, state,
                         [lr, weight_decay, b1, b2, eps, bc1, bc2](double& theta, double g,
                                                                   double& m, double& v) {
                           theta -= lr * weight_decay * theta;
                           m = b1 * m + (1.0 - b1) * g;
                           v = b2 * v + (1.0 - b2) * g * g;
                           theta -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
                         });
}

struct StepRow {
  double rel = 0.0;
  double con = 0.0;
  double hn = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

struct EpochRow {
  int epoch = 0;
  double loss_rel = 0.0;
  double loss_con = 0.0;
  double loss_hn = 0.0;
  double loss_total = 0.0;
  double lr = 0.0;  // learning rate at the epoch's final step
  std::size_t qT_fill = 0;
  std::size_t qS_fill = 0;
};

struct TrainReport {
  std::vector<EpochRow> epochs;
  std::vector<StepRow> steps;
  bool aborted = false;
  std::string abort_reason;
  double wall_seconds = 0.0;
};

struct BatchForward {
  Mat out;
  std::vector<ForwardTrace> traces;
};

inline BatchForward forward_batch(const EncoderParams& p, const Mat& X, Head head, int threads) {
  std::size_t out_dim = head == Head::matcher    ? p.matcher_out_dim()
                        : head == Head::projector ? p.projector_out_dim()
                                                  : p.trunk_out_dim();
  BatchForward bf;
  bf.out = Mat(X.rows, out_dim);
  bf.traces.resize(X.rows);
  parallel_rows(X.rows, threads, [&](std::size_t i) {
    Vec x(X.row(i).begin(), X.row(i).end());
    auto [y, trace] = forward(p, x, head);
    bf.out.set_row(i, y);
    bf.traces[i] = std::move(trace);
  });
  return bf;
}

inline Mat forward_batch_value(const EncoderParams& p, const Mat& X, Head head, int threads) {
  std::size_t out_dim = head == Head::matcher    ? p.matcher_out_dim()
                        : head == Head::projector ? p.projector_out_dim()
                                                  : p.trunk_out_dim();
  Mat out(X.rows, out_dim);
  parallel_rows(X.rows, threads, [&](std::size_t i) {
    Vec x(X.row(i).begin(), X.row(i).end());
    out.set_row(i, forward_value(p, x, head));
  });
  return out;
}

// Accumulates per-row reverse passes in row order (scheduling-independent).
inline EncoderGrads backward_batch(const EncoderParams& p, const std::vector<ForwardTrace>& traces,
                                   const Mat& upstream) {
  EncoderGrads total = zero_grads(p);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    Vec g(upstream.row(i).begin(), upstream.row(i).end());
    auto [grads, gx] = backward(p, traces[i], g);
    accumulate(total, grads);
  }
  return total;
}

namespace detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, Rng rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

// Two augmented views of a training batch; per-item draws are sequential so
// generation is deterministic for a given step rng.
inline std::pair<Mat, Mat> make_views(const std::vector<LatentImage>& train,
                                      const std::vector<std::size_t>& order, std::size_t offset,
                                      std::size_t n, const AugmentConfig& aug, Rng& rng) {
  std::size_t d = train.front().latent.size();
  Mat v1(n, d), v2(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec& latent = train[order[offset + i]].latent;
    v1.set_row(i, augment(latent, aug, rng));
    v2.set_row(i, augment(latent, aug, rng));
  }
  return {std::move(v1), std::move(v2)};
}

inline LossValue skipped_loss(std::size_t grad_slots, std::size_t rows, std::size_t cols) {
  LossValue lv;
  lv.skipped = true;
  lv.grads.assign(grad_slots, Mat(rows, cols));
  return lv;
}

inline Mat normalized_copy(const Mat& m) {
  Mat out = m;
  l2_normalize_rows(out);
  return out;
}

inline void add_scaled_rows(Mat& into, const Mat& from, double scale) {
  for (std::size_t i = 0; i < into.data.size(); ++i) into.data[i] += scale * from.data[i];
}

struct EpochAggregator {
  double rel = 0.0, con = 0.0, hn = 0.0, total = 0.0;
  std::size_t n = 0;

  void add(const StepRow& s) {
    rel += s.rel;
    con += s.con;
    hn += s.hn;
    total += s.total;
    ++n;
  }

  EpochRow finish(int epoch, double last_lr, std::size_t qt, std::size_t qs) const {
    double inv = n ? 1.0 / static_cast<double>(n) : 0.0;
    return {epoch, rel * inv, con * inv, hn * inv, total * inv, last_lr, qt, qs};
  }
};

}  // namespace detail

// Teacher pretraining: momentum-contrast InfoNCE plus a nearest-neighbor
// entropy regularizer on the query embeddings, at the teacher descriptor
// dimension. The regularizer value is reported in the `rel` column.
inline std::pair<EncoderParams, TrainReport> pretrain_teacher(const CopyCorpus& corpus,
                                                              const TrainConfig& cfg) {
  cfg.validate();
  require(!corpus.train.empty(), Errc::invalid_sizes, "pretrain_teacher: empty train split");
  const std::size_t n_train = corpus.train.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t spe = n_train / batch;
  require(spe >= 1, Errc::invalid_sizes, "pretrain_teacher: batch larger than train split");

  auto t0 = std::chrono::steady_clock::now();
  Rng root = Rng(cfg.seed).split("teacher");

  EncoderSpec spec;
  spec.trunk_sizes = {corpus.train.front().latent.size(), cfg.trunk_hidden, cfg.trunk_out};
  spec.matcher_out = cfg.teacher_dim;
  spec.projector_sizes = {cfg.teacher_dim};
  EncoderParams params = make_encoder(spec, root.split("init"));
  EncoderParams key = params;

  InstanceQueue queue(cfg.queue_teacher, cfg.teacher_dim);
  AdamState adam = AdamState::init(params);
  const std::size_t total_steps = static_cast<std::size_t>(cfg.teacher_epochs) * spe;
  const std::size_t warmup_steps = static_cast<std::size_t>(cfg.warmup_epochs) * spe;
  const std::size_t warmup_fill = std::max<std::size_t>(1, cfg.queue_teacher / 4);

  TrainReport report;
  InfoNceOptions nce;
  nce.exclude_positive = cfg.exclude_positive;
  nce.warmup_min_rows = warmup_fill;

  for (int epoch = 0; epoch < cfg.teacher_epochs && !report.aborted; ++epoch) {
    auto order = detail::epoch_order(n_train, root.split("order").split(epoch));
    detail::EpochAggregator agg;
    double last_lr = 0.0;
    for (std::size_t s = 0; s < spe; ++s) {
      std::size_t global = static_cast<std::size_t>(epoch) * spe + s;
      double lr = lr_at(global, total_steps, warmup_steps, cfg.lr);
      last_lr = lr;
      Rng step_rng = root.split("augment").split(global);
      auto [x1, x2] = detail::make_views(corpus.train, order, s * batch, batch,
                                         corpus.config.augment, step_rng);
      try {
        BatchForward zq = forward_batch(params, x1, Head::projector, cfg.threads);
        Mat zk = forward_batch_value(key, x2, Head::projector, cfg.threads);

        LossValue con = queue.fill() == 0
                            ? detail::skipped_loss(2, batch, cfg.teacher_dim)
                            : infonce_loss(zq.out, zk, queue.as_matrix(),
                                           cfg.temps.tau_contrastive, nce);
        LossValue kol = koleo_loss(zq.out);
        double total = con.value + cfg.koleo_weight * kol.value;

        Mat upstream = con.grads[0];
        detail::add_scaled_rows(upstream, kol.grads[0], cfg.koleo_weight);
        EncoderGrads grads = backward_batch(params, zq.traces, upstream);
        adam_step(params, grads, adam, lr, cfg.weight_decay);
        momentum_update(key, params, cfg.momentum);
        queue.enqueue_batch(detail::normalized_copy(zk));

        StepRow row{kol.value, con.value, 0.0, total, lr};
        report.steps.push_back(row);
        agg.add(row);
      } catch (const Error& e) {
        report.aborted = true;
        report.abort_reason = e.what();
        break;
      }
    }
    report.epochs.push_back(agg.finish(epoch, last_lr, queue.fill(), 0));
  }

  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(params), std::move(report)};
}

// Student distillation. Per step: two augmented views; the frozen teacher
// embeds view 1; the student's matcher output is pulled toward the teacher's
// similarity distribution over the teacher queue (or regressed directly in
// fkd mode); the projector output of view 1 forms the contrastive query
// against momentum keys of view 2 and the student-side cross-view similarity
// matrix feeds the hard-negative penalty.
inline std::pair<EncoderParams, TrainReport> distill_student(const CopyCorpus& corpus,
                                                             const EncoderParams& teacher,
                                                             const TrainConfig& cfg) {
  cfg.validate();
  require(!corpus.train.empty(), Errc::invalid_sizes, "distill_student: empty train split");
  require(teacher.input_dim() == corpus.train.front().latent.size(), Errc::dim_mismatch,
          "distill_student: teacher input dim does not match corpus");

  const std::size_t teacher_out = teacher.projector_out_dim();
  const std::size_t n_train = corpus.train.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t spe = n_train / batch;
  require(spe >= 1, Errc::invalid_sizes, "distill_student: batch larger than train split");

  auto t0 = std::chrono::steady_clock::now();
  Rng root = Rng(cfg.seed).split("distill");

  EncoderSpec spec;
  spec.trunk_sizes = {corpus.train.front().latent.size(), cfg.trunk_hidden, cfg.trunk_out};
  spec.matcher_out = teacher_out;
  spec.projector_sizes = {cfg.proj_hidden, cfg.student_dim};
  EncoderParams student = make_encoder(spec, root.split("init"));
  EncoderParams key = student;

  InstanceQueue q_teacher(cfg.queue_teacher, teacher_out);
  InstanceQueue q_student(cfg.queue_student, cfg.student_dim);
  AdamState adam = AdamState::init(student);
  const std::size_t total_steps = static_cast<std::size_t>(cfg.epochs) * spe;
  const std::size_t warmup_steps = static_cast<std::size_t>(cfg.warmup_epochs) * spe;
  const std::size_t warmup_t = std::max<std::size_t>(2, cfg.queue_teacher / 4);
  const std::size_t warmup_s = std::max<std::size_t>(1, cfg.queue_student / 4);

  const LossWeights& w = cfg.weights;
  TrainReport report;
  InfoNceOptions nce;
  nce.exclude_positive = cfg.exclude_positive;
  nce.warmup_min_rows = warmup_s;
  Mat neg_mask = off_diagonal_mask(batch);

  for (int epoch = 0; epoch < cfg.epochs && !report.aborted; ++epoch) {
    auto order = detail::epoch_order(n_train, root.split("order").split(epoch));
    detail::EpochAggregator agg;
    double last_lr = 0.0;
    for (std::size_t s = 0; s < spe; ++s) {
      std::size_t global = static_cast<std::size_t>(epoch) * spe + s;
      double lr = lr_at(global, total_steps, warmup_steps, cfg.lr);
      last_lr = lr;
      Rng step_rng = root.split("augment").split(global);
      auto [x1, x2] = detail::make_views(corpus.train, order, s * batch, batch,
                                         corpus.config.augment, step_rng);
      try {
        Mat h_teacher = forward_batch_value(teacher, x1, Head::projector, cfg.threads);

        EncoderGrads grads = zero_grads(student);
        LossValue rel, con, hn;
        rel.grads.assign(1, Mat(batch, teacher_out));
        con.grads.assign(2, Mat(batch, cfg.student_dim));
        hn.grads.assign(1, Mat(batch, batch));

        if (w.lambda_rel > 0.0) {
          BatchForward matched = forward_batch(student, x1, Head::matcher, cfg.threads);
          if (cfg.distill_mode == DistillMode::fkd) {
            rel = fkd_loss(matched.out, h_teacher);
          } else {
            rel = q_teacher.fill() == 0
                      ? detail::skipped_loss(1, batch, teacher_out)
                      : rsd_loss(h_teacher, matched.out, q_teacher.as_matrix(), cfg.temps,
                                 warmup_t);
          }
          if (!rel.skipped) {
            Mat upstream = rel.grads[0];
            for (double& g : upstream.data) g *= w.lambda_rel;
            accumulate(grads, backward_batch(student, matched.traces, upstream));
          }
        }

        BatchForward z_query = forward_batch(student, x1, Head::projector, cfg.threads);
        Mat z_key_momentum = forward_batch_value(key, x2, Head::projector, cfg.threads);

        if (w.lambda_con > 0.0) {
          con = q_student.fill() == 0
                    ? detail::skipped_loss(2, batch, cfg.student_dim)
                    : infonce_loss(z_query.out, z_key_momentum, q_student.as_matrix(),
                                   cfg.temps.tau_contrastive, nce);
        }

        Mat g_query(batch, cfg.student_dim);
        detail::add_scaled_rows(g_query, con.grads[0], w.lambda_con);

        if (w.lambda_hn > 0.0) {
          BatchForward z_cross = forward_batch(student, x2, Head::projector, cfg.threads);
          Mat S = cross_view_similarity(z_query.out, z_cross.out);
          hn = hn_loss(S, neg_mask, cfg.hn_mode);
          auto [g_zq, g_zk] = cross_view_similarity_vjp(z_query.out, z_cross.out, hn.grads[0]);
          detail::add_scaled_rows(g_query, g_zq, w.lambda_hn);
          Mat g_key = g_zk;
          for (double& g : g_key.data) g *= w.lambda_hn;
          accumulate(grads, backward_batch(student, z_cross.traces, g_key));
        }

        accumulate(grads, backward_batch(student, z_query.traces, g_query));

        double total = w.lambda_rel * rel.value + w.lambda_con * con.value + w.lambda_hn * hn.value;
        adam_step(student, grads, adam, lr, cfg.weight_decay);
        momentum_update(key, student, cfg.momentum);
        q_teacher.enqueue_batch(detail::normalized_copy(h_teacher));
        q_student.enqueue_batch(detail::normalized_copy(z_key_momentum));

        StepRow row{rel.value, con.value, hn.value, total, lr};
        report.steps.push_back(row);
        agg.add(row);
      } catch (const Error& e) {
        report.aborted = true;
        report.abort_reason = e.what();
        break;
      }
    }
    report.epochs.push_back(agg.finish(epoch, last_lr, q_teacher.fill(), q_student.fill()));
  }

  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(student), std::move(report)};
}

}  // namespace rdcd
