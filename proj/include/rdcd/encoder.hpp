#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "rdcd/error.hpp"
#include "rdcd/linalg.hpp"
#include "rdcd/rng.hpp"

namespace rdcd {

enum class Activation { relu, identity };

// One fully-connected layer: y = act(W x + b).
struct Layer {
  Mat W;
  Vec b;
  Activation act = Activation::identity;

  std::size_t in_dim() const { return W.cols; }
  std::size_t out_dim() const { return W.rows; }
};

using Mlp = std::vector<Layer>;

// Small perceptron encoder: a trunk shared by two heads. The matcher maps the
// trunk representation to the teacher's descriptor dimension; the projector
// maps it to the compact descriptor. Head outputs are linear; normalization
// happens in the losses and the evaluator, not here.
struct EncoderParams {
  Mlp trunk;
  Layer matcher;
  Mlp projector;

  std::size_t input_dim() const { return trunk.front().in_dim(); }
  std::size_t trunk_out_dim() const { return trunk.back().out_dim(); }
  std::size_t matcher_out_dim() const { return matcher.out_dim(); }
  std::size_t projector_out_dim() const { return projector.back().out_dim(); }
};

enum class Head { trunk, matcher, projector };

struct LayerGrads {
  Mat dW;
  Vec db;
};

struct EncoderGrads {
  std::vector<LayerGrads> trunk;
  LayerGrads matcher;
  std::vector<LayerGrads> projector;
};

namespace detail {

inline std::uint64_t shape_signature(const EncoderParams& p) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto fold = [&h](std::uint64_t x) {
    h ^= x + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  };
  for (const Layer& l : p.trunk) {
    fold(l.in_dim());
    fold(l.out_dim());
    fold(static_cast<std::uint64_t>(l.act));
  }
  fold(p.matcher.in_dim());
  fold(p.matcher.out_dim());
  for (const Layer& l : p.projector) {
    fold(l.in_dim());
    fold(l.out_dim());
    fold(static_cast<std::uint64_t>(l.act));
  }
  return h;
}

}  // namespace detail

// Per-layer inputs and pre-activations retained by forward() so backward()
// can replay the exact path.
struct ForwardTrace {
  struct Step {
    Vec input;
    Vec preact;
    Activation act = Activation::identity;
  };
  Head head = Head::trunk;
  std::vector<Step> steps;
  std::uint64_t signature = 0;
};

inline Vec apply_activation(const Vec& z, Activation act) {
  if (act == Activation::identity) return z;
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] > 0.0 ? z[i] : 0.0;
  return out;
}

namespace detail {

inline Vec run_layer(const Layer& l, const Vec& x, ForwardTrace* trace) {
  require(x.size() == l.in_dim(), Errc::dim_mismatch, "forward: input dim mismatch");
  Vec z = matvec(l.W, x);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += l.b[i];
  if (trace) trace->steps.push_back({x, z, l.act});
  return apply_activation(z, l.act);
}

}  // namespace detail

inline std::pair<Vec, ForwardTrace> forward(const EncoderParams& p, const Vec& x, Head head) {
  ForwardTrace trace;
  trace.head = head;
  trace.signature = detail::shape_signature(p);
  Vec v = x;
  for (const Layer& l : p.trunk) v = detail::run_layer(l, v, &trace);
  if (head == Head::matcher) {
    v = detail::run_layer(p.matcher, v, &trace);
  } else if (head == Head::projector) {
    for (const Layer& l : p.projector) v = detail::run_layer(l, v, &trace);
  }
  return {std::move(v), std::move(trace)};
}

// Forward without retaining a trace (inference / frozen nets).
inline Vec forward_value(const EncoderParams& p, const Vec& x, Head head) {
  Vec v = x;
  for (const Layer& l : p.trunk) v = detail::run_layer(l, v, nullptr);
  if (head == Head::matcher) {
    v = detail::run_layer(p.matcher, v, nullptr);
  } else if (head == Head::projector) {
    for (const Layer& l : p.projector) v = detail::run_layer(l, v, nullptr);
  }
  return v;
}

inline EncoderGrads zero_grads(const EncoderParams& p) {
  EncoderGrads g;
  auto zero_of = [](const Layer& l) {
    return LayerGrads{Mat(l.out_dim(), l.in_dim()), Vec(l.out_dim(), 0.0)};
  };
  for (const Layer& l : p.trunk) g.trunk.push_back(zero_of(l));
  g.matcher = zero_of(p.matcher);
  for (const Layer& l : p.projector) g.projector.push_back(zero_of(l));
  return g;
}

namespace detail {

// Reverse one layer given its trace step; returns the gradient w.r.t. the input.
inline Vec reverse_layer(const Layer& l, const ForwardTrace::Step& step, const Vec& g_out,
                         LayerGrads& acc) {
  Vec gz = g_out;
  if (step.act == Activation::relu) {
    for (std::size_t i = 0; i < gz.size(); ++i)
      if (step.preact[i] <= 0.0) gz[i] = 0.0;
  }
  for (std::size_t i = 0; i < l.out_dim(); ++i) {
    acc.db[i] += gz[i];
    auto wrow = acc.dW.row(i);
    for (std::size_t j = 0; j < l.in_dim(); ++j) wrow[j] += gz[i] * step.input[j];
  }
  return matvec_t(l.W, gz);
}

}  // namespace detail

// Reverse-mode gradients for the path recorded in `trace`. Gradients land in
// a fresh EncoderGrads (zeros off-path); also returns the input gradient.
inline std::pair<EncoderGrads, Vec> backward(const EncoderParams& p, const ForwardTrace& trace,
                                             const Vec& upstream) {
  require(trace.signature == detail::shape_signature(p), Errc::trace_mismatch,
          "backward: trace does not match params");
  EncoderGrads grads = zero_grads(p);
  Vec g = upstream;

  std::size_t step = trace.steps.size();
  auto pop = [&]() -> const ForwardTrace::Step& { return trace.steps[--step]; };

  if (trace.head == Head::matcher) {
    require(upstream.size() == p.matcher.out_dim(), Errc::dim_mismatch,
            "backward: upstream dim mismatch");
    g = detail::reverse_layer(p.matcher, pop(), g, grads.matcher);
  } else if (trace.head == Head::projector) {
    require(upstream.size() == p.projector.back().out_dim(), Errc::dim_mismatch,
            "backward: upstream dim mismatch");
    for (std::size_t li = p.projector.size(); li-- > 0;)
      g = detail::reverse_layer(p.projector[li], pop(), g, grads.projector[li]);
  } else {
    require(upstream.size() == p.trunk.back().out_dim(), Errc::dim_mismatch,
            "backward: upstream dim mismatch");
  }
  for (std::size_t li = p.trunk.size(); li-- > 0;)
    g = detail::reverse_layer(p.trunk[li], pop(), g, grads.trunk[li]);
  require(step == 0, Errc::trace_mismatch, "backward: trace length mismatch");
  return {std::move(grads), std::move(g)};
}

inline void accumulate(EncoderGrads& into, const EncoderGrads& from, double scale = 1.0) {
  auto add = [scale](LayerGrads& a, const LayerGrads& b) {
    for (std::size_t i = 0; i < a.dW.data.size(); ++i) a.dW.data[i] += scale * b.dW.data[i];
    for (std::size_t i = 0; i < a.db.size(); ++i) a.db[i] += scale * b.db[i];
  };
  for (std::size_t i = 0; i < into.trunk.size(); ++i) add(into.trunk[i], from.trunk[i]);
  add(into.matcher, from.matcher);
  for (std::size_t i = 0; i < into.projector.size(); ++i) add(into.projector[i], from.projector[i]);
}

// Xavier-uniform chain builder: weights in +/- sqrt(6/(fan_in+fan_out)),
// biases zero. Hidden layers get ReLU, the final layer is linear.
inline Mlp init_mlp(const std::vector<std::size_t>& sizes, Rng& rng,
                    bool relu_hidden = true) {
  require(sizes.size() >= 2, Errc::empty_spec, "init_mlp: need at least input and output size");
  for (std::size_t s : sizes)
    require(s > 0, Errc::empty_spec, "init_mlp: sizes must be positive");
  Mlp mlp;
  for (std::size_t li = 0; li + 1 < sizes.size(); ++li) {
    std::size_t fan_in = sizes[li], fan_out = sizes[li + 1];
    Layer l;
    l.W = Mat(fan_out, fan_in);
    l.b = Vec(fan_out, 0.0);
    double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& w : l.W.data) w = rng.uniform(-a, a);
    bool is_last = (li + 2 == sizes.size());
    l.act = (relu_hidden && !is_last) ? Activation::relu : Activation::identity;
    mlp.push_back(std::move(l));
  }
  return mlp;
}

struct EncoderSpec {
  std::vector<std::size_t> trunk_sizes;      // input first, trunk representation last
  std::size_t matcher_out = 0;               // teacher descriptor dim
  std::vector<std::size_t> projector_sizes;  // hidden widths then descriptor dim
};

inline EncoderParams make_encoder(const EncoderSpec& spec, const Rng& rng) {
  require(spec.trunk_sizes.size() >= 2, Errc::empty_spec, "make_encoder: trunk spec too short");
  require(spec.matcher_out > 0 && !spec.projector_sizes.empty(), Errc::empty_spec,
          "make_encoder: matcher/projector dims required");
  EncoderParams p;
  Rng trunk_rng = rng.split("trunk");
  p.trunk = init_mlp(spec.trunk_sizes, trunk_rng);

  Rng matcher_rng = rng.split("matcher");
  std::vector<std::size_t> msize{spec.trunk_sizes.back(), spec.matcher_out};
  p.matcher = init_mlp(msize, matcher_rng).front();

  Rng proj_rng = rng.split("projector");
  std::vector<std::size_t> psize{spec.trunk_sizes.back()};
  psize.insert(psize.end(), spec.projector_sizes.begin(), spec.projector_sizes.end());
  p.projector = init_mlp(psize, proj_rng);
  return p;
}

namespace detail {

inline void ema_layer(Layer& key, const Layer& query, double m) {
  require(key.W.rows == query.W.rows && key.W.cols == query.W.cols &&
              key.b.size() == query.b.size(),
          Errc::shape_mismatch, "momentum_update: shape mismatch");
  for (std::size_t i = 0; i < key.W.data.size(); ++i)
    key.W.data[i] = m * key.W.data[i] + (1.0 - m) * query.W.data[i];
  for (std::size_t i = 0; i < key.b.size(); ++i)
    key.b[i] = m * key.b[i] + (1.0 - m) * query.b[i];
}

}  // namespace detail

// EMA update of the key encoder toward the query encoder: theta_k <- m*theta_k + (1-m)*theta_q.
inline void momentum_update(EncoderParams& key, const EncoderParams& query, double m) {
  require(key.trunk.size() == query.trunk.size() &&
              key.projector.size() == query.projector.size(),
          Errc::shape_mismatch, "momentum_update: layer count mismatch");
  for (std::size_t i = 0; i < key.trunk.size(); ++i)
    detail::ema_layer(key.trunk[i], query.trunk[i], m);
  detail::ema_layer(key.matcher, query.matcher, m);
  for (std::size_t i = 0; i < key.projector.size(); ++i)
    detail::ema_layer(key.projector[i], query.projector[i], m);
}

}  // namespace rdcd
