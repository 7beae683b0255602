#include "mlcrnn/crnn.hpp"

#include <sstream>
#include <utility>

namespace mlcrnn {

namespace {

template <typename T>
DagWeights<T> zero_dag_weights(const CrnnDims& d) {
  return {Matrix<T>(d.hidden_dim, d.input_dim),
          {Matrix<T>(d.hidden_dim, d.hidden_dim), Matrix<T>(d.hidden_dim, d.hidden_dim),
           Matrix<T>(d.hidden_dim, d.hidden_dim)},
          Matrix<T>(d.class_count, d.hidden_dim),
          Vector<T>(d.hidden_dim, T(0))};
}

template <typename T>
void check_dag_inputs(const FeatureMap<T>& x, const DagPlan& plan, const DagWeights<T>& w,
                      const Matrix<T>& gw, const Matrix<T>& tw, std::span<const T> g,
                      std::span<const T> t) {
  const std::size_t hidden = w.input.rows();
  std::ostringstream err;
  if (x.height() != plan.height || x.width() != plan.width) {
    err << "dag_forward: input " << x.shape_string() << " does not match plan lattice "
        << plan.height << "x" << plan.width;
  } else if (x.channels() != w.input.cols()) {
    err << "dag_forward: input has " << x.channels() << " channels, U expects " << w.input.cols();
  } else if (g.size() != gw.cols() || gw.rows() != hidden) {
    err << "dag_forward: global feature length " << g.size() << " does not match G ("
        << gw.rows() << "x" << gw.cols() << ")";
  } else if (t.size() != tw.cols() || tw.rows() != hidden) {
    err << "dag_forward: topic feature length " << t.size() << " does not match T ("
        << tw.rows() << "x" << tw.cols() << ")";
  } else if (w.hidden_bias.size() != hidden) {
    err << "dag_forward: hidden bias length mismatch";
  } else {
    for (const auto& r : w.recurrent) {
      if (r.rows() != hidden || r.cols() != hidden) {
        err << "dag_forward: recurrent matrix must be " << hidden << "x" << hidden;
        break;
      }
    }
  }
  if (!err.str().empty()) throw DimensionError(err.str());
}

}  // namespace

template <typename T>
CrnnParams<T> CrnnParams<T>::zeros(const CrnnDims& dims) {
  if (dims.input_dim == 0 || dims.hidden_dim == 0 || dims.class_count == 0) {
    throw DimensionError("CrnnParams: input, hidden and class dims must be positive");
  }
  CrnnParams p;
  p.dims = dims;
  for (auto& d : p.dags) d = zero_dag_weights<T>(dims);
  p.global = Matrix<T>(dims.hidden_dim, dims.global_dim);
  p.topic = Matrix<T>(dims.hidden_dim, dims.topic_dim);
  p.output_bias.assign(dims.class_count, T(0));
  return p;
}

template <typename T>
FeatureMap<T> dag_forward(const FeatureMap<T>& x, const DagPlan& plan, const DagWeights<T>& weights,
                          const Matrix<T>& global_weights, const Matrix<T>& topic_weights,
                          std::span<const T> g, std::span<const T> t, DagState<T>* state) {
  check_dag_inputs(x, plan, weights, global_weights, topic_weights, g, t);
  const std::size_t hidden = weights.input.rows();

  // Context and bias are the same at every vertex.
  Vector<T> base(weights.hidden_bias);
  matvec_acc<T>(base, global_weights, g);
  matvec_acc<T>(base, topic_weights, t);

  FeatureMap<T> pre(plan.height, plan.width, hidden);
  FeatureMap<T> h(plan.height, plan.width, hidden);
  for (const Coord v : plan.order) {
    auto a = pre.pixel(v.row, v.col);
    std::copy(base.begin(), base.end(), a.begin());
    matvec_acc<T>(a, weights.input, x.pixel(v.row, v.col));
    for (const Neighbor& p : plan.predecessors[plan.linear(v)]) {
      matvec_acc<T>(a, weights.recurrent[static_cast<std::size_t>(p.slot)],
                    std::as_const(h).pixel(p.coord.row, p.coord.col));
    }
    auto out = h.pixel(v.row, v.col);
    for (std::size_t k = 0; k < hidden; ++k) out[k] = a[k] > T(0) ? a[k] : T(0);
  }
  if (state != nullptr) {
    state->pre = pre;
    state->hidden = h;
  }
  return h;
}

template <typename T>
DagBackwardResult<T> dag_backward(const FeatureMap<T>& x, const DagPlan& plan,
                                  const DagWeights<T>& weights, const DagState<T>& state,
                                  const FeatureMap<T>& d_hidden_direct, std::span<const T> g,
                                  std::span<const T> t) {
  const std::size_t hidden = weights.input.rows();
  if (state.hidden.empty() || state.hidden.height() != plan.height ||
      state.hidden.width() != plan.width || state.hidden.channels() != hidden ||
      x.height() != plan.height || x.width() != plan.width ||
      x.channels() != weights.input.cols()) {
    throw StateError("dag_backward: cached state does not belong to this plan and weights");
  }
  if (!d_hidden_direct.same_shape(state.hidden)) {
    throw DimensionError("dag_backward: hidden gradient shape " + d_hidden_direct.shape_string() +
                         " does not match " + state.hidden.shape_string());
  }

  CrnnDims d{weights.input.cols(), hidden, weights.output.rows(), g.size(), t.size()};
  DagBackwardResult<T> r{zero_dag_weights<T>(d), Matrix<T>(hidden, g.size()),
                         Matrix<T>(hidden, t.size()), Vector<T>(hidden, T(0)),
                         FeatureMap<T>(plan.height, plan.width, x.channels())};
  r.grads.output = Matrix<T>(weights.output.rows(), hidden);

  // delta(v) = dh(v) * relu'(pre(v)), filled in reverse topological order.
  FeatureMap<T> delta(plan.height, plan.width, hidden);
  Vector<T> dh(hidden);
  for (auto it = plan.order.rbegin(); it != plan.order.rend(); ++it) {
    const Coord v = *it;
    const auto direct = d_hidden_direct.pixel(v.row, v.col);
    std::copy(direct.begin(), direct.end(), dh.begin());
    const auto h_v = state.hidden.pixel(v.row, v.col);
    for (const Neighbor& s : plan.successors[plan.linear(v)]) {
      const auto slot = static_cast<std::size_t>(s.slot);
      const auto delta_s = std::as_const(delta).pixel(s.coord.row, s.coord.col);
      matvec_transposed_acc<T>(dh, weights.recurrent[slot], delta_s);
      outer_acc<T>(r.grads.recurrent[slot], delta_s, h_v);
    }
    const auto pre_v = state.pre.pixel(v.row, v.col);
    auto delta_v = delta.pixel(v.row, v.col);
    for (std::size_t k = 0; k < hidden; ++k) delta_v[k] = pre_v[k] > T(0) ? dh[k] : T(0);

    const std::span<const T> dv(delta_v.data(), delta_v.size());
    outer_acc<T>(r.grads.input, dv, x.pixel(v.row, v.col));
    matvec_transposed_acc<T>(r.d_input.pixel(v.row, v.col), weights.input, dv);
    for (std::size_t k = 0; k < hidden; ++k) r.context_grad[k] += dv[k];
  }
  r.grads.hidden_bias = r.context_grad;
  outer_acc<T>(r.d_global_weights, r.context_grad, g);
  outer_acc<T>(r.d_topic_weights, r.context_grad, t);
  return r;
}

template <typename T>
FeatureMap<T> crnn_forward(const FeatureMap<T>& x, const std::array<DagPlan, 4>& plans,
                           const CrnnParams<T>& params, std::span<const T> g, std::span<const T> t,
                           CrnnCache<T>* cache) {
  const CrnnDims& d = params.dims;
  if (x.channels() != d.input_dim) {
    throw DimensionError("crnn_forward: input has " + std::to_string(x.channels()) +
                         " channels, layer expects " + std::to_string(d.input_dim));
  }
  FeatureMap<T> logits(x.height(), x.width(), d.class_count);
  for (std::size_t r = 0; r < x.height(); ++r) {
    for (std::size_t c = 0; c < x.width(); ++c) {
      auto o = logits.pixel(r, c);
      std::copy(params.output_bias.begin(), params.output_bias.end(), o.begin());
    }
  }
  std::array<DagState<T>, 4> states;
  for (std::size_t m = 0; m < 4; ++m) {
    if (plans[m].direction != kAllDirections[m]) {
      throw DimensionError("crnn_forward: plans must be ordered SE, SW, NW, NE");
    }
    const auto& w = params.dags[m];
    const FeatureMap<T> h = dag_forward(x, plans[m], w, params.global, params.topic, g, t, &states[m]);
    for (std::size_t r = 0; r < x.height(); ++r) {
      for (std::size_t c = 0; c < x.width(); ++c) {
        matvec_acc<T>(logits.pixel(r, c), w.output, h.pixel(r, c));
      }
    }
  }
  if (cache != nullptr) {
    cache->params = &params;
    cache->plans = &plans;
    cache->input = x;
    cache->global_input.assign(g.begin(), g.end());
    cache->topic_input.assign(t.begin(), t.end());
    cache->states = std::move(states);
    cache->live = true;
  }
  return logits;
}

template <typename T>
CrnnBackwardResult<T> crnn_backward(CrnnCache<T>& cache, const FeatureMap<T>& d_logits) {
  if (!cache.live || cache.params == nullptr || cache.plans == nullptr) {
    throw StateError("crnn_backward: cache is stale or was never filled");
  }
  const CrnnParams<T>& params = *cache.params;
  const CrnnDims& d = params.dims;
  const FeatureMap<T>& x = cache.input;
  if (d_logits.height() != x.height() || d_logits.width() != x.width() ||
      d_logits.channels() != d.class_count) {
    throw DimensionError("crnn_backward: dLogits shape " + d_logits.shape_string() +
                         " does not match forward output");
  }
  const std::span<const T> g = cache.global_input;
  const std::span<const T> t = cache.topic_input;

  CrnnBackwardResult<T> out{CrnnParams<T>::zeros(d), FeatureMap<T>(x.height(), x.width(), d.input_dim),
                            Vector<T>(d.global_dim, T(0)), Vector<T>(d.topic_dim, T(0))};
  for (std::size_t r = 0; r < x.height(); ++r) {
    for (std::size_t c = 0; c < x.width(); ++c) {
      const auto dl = d_logits.pixel(r, c);
      for (std::size_t k = 0; k < d.class_count; ++k) out.grads.output_bias[k] += dl[k];
    }
  }

  Vector<T> context_total(d.hidden_dim, T(0));
  for (std::size_t m = 0; m < 4; ++m) {
    const auto& w = params.dags[m];
    const auto& state = cache.states[m];
    FeatureMap<T> direct(x.height(), x.width(), d.hidden_dim);
    for (std::size_t r = 0; r < x.height(); ++r) {
      for (std::size_t c = 0; c < x.width(); ++c) {
        const auto dl = d_logits.pixel(r, c);
        matvec_transposed_acc<T>(direct.pixel(r, c), w.output, dl);
        outer_acc<T>(out.grads.dags[m].output, dl, state.hidden.pixel(r, c));
      }
    }
    DagBackwardResult<T> db = dag_backward(x, (*cache.plans)[m], w, state, direct, g, t);
    auto& gm = out.grads.dags[m];
    gm.input = std::move(db.grads.input);
    gm.recurrent = std::move(db.grads.recurrent);
    gm.hidden_bias = std::move(db.grads.hidden_bias);
    auto acc = [](std::span<T> dst, std::span<const T> src) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    };
    acc(out.grads.global.values(), db.d_global_weights.values());
    acc(out.grads.topic.values(), db.d_topic_weights.values());
    acc(out.d_input.values(), db.d_input.values());
    acc(context_total, db.context_grad);
  }
  matvec_transposed_acc<T>(out.d_global, params.global, context_total);
  matvec_transposed_acc<T>(out.d_topic, params.topic, context_total);
  cache.live = false;
  return out;
}

template <typename T>
CrnnParams<T> reduce_to_shared_weights(CrnnParams<T> params) {
  for (auto& dag : params.dags) {
    dag.recurrent[1] = dag.recurrent[0];
    dag.recurrent[2] = dag.recurrent[0];
  }
  return params;
}

#define MLCRNN_INSTANTIATE_CRNN(T)                                                                \
  template struct CrnnParams<T>;                                                                  \
  template FeatureMap<T> dag_forward<T>(const FeatureMap<T>&, const DagPlan&, const DagWeights<T>&, \
                                        const Matrix<T>&, const Matrix<T>&, std::span<const T>,   \
                                        std::span<const T>, DagState<T>*);                        \
  template DagBackwardResult<T> dag_backward<T>(const FeatureMap<T>&, const DagPlan&,             \
                                                const DagWeights<T>&, const DagState<T>&,         \
                                                const FeatureMap<T>&, std::span<const T>,         \
                                                std::span<const T>);                              \
  template FeatureMap<T> crnn_forward<T>(const FeatureMap<T>&, const std::array<DagPlan, 4>&,     \
                                         const CrnnParams<T>&, std::span<const T>,                \
                                         std::span<const T>, CrnnCache<T>*);                      \
  template CrnnBackwardResult<T> crnn_backward<T>(CrnnCache<T>&, const FeatureMap<T>&);           \
  template CrnnParams<T> reduce_to_shared_weights<T>(CrnnParams<T>);

MLCRNN_INSTANTIATE_CRNN(float)
MLCRNN_INSTANTIATE_CRNN(double)

}  // namespace mlcrnn
