#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "mlcrnn/graph.hpp"
#include "mlcrnn/tensor.hpp"

namespace mlcrnn {

struct CrnnDims {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t class_count = 0;
  /// 9 * input_dim with global context, 0 without.
  std::size_t global_dim = 0;
  /// 0 disables the topic input.
  std::size_t topic_dim = 0;

  friend bool operator==(const CrnnDims&, const CrnnDims&) = default;
};

/// Weights private to one of the four DAG passes.
template <typename T>
struct DagWeights {
  Matrix<T> input;                       // U_m: hidden x input
  std::array<Matrix<T>, 3> recurrent;    // W_m^(o): hidden x hidden, one per offset slot
  Matrix<T> output;                      // V_m: classes x hidden
  Vector<T> hidden_bias;                 // b_{h_m}
};

/// Parameters of one contextual recurrent layer. The same type doubles as the
/// gradient buffer of a backward pass.
template <typename T>
struct CrnnParams {
  CrnnDims dims;
  std::array<DagWeights<T>, 4> dags;
  Matrix<T> global;       // G: hidden x global_dim, shared by all DAGs
  Matrix<T> topic;        // T: hidden x topic_dim, shared by all DAGs
  Vector<T> output_bias;  // b_y

  static CrnnParams zeros(const CrnnDims& dims);

  /// Calls f(name, shape, span) for every parameter block in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    for (std::size_t m = 0; m < 4; ++m) {
      const std::string tag = "[" + std::string(direction_name(kAllDirections[m])) + "]";
      auto& d = self.dags[m];
      f("U" + tag, std::vector<std::size_t>{d.input.rows(), d.input.cols()}, d.input.values());
      for (std::size_t o = 0; o < 3; ++o) {
        f("W" + tag + "[" + std::to_string(o) + "]",
          std::vector<std::size_t>{d.recurrent[o].rows(), d.recurrent[o].cols()},
          d.recurrent[o].values());
      }
      f("V" + tag, std::vector<std::size_t>{d.output.rows(), d.output.cols()}, d.output.values());
      f("b_h" + tag, std::vector<std::size_t>{d.hidden_bias.size()},
        std::span(d.hidden_bias.data(), d.hidden_bias.size()));
    }
    f(std::string("G"), std::vector<std::size_t>{self.global.rows(), self.global.cols()},
      self.global.values());
    f(std::string("T"), std::vector<std::size_t>{self.topic.rows(), self.topic.cols()},
      self.topic.values());
    f(std::string("b_y"), std::vector<std::size_t>{self.output_bias.size()},
      std::span(self.output_bias.data(), self.output_bias.size()));
  }
};

/// Pre-activations and hidden states of one DAG pass.
template <typename T>
struct DagState {
  FeatureMap<T> pre;
  FeatureMap<T> hidden;
};

template <typename T>
struct DagBackwardResult {
  DagWeights<T> grads;
  Matrix<T> d_global_weights;  // dG
  Matrix<T> d_topic_weights;   // dT
  /// Sum over vertices of the hidden pre-activation gradients; the shared
  /// context term G g + T t receives exactly this cotangent.
  Vector<T> context_grad;
  FeatureMap<T> d_input;
};

/// One recurrent pass over `plan`:
///   h(v) = relu(U x(v) + sum_{(p, o) in pred(v)} W^(o) h(p) + G g + T t + b_h).
template <typename T>
FeatureMap<T> dag_forward(const FeatureMap<T>& x, const DagPlan& plan, const DagWeights<T>& weights,
                          const Matrix<T>& global_weights, const Matrix<T>& topic_weights,
                          std::span<const T> g, std::span<const T> t, DagState<T>* state = nullptr);

/// Reverse-order pass of one DAG. `d_hidden_direct` carries the per-vertex
/// gradient arriving from the output layer; successor terms are added here.
template <typename T>
DagBackwardResult<T> dag_backward(const FeatureMap<T>& x, const DagPlan& plan,
                                  const DagWeights<T>& weights, const DagState<T>& state,
                                  const FeatureMap<T>& d_hidden_direct, std::span<const T> g,
                                  std::span<const T> t);

/// Everything crnn_backward needs. The referenced params and plans must stay
/// alive and unmodified until the backward call.
template <typename T>
struct CrnnCache {
  const CrnnParams<T>* params = nullptr;
  const std::array<DagPlan, 4>* plans = nullptr;
  FeatureMap<T> input;
  Vector<T> global_input;
  Vector<T> topic_input;
  std::array<DagState<T>, 4> states;
  bool live = false;
};

template <typename T>
struct CrnnBackwardResult {
  CrnnParams<T> grads;
  FeatureMap<T> d_input;
  Vector<T> d_global;  // gradient wrt the global feature vector g
  Vector<T> d_topic;   // gradient wrt the topic vector t
};

/// logits(v) = sum_m V_m h_m(v) + b_y. No softmax is applied here.
template <typename T>
FeatureMap<T> crnn_forward(const FeatureMap<T>& x, const std::array<DagPlan, 4>& plans,
                           const CrnnParams<T>& params, std::span<const T> g, std::span<const T> t,
                           CrnnCache<T>* cache = nullptr);

/// Consumes the cache; a second call throws StateError.
template <typename T>
CrnnBackwardResult<T> crnn_backward(CrnnCache<T>& cache, const FeatureMap<T>& d_logits);

/// Sets every DAG's three recurrent matrices to that DAG's slot-0 matrix.
template <typename T>
CrnnParams<T> reduce_to_shared_weights(CrnnParams<T> params);

}  // namespace mlcrnn
