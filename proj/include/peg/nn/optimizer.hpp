#ifndef PEG_NN_OPTIMIZER_HPP_
#define PEG_NN_OPTIMIZER_HPP_

#include <cmath>
#include <stdexcept>

#include "peg/nn/network.hpp"

namespace peg::nn {

enum class OptimizerKind : int { kSgd = 0, kAdam = 1 };

template <typename Scalar = double>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kAdam;
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);
  std::int64_t steps = 0;
  Vector<Scalar> first_moment;
  Vector<Scalar> second_moment;

  static OptimizerState make(OptimizerKind kind, Eigen::Index n) {
    OptimizerState s;
    s.kind = kind;
    s.first_moment = Vector<Scalar>::Zero(n);
    s.second_moment = Vector<Scalar>::Zero(n);
    return s;
  }
};

class NonFiniteGradient : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// One descent step on `params` (minimising). Plain SGD or Adam.
template <typename Scalar>
void update(ParamSet<Scalar>& params, const Vector<Scalar>& grads, OptimizerState<Scalar>& state,
            Scalar lr) {
  if (grads.size() != params.size()) throw ShapeError("gradient length mismatch");
  if (!grads.allFinite()) throw NonFiniteGradient("non-finite gradient");
  if (state.kind == OptimizerKind::kSgd) {
    params.values -= lr * grads;
    ++state.steps;
    return;
  }
  if (state.first_moment.size() != params.size()) {
    state.first_moment = Vector<Scalar>::Zero(params.size());
    state.second_moment = Vector<Scalar>::Zero(params.size());
  }
  ++state.steps;
  state.first_moment = state.beta1 * state.first_moment + (Scalar(1) - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (Scalar(1) - state.beta2) * grads.cwiseAbs2();
  const Scalar c1 = Scalar(1) - std::pow(state.beta1, static_cast<Scalar>(state.steps));
  const Scalar c2 = Scalar(1) - std::pow(state.beta2, static_cast<Scalar>(state.steps));
  params.values.array() -= lr * (state.first_moment.array() / c1) /
                           ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

}  // namespace peg::nn

#endif  // PEG_NN_OPTIMIZER_HPP_
