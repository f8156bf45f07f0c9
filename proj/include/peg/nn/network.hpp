#ifndef PEG_NN_NETWORK_HPP_
#define PEG_NN_NETWORK_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace peg::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class LayerKind : int { kNormTime = 0, kConv1DTime, kDense, kReLU, kSoftmax };

/**
 * One layer of a sequential network. Inputs are flattened time windows laid
 * out row-major in time: feature index = t * channels + c, oldest step first.
 *
 * NormTime normalises every channel over the time axis; `tail` extra features
 * after the window pass through unchanged (used to append an action code).
 * Conv1DTime is a valid (unpadded) convolution along time whose kernel spans
 * all channels.
 */
struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  int window = 0;
  int channels = 0;
  int tail = 0;
  double eps = 0.1;
  int filters = 0;
  int kernel = 0;
  int fan_in = 0;
  int fan_out = 0;

  static LayerSpec norm_time(int window, int channels, double eps = 0.1, int tail = 0) {
    LayerSpec s;
    s.kind = LayerKind::kNormTime;
    s.window = window;
    s.channels = channels;
    s.eps = eps;
    s.tail = tail;
    return s;
  }
  static LayerSpec conv1d_time(int window, int channels, int filters, int kernel) {
    LayerSpec s;
    s.kind = LayerKind::kConv1DTime;
    s.window = window;
    s.channels = channels;
    s.filters = filters;
    s.kernel = kernel;
    return s;
  }
  static LayerSpec dense(int fan_in, int fan_out) {
    LayerSpec s;
    s.kind = LayerKind::kDense;
    s.fan_in = fan_in;
    s.fan_out = fan_out;
    return s;
  }
  static LayerSpec relu(int size) {
    LayerSpec s;
    s.kind = LayerKind::kReLU;
    s.fan_in = s.fan_out = size;
    return s;
  }
  static LayerSpec softmax(int size) {
    LayerSpec s;
    s.kind = LayerKind::kSoftmax;
    s.fan_in = s.fan_out = size;
    return s;
  }

  int input_size() const {
    switch (kind) {
      case LayerKind::kNormTime: return window * channels + tail;
      case LayerKind::kConv1DTime: return window * channels;
      default: return fan_in;
    }
  }
  int output_size() const {
    switch (kind) {
      case LayerKind::kNormTime: return window * channels + tail;
      case LayerKind::kConv1DTime: return (window - kernel + 1) * filters;
      default: return fan_out;
    }
  }
  int param_count() const {
    switch (kind) {
      case LayerKind::kConv1DTime: return filters * kernel * channels + filters;
      case LayerKind::kDense: return fan_in * fan_out + fan_out;
      default: return 0;
    }
  }
};

using NetSpec = std::vector<LayerSpec>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void validate(const NetSpec& spec) {
  if (spec.empty()) throw ShapeError("empty network");
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const LayerSpec& l = spec[i];
    switch (l.kind) {
      case LayerKind::kNormTime:
        if (l.window < 2) throw ShapeError("NormTime needs a window of at least 2");
        if (!(l.eps > 0.0)) throw ShapeError("NormTime eps must be > 0");
        if (l.channels < 1 || l.tail < 0) throw ShapeError("NormTime channel counts");
        break;
      case LayerKind::kConv1DTime:
        if (l.kernel < 1 || l.kernel > l.window || l.filters < 1 || l.channels < 1)
          throw ShapeError("Conv1DTime shape");
        break;
      default:
        if (l.fan_in < 1 || l.fan_out < 1) throw ShapeError("layer width must be >= 1");
        break;
    }
    if (i > 0 && spec[i - 1].output_size() != l.input_size())
      throw ShapeError("layer " + std::to_string(i) + " input does not match previous output");
  }
}

inline int param_count(const NetSpec& spec) {
  int n = 0;
  for (const auto& l : spec) n += l.param_count();
  return n;
}

/// Stable textual form; the checkpoint format hashes it.
inline std::string describe(const NetSpec& spec) {
  std::string out;
  for (const auto& l : spec) {
    out += std::to_string(static_cast<int>(l.kind)) + ":" + std::to_string(l.window) + "," +
           std::to_string(l.channels) + "," + std::to_string(l.tail) + "," +
           std::to_string(l.filters) + "," + std::to_string(l.kernel) + "," +
           std::to_string(l.fan_in) + "," + std::to_string(l.fan_out);
    if (l.kind == LayerKind::kNormTime) out += ",eps=" + std::to_string(l.eps);
    out += ";";
  }
  return out;
}

inline std::uint64_t spec_hash(const NetSpec& spec) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : describe(spec)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename Scalar = double>
struct ParamSet {
  Vector<Scalar> values;
  std::vector<Eigen::Index> offsets;  // one per layer
  std::uint64_t init_seed = 0;

  Eigen::Index size() const { return values.size(); }
};

template <typename Scalar = double>
std::vector<Eigen::Index> layer_offsets(const NetSpec& spec) {
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& l : spec) {
    offsets.push_back(at);
    at += l.param_count();
  }
  return offsets;
}

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
template <typename Scalar = double>
ParamSet<Scalar> init_params(const NetSpec& spec, std::uint64_t seed) {
  validate(spec);
  ParamSet<Scalar> p;
  p.init_seed = seed;
  p.offsets = layer_offsets<Scalar>(spec);
  p.values = Vector<Scalar>::Zero(param_count(spec));
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const LayerSpec& l = spec[i];
    int n_weights = 0;
    double fan_in = 0.0;
    double fan_out = 0.0;
    if (l.kind == LayerKind::kDense) {
      n_weights = l.fan_in * l.fan_out;
      fan_in = l.fan_in;
      fan_out = l.fan_out;
    } else if (l.kind == LayerKind::kConv1DTime) {
      n_weights = l.filters * l.kernel * l.channels;
      fan_in = l.kernel * l.channels;
      fan_out = l.kernel * l.filters;
    } else {
      continue;
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (int k = 0; k < n_weights; ++k) p.values[p.offsets[i] + k] = static_cast<Scalar>(u(rng));
  }
  return p;
}

/**
 * Time-axis layer normalisation of a T x C window:
 * out(t, c) = (x(t, c) - mean_c) / (eps + std_c), population std over t.
 */
template <typename Derived>
Matrix<typename Derived::Scalar> layer_norm_time(const Eigen::MatrixBase<Derived>& window,
                                                 typename Derived::Scalar eps) {
  using Scalar = typename Derived::Scalar;
  if (window.rows() < 2) throw ShapeError("layer_norm_time needs T >= 2");
  if (!(eps > Scalar(0))) throw ShapeError("layer_norm_time needs eps > 0");
  Matrix<Scalar> out(window.rows(), window.cols());
  for (Eigen::Index c = 0; c < window.cols(); ++c) {
    const Scalar mean = window.col(c).mean();
    const auto centred = (window.col(c).array() - mean).eval();
    const Scalar sd = std::sqrt(centred.square().mean());
    out.col(c) = (centred / (eps + sd)).matrix();
  }
  return out;
}

template <typename Scalar = double>
struct ForwardCache {
  std::vector<Matrix<Scalar>> inputs;  // input of every layer, batch in columns
  std::vector<Matrix<Scalar>> stds;    // NormTime: per-sample channel std (C x B)
  Matrix<Scalar> output;
};

namespace detail {

template <typename Scalar>
Eigen::Map<const Matrix<Scalar>> weights(const LayerSpec& l, const ParamSet<Scalar>& p,
                                         std::size_t layer) {
  const Scalar* base = p.values.data() + p.offsets[layer];
  if (l.kind == LayerKind::kDense) return {base, l.fan_out, l.fan_in};
  return {base, l.filters, l.kernel * l.channels};
}

template <typename Scalar>
Eigen::Map<const Vector<Scalar>> bias(const LayerSpec& l, const ParamSet<Scalar>& p,
                                      std::size_t layer) {
  const Scalar* base = p.values.data() + p.offsets[layer];
  if (l.kind == LayerKind::kDense) return {base + l.fan_out * l.fan_in, l.fan_out};
  return {base + l.filters * l.kernel * l.channels, l.filters};
}

template <typename Scalar>
Matrix<Scalar> norm_time_forward(const LayerSpec& l, const Matrix<Scalar>& x,
                                 Matrix<Scalar>* stds) {
  const Eigen::Index batch = x.cols();
  Matrix<Scalar> y = x;
  if (stds) stds->resize(l.channels, batch);
  const Scalar eps = static_cast<Scalar>(l.eps);
  for (Eigen::Index b = 0; b < batch; ++b) {
    Eigen::Map<const Matrix<Scalar>, 0, Eigen::OuterStride<>> win(
        x.col(b).data(), l.channels, l.window, Eigen::OuterStride<>(l.channels));
    Eigen::Map<Matrix<Scalar>, 0, Eigen::OuterStride<>> out(
        y.col(b).data(), l.channels, l.window, Eigen::OuterStride<>(l.channels));
    // win is C x T here: each row is one channel over time.
    const Vector<Scalar> mean = win.rowwise().mean();
    const Matrix<Scalar> centred = win.colwise() - mean;
    const Vector<Scalar> sd = (centred.array().square().rowwise().sum() / Scalar(l.window)).sqrt();
    out = (centred.array().colwise() / (sd.array() + eps)).matrix();
    if (stds) stds->col(b) = sd;
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> norm_time_backward(const LayerSpec& l, const Matrix<Scalar>& x,
                                  const Matrix<Scalar>& stds, const Matrix<Scalar>& grad_out) {
  Matrix<Scalar> grad_in = grad_out;  // tail rows pass through
  const Scalar eps = static_cast<Scalar>(l.eps);
  const Scalar t_count = static_cast<Scalar>(l.window);
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    Eigen::Map<const Matrix<Scalar>, 0, Eigen::OuterStride<>> win(
        x.col(b).data(), l.channels, l.window, Eigen::OuterStride<>(l.channels));
    Eigen::Map<const Matrix<Scalar>, 0, Eigen::OuterStride<>> g(
        grad_out.col(b).data(), l.channels, l.window, Eigen::OuterStride<>(l.channels));
    Eigen::Map<Matrix<Scalar>, 0, Eigen::OuterStride<>> gi(
        grad_in.col(b).data(), l.channels, l.window, Eigen::OuterStride<>(l.channels));
    for (int c = 0; c < l.channels; ++c) {
      const Scalar sd = stds(c, b);
      const Scalar denom = eps + sd;
      const auto centred = (win.row(c).array() - win.row(c).mean()).eval();
      const auto gc = g.row(c).array();
      // y = u / (eps + s), u = x - mean, s = sqrt(mean(u^2)).
      auto row = ((gc - gc.mean()) / denom).eval();
      if (sd > Scalar(0)) {
        const Scalar dot = (gc * centred).sum();
        row -= dot / (denom * denom) * centred / (t_count * sd);
      }
      gi.row(c) = row.matrix();
    }
  }
  return grad_in;
}

}  // namespace detail

/// Batched forward pass; `input` holds one sample per column.
template <typename Scalar>
Matrix<Scalar> forward(const NetSpec& spec, const ParamSet<Scalar>& params,
                       const Matrix<Scalar>& input, ForwardCache<Scalar>* cache = nullptr) {
  if (params.size() != param_count(spec) || params.offsets.size() != spec.size())
    throw ShapeError("parameter vector does not match network");
  if (input.rows() != spec.front().input_size())
    throw ShapeError("input has " + std::to_string(input.rows()) + " features, network expects " +
                     std::to_string(spec.front().input_size()));
  if (cache) {
    cache->inputs.clear();
    cache->stds.assign(spec.size(), Matrix<Scalar>());
  }
  Matrix<Scalar> x = input;
  const Eigen::Index batch = input.cols();
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const LayerSpec& l = spec[i];
    if (cache) cache->inputs.push_back(x);
    switch (l.kind) {
      case LayerKind::kNormTime:
        x = detail::norm_time_forward(l, x, cache ? &cache->stds[i] : nullptr);
        break;
      case LayerKind::kConv1DTime: {
        const auto w = detail::weights(l, params, i);
        const auto b = detail::bias(l, params, i);
        const int steps = l.window - l.kernel + 1;
        Matrix<Scalar> y(steps * l.filters, batch);
        for (int t = 0; t < steps; ++t) {
          y.middleRows(t * l.filters, l.filters).noalias() =
              w * x.middleRows(t * l.channels, l.kernel * l.channels);
          y.middleRows(t * l.filters, l.filters).colwise() += b;
        }
        x = std::move(y);
        break;
      }
      case LayerKind::kDense: {
        const auto w = detail::weights(l, params, i);
        const auto b = detail::bias(l, params, i);
        Matrix<Scalar> y = w * x;
        y.colwise() += b;
        x = std::move(y);
        break;
      }
      case LayerKind::kReLU:
        x = x.cwiseMax(Scalar(0));
        break;
      case LayerKind::kSoftmax: {
        Matrix<Scalar> y = (x.rowwise() - x.colwise().maxCoeff()).array().exp().matrix();
        y.array().rowwise() /= y.colwise().sum().array();
        x = std::move(y);
        break;
      }
    }
  }
  if (cache) cache->output = x;
  return x;
}

template <typename Scalar>
Vector<Scalar> forward_one(const NetSpec& spec, const ParamSet<Scalar>& params,
                           const Vector<Scalar>& input) {
  return forward(spec, params, Matrix<Scalar>(input)).col(0);
}

/**
 * Reverse pass for a loss whose gradient w.r.t. the network output is
 * `output_grad` (same shape as the forward output). Returns the parameter
 * gradient summed over the batch. If `input_grad` is given it receives the
 * gradient w.r.t. the network input.
 */
template <typename Scalar>
Vector<Scalar> backward(const NetSpec& spec, const ParamSet<Scalar>& params,
                        const ForwardCache<Scalar>& cache, const Matrix<Scalar>& output_grad,
                        Matrix<Scalar>* input_grad = nullptr) {
  if (cache.inputs.size() != spec.size()) throw ShapeError("cache does not match network");
  if (output_grad.rows() != cache.output.rows() || output_grad.cols() != cache.output.cols())
    throw ShapeError("output gradient shape mismatch");
  Vector<Scalar> grad = Vector<Scalar>::Zero(params.size());
  Matrix<Scalar> g = output_grad;
  for (std::size_t ii = spec.size(); ii-- > 0;) {
    const LayerSpec& l = spec[ii];
    const Matrix<Scalar>& x = cache.inputs[ii];
    switch (l.kind) {
      case LayerKind::kNormTime:
        g = detail::norm_time_backward(l, x, cache.stds[ii], g);
        break;
      case LayerKind::kConv1DTime: {
        const auto w = detail::weights(l, params, ii);
        const int steps = l.window - l.kernel + 1;
        const Eigen::Index off = params.offsets[ii];
        Eigen::Map<Matrix<Scalar>> gw(grad.data() + off, l.filters, l.kernel * l.channels);
        Eigen::Map<Vector<Scalar>> gb(grad.data() + off + gw.size(), l.filters);
        Matrix<Scalar> gx = Matrix<Scalar>::Zero(x.rows(), x.cols());
        for (int t = 0; t < steps; ++t) {
          const auto go = g.middleRows(t * l.filters, l.filters);
          const auto xs = x.middleRows(t * l.channels, l.kernel * l.channels);
          gw.noalias() += go * xs.transpose();
          gb += go.rowwise().sum();
          gx.middleRows(t * l.channels, l.kernel * l.channels).noalias() += w.transpose() * go;
        }
        g = std::move(gx);
        break;
      }
      case LayerKind::kDense: {
        const auto w = detail::weights(l, params, ii);
        const Eigen::Index off = params.offsets[ii];
        Eigen::Map<Matrix<Scalar>> gw(grad.data() + off, l.fan_out, l.fan_in);
        Eigen::Map<Vector<Scalar>> gb(grad.data() + off + gw.size(), l.fan_out);
        gw.noalias() = g * x.transpose();
        gb = g.rowwise().sum();
        g = (w.transpose() * g).eval();
        break;
      }
      case LayerKind::kReLU:
        g = (x.array() > Scalar(0)).select(g, Scalar(0));
        break;
      case LayerKind::kSoftmax: {
        const Matrix<Scalar>& y = cache.inputs.size() > ii + 1 ? cache.inputs[ii + 1] : cache.output;
        const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> dots = (y.array() * g.array()).colwise().sum();
        g = (y.array() * (g.rowwise() - dots).array()).matrix();
        break;
      }
    }
  }
  if (input_grad) *input_grad = std::move(g);
  return grad;
}

}  // namespace peg::nn

#endif  // PEG_NN_NETWORK_HPP_
