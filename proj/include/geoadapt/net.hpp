#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "geoadapt/errors.hpp"
#include "geoadapt/geom.hpp"
#include "geoadapt/rng.hpp"
#include "geoadapt/selfsup.hpp"

namespace geoadapt::net {

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Floor applied to probabilities inside logarithms, keeping losses finite.
inline constexpr double kProbFloor = 1e-12;

struct NetConfig {
  // Per-point shared MLP widths; first entry must be 3 (xyz input), last is
  // the pooled feature dimension d.
  std::vector<int> encoder_widths{3, 64, 128, 256};
  int head_hidden = 128;
  int num_classes = 10;           // C
  int num_rotation_classes = 8;   // R
  int num_location_classes = 27;  // L

  int feature_dim() const { return encoder_widths.back(); }

  void validate() const {
    if (encoder_widths.size() < 2 || encoder_widths.front() != 3) {
      throw ArgumentError("NetConfig: encoder widths must start at 3");
    }
    for (int w : encoder_widths) {
      if (w <= 0) throw ArgumentError("NetConfig: widths must be positive");
    }
    if (head_hidden <= 0 || num_classes < 2 || num_rotation_classes < 2 ||
        num_location_classes < 2) {
      throw ArgumentError("NetConfig: invalid head sizing");
    }
  }
};

template <class Scalar>
struct Linear {
  Matrix<Scalar> weight;  // out x in
  Vector<Scalar> bias;    // out
};

// Fully connected stack; ReLU between layers, none after the last.
template <class Scalar>
struct Mlp {
  std::vector<Linear<Scalar>> layers;

  int in_dim() const { return static_cast<int>(layers.front().weight.cols()); }
  int out_dim() const { return static_cast<int>(layers.back().weight.rows()); }
};

namespace detail {

// Weights and biases uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]; weight
// entries are drawn in column-major (storage) order, then the bias.
template <class Scalar>
Mlp<Scalar> make_mlp(const std::vector<int>& widths, Rng& rng) {
  Mlp<Scalar> mlp;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear<Scalar> layer;
    layer.weight.resize(out, in);
    layer.bias.resize(out);
    for (int j = 0; j < in; ++j) {
      for (int i = 0; i < out; ++i) {
        layer.weight(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
      }
    }
    for (int i = 0; i < out; ++i) {
      layer.bias[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

template <class Scalar>
void zero_mlp(Mlp<Scalar>& mlp) {
  for (auto& l : mlp.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

template <class Scalar>
bool mlp_finite(const Mlp<Scalar>& mlp) {
  for (const auto& l : mlp.layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

}  // namespace detail

// Encoder + three classifier heads. The same structure doubles as the
// gradient / optimizer-moment container (zeros_like).
template <class Scalar>
struct ModelState {
  NetConfig config;
  Mlp<Scalar> encoder;
  Mlp<Scalar> head_cls;
  Mlp<Scalar> head_rot;
  Mlp<Scalar> head_loc;

  // Initialization order is fixed (encoder, cls, rot, loc) so that disabling
  // a head at train time never shifts the init stream.
  static ModelState init(const NetConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelState s;
    s.config = cfg;
    const int d = cfg.feature_dim();
    s.encoder = detail::make_mlp<Scalar>(cfg.encoder_widths, rng);
    s.head_cls =
        detail::make_mlp<Scalar>({d, cfg.head_hidden, cfg.num_classes}, rng);
    s.head_rot = detail::make_mlp<Scalar>(
        {d, cfg.head_hidden, cfg.num_rotation_classes}, rng);
    s.head_loc = detail::make_mlp<Scalar>(
        {d, cfg.head_hidden, cfg.num_location_classes}, rng);
    return s;
  }

  static ModelState zeros_like(const ModelState& other) {
    ModelState s = other;
    detail::zero_mlp(s.encoder);
    detail::zero_mlp(s.head_cls);
    detail::zero_mlp(s.head_rot);
    detail::zero_mlp(s.head_loc);
    return s;
  }

  void set_zero() {
    detail::zero_mlp(encoder);
    detail::zero_mlp(head_cls);
    detail::zero_mlp(head_rot);
    detail::zero_mlp(head_loc);
  }

  bool all_finite() const {
    return detail::mlp_finite(encoder) && detail::mlp_finite(head_cls) &&
           detail::mlp_finite(head_rot) && detail::mlp_finite(head_loc);
  }
};

template <class To, class From>
Mlp<To> cast_mlp(const Mlp<From>& src) {
  Mlp<To> dst;
  for (const auto& l : src.layers) {
    dst.layers.push_back(
        {l.weight.template cast<To>(), l.bias.template cast<To>()});
  }
  return dst;
}

template <class To, class From>
ModelState<To> cast_model(const ModelState<From>& src) {
  ModelState<To> dst;
  dst.config = src.config;
  dst.encoder = cast_mlp<To>(src.encoder);
  dst.head_cls = cast_mlp<To>(src.head_cls);
  dst.head_rot = cast_mlp<To>(src.head_rot);
  dst.head_loc = cast_mlp<To>(src.head_loc);
  return dst;
}

// --- parameter traversal -------------------------------------------------
// Fixed order: encoder, head_cls, head_rot, head_loc; per layer weight then
// bias; elements in Eigen column-major storage order. Checkpoints, flatten
// and the finite-difference suite all share this order.

template <class Scalar, class Fn>
void for_each_tensor(ModelState<Scalar>& s, Fn&& fn) {
  const std::pair<const char*, Mlp<Scalar>*> groups[] = {
      {"encoder", &s.encoder},
      {"head_cls", &s.head_cls},
      {"head_rot", &s.head_rot},
      {"head_loc", &s.head_loc}};
  for (const auto& [name, mlp] : groups) {
    for (std::size_t l = 0; l < mlp->layers.size(); ++l) {
      auto& layer = mlp->layers[l];
      const std::string base = std::string(name) + "." + std::to_string(l);
      fn(base + ".weight", layer.weight.data(), layer.weight.rows(),
         layer.weight.cols());
      fn(base + ".bias", layer.bias.data(), layer.bias.rows(),
         Eigen::Index{1});
    }
  }
}

template <class Scalar, class Fn>
void for_each_tensor(const ModelState<Scalar>& s, Fn&& fn) {
  for_each_tensor(const_cast<ModelState<Scalar>&>(s),
                  [&](const std::string& name, Scalar* data, Eigen::Index r,
                      Eigen::Index c) {
                    fn(name, static_cast<const Scalar*>(data), r, c);
                  });
}

template <class Scalar>
std::size_t param_count(const ModelState<Scalar>& s) {
  std::size_t n = 0;
  for_each_tensor(s, [&](const std::string&, const Scalar*, Eigen::Index r,
                         Eigen::Index c) { n += static_cast<std::size_t>(r * c); });
  return n;
}

template <class Scalar>
std::vector<Scalar> flatten(const ModelState<Scalar>& s) {
  std::vector<Scalar> out;
  out.reserve(param_count(s));
  for_each_tensor(s, [&](const std::string&, const Scalar* data,
                         Eigen::Index r, Eigen::Index c) {
    out.insert(out.end(), data, data + r * c);
  });
  return out;
}

template <class Scalar>
void unflatten(ModelState<Scalar>& s, const std::vector<Scalar>& flat) {
  if (flat.size() != param_count(s)) {
    throw ArgumentError("unflatten: size mismatch");
  }
  std::size_t pos = 0;
  for_each_tensor(s, [&](const std::string&, Scalar* data, Eigen::Index r,
                         Eigen::Index c) {
    std::copy(flat.begin() + pos, flat.begin() + pos + r * c, data);
    pos += static_cast<std::size_t>(r * c);
  });
}

// --- gradient accumulation ------------------------------------------------

template <class Scalar>
void accumulate(ModelState<Scalar>& acc, const ModelState<Scalar>& g) {
  const Mlp<Scalar>* src[] = {&g.encoder, &g.head_cls, &g.head_rot,
                              &g.head_loc};
  Mlp<Scalar>* dst[] = {&acc.encoder, &acc.head_cls, &acc.head_rot,
                        &acc.head_loc};
  for (int i = 0; i < 4; ++i) {
    for (std::size_t l = 0; l < src[i]->layers.size(); ++l) {
      dst[i]->layers[l].weight += src[i]->layers[l].weight;
      dst[i]->layers[l].bias += src[i]->layers[l].bias;
    }
  }
}

// --- forward passes ---------------------------------------------------------

template <class Scalar>
struct EncoderCache {
  std::vector<Matrix<Scalar>> act;  // act[0] = input, act[l] = relu of layer l-1
  Matrix<Scalar> last_pre;          // pre-activation of the last layer
  std::vector<Eigen::Index> argmax;  // per feature dim, lowest-index winner
  Vector<Scalar> feature;
  // backward scratch; reusing a cache across samples avoids reallocating
  // the activation buffers
  Matrix<Scalar> scratch_a;
  Matrix<Scalar> scratch_b;
};

template <class Scalar>
void cloud_to_matrix(const geom::PointCloud& cloud, Matrix<Scalar>& out) {
  out.resize(static_cast<Eigen::Index>(cloud.size()), 3);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      out(static_cast<Eigen::Index>(i), c) = static_cast<Scalar>(cloud[i][c]);
    }
  }
}

template <class Scalar>
Matrix<Scalar> cloud_to_matrix(const geom::PointCloud& cloud) {
  Matrix<Scalar> x;
  cloud_to_matrix(cloud, x);
  return x;
}

// Shared per-point MLP followed by a coordinate-wise max over points. The
// cache records everything the backward pass needs, including which point won
// each pooled dimension. Passing the same cache object again reuses its
// buffers.
template <class Scalar>
void encoder_forward(const ModelState<Scalar>& state,
                     const Matrix<Scalar>& input, EncoderCache<Scalar>& cache) {
  if (input.rows() < 1 || input.cols() != 3) {
    throw ArgumentError("encoder_forward: input must be m x 3 with m >= 1");
  }
  const auto& layers = state.encoder.layers;
  const Eigen::Index m = input.rows();
  cache.act.resize(layers.size());
  cache.act[0] = input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix<Scalar>& out =
        l + 1 < layers.size() ? cache.act[l + 1] : cache.last_pre;
    out.resize(m, layers[l].weight.rows());
    out.noalias() = cache.act[l] * layers[l].weight.transpose();
    out.rowwise() += layers[l].bias.transpose();
    if (l + 1 < layers.size()) out = out.cwiseMax(Scalar(0));
  }

  const Matrix<Scalar>& last = cache.last_pre;
  const Eigen::Index d = last.cols();
  cache.feature = last.colwise().maxCoeff();
  cache.argmax.resize(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    const Scalar* col = last.data() + j * m;
    const Scalar top = cache.feature[j];
    Eigen::Index arg = 0;
    while (col[arg] != top) ++arg;  // first occurrence: lowest index
    cache.argmax[static_cast<std::size_t>(j)] = arg;
  }
}

template <class Scalar>
EncoderCache<Scalar> encoder_forward(const ModelState<Scalar>& state,
                                     const Matrix<Scalar>& input) {
  EncoderCache<Scalar> cache;
  encoder_forward(state, input, cache);
  return cache;
}

template <class Scalar>
EncoderCache<Scalar> encoder_forward(const ModelState<Scalar>& state,
                                     const geom::PointCloud& cloud) {
  return encoder_forward(state, cloud_to_matrix<Scalar>(cloud));
}

template <class Scalar>
struct MlpCache {
  std::vector<Vector<Scalar>> act;  // act[0] = input, act[l] = relu of layer l-1
  Vector<Scalar> last_pre;          // the logits
};

template <class Scalar>
struct Prediction {
  Vector<Scalar> logits;
  Vector<Scalar> probs;
};

template <class Scalar>
Vector<Scalar> softmax(const Vector<Scalar>& logits) {
  const Scalar shift = logits.maxCoeff();
  Vector<Scalar> e = (logits.array() - shift).exp();
  return e / e.sum();
}

template <class Scalar>
Prediction<Scalar> head_forward(const Mlp<Scalar>& head,
                                const Vector<Scalar>& feature,
                                MlpCache<Scalar>* cache = nullptr) {
  if (feature.size() != head.in_dim()) {
    throw ArgumentError("head_forward: feature dimension mismatch");
  }
  MlpCache<Scalar> local;
  MlpCache<Scalar>& c = cache ? *cache : local;
  c.act.clear();
  c.act.push_back(feature);
  for (std::size_t l = 0; l < head.layers.size(); ++l) {
    Vector<Scalar> pre = head.layers[l].weight * c.act[l] + head.layers[l].bias;
    if (l + 1 < head.layers.size()) {
      pre = pre.cwiseMax(Scalar(0));
      c.act.push_back(std::move(pre));
    } else {
      c.last_pre = std::move(pre);
    }
  }
  Prediction<Scalar> out;
  out.logits = c.last_pre;
  out.probs = softmax(out.logits);
  return out;
}

// --- losses -----------------------------------------------------------------

template <class Scalar>
Scalar floored_log(Scalar p) {
  return std::log(std::max(p, static_cast<Scalar>(kProbFloor)));
}

template <class Scalar>
Scalar cross_entropy(const Prediction<Scalar>& pred, int label) {
  if (label < 0 || label >= pred.probs.size()) {
    throw ArgumentError("cross_entropy: label out of range");
  }
  return -floored_log(pred.probs[label]);
}

// -(alpha * log p[a] + (1-alpha) * log p[b]); labels 1..8 map to logits 0..7.
template <class Scalar>
Scalar rotation_mixup_loss(const Prediction<Scalar>& pred,
                           const selfsup::RotationMixupSample& sample) {
  if (pred.probs.size() != 8) {
    throw ArgumentError("rotation_mixup_loss: prediction must be 8-way");
  }
  if (sample.label_a < 1 || sample.label_a > 4 || sample.label_b < 5 ||
      sample.label_b > 8) {
    throw ArgumentError("rotation_mixup_loss: labels out of range");
  }
  const Scalar alpha = static_cast<Scalar>(sample.alpha);
  return -(alpha * floored_log(pred.probs[sample.label_a - 1]) +
           (Scalar(1) - alpha) * floored_log(pred.probs[sample.label_b - 1]));
}

// -cost * log p[label].
template <class Scalar>
Scalar location_loss(const Prediction<Scalar>& pred,
                     const selfsup::DistortionSample& sample) {
  if (sample.location_label < 0 ||
      sample.location_label >= pred.probs.size()) {
    throw ArgumentError("location_loss: label out of range");
  }
  return -static_cast<Scalar>(sample.curvature_cost) *
         floored_log(pred.probs[sample.location_label]);
}

// --- loss gradients w.r.t. logits -------------------------------------------
// Terms whose probability sits at the floor are constant there, so they
// contribute no gradient.

template <class Scalar>
Vector<Scalar> cross_entropy_logit_grad(const Prediction<Scalar>& pred,
                                        int label) {
  if (label < 0 || label >= pred.probs.size()) {
    throw ArgumentError("cross_entropy_logit_grad: label out of range");
  }
  if (pred.probs[label] <= static_cast<Scalar>(kProbFloor)) {
    return Vector<Scalar>::Zero(pred.probs.size());
  }
  Vector<Scalar> g = pred.probs;
  g[label] -= Scalar(1);
  return g;
}

template <class Scalar>
Vector<Scalar> rotation_mixup_logit_grad(
    const Prediction<Scalar>& pred, const selfsup::RotationMixupSample& s) {
  const Scalar alpha = static_cast<Scalar>(s.alpha);
  Vector<Scalar> g = Vector<Scalar>::Zero(pred.probs.size());
  if (pred.probs[s.label_a - 1] > static_cast<Scalar>(kProbFloor)) {
    g += alpha * pred.probs;
    g[s.label_a - 1] -= alpha;
  }
  if (pred.probs[s.label_b - 1] > static_cast<Scalar>(kProbFloor)) {
    g += (Scalar(1) - alpha) * pred.probs;
    g[s.label_b - 1] -= Scalar(1) - alpha;
  }
  return g;
}

template <class Scalar>
Vector<Scalar> location_logit_grad(const Prediction<Scalar>& pred,
                                   const selfsup::DistortionSample& s) {
  if (pred.probs[s.location_label] <= static_cast<Scalar>(kProbFloor)) {
    return Vector<Scalar>::Zero(pred.probs.size());
  }
  Vector<Scalar> g = static_cast<Scalar>(s.curvature_cost) * pred.probs;
  g[s.location_label] -= static_cast<Scalar>(s.curvature_cost);
  return g;
}

// --- backward passes ----------------------------------------------------

// Backprop dout (gradient at the head's logits) through the head; gradients
// accumulate into grad, returns the gradient at the head input (the pooled
// feature).
template <class Scalar>
Vector<Scalar> mlp_backward(const Mlp<Scalar>& mlp, const MlpCache<Scalar>& cache,
                            const Vector<Scalar>& dout, Mlp<Scalar>& grad) {
  const std::size_t n_layers = mlp.layers.size();
  if (cache.act.size() != n_layers || grad.layers.size() != n_layers ||
      dout.size() != mlp.layers.back().weight.rows() ||
      cache.act.front().size() != mlp.in_dim()) {
    throw ContractError("mlp_backward: cache does not match this mlp");
  }
  Vector<Scalar> dpre = dout;
  for (std::size_t l = n_layers; l-- > 0;) {
    grad.layers[l].weight.noalias() += dpre * cache.act[l].transpose();
    grad.layers[l].bias += dpre;
    Vector<Scalar> dact = mlp.layers[l].weight.transpose() * dpre;
    if (l == 0) return dact;
    // relu derivative: the stored activation is positive iff the
    // pre-activation was
    dpre = dact.cwiseProduct(
        (cache.act[l].array() > Scalar(0)).template cast<Scalar>().matrix());
  }
  return dpre;  // unreachable
}

// Backprop the pooled-feature gradient through the max pool and the shared
// per-point layers. The pool routes each dimension's gradient to its argmax
// point only.
template <class Scalar>
void encoder_backward(const Mlp<Scalar>& encoder, EncoderCache<Scalar>& cache,
                      const Vector<Scalar>& dfeature, Mlp<Scalar>& grad) {
  const std::size_t n_layers = encoder.layers.size();
  if (cache.act.size() != n_layers || grad.layers.size() != n_layers ||
      dfeature.size() != cache.feature.size() ||
      cache.last_pre.cols() != encoder.layers.back().weight.rows()) {
    throw ContractError("encoder_backward: cache does not match this encoder");
  }
  const Eigen::Index m = cache.last_pre.rows();
  const Eigen::Index d = cache.last_pre.cols();

  Matrix<Scalar>* dpre = &cache.scratch_a;
  Matrix<Scalar>* dact = &cache.scratch_b;
  dpre->resize(m, d);
  dpre->setZero();
  for (Eigen::Index j = 0; j < d; ++j) {
    (*dpre)(cache.argmax[static_cast<std::size_t>(j)], j) = dfeature[j];
  }

  for (std::size_t l = n_layers; l-- > 0;) {
    grad.layers[l].weight.noalias() += dpre->transpose() * cache.act[l];
    grad.layers[l].bias.noalias() += dpre->colwise().sum().transpose();
    if (l == 0) break;
    dact->resize(m, encoder.layers[l].weight.cols());
    dact->noalias() = *dpre * encoder.layers[l].weight;
    dact->array() *= (cache.act[l].array() > Scalar(0)).template cast<Scalar>();
    std::swap(dpre, dact);
  }
}

// --- optimizer ----------------------------------------------------------

template <class Scalar>
struct OptimizerState {
  Scalar base_lr = static_cast<Scalar>(1e-3);
  Scalar weight_decay = static_cast<Scalar>(5e-5);
  Scalar beta1 = static_cast<Scalar>(0.9);
  Scalar beta2 = static_cast<Scalar>(0.999);
  Scalar epsilon = static_cast<Scalar>(1e-8);
  long step = 0;
  ModelState<Scalar> m;
  ModelState<Scalar> v;

  static OptimizerState init(const ModelState<Scalar>& model) {
    OptimizerState o;
    o.m = ModelState<Scalar>::zeros_like(model);
    o.v = ModelState<Scalar>::zeros_like(model);
    return o;
  }
};

// Adam with bias correction and decoupled weight decay. Rejects non-finite
// gradients before touching any state.
template <class Scalar>
void adam_step(ModelState<Scalar>& model, OptimizerState<Scalar>& opt,
               const ModelState<Scalar>& grad, Scalar lr) {
  if (!grad.all_finite()) {
    throw ArgumentError("adam_step: non-finite gradient, update rejected");
  }
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(opt.beta1), opt.step);
  const double bc2 = 1.0 - std::pow(static_cast<double>(opt.beta2), opt.step);
  const Scalar inv_bc1 = static_cast<Scalar>(1.0 / bc1);
  const Scalar inv_bc2 = static_cast<Scalar>(1.0 / bc2);

  const Mlp<Scalar>* gs[] = {&grad.encoder, &grad.head_cls, &grad.head_rot,
                             &grad.head_loc};
  Mlp<Scalar>* ps[] = {&model.encoder, &model.head_cls, &model.head_rot,
                       &model.head_loc};
  Mlp<Scalar>* ms[] = {&opt.m.encoder, &opt.m.head_cls, &opt.m.head_rot,
                       &opt.m.head_loc};
  Mlp<Scalar>* vs[] = {&opt.v.encoder, &opt.v.head_cls, &opt.v.head_rot,
                       &opt.v.head_loc};

  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = opt.beta1 * m + (Scalar(1) - opt.beta1) * g;
    v.array() = opt.beta2 * v.array() +
                (Scalar(1) - opt.beta2) * g.array().square();
    p.array() -= lr * ((m.array() * inv_bc1) /
                           ((v.array() * inv_bc2).sqrt() + opt.epsilon) +
                       opt.weight_decay * p.array());
  };

  for (int i = 0; i < 4; ++i) {
    if (ps[i]->layers.size() != gs[i]->layers.size()) {
      throw ContractError("adam_step: gradient shape mismatch");
    }
    for (std::size_t l = 0; l < ps[i]->layers.size(); ++l) {
      update(ps[i]->layers[l].weight, ms[i]->layers[l].weight,
             vs[i]->layers[l].weight, gs[i]->layers[l].weight);
      update(ps[i]->layers[l].bias, ms[i]->layers[l].bias,
             vs[i]->layers[l].bias, gs[i]->layers[l].bias);
    }
  }
  if (!model.all_finite()) {
    throw ContractError("adam_step: parameters became non-finite");
  }
}

// base_lr * 0.5 * (1 + cos(pi * epoch / total)).
inline double cosine_lr(int epoch, int total_epochs, double base_lr) {
  if (total_epochs <= 0 || epoch < 0 || epoch > total_epochs) {
    throw ArgumentError("cosine_lr: need 0 <= epoch <= total_epochs");
  }
  return base_lr * 0.5 *
         (1.0 + std::cos(3.14159265358979323846 * epoch / total_epochs));
}

}  // namespace geoadapt::net
