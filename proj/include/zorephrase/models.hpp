// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

// Desk-scale classifiers: a linear softmax model and a one-hidden-layer
// rectifier MLP, each optionally wrapped with low-rank adapters.
//
// Parameters live in flat vectors so the same storage serves the ZO
// estimator (which perturbs it in place) and the first-order trainer. In
// adapter mode the base weights are frozen and only the adapter factors are
// trainable.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "zorephrase/errors.hpp"
#include "zorephrase/philox.hpp"
#include "zorephrase/zo_core.hpp"

namespace zorephrase {

/// Dense row-major design matrix with one class label per row.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<std::size_t> labels;

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values).subspan(r * cols, cols);
  }

  bool operator==(const FeatureMatrix&) const = default;
};

enum class ModelKind { linear, mlp };

struct ModelShape {
  ModelKind kind = ModelKind::linear;
  std::size_t features = 0;
  std::size_t hidden = 0;  // mlp only
  std::size_t classes = 2;

  bool operator==(const ModelShape&) const = default;

  std::size_t base_size() const {
    if (kind == ModelKind::linear) return classes * features + classes;
    return hidden * features + hidden + classes * hidden + classes;
  }
};

struct LoraShape {
  std::size_t rank = 0;
  double alpha = 0.0;

  double scale() const { return alpha / static_cast<double>(rank); }
  bool operator==(const LoraShape&) const = default;
};

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax_lowest(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c)
    if (scores[c] > scores[best]) best = c;
  return best;
}

/// Scratch buffers for one forward/backward pass. Sized by the model shape,
/// never by the number of parameters.
struct ForwardScratch {
  std::vector<double> pre;      // hidden pre-activation
  std::vector<double> hidden;   // hidden activation
  std::vector<double> low_in;   // A x (rank)
  std::vector<double> low_out;  // A h (rank)
  std::vector<double> logits;
  std::vector<double> grad_hidden;
  std::vector<double> grad_low;

  ForwardScratch() = default;
  ForwardScratch(const ModelShape& shape, std::size_t rank)
      : pre(shape.hidden),
        hidden(shape.hidden),
        low_in(rank),
        low_out(rank),
        logits(shape.classes),
        grad_hidden(shape.hidden),
        grad_low(rank) {}
};

class Classifier {
 public:
  /// Linear softmax classifier; weights ~ N(0, init_scale^2 / d), bias zero.
  static Classifier linear(std::size_t features, std::size_t classes, std::uint64_t seed,
                           double init_scale = 1.0) {
    ModelShape shape{ModelKind::linear, features, 0, classes};
    validate_shape(shape);
    Classifier m(shape);
    KeyedStream rng(derive_key(seed, streams::kInit));
    const double sd = init_scale / std::sqrt(static_cast<double>(features));
    auto w = m.base_.values();
    for (std::size_t i = 0; i < classes * features; ++i) w[i] = sd * rng.normal();
    return m;
  }

  /// Rectifier MLP; hidden weights ~ N(0, 2/d), output weights ~ N(0, 1/h).
  static Classifier mlp(std::size_t features, std::size_t hidden, std::size_t classes,
                        std::uint64_t seed, double init_scale = 1.0) {
    ModelShape shape{ModelKind::mlp, features, hidden, classes};
    validate_shape(shape);
    Classifier m(shape);
    KeyedStream rng(derive_key(seed, streams::kInit));
    auto p = m.base_.values();
    const double sd1 = init_scale * std::sqrt(2.0 / static_cast<double>(features));
    for (std::size_t i = 0; i < hidden * features; ++i) p[i] = sd1 * rng.normal();
    const double sd2 = init_scale / std::sqrt(static_cast<double>(hidden));
    const std::size_t w2 = hidden * features + hidden;
    for (std::size_t i = 0; i < classes * hidden; ++i) p[w2 + i] = sd2 * rng.normal();
    return m;
  }

  /// Freezes the current weights and adds rank-`rank` adapters on every
  /// weight matrix. Down-projections ~ N(0, 1/fan_in), up-projections zero,
  /// so the effective weights are unchanged.
  void attach_lora(std::size_t rank, double alpha, std::uint64_t seed) {
    if (rank == 0) throw InvalidConfigError("LoRA rank must be positive");
    if (!(alpha > 0.0)) throw InvalidConfigError("LoRA alpha must be positive");
    lora_ = LoraShape{rank, alpha};
    adapters_.emplace(adapter_size(), 0.0);
    KeyedStream rng(derive_key(derive_key(seed, streams::kInit), 0x10a));
    auto p = adapters_->values();
    const auto fill_down = [&](std::size_t offset, std::size_t fan_in) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < rank * fan_in; ++i) p[offset + i] = sd * rng.normal();
    };
    if (shape_.kind == ModelKind::linear) {
      fill_down(0, shape_.features);
    } else {
      fill_down(0, shape_.features);
      fill_down(rank * shape_.features + shape_.hidden * rank, shape_.hidden);
    }
  }

  const ModelShape& shape() const noexcept { return shape_; }
  bool lora_active() const noexcept { return lora_.has_value(); }
  const std::optional<LoraShape>& lora() const noexcept { return lora_; }
  std::size_t lora_rank() const noexcept { return lora_ ? lora_->rank : 0; }

  const ParameterVector& base() const noexcept { return base_; }
  ParameterVector& base() noexcept { return base_; }
  const std::optional<ParameterVector>& adapters() const noexcept { return adapters_; }

  /// The parameters a trainer may change: adapters in LoRA mode, else base.
  ParameterVector& trainable() noexcept { return adapters_ ? *adapters_ : base_; }
  const ParameterVector& trainable() const noexcept { return adapters_ ? *adapters_ : base_; }

  ForwardScratch make_scratch() const { return ForwardScratch(shape_, lora_rank()); }

  /// Class scores for one example, using `trainable` in place of the stored
  /// trainable parameters. Writes into scratch.logits.
  void logits(std::span<const double> trainable, std::span<const double> x,
              ForwardScratch& s) const {
    if (x.size() != shape_.features)
      throw InvalidDimensionError("feature dimension " + std::to_string(x.size()) +
                                  " does not match model dimension " +
                                  std::to_string(shape_.features));
    const std::span<const double> base = lora_ ? base_.values() : trainable;
    const std::size_t d = shape_.features, h = shape_.hidden, C = shape_.classes;
    if (shape_.kind == ModelKind::linear) {
      affine(base.subspan(0, C * d), base.subspan(C * d, C), x, s.logits);
      if (lora_) {
        const std::size_t r = lora_->rank;
        const auto down = trainable.subspan(0, r * d);
        const auto up = trainable.subspan(r * d, C * r);
        add_low_rank(down, up, x, s.low_in, s.logits, lora_->scale());
      }
      return;
    }
    const std::size_t w2 = h * d + h;
    affine(base.subspan(0, h * d), base.subspan(h * d, h), x, s.pre);
    if (lora_) {
      const std::size_t r = lora_->rank;
      add_low_rank(trainable.subspan(0, r * d), trainable.subspan(r * d, h * r), x, s.low_in,
                   s.pre, lora_->scale());
    }
    for (std::size_t j = 0; j < h; ++j) s.hidden[j] = s.pre[j] > 0.0 ? s.pre[j] : 0.0;
    affine(base.subspan(w2, C * h), base.subspan(w2 + C * h, C), s.hidden, s.logits);
    if (lora_) {
      const std::size_t r = lora_->rank;
      const std::size_t off = r * d + h * r;
      add_low_rank(trainable.subspan(off, r * h), trainable.subspan(off + r * h, C * r),
                   s.hidden, s.low_out, s.logits, lora_->scale());
    }
  }

  /// Mean cross-entropy over `rows` of `data` at `trainable`. Nonnegative.
  double loss(std::span<const double> trainable, const FeatureMatrix& data,
              std::span<const std::size_t> rows, ForwardScratch& s) const {
    if (rows.empty()) throw InvalidDimensionError("loss over an empty batch");
    check_trainable(trainable);
    double total = 0.0;
    for (std::size_t r : rows) {
      logits(trainable, data.row(r), s);
      total += cross_entropy(s.logits, data.labels[r]);
    }
    return total / static_cast<double>(rows.size());
  }

  /// Exact gradient of the mean cross-entropy with respect to the
  /// trainable parameters. Returns the batch loss.
  double gradient(std::span<const double> trainable, const FeatureMatrix& data,
                  std::span<const std::size_t> rows, std::span<double> grad,
                  ForwardScratch& s) const {
    if (rows.empty()) throw InvalidDimensionError("gradient over an empty batch");
    check_trainable(trainable);
    if (grad.size() != trainable.size())
      throw InvalidDimensionError("gradient buffer size mismatch");
    std::fill(grad.begin(), grad.end(), 0.0);
    const double inv_b = 1.0 / static_cast<double>(rows.size());
    double total = 0.0;
    for (std::size_t r : rows) {
      const auto x = data.row(r);
      logits(trainable, x, s);
      total += cross_entropy(s.logits, data.labels[r]);
      softmax_in_place(s.logits);
      s.logits[data.labels[r]] -= 1.0;
      for (double& g : s.logits) g *= inv_b;  // logits now hold dL/dz
      backward(trainable, x, s, grad);
    }
    return total * inv_b;
  }

  std::size_t predict(std::span<const double> x, ForwardScratch& s) const {
    logits(trainable().values(), x, s);
    return argmax_lowest(s.logits);
  }

  void write_checkpoint(std::ostream& out) const;
  static Classifier read_checkpoint(std::istream& in);

  bool operator==(const Classifier& o) const {
    return shape_ == o.shape_ && lora_ == o.lora_ && base_ == o.base_ && adapters_ == o.adapters_;
  }

 private:
  explicit Classifier(const ModelShape& shape) : shape_(shape), base_(shape.base_size(), 0.0) {}

  static void validate_shape(const ModelShape& shape) {
    if (shape.features == 0) throw InvalidDimensionError("feature dimension must be positive");
    if (shape.classes < 2) throw InvalidDimensionError("a classifier needs at least 2 classes");
    if (shape.kind == ModelKind::mlp && shape.hidden == 0)
      throw InvalidDimensionError("MLP hidden width must be positive");
  }

  std::size_t adapter_size() const {
    const std::size_t r = lora_->rank, d = shape_.features, h = shape_.hidden,
                      C = shape_.classes;
    if (shape_.kind == ModelKind::linear) return r * d + C * r;
    return r * d + h * r + r * h + C * r;
  }

  void check_trainable(std::span<const double> trainable) const {
    if (trainable.size() != this->trainable().dimension())
      throw InvalidDimensionError("trainable parameter count mismatch");
  }

  static void affine(std::span<const double> w, std::span<const double> b,
                     std::span<const double> x, std::span<double> out) {
    const std::size_t in = x.size();
    for (std::size_t o = 0; o < out.size(); ++o) {
      double acc = b[o];
      const double* row = w.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
      out[o] = acc;
    }
  }

  // out += scale * up * (down * x); `low` receives down * x.
  static void add_low_rank(std::span<const double> down, std::span<const double> up,
                           std::span<const double> x, std::span<double> low,
                           std::span<double> out, double scale) {
    const std::size_t r = low.size(), in = x.size();
    for (std::size_t k = 0; k < r; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += down[k * in + i] * x[i];
      low[k] = acc;
    }
    for (std::size_t o = 0; o < out.size(); ++o) {
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k) acc += up[o * r + k] * low[k];
      out[o] += scale * acc;
    }
  }

  static double cross_entropy(std::span<const double> z, std::size_t label) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    return std::log(sum) + m - z[label];
  }

  static void softmax_in_place(std::span<double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
      v = std::exp(v - m);
      sum += v;
    }
    for (double& v : z) v /= sum;
  }

  // Accumulates parameter gradients given dL/dlogits in s.logits.
  void backward(std::span<const double> trainable, std::span<const double> x,
                ForwardScratch& s, std::span<double> grad) const {
    const std::size_t d = shape_.features, h = shape_.hidden, C = shape_.classes;
    const std::span<const double> gz = s.logits;

    if (shape_.kind == ModelKind::linear) {
      if (!lora_) {
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t i = 0; i < d; ++i) grad[c * d + i] += gz[c] * x[i];
          grad[C * d + c] += gz[c];
        }
        return;
      }
      const std::size_t r = lora_->rank;
      lora_backward(trainable.subspan(0, r * d), trainable.subspan(r * d, C * r), x, s.low_in,
                    gz, s.grad_low, grad.subspan(0, r * d), grad.subspan(r * d, C * r));
      return;
    }

    const std::size_t w2 = h * d + h;
    const auto base = lora_ ? base_.values() : trainable;
    // dL/dh = W2^T gz (+ adapter term), masked by the rectifier.
    for (std::size_t j = 0; j < h; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < C; ++c) acc += base[w2 + c * h + j] * gz[c];
      s.grad_hidden[j] = acc;
    }
    if (!lora_) {
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t j = 0; j < h; ++j) grad[w2 + c * h + j] += gz[c] * s.hidden[j];
        grad[w2 + C * h + c] += gz[c];
      }
      for (std::size_t j = 0; j < h; ++j) {
        const double g = s.pre[j] > 0.0 ? s.grad_hidden[j] : 0.0;
        if (g == 0.0) continue;
        for (std::size_t i = 0; i < d; ++i) grad[j * d + i] += g * x[i];
        grad[h * d + j] += g;
      }
      return;
    }

    const std::size_t r = lora_->rank;
    const double scale = lora_->scale();
    const std::size_t off = r * d + h * r;
    const auto down2 = trainable.subspan(off, r * h);
    const auto up2 = trainable.subspan(off + r * h, C * r);
    // Adapter contribution to dL/dh: scale * A2^T (B2^T gz).
    for (std::size_t k = 0; k < r; ++k) {
      double acc = 0.0;
      for (std::size_t c = 0; c < C; ++c) acc += up2[c * r + k] * gz[c];
      s.grad_low[k] = acc;
    }
    for (std::size_t j = 0; j < h; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k) acc += down2[k * h + j] * s.grad_low[k];
      s.grad_hidden[j] += scale * acc;
    }
    lora_backward(down2, up2, s.hidden, s.low_out, gz, s.grad_low, grad.subspan(off, r * h),
                  grad.subspan(off + r * h, C * r));
    for (std::size_t j = 0; j < h; ++j)
      if (!(s.pre[j] > 0.0)) s.grad_hidden[j] = 0.0;
    lora_backward(trainable.subspan(0, r * d), trainable.subspan(r * d, h * r), x, s.low_in,
                  s.grad_hidden, s.grad_low, grad.subspan(0, r * d), grad.subspan(r * d, h * r));
  }

  // For out = scale * up * (down * in): accumulates dL/d(down) and dL/d(up)
  // given dL/dout. `low` holds down * in from the forward pass.
  void lora_backward(std::span<const double> /*down*/, std::span<const double> up,
                     std::span<const double> in, std::span<const double> low,
                     std::span<const double> gout, std::span<double> tmp,
                     std::span<double> gdown, std::span<double> gup) const {
    const std::size_t r = lora_->rank, n_in = in.size(), n_out = gout.size();
    const double scale = lora_->scale();
    for (std::size_t o = 0; o < n_out; ++o)
      for (std::size_t k = 0; k < r; ++k) gup[o * r + k] += scale * gout[o] * low[k];
    for (std::size_t k = 0; k < r; ++k) {
      double acc = 0.0;
      for (std::size_t o = 0; o < n_out; ++o) acc += up[o * r + k] * gout[o];
      tmp[k] = scale * acc;
    }
    for (std::size_t k = 0; k < r; ++k) {
      if (tmp[k] == 0.0) continue;
      for (std::size_t i = 0; i < n_in; ++i) gdown[k * n_in + i] += tmp[k] * in[i];
    }
  }

  ModelShape shape_;
  ParameterVector base_;
  std::optional<LoraShape> lora_;
  std::optional<ParameterVector> adapters_;
};

/// Forward-only loss over a feature matrix; satisfies LossEvaluator for
/// IndexBatch. Owns its scratch so evaluation allocates nothing.
class ModelLoss {
 public:
  ModelLoss(const Classifier& model, const FeatureMatrix& data)
      : model_(&model), data_(&data), scratch_(model.make_scratch()) {
    if (data.cols != model.shape().features)
      throw InvalidDimensionError("feature dimension does not match model");
  }

  double operator()(std::span<const double> theta, const IndexBatch& batch) {
    return model_->loss(theta, *data_, batch.rows, scratch_);
  }

 private:
  const Classifier* model_;
  const FeatureMatrix* data_;
  ForwardScratch scratch_;
};

inline std::vector<std::size_t> all_rows(const FeatureMatrix& data) {
  std::vector<std::size_t> rows(data.rows);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return rows;
}

/// Mean cross-entropy of the model's current parameters over all rows.
inline double forward_loss(const Classifier& model, const FeatureMatrix& batch) {
  if (batch.rows == 0) throw InvalidDimensionError("forward_loss: empty batch");
  if (batch.cols != model.shape().features)
    throw InvalidDimensionError("forward_loss: feature dimension mismatch");
  auto scratch = model.make_scratch();
  const auto rows = all_rows(batch);
  return model.loss(model.trainable().values(), batch, rows, scratch);
}

/// Flat gradient over the trainable parameters (adapters only in LoRA mode).
inline std::vector<double> analytic_gradient(const Classifier& model, const FeatureMatrix& batch) {
  if (batch.rows == 0) throw InvalidDimensionError("analytic_gradient: empty batch");
  if (batch.cols != model.shape().features)
    throw InvalidDimensionError("analytic_gradient: feature dimension mismatch");
  auto scratch = model.make_scratch();
  const auto rows = all_rows(batch);
  std::vector<double> grad(model.trainable().dimension());
  model.gradient(model.trainable().values(), batch, rows, grad, scratch);
  return grad;
}

/// Fraction of rows whose argmax class (lowest index on ties) matches the label.
inline double predict_accuracy(const Classifier& model, const FeatureMatrix& split) {
  if (split.rows == 0) throw InvalidDimensionError("predict_accuracy: empty split");
  auto scratch = model.make_scratch();
  std::size_t correct = 0;
  for (std::size_t r = 0; r < split.rows; ++r)
    if (model.predict(split.row(r), scratch) == split.labels[r]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(split.rows);
}

// Checkpoint format, one token group per line:
//
//   zorephrase-checkpoint 1
//   kind linear|mlp
//   features <d>
//   hidden <h>
//   classes <C>
//   lora none | lora <rank> <alpha>
//   base <count>
//   <count lines, one value each, %.17g>
//   adapters <count>          (only when lora is not none)
//   <count lines>
//
// Values are written with 17 significant digits so a reload is bit-exact.
inline void Classifier::write_checkpoint(std::ostream& out) const {
  const auto write_values = [&](const char* tag, std::span<const double> v) {
    out << tag << ' ' << v.size() << '\n';
    char buf[32];
    for (double x : v) {
      std::snprintf(buf, sizeof buf, "%.17g", x);
      out << buf << '\n';
    }
  };
  out << "zorephrase-checkpoint 1\n";
  out << "kind " << (shape_.kind == ModelKind::linear ? "linear" : "mlp") << '\n';
  out << "features " << shape_.features << '\n';
  out << "hidden " << shape_.hidden << '\n';
  out << "classes " << shape_.classes << '\n';
  if (lora_) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", lora_->alpha);
    out << "lora " << lora_->rank << ' ' << buf << '\n';
  } else {
    out << "lora none\n";
  }
  write_values("base", base_.values());
  if (adapters_) write_values("adapters", adapters_->values());
}

inline Classifier Classifier::read_checkpoint(std::istream& in) {
  const auto expect = [&](const std::string& want) {
    std::string got;
    if (!(in >> got) || got != want)
      throw ParseError("checkpoint: expected '" + want + "', found '" + got + "'");
  };
  const auto read_values = [&](const std::string& tag, std::size_t want) {
    expect(tag);
    std::size_t count = 0;
    if (!(in >> count) || count != want)
      throw ParseError("checkpoint: " + tag + " count does not match shape");
    std::vector<double> v(count);
    for (double& x : v) {
      std::string tok;
      if (!(in >> tok)) throw ParseError("checkpoint: truncated " + tag + " values");
      x = std::strtod(tok.c_str(), nullptr);
    }
    return v;
  };

  expect("zorephrase-checkpoint");
  int version = 0;
  if (!(in >> version) || version != 1) throw ParseError("checkpoint: unsupported version");
  ModelShape shape;
  std::string kind;
  expect("kind");
  in >> kind;
  if (kind == "linear") shape.kind = ModelKind::linear;
  else if (kind == "mlp") shape.kind = ModelKind::mlp;
  else throw ParseError("checkpoint: unknown model kind '" + kind + "'");
  expect("features");
  in >> shape.features;
  expect("hidden");
  in >> shape.hidden;
  expect("classes");
  in >> shape.classes;
  if (!in) throw ParseError("checkpoint: malformed shape header");
  validate_shape(shape);

  Classifier m(shape);
  expect("lora");
  std::string lora_tok;
  in >> lora_tok;
  std::optional<LoraShape> lora;
  if (lora_tok != "none") {
    LoraShape ls;
    ls.rank = std::stoul(lora_tok);
    std::string alpha;
    in >> alpha;
    ls.alpha = std::strtod(alpha.c_str(), nullptr);
    lora = ls;
  }
  m.base_ = ParameterVector(read_values("base", shape.base_size()));
  if (lora) {
    m.lora_ = lora;
    m.adapters_.emplace(read_values("adapters", m.adapter_size()));
  }
  return m;
}

}  // namespace zorephrase
