// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

// Two-point SPSA gradient estimation and the MeZO in-place update.
//
// The direction vector xi is never stored. Each coordinate xi_i is a pure
// function of (master_seed, step_index, i), so perturbing, restoring and
// updating theta all regenerate it coordinate by coordinate. A training step
// therefore needs O(1) memory beyond theta itself and whatever the loss
// evaluator uses.

#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "zorephrase/errors.hpp"
#include "zorephrase/philox.hpp"
#include "zorephrase/trace.hpp"

namespace zorephrase {

/// Trainable parameter set. Dimension is fixed at construction; there is no
/// way to resize it afterwards.
class ParameterVector {
 public:
  explicit ParameterVector(std::size_t n, double fill = 0.0) : values_(n, fill) {
    if (n == 0) throw InvalidDimensionError("parameter vector must be nonempty");
    if (!std::isfinite(fill)) throw NumericOverflowError("non-finite parameter fill");
  }

  explicit ParameterVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw InvalidDimensionError("parameter vector must be nonempty");
    if (!all_finite()) throw NumericOverflowError("non-finite parameter value");
  }

  std::size_t dimension() const noexcept { return values_.size(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  bool all_finite() const noexcept {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const ParameterVector&) const = default;

 private:
  std::vector<double> values_;
};

struct ZOConfig {
  double delta = 1e-3;
  double learning_rate = 1e-3;
  std::uint64_t steps = 1000;
  std::size_t batch_size = 16;
  std::uint64_t master_seed = 0;
  std::uint64_t eval_interval = 100;  // 0 disables periodic dev evaluation

  void validate() const {
    if (!(delta > 0.0) || !std::isfinite(delta))
      throw InvalidConfigError("ZO delta must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw InvalidConfigError("ZO learning rate must be positive");
    if (batch_size == 0) throw InvalidConfigError("ZO batch size must be positive");
  }
};

inline void to_json(nlohmann::json& j, const ZOConfig& c) {
  j = nlohmann::json{{"delta", c.delta},           {"learning_rate", c.learning_rate},
                     {"steps", c.steps},           {"batch_size", c.batch_size},
                     {"master_seed", c.master_seed}, {"eval_interval", c.eval_interval}};
}

inline void from_json(const nlohmann::json& j, ZOConfig& c) {
  c.delta = j.value("delta", c.delta);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.master_seed = j.value("master_seed", c.master_seed);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
}

/// Key of one direction vector: the pair fully determines every xi_i.
struct PerturbationSeed {
  std::uint64_t master_seed = 0;
  std::uint64_t step_index = 0;

  bool operator==(const PerturbationSeed&) const = default;
};

/// Stream tags passed to derive_key so that consumers never share a key.
namespace streams {
inline constexpr std::uint64_t kDirection = 1;
inline constexpr std::uint64_t kBatch = 2;
inline constexpr std::uint64_t kInit = 3;
inline constexpr std::uint64_t kSplit = 4;
inline constexpr std::uint64_t kSynthetic = 5;
}  // namespace streams

/// i-th coordinate of the direction vector for `seed`.
inline double direction_component(const PerturbationSeed& seed, std::size_t i) noexcept {
  return keyed_normal(derive_key(seed.master_seed, streams::kDirection), i, seed.step_index);
}

/// Dense direction vector. Test and debug use; training never calls this.
inline std::vector<double> sample_direction(const PerturbationSeed& seed, std::size_t n) {
  if (n == 0) throw InvalidDimensionError("direction dimension must be positive");
  std::vector<double> xi(n);
  for (std::size_t i = 0; i < n; ++i) xi[i] = direction_component(seed, i);
  return xi;
}

/// Scalar projected gradient plus the seed that regenerates its direction.
/// Holds O(1) state regardless of the parameter dimension.
struct GradientEstimate {
  double projected_grad = 0.0;
  PerturbationSeed seed;
  double delta = 0.0;
};

/// Dense estimate projected_grad * xi(seed). Test and debug use only.
inline std::vector<double> materialize_estimate(const GradientEstimate& est, std::size_t n) {
  if (n == 0) throw InvalidDimensionError("materialize: dimension must be positive");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = est.projected_grad * direction_component(est.seed, i);
  return g;
}

/// Same as above, but checks `n` against the dimension of the run.
inline std::vector<double> materialize_estimate(const GradientEstimate& est, std::size_t n,
                                                std::size_t training_dimension) {
  if (n != training_dimension)
    throw InvalidDimensionError("materialize: dimension " + std::to_string(n) +
                                " does not match training dimension " +
                                std::to_string(training_dimension));
  return materialize_estimate(est, n);
}

template <class E, class Batch>
concept LossEvaluator = requires(E& e, std::span<const double> theta, const Batch& batch) {
  { e(theta, batch) } -> std::convertible_to<double>;
};

/// theta += scale * xi(seed), streamed coordinate by coordinate.
inline void perturb_in_place(ParameterVector& theta, const PerturbationSeed& seed,
                             double scale) noexcept {
  auto values = theta.values();
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] += scale * direction_component(seed, i);
}

struct StepRecord {
  double projected_grad = 0.0;
  double loss_plus = 0.0;
  double loss_minus = 0.0;
};

namespace detail {

template <class Batch, LossEvaluator<Batch> E>
StepRecord spsa_probe(E& evaluator, ParameterVector& theta, const Batch& batch, double delta,
                      const PerturbationSeed& seed) {
  if (!(delta > 0.0) || !std::isfinite(delta))
    throw InvalidConfigError("SPSA delta must be positive");

  StepRecord rec;
  // Tracks the offset currently applied to theta, in units of delta * xi.
  double applied = 0.0;
  auto restore = [&]() noexcept {
    if (applied != 0.0) perturb_in_place(theta, seed, -applied);
    applied = 0.0;
  };

  try {
    perturb_in_place(theta, seed, delta);
    applied = delta;
    rec.loss_plus = static_cast<double>(evaluator(std::as_const(theta).values(), batch));
    if (!std::isfinite(rec.loss_plus)) {
      restore();
      throw NumericOverflowError("non-finite loss at theta + delta * xi");
    }
    perturb_in_place(theta, seed, -2.0 * delta);
    applied = -delta;
    rec.loss_minus = static_cast<double>(evaluator(std::as_const(theta).values(), batch));
    if (!std::isfinite(rec.loss_minus)) {
      restore();
      throw NumericOverflowError("non-finite loss at theta - delta * xi");
    }
    restore();
  } catch (...) {
    restore();
    throw;
  }
  rec.projected_grad = (rec.loss_plus - rec.loss_minus) / (2.0 * delta);
  return rec;
}

}  // namespace detail

/// Symmetric two-point estimate [L(theta + delta xi) - L(theta - delta xi)] / (2 delta).
/// Exactly two evaluator calls on the same batch. Theta is perturbed in place
/// and restored before returning, including on error.
template <class Batch, LossEvaluator<Batch> E>
GradientEstimate spsa_estimate(E& evaluator, ParameterVector& theta, const Batch& batch,
                               double delta, const PerturbationSeed& seed) {
  const StepRecord rec = detail::spsa_probe(evaluator, theta, batch, delta, seed);
  return GradientEstimate{rec.projected_grad, seed, delta};
}

/// One MeZO step: estimate, then theta_i -= lr * projected_grad * xi_i with
/// xi regenerated per coordinate. Allocates nothing.
template <class Batch, LossEvaluator<Batch> E>
StepRecord mezo_step(E& evaluator, ParameterVector& theta, const Batch& batch,
                     const ZOConfig& config, std::uint64_t step_index) {
  config.validate();
  const PerturbationSeed seed{config.master_seed, step_index};
  const StepRecord rec = detail::spsa_probe(evaluator, theta, batch, config.delta, seed);
  if (!std::isfinite(rec.projected_grad))
    throw NumericOverflowError("non-finite projected gradient");
  perturb_in_place(theta, seed, -config.learning_rate * rec.projected_grad);
  return rec;
}

/// Central-difference gradient with 2n evaluator calls. Verification oracle.
template <class Batch, LossEvaluator<Batch> E>
std::vector<double> finite_difference_oracle(E& evaluator, ParameterVector& theta,
                                             const Batch& batch, double h = 1e-5) {
  if (!(h > 0.0)) throw InvalidConfigError("finite-difference step must be positive");
  auto values = theta.values();
  std::vector<double> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = static_cast<double>(evaluator(std::as_const(theta).values(), batch));
    values[i] = saved - h;
    const double down = static_cast<double>(evaluator(std::as_const(theta).values(), batch));
    values[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericOverflowError("non-finite loss in finite-difference oracle at coordinate " +
                                 std::to_string(i));
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// Rows of the training split used by one step.
struct IndexBatch {
  std::span<const std::size_t> rows;
  std::uint64_t step = 0;
};

/// Epoch-wise shuffled minibatches keyed by a seed. Identical (seed,
/// train_size, batch_size) gives identical batch sequences, which is what
/// pairs Original and Rephrased runs.
class MinibatchSampler {
 public:
  MinibatchSampler(std::size_t train_size, std::size_t batch_size, std::uint64_t seed)
      : order_(train_size), batch_size_(batch_size), key_(derive_key(seed, streams::kBatch)) {
    if (train_size == 0) throw InvalidDimensionError("empty train split");
    if (batch_size == 0) throw InvalidConfigError("batch size must be positive");
    batch_size_ = std::min(batch_size, train_size);
    reshuffle();
  }

  IndexBatch next(std::uint64_t step) {
    if (cursor_ + batch_size_ > order_.size()) {
      ++epoch_;
      reshuffle();
    }
    IndexBatch b{std::span<const std::size_t>(order_).subspan(cursor_, batch_size_), step};
    cursor_ += batch_size_;
    return b;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    KeyedStream rng(derive_key(key_, epoch_));
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
    cursor_ = 0;
  }

  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::uint64_t key_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
};

/// Called periodically during training; returns dev accuracy of the current
/// parameters.
using EvalHook = std::function<double()>;

/// Runs config.steps MeZO steps over seeded minibatches of the train split.
/// The reported loss is the mean of the two perturbed losses.
template <LossEvaluator<IndexBatch> E>
TrainingTrace train_zo(E& evaluator, ParameterVector& theta, std::size_t train_size,
                       const ZOConfig& config, const EvalHook& eval_hook = {}) {
  config.validate();
  if (train_size == 0) throw InvalidDimensionError("train_zo: empty train split");
  TrainingTrace trace;
  if (config.steps == 0) return trace;
  trace.records.reserve(config.steps);

  MinibatchSampler sampler(train_size, config.batch_size, config.master_seed);
  for (std::uint64_t step = 0; step < config.steps; ++step) {
    const IndexBatch batch = sampler.next(step);
    const StepRecord rec = mezo_step(evaluator, theta, batch, config, step);
    TraceRecord r;
    r.step = step;
    r.loss = 0.5 * (rec.loss_plus + rec.loss_minus);
    r.projected_grad = rec.projected_grad;
    const bool last = step + 1 == config.steps;
    const bool periodic = config.eval_interval > 0 && (step + 1) % config.eval_interval == 0;
    if (eval_hook && (periodic || last)) r.dev_accuracy = eval_hook();
    trace.records.push_back(r);
  }
  return trace;
}

}  // namespace zorephrase
