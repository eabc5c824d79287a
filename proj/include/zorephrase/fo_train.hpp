// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "zorephrase/errors.hpp"
#include "zorephrase/models.hpp"
#include "zorephrase/trace.hpp"
#include "zorephrase/zo_core.hpp"

namespace zorephrase {

/// Adaptive-moment optimizer settings with decoupled weight decay.
struct FOConfig {
  double learning_rate = 1e-2;
  std::uint64_t steps = 500;
  std::size_t batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t master_seed = 0;
  std::uint64_t eval_interval = 100;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw InvalidConfigError("FO learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw InvalidConfigError("moment coefficients must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw InvalidConfigError("epsilon must be positive");
    if (weight_decay < 0.0) throw InvalidConfigError("weight decay must be nonnegative");
    if (batch_size == 0) throw InvalidConfigError("FO batch size must be positive");
  }
};

inline void to_json(nlohmann::json& j, const FOConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"steps", c.steps},
                     {"batch_size", c.batch_size},       {"beta1", c.beta1},
                     {"beta2", c.beta2},                 {"epsilon", c.epsilon},
                     {"weight_decay", c.weight_decay},   {"master_seed", c.master_seed},
                     {"eval_interval", c.eval_interval}};
}

inline void from_json(const nlohmann::json& j, FOConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.master_seed = j.value("master_seed", c.master_seed);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
}

enum class FoMode { full, lora };

/// AdamW state over a flat parameter vector.
class AdamW {
 public:
  AdamW(std::size_t n, const FOConfig& config) : m_(n, 0.0), v_(n, 0.0), config_(config) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double lr = config_.learning_rate;
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] -= lr * config_.weight_decay * params[i];
      params[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }

 private:
  std::vector<double> m_;
  std::vector<double> v_;
  FOConfig config_;
  std::uint64_t t_ = 0;
};

/// First-order training of the model's trainable set. In lora mode the model
/// must already carry adapters; the base weights are never touched.
inline TrainingTrace train_fo(Classifier& model, const FeatureMatrix& train,
                              const FOConfig& config, FoMode mode,
                              const EvalHook& eval_hook = {}) {
  config.validate();
  if (train.rows == 0) throw InvalidDimensionError("train_fo: empty train split");
  if (mode == FoMode::lora && !model.lora_active())
    throw InvalidConfigError("train_fo: lora mode requires attached adapters");
  if (mode == FoMode::full && model.lora_active())
    throw InvalidConfigError("train_fo: full mode on a model with adapters");

  TrainingTrace trace;
  if (config.steps == 0) return trace;
  trace.records.reserve(config.steps);

  ParameterVector& theta = model.trainable();
  AdamW opt(theta.dimension(), config);
  std::vector<double> grad(theta.dimension());
  auto scratch = model.make_scratch();
  MinibatchSampler sampler(train.rows, config.batch_size, config.master_seed);

  for (std::uint64_t step = 0; step < config.steps; ++step) {
    const IndexBatch batch = sampler.next(step);
    const double loss = model.gradient(theta.values(), train, batch.rows, grad, scratch);
    if (!std::isfinite(loss)) throw NumericOverflowError("train_fo: non-finite loss");
    opt.step(theta.values(), grad);
    TraceRecord r;
    r.step = step;
    r.loss = loss;
    const bool last = step + 1 == config.steps;
    const bool periodic = config.eval_interval > 0 && (step + 1) % config.eval_interval == 0;
    if (eval_hook && (periodic || last)) r.dev_accuracy = eval_hook();
    trace.records.push_back(r);
  }
  return trace;
}

/// ZO training of a classifier's trainable set over a feature matrix.
inline TrainingTrace train_zo(Classifier& model, const FeatureMatrix& train,
                              const ZOConfig& config, const EvalHook& eval_hook = {}) {
  if (train.rows == 0) throw InvalidDimensionError("train_zo: empty train split");
  ModelLoss loss(model, train);
  return train_zo(loss, model.trainable(), train.rows, config, eval_hook);
}

}  // namespace zorephrase
