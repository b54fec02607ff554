#include "dipole/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>
#include <sstream>
#include <thread>

#include "dipole/error.hpp"
#include "dipole/metrics.hpp"
#include "dipole/ops.hpp"

namespace dipole {

AdadeltaState AdadeltaState::zeros_like(const ParamStore& params, double rho, double eps) {
  AdadeltaState s;
  s.rho = rho;
  s.eps = eps;
  for (ParamId i = 0; i < params.size(); ++i) {
    s.mean_sq_grad.emplace_back(params.value(i).shape());
    s.mean_sq_update.emplace_back(params.value(i).shape());
  }
  return s;
}

void adadelta_step(ParamStore& params, const Gradients& grads, AdadeltaState& state) {
  if (grads.size() != params.size() || state.mean_sq_grad.size() != params.size()) {
    throw ContractError("adadelta_step: parameter, gradient and state counts differ");
  }
  const double rho = state.rho, eps = state.eps;
  for (ParamId id = 0; id < params.size(); ++id) {
    Tensor& x = params.value(id);
    const Tensor& g = grads[id];
    Tensor& eg2 = state.mean_sq_grad[id];
    Tensor& edx2 = state.mean_sq_update[id];
    if (g.shape() != x.shape() || eg2.shape() != x.shape()) {
      throw DimensionError("adadelta_step: shape mismatch for parameter " + params.name(id));
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      eg2[i] = rho * eg2[i] + (1.0 - rho) * g[i] * g[i];
      const double dx = -std::sqrt(edx2[i] + eps) / std::sqrt(eg2[i] + eps) * g[i];
      edx2[i] = rho * edx2[i] + (1.0 - rho) * dx * dx;
      x[i] += dx;
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch size must be at least 1");
  if (epochs < 1) throw ConfigError("train: epochs must be at least 1");
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("train: rho must be in (0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train: eps must be positive");
  if (workers < 1) throw ConfigError("train: workers must be at least 1");
}

std::string format_epoch_line(const EpochLog& log) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.6f\t%.3f", log.epoch, log.train_loss, log.val_accuracy,
                log.seconds);
  return buf;
}

std::size_t select_best_epoch(std::span<const double> validation_accuracy) {
  if (validation_accuracy.empty()) throw ContractError("select_best_epoch: empty history");
  const auto best = std::max_element(validation_accuracy.begin(), validation_accuracy.end());
  return static_cast<std::size_t>(best - validation_accuracy.begin()) + 1;
}

namespace {

// Runs fn(worker, begin, end) over contiguous chunks of [0, n).
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t workers, Fn fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> threads;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = std::min(n, w * chunk), end = std::min(n, begin + chunk);
      threads.emplace_back([&fn, &errors, w, begin, end] {
        try {
          fn(w, begin, end);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

bool all_finite(const ParamStore& params) {
  for (ParamId i = 0; i < params.size(); ++i) {
    if (!params.value(i).all_finite()) return false;
  }
  return true;
}

std::string parameter_norms(const ParamStore& params) {
  std::ostringstream out;
  for (ParamId i = 0; i < params.size(); ++i) {
    if (i) out << ", ";
    out << params.name(i) << "=" << std::sqrt(params.value(i).squared_norm());
  }
  return out.str();
}

}  // namespace

std::vector<PredictionRecord> predict_dataset(const Model& model, const CodedSequenceDataset& dataset,
                                              std::size_t workers) {
  const auto& patients = dataset.patients();
  std::vector<std::vector<PredictionRecord>> per_patient(patients.size());
  parallel_chunks(patients.size(), workers, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) per_patient[i] = model.predict(patients[i], dataset.vocabulary());
  });
  std::vector<PredictionRecord> records;
  for (auto& recs : per_patient) {
    for (auto& r : recs) records.push_back(std::move(r));
  }
  return records;
}

double dataset_objective(const Model& model, const CodedSequenceDataset& dataset) {
  const auto records = predict_dataset(model, dataset);
  return loss(records, model.params(), model.config().l2_coefficient);
}

TrainResult train(Model& model, const CodedSequenceDataset& train_set,
                  const CodedSequenceDataset& validation_set, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (train_set.empty() || validation_set.empty()) {
    throw ConfigError("train: training and validation sets must be non-empty");
  }
  ParamStore& params = model.params();
  if (!all_finite(params)) throw TrainingDiverged("train: initial parameters are not finite");
  const double l2 = model.config().l2_coefficient;
  AdadeltaState state = AdadeltaState::zeros_like(params, config.rho, config.eps);
  const auto& patients = train_set.patients();
  const Vocabulary& vocab = train_set.vocabulary();

  std::vector<std::size_t> order(patients.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult result;
  double best_accuracy = -1.0;
  std::vector<Gradients> worker_grads(config.workers, Gradients(params));
  std::vector<double> worker_loss(config.workers);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const std::uint64_t epoch_seed = mix_seed(config.seed, epoch);
    Rng shuffle_rng(epoch_seed);
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (auto& g : worker_grads) g.zero();
      std::fill(worker_loss.begin(), worker_loss.end(), 0.0);
      parallel_chunks(end - start, config.workers, [&](std::size_t w, std::size_t b, std::size_t e) {
        for (std::size_t j = start + b; j < start + e; ++j) {
          const std::size_t patient = order[j];
          Rng dropout_rng(mix_seed(epoch_seed, patient));
          Tape tape;
          const Model::Graph graph = model.build(tape, patients[patient], true, dropout_rng);
          const auto targets = step_targets(patients[patient], vocab);
          const Var patient_loss = affine(sequence_loss(graph.predictions, targets), inv_batch, 0.0);
          worker_loss[w] += patient_loss.value()[0];
          tape.backward(patient_loss, worker_grads[w]);
        }
      });
      Gradients& total = worker_grads[0];
      double batch_loss = worker_loss[0];
      for (std::size_t w = 1; w < config.workers; ++w) {
        total.merge(worker_grads[w]);
        batch_loss += worker_loss[w];
      }
      {
        Tape tape;
        const Var penalty = l2_penalty(tape, params, l2);
        batch_loss += penalty.value()[0];
        tape.backward(penalty, total);
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingDiverged("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(n_batches + 1) + "; parameter norms: " +
                               parameter_norms(params));
      }
      adadelta_step(params, total, state);
      if (!all_finite(params)) {
        throw TrainingDiverged("non-finite parameters after epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(n_batches + 1) + "; parameter norms: " +
                               parameter_norms(params));
      }
      loss_sum += batch_loss;
      ++n_batches;
    }

    const auto val_records = predict_dataset(model, validation_set, config.workers);
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(n_batches);
    log.val_accuracy = accuracy(val_records).accuracy;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.history.push_back(log);
    if (log.val_accuracy > best_accuracy) {
      best_accuracy = log.val_accuracy;
      result.best_epoch = epoch;
      result.best_params = params;
    }
    if (on_epoch) on_epoch(log);
  }
  params = result.best_params;
  return result;
}

}  // namespace dipole
