#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dipole/ehr_data.hpp"
#include "dipole/model.hpp"
#include "dipole/params.hpp"

namespace dipole {

// Running averages E[g^2] and E[dx^2], one tensor per parameter.
struct AdadeltaState {
  double rho = 0.95;
  double eps = 1e-6;
  std::vector<Tensor> mean_sq_grad;
  std::vector<Tensor> mean_sq_update;

  static AdadeltaState zeros_like(const ParamStore& params, double rho = 0.95, double eps = 1e-6);
};

// E[g^2] <- rho E[g^2] + (1 - rho) g^2
// dx     = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
// E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2
// x      <- x + dx
void adadelta_step(ParamStore& params, const Gradients& grads, AdadeltaState& state);

struct TrainConfig {
  std::size_t batch_size = 100;
  std::size_t epochs = 100;
  double rho = 0.95;
  double eps = 1e-6;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

// Tab-separated: epoch, train_loss, val_accuracy, seconds.
std::string format_epoch_line(const EpochLog& log);
inline constexpr const char* kEpochLogHeader = "epoch\ttrain_loss\tval_accuracy\tseconds";

struct TrainResult {
  ParamStore best_params;
  std::size_t best_epoch = 0;  // 1-based
  std::vector<EpochLog> history;
};

// 1-based index of the first maximum.
std::size_t select_best_epoch(std::span<const double> validation_accuracy);

// Predictions for every patient, in dataset order, dropout off.
std::vector<PredictionRecord> predict_dataset(const Model& model, const CodedSequenceDataset& dataset,
                                              std::size_t workers = 1);

// Eval-mode objective (per-patient mean BCE averaged over patients, plus L2).
double dataset_objective(const Model& model, const CodedSequenceDataset& dataset);

// Mini-batch Adadelta over shuffled patients. After every epoch the
// validation accuracy is measured; the model ends up holding the
// parameters of the best epoch, which are also returned.
TrainResult train(Model& model, const CodedSequenceDataset& train_set,
                  const CodedSequenceDataset& validation_set, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace dipole
