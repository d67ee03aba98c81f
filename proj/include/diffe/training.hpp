#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "diffe/dataset.hpp"
#include "diffe/networks.hpp"
#include "diffe/schedule.hpp"

namespace diffe {

struct TrainConfig {
  int epochs = 500;
  double alpha = 0.1;      // weight of the classification term
  double base_lr = 9e-5;
  double max_lr = 1.5e-3;
  int cycle_len = 0;       // steps per half-cycle; 0 = five epochs' worth
  int batch_size = 32;
  std::uint64_t seed = 42;
  double test_fraction = 0.2;
  int T = 50;              // diffusion steps (desk-scale default)
  Ablation ablation = Ablation::full;
  CaeTarget cae_target = CaeTarget::residual_map;
  bool detach_taps = false;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double ddpm_loss = 0, cae_loss = 0, cls_loss = 0, total_loss = 0;
  double lr = 0;
  double train_acc = 0, test_acc = 0;  // fractions in [0,1]
};

struct TrainHistory {
  std::vector<EpochRecord> records;

  // Fixed header: epoch,ddpm_loss,cae_loss,cls_loss,total_loss,lr,train_acc,test_acc
  std::string to_csv() const;
};

// --- losses -----------------------------------------------------------------

// Mean absolute error; the denoiser objective against the clean signal.
Tensor ddpm_loss(const Tensor& x0, const Tensor& x0_hat);

// Mean absolute error between the decoder target and the decoder output.
Tensor cae_loss(const Tensor& target, const Tensor& decoder_out);

// Mean squared error over all entries; rows of y_onehot must be valid
// one-hot vectors.
Tensor classification_loss(const Tensor& y_hat, const Tensor& y_onehot);

Tensor one_hot(const std::vector<int>& labels, int n_classes);

// --- optimization -------------------------------------------------------------

// Triangular wave: base -> max over cycle_len steps, back over the next
// cycle_len, repeating.
double cyclic_lr(long step, double base_lr, double max_lr, long cycle_len);

// state <- decay*state + (1-decay)*grad^2; param <- param - lr*grad/(sqrt(state)+eps)
void rmsprop_update(std::span<double> param, std::span<const double> grad, std::span<double> state, double lr,
                    double decay = 0.99, double eps = 1e-8);

class RmsProp {
 public:
  explicit RmsProp(std::vector<NamedParam> params, double decay = 0.99, double eps = 1e-8);

  // Applies the current gradient buffers. Parameters a backward pass never
  // touched only decay their accumulator.
  void step(double lr);

 private:
  std::vector<NamedParam> params_;
  std::vector<std::vector<double>> state_;
  double decay_, eps_;
};

// --- data -----------------------------------------------------------------------

struct SplitResult {
  EpochedDataset train;
  EpochedDataset test;
};

// Stratified split, deterministic per seed: round(test_fraction * N_k) test
// trials per class, disjoint from the train side.
SplitResult split_dataset(const EpochedDataset& dataset, double test_fraction, std::uint64_t seed);

// --- the joint step and loop ------------------------------------------------------

struct StepComponents {
  double ddpm = 0, cae = 0, cls = 0, total = 0;
  int correct = 0;  // argmax hits within the batch
};

// One optimization step on a batch. Draws a fresh stage and noise per
// sample, forms the denoiser loss and the joint objective
// total = cae + alpha*cls, then updates the denoiser from its own loss and
// encoder/decoder/classifier from the joint one (shared cyclic LR).
StepComponents diffe_step(DiffEModel& model, const Tensor& x0, const std::vector<int>& labels,
                          const NoiseSchedule& schedule, const TrainConfig& config, Rng& rng, RmsProp& opt_denoiser,
                          RmsProp& opt_joint, double lr);

using StepObserver = std::function<void(int epoch, long step, const StepComponents&)>;

struct FitResult {
  DiffEModel model;
  TrainHistory history;
  SplitResult split;
};

// Splits, builds the model for `config.ablation`, then runs shuffled
// minibatches for config.epochs epochs. Channel count and class count come
// from the dataset. When `checkpoint_path` is set the checkpoint is
// rewritten at every epoch boundary, so an aborted run keeps its last good
// state. A non-finite loss raises NumericError.
FitResult fit(const TrainConfig& config, const NetworkConfig& net, const EpochedDataset& dataset,
              const std::optional<std::filesystem::path>& checkpoint_path = std::nullopt,
              const StepObserver& observer = nullptr);

}  // namespace diffe
