#include "diffe/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace diffe {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (alpha < 0.0) throw ConfigError("train.alpha must be >= 0");
  if (!(base_lr > 0.0) || !(base_lr <= max_lr)) throw ConfigError("train: need 0 < base_lr <= max_lr");
  if (cycle_len < 0) throw ConfigError("train.cycle_len must be >= 0 (0 = auto)");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(test_fraction > 0.0) || !(test_fraction < 1.0)) throw ConfigError("train.test_fraction must lie in (0,1)");
  if (T < 1) throw ConfigError("train.T must be >= 1");
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,ddpm_loss,cae_loss,cls_loss,total_loss,lr,train_acc,test_acc\n";
  char buf[256];
  for (const EpochRecord& r : records) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.ddpm_loss,
                  r.cae_loss, r.cls_loss, r.total_loss, r.lr, r.train_acc, r.test_acc);
    out += buf;
  }
  return out;
}

Tensor ddpm_loss(const Tensor& x0, const Tensor& x0_hat) {
  if (x0.shape() != x0_hat.shape())
    throw DimensionError("ddpm_loss: shapes " + shape_str(x0.shape()) + " vs " + shape_str(x0_hat.shape()));
  return mean_all(abs(sub(x0, x0_hat)));
}

Tensor cae_loss(const Tensor& target, const Tensor& decoder_out) {
  if (target.shape() != decoder_out.shape())
    throw DimensionError("cae_loss: shapes " + shape_str(target.shape()) + " vs " +
                         shape_str(decoder_out.shape()));
  return mean_all(abs(sub(target, decoder_out)));
}

Tensor classification_loss(const Tensor& y_hat, const Tensor& y_onehot) {
  if (y_hat.shape() != y_onehot.shape())
    throw DimensionError("classification_loss: shapes " + shape_str(y_hat.shape()) + " vs " +
                         shape_str(y_onehot.shape()));
  if (y_onehot.ndim() != 2) throw DimensionError("classification_loss: expected [B,K]");
  const int B = y_onehot.dim(0), K = y_onehot.dim(1);
  auto tv = y_onehot.values();
  for (int b = 0; b < B; ++b) {
    int ones = 0;
    for (int k = 0; k < K; ++k) {
      const double v = tv[static_cast<size_t>(b) * K + k];
      if (v == 1.0)
        ++ones;
      else if (v != 0.0)
        throw DataError("classification_loss: row " + std::to_string(b) + " is not one-hot");
    }
    if (ones != 1) throw DataError("classification_loss: row " + std::to_string(b) + " is not one-hot");
  }
  Tensor d = sub(y_hat, y_onehot);
  return mean_all(mul(d, d));
}

Tensor one_hot(const std::vector<int>& labels, int n_classes) {
  const int B = static_cast<int>(labels.size());
  Tensor out({B, n_classes});
  auto ov = out.values();
  for (int b = 0; b < B; ++b) {
    const int y = labels[static_cast<size_t>(b)];
    if (y < 0 || y >= n_classes) throw DataError("one_hot: label " + std::to_string(y) + " out of range");
    ov[static_cast<size_t>(b) * n_classes + y] = 1.0;
  }
  return out;
}

double cyclic_lr(long step, double base_lr, double max_lr, long cycle_len) {
  if (cycle_len < 1) throw ConfigError("cyclic_lr: cycle_len must be >= 1");
  const long phase = step % (2 * cycle_len);
  const long up = phase <= cycle_len ? phase : 2 * cycle_len - phase;
  return base_lr + (max_lr - base_lr) * static_cast<double>(up) / static_cast<double>(cycle_len);
}

void rmsprop_update(std::span<double> param, std::span<const double> grad, std::span<double> state, double lr,
                    double decay, double eps) {
  if (param.size() != grad.size() || param.size() != state.size())
    throw DimensionError("rmsprop_update: param/grad/state sizes differ");
  for (size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state[i] = decay * state[i] + (1.0 - decay) * g * g;
    const double upd = lr * g / (std::sqrt(state[i]) + eps);
    if (!std::isfinite(upd)) throw NumericError("rmsprop_update: non-finite update");
    param[i] -= upd;
  }
}

RmsProp::RmsProp(std::vector<NamedParam> params, double decay, double eps)
    : params_(std::move(params)), decay_(decay), eps_(eps) {
  state_.reserve(params_.size());
  for (const auto& p : params_) state_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
}

void RmsProp::step(double lr) {
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    auto& st = state_[i];
    if (!t.has_grad() || !t.grad_touched()) {
      for (double& s : st) s *= decay_;
      continue;
    }
    rmsprop_update(t.values(), t.impl()->grad, st, lr, decay_, eps_);
  }
}

SplitResult split_dataset(const EpochedDataset& dataset, double test_fraction, std::uint64_t seed) {
  dataset.validate();
  if (dataset.n < 1) throw DataError("split_dataset: empty dataset");
  if (!(test_fraction > 0.0) || !(test_fraction < 1.0))
    throw ConfigError("split_dataset: test_fraction must lie in (0,1)");
  const int K = dataset.n_classes() > 0 ? dataset.n_classes() : 1 + *std::max_element(dataset.labels.begin(),
                                                                                      dataset.labels.end());
  std::vector<std::vector<int>> by_class(static_cast<size_t>(K));
  for (int i = 0; i < dataset.n; ++i) by_class[static_cast<size_t>(dataset.labels[static_cast<size_t>(i)])].push_back(i);

  Rng rng(mix_seed(seed, 0x73706c69));
  std::vector<int> test_idx, train_idx;
  for (int k = 0; k < K; ++k) {
    auto& idx = by_class[static_cast<size_t>(k)];
    if (idx.size() < 2)
      throw DataError("split_dataset: class " + std::to_string(k) + " has fewer than 2 trials");
    for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i)
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(rng.uniform_int(0, i))]);
    const int n_test = static_cast<int>(std::lround(test_fraction * static_cast<double>(idx.size())));
    for (size_t j = 0; j < idx.size(); ++j)
      (static_cast<int>(j) < n_test ? test_idx : train_idx).push_back(idx[j]);
  }
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  auto take = [&dataset](const std::vector<int>& idx) {
    EpochedDataset d;
    d.channels = dataset.channels;
    d.L = dataset.L;
    d.fs = dataset.fs;
    d.class_names = dataset.class_names;
    d.provenance = dataset.provenance;
    d.n = static_cast<int>(idx.size());
    d.epochs.reserve(static_cast<size_t>(d.n) * d.channels * d.L);
    d.labels.reserve(idx.size());
    for (int i : idx) {
      const double* t = dataset.trial(i);
      d.epochs.insert(d.epochs.end(), t, t + static_cast<size_t>(d.channels) * d.L);
      d.labels.push_back(dataset.labels[static_cast<size_t>(i)]);
    }
    return d;
  };
  return {take(train_idx), take(test_idx)};
}

namespace {

Tensor batch_tensor(const EpochedDataset& d, const std::vector<int>& indices) {
  const int B = static_cast<int>(indices.size());
  Tensor x({B, d.channels, d.L});
  auto xv = x.values();
  const size_t per = static_cast<size_t>(d.channels) * d.L;
  for (int b = 0; b < B; ++b)
    std::copy_n(d.trial(indices[static_cast<size_t>(b)]), per, &xv[static_cast<size_t>(b) * per]);
  return x;
}

int argmax_hits(const Tensor& scores, const std::vector<int>& labels) {
  const int B = scores.dim(0), K = scores.dim(1);
  auto sv = scores.values();
  int hits = 0;
  for (int b = 0; b < B; ++b) {
    int best = 0;
    const double* row = &sv[static_cast<size_t>(b) * K];
    for (int k = 1; k < K; ++k)
      if (row[k] > row[best]) best = k;  // ties keep the lowest index
    if (best == labels[static_cast<size_t>(b)]) ++hits;
  }
  return hits;
}

}  // namespace

StepComponents diffe_step(DiffEModel& model, const Tensor& x0, const std::vector<int>& labels,
                          const NoiseSchedule& schedule, const TrainConfig& config, Rng& rng, RmsProp& opt_denoiser,
                          RmsProp& opt_joint, double lr) {
  if (x0.ndim() != 3 || x0.dim(0) < 1) throw DataError("diffe_step: empty batch");
  const int B = x0.dim(0);
  if (static_cast<int>(labels.size()) != B) throw DimensionError("diffe_step: labels do not match batch");

  StepComponents comps;
  Tensor total;  // joint objective: cae + alpha*cls
  Tensor ddpm;   // separate denoiser objective

  Encoder::Output enc = model.encoder.forward(x0);
  Tensor scores = model.classifier.forward(enc.z);
  Tensor cls = classification_loss(scores, one_hot(labels, model.config.n_classes));
  comps.cls = cls.item();
  comps.correct = argmax_hits(scores, labels);

  if (model.ablation == Ablation::full) {
    std::vector<int> t(static_cast<size_t>(B));
    for (int& ti : t) ti = sample_timestep(rng, config.T);
    Tensor noise(x0.shape());
    for (double& v : noise.values()) v = rng.normal();
    Tensor x_t = forward_sample_batch(x0, t, noise, schedule);

    DenoiserUNet::Output den = model.denoiser->forward(x_t, t, schedule);
    ddpm = ddpm_loss(x0, den.x0_hat);
    comps.ddpm = ddpm.item();

    Tensor target = config.cae_target == CaeTarget::residual_map ? abs(sub(x0, den.x0_hat)).detach() : x0;
    std::vector<Tensor> taps = den.taps;
    Tensor x0_hat_in = den.x0_hat;
    if (config.detach_taps) {
      for (Tensor& tap : taps) tap = tap.detach();
      x0_hat_in = x0_hat_in.detach();
    }
    Tensor rec = model.decoder->forward(enc.features, taps, x0, x0_hat_in);
    Tensor cae = cae_loss(target, rec);
    comps.cae = cae.item();
    total = add(cae, scale(cls, config.alpha));
  } else if (model.ablation == Ablation::no_ddpm) {
    Tensor rec = model.decoder->forward(enc.features, {}, x0, Tensor());
    Tensor cae = cae_loss(x0, rec);
    comps.cae = cae.item();
    total = add(cae, scale(cls, config.alpha));
  } else {
    total = scale(cls, config.alpha);
  }
  comps.total = total.item();
  if (!std::isfinite(comps.total) || !std::isfinite(comps.ddpm))
    throw NumericError("diffe_step: non-finite loss");

  // The joint gradients are taken first; the denoiser sweep then rewrites
  // the theta buffers, so each group steps from its own objective.
  backward(total);
  if (ddpm.defined()) backward(ddpm);
  opt_denoiser.step(lr);
  opt_joint.step(lr);
  return comps;
}

FitResult fit(const TrainConfig& config, const NetworkConfig& net, const EpochedDataset& dataset,
              const std::optional<std::filesystem::path>& checkpoint_path, const StepObserver& observer) {
  config.validate();
  dataset.validate();
  SplitResult split = split_dataset(dataset, config.test_fraction, config.seed);

  NetworkConfig nc = net;
  nc.in_channels = dataset.channels;
  nc.n_classes = dataset.n_classes() > 0
                     ? dataset.n_classes()
                     : 1 + *std::max_element(dataset.labels.begin(), dataset.labels.end());
  DiffEModel model = DiffEModel::build(nc, config.ablation, mix_seed(config.seed, 0x696e6974));

  const NoiseSchedule schedule = build_schedule(config.T, 1e-4, 0.02);
  RmsProp opt_denoiser(model.denoiser_parameters());
  RmsProp opt_joint(model.joint_parameters());

  const int n_train = split.train.n;
  const long steps_per_epoch = (n_train + config.batch_size - 1) / config.batch_size;
  const long cycle = config.cycle_len > 0 ? config.cycle_len : 5 * steps_per_epoch;

  Rng rng(mix_seed(config.seed, 0x74726169));
  std::vector<int> order(static_cast<size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);

  FitResult result{std::move(model), {}, std::move(split)};

  auto test_accuracy = [&result](const EpochedDataset& d) {
    if (d.n == 0) return 0.0;
    int hits = 0;
    for (int start = 0; start < d.n; start += 64) {
      std::vector<int> idx;
      std::vector<int> lab;
      for (int i = start; i < std::min(d.n, start + 64); ++i) {
        idx.push_back(i);
        lab.push_back(d.labels[static_cast<size_t>(i)]);
      }
      hits += argmax_hits(result.model.infer_scores(batch_tensor(d, idx)), lab);
    }
    return static_cast<double>(hits) / d.n;
  };
  long global_step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (int i = n_train - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(0, i))]);

    EpochRecord rec;
    rec.epoch = epoch;
    int train_hits = 0;
    for (long s = 0; s < steps_per_epoch; ++s) {
      const int lo = static_cast<int>(s) * config.batch_size;
      const int hi = std::min(n_train, lo + config.batch_size);
      std::vector<int> idx(order.begin() + lo, order.begin() + hi);
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (int i : idx) labels.push_back(result.split.train.labels[static_cast<size_t>(i)]);

      const double lr = cyclic_lr(global_step, config.base_lr, config.max_lr, cycle);
      const StepComponents comps = diffe_step(result.model, batch_tensor(result.split.train, idx), labels,
                                              schedule, config, rng, opt_denoiser, opt_joint, lr);
      const double w = static_cast<double>(idx.size()) / n_train;
      rec.ddpm_loss += w * comps.ddpm;
      rec.cae_loss += w * comps.cae;
      rec.cls_loss += w * comps.cls;
      rec.total_loss += w * comps.total;
      rec.lr = lr;
      train_hits += comps.correct;
      if (observer) observer(epoch, global_step, comps);
      ++global_step;
    }
    rec.train_acc = static_cast<double>(train_hits) / n_train;
    rec.test_acc = test_accuracy(result.split.test);
    result.history.records.push_back(rec);

    if (checkpoint_path) {
      const auto tmp = checkpoint_path->string() + ".tmp";
      save_checkpoint(result.model, tmp);
      std::filesystem::rename(tmp, *checkpoint_path);
    }
  }
  return result;
}

}  // namespace diffe
