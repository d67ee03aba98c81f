#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "diffe/ops.hpp"
#include "diffe/rng.hpp"
#include "diffe/schedule.hpp"

namespace diffe {

enum class Ablation { full, no_ddpm, no_ddpm_no_decoder };
enum class CaeTarget { residual_map, reconstruct_x0 };

std::string to_string(Ablation a);
std::string to_string(CaeTarget t);
Ablation ablation_from_string(const std::string& s);
CaeTarget cae_target_from_string(const std::string& s);

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Architecture fill-ins. The widths below are defaults, not claims; every
// one of them is addressable from the run config.
struct NetworkConfig {
  int in_channels = 8;
  int n_classes = 13;

  // denoiser: stem + 3 stride-2 stages, mirrored up path with skips
  int denoiser_base = 32;
  std::vector<int> denoiser_mults = {1, 1, 2, 2};
  int time_embed_dim = 128;

  // encoder: 4 stride-2 stages ending at the latent width
  int encoder_base = 32;
  int latent_dim = 256;

  // decoder: widths of the 4 up stages (mirror of the encoder, thinner)
  std::vector<int> decoder_widths = {64, 32, 16, 16};
  int tap_channels = 8;  // width of the 1x1-projected denoiser taps

  int classifier_hidden = 512;

  int kernel = 3;
  int groups = 4;  // group-norm groups (clamped to divide each width)

  void validate() const;
  int denoiser_depth() const { return static_cast<int>(denoiser_mults.size()) - 1; }
  int denoiser_width(int stage) const { return denoiser_base * denoiser_mults[static_cast<size_t>(stage)]; }
  int encoder_width(int stage) const;  // stage 0..3
};

// Collection of trainable tensors with stable names and construction order.
class ParamSet {
 public:
  Tensor add(const std::string& name, Shape shape, Rng& rng, int fan_in);
  Tensor add_constant(const std::string& name, Shape shape, double value);
  const std::vector<NamedParam>& items() const { return items_; }
  int count() const;

 private:
  std::vector<NamedParam> items_;
};

// Sinusoidal embedding of integer diffusion stages, [B, dim] leaf.
Tensor sinusoidal_time_embedding(const std::vector<int>& t, int dim);

// Time-conditional 1-D U-Net predicting the clean signal x0 from (x_t, t).
// Input length is right-padded to a multiple of 2^depth and cropped back, so
// the output always matches the input shape. Up-path activations are exposed
// for the decoder (deepest resolution first).
class DenoiserUNet {
 public:
  DenoiserUNet(const NetworkConfig& cfg, Rng& rng);

  struct Output {
    Tensor x0_hat;
    std::vector<Tensor> taps;
  };
  Output forward(const Tensor& x_t, const std::vector<int>& t, const NoiseSchedule& schedule) const;

  const std::vector<NamedParam>& parameters() const { return params_.items(); }
  int param_count() const { return params_.count(); }

 private:
  struct Stage {
    Tensor w, b, gn_g, gn_b, time_w, time_b;
    int stride = 1;
  };
  Tensor stage_forward(const Stage& s, const Tensor& x, const Tensor& temb) const;

  NetworkConfig cfg_;
  ParamSet params_;
  Tensor temb_w1_, temb_b1_, temb_w2_, temb_b2_;
  Stage stem_;
  std::vector<Stage> down_;
  Stage mid_;
  std::vector<Stage> up_;
  Tensor head_w_, head_b_;
};

// Conv stack with stride-2 stages; exposes per-stage feature maps
// (shallow -> deep) and the pooled latent z of width latent_dim.
class Encoder {
 public:
  Encoder(const NetworkConfig& cfg, Rng& rng);

  struct Output {
    Tensor z;                     // [B, latent_dim]
    std::vector<Tensor> features; // shallow -> deep
  };
  Output forward(const Tensor& x0) const;

  const std::vector<NamedParam>& parameters() const { return params_.items(); }
  int param_count() const { return params_.count(); }

 private:
  struct Stage {
    Tensor w, b, gn_g, gn_b;
  };
  NetworkConfig cfg_;
  ParamSet params_;
  std::vector<Stage> stages_;
};

// Mirror of the encoder. In the full model each up stage is conditioned on
// the matching denoiser tap (pooled to length, then 1x1-projected) and the
// last stage additionally on x0 and x0_hat; without the DDPM those inputs
// are dropped and the decoder reconstructs x0 from encoder features alone.
class Decoder {
 public:
  Decoder(const NetworkConfig& cfg, bool use_ddpm_conditioning, Rng& rng);

  Tensor forward(const std::vector<Tensor>& enc_features, const std::vector<Tensor>& ddpm_taps, const Tensor& x0,
                 const Tensor& x0_hat) const;

  bool conditioned_on_ddpm() const { return use_ddpm_conditioning_; }
  const std::vector<NamedParam>& parameters() const { return params_.items(); }
  int param_count() const { return params_.count(); }

 private:
  struct Stage {
    Tensor w, b, gn_g, gn_b;
    Tensor tap_w, tap_b;  // 1x1 projection, undefined when unused
  };
  NetworkConfig cfg_;
  bool use_ddpm_conditioning_;
  ParamSet params_;
  std::vector<Stage> stages_;
  Tensor head_w_, head_b_;
};

// Affine stack from z to raw class scores (trained with MSE on one-hot
// targets, so no softmax).
class Classifier {
 public:
  Classifier(const NetworkConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& z) const;

  const std::vector<NamedParam>& parameters() const { return params_.items(); }
  int param_count() const { return params_.count(); }

 private:
  NetworkConfig cfg_;
  ParamSet params_;
  Tensor w1_, b1_, w2_, b2_;
};

// Parameter bundle for one training run.
struct DiffEModel {
  NetworkConfig config;
  Ablation ablation = Ablation::full;
  std::optional<DenoiserUNet> denoiser;
  Encoder encoder;
  std::optional<Decoder> decoder;
  Classifier classifier;

  static DiffEModel build(const NetworkConfig& cfg, Ablation ablation, std::uint64_t init_seed);

  std::vector<NamedParam> all_parameters() const;       // denoiser first
  std::vector<NamedParam> denoiser_parameters() const;  // theta
  std::vector<NamedParam> joint_parameters() const;     // psi, phi, rho
  int param_count() const;

  // Inference path: scores = classifier(encoder(x0).z). No denoiser or
  // decoder parameters participate.
  Tensor infer_scores(const Tensor& x0) const;
};

// Self-describing checkpoint: one line of JSON (format version, architecture
// config, ablation, parameter names/shapes) then the parameter payload as
// little-endian float64 in header order.
inline constexpr int kCheckpointFormatVersion = 1;

void save_checkpoint(const DiffEModel& model, const std::filesystem::path& path);
DiffEModel load_checkpoint(const std::filesystem::path& path);

}  // namespace diffe
