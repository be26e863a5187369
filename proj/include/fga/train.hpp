#pragma once

#include <string>

#include "fga/fga.hpp"
#include "fga/tensor.hpp"

namespace fga {

/// Optimization settings for the toy harness. The ablation toggles are
/// copied onto the model config by train_toy; use_freq_loss selects between
/// plain pixel L1 and the L1 + FL1 objective (lambda-weighted).
struct TrainConfig {
  std::int64_t iterations = 400;
  double lr = 4e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lambda_pix = 1.0;
  double lambda_freq = 1.0;
  bool use_mlp = true;
  bool use_ff = true;
  bool use_cal = true;
  bool use_freq_loss = true;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Bias-corrected Adam moments, aligned index-for-index with the parameter
/// list passed to adam_step.
struct OptimizerState {
  std::vector<std::string> names;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

struct NamedTensorRef {
  std::string name;
  Tensor* tensor = nullptr;
};

/// Standard bias-corrected Adam update, in place. The state is created on
/// first use and validated against the parameter list afterwards. A
/// non-finite gradient raises NumericError naming the offending parameter.
void adam_step(const std::vector<NamedTensorRef>& params, const std::vector<Tensor>& grads,
               OptimizerState& state, double lr, double beta1, double beta2, double eps);

enum class UpsamplerKind { fga, spc, deconv, interp_conv };

const char* upsampler_kind_name(UpsamplerKind kind);
UpsamplerKind upsampler_kind_from_name(const std::string& name);

/// The desk-scale stand-in for a trained backbone: one frozen 3x3 conv
/// (image channels -> C) feeding the upsampler under test. Only the
/// upsampler parameters train.
struct ToyModel {
  UpsamplerKind kind = UpsamplerKind::fga;
  FgaConfig cfg;
  Tensor feat_w;  // C x in_channels x 3 x 3, frozen
  Tensor feat_b;  // C, frozen
  FgaParams fga;
  BaselineParams baseline;
};

ToyModel init_toy_model(UpsamplerKind kind, const FgaConfig& cfg,
                        std::int64_t in_channels = 3);

/// Full forward through the frozen feature conv and the upsampler.
Tensor toy_forward(const ToyModel& model, const Tensor& lr_image, FgaTrace* trace = nullptr);

struct TrainLogRow {
  std::int64_t iter = 0;
  double l1 = 0.0;
  double fl1 = 0.0;
  double psnr = 0.0;
};

struct TrainResult {
  ToyModel model;
  std::vector<TrainLogRow> log;
  Tensor lr_input;      // the degraded input actually optimized against
  Tensor final_output;  // prediction of the trained model
  bool diverged = false;
};

/// Overfit the configured upsampler to reconstruct target_hr (C x H x W in
/// [0,1], extents divisible by r) from its r x r block-mean downsample.
/// Logs pixel L1, FL1 and PSNR per iteration (values before that
/// iteration's update). Divergence (non-finite or > 1e6 loss) aborts with
/// the last good parameters.
TrainResult train_toy(const Tensor& target_hr, std::int64_t r, const TrainConfig& tc,
                      const FgaConfig& fc, UpsamplerKind kind = UpsamplerKind::fga);

/// `iter,l1,fl1,psnr` rows.
std::string train_log_csv(const std::vector<TrainLogRow>& log);

struct AblationRow {
  std::string label;
  bool use_mlp = false;
  bool use_ff = false;
  bool use_cal = false;
  bool use_freq_loss = false;
  double final_l1 = 0.0;
  double final_fl1 = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double frc_auc = 0.0;
  bool failed = false;
};

/// The five standard toggle combinations, in component order:
/// conv-only, +MLP, +FF, +CAL, and finally the FL1 objective.
std::vector<AblationRow> ablation_suite();

/// Train every row on every target (metrics averaged over targets, computed
/// on the luminance channel). Errors in one row mark it failed and the
/// table continues. jobs > 1 runs rows concurrently with isolated state;
/// output order stays fixed.
std::vector<AblationRow> ablate(const std::vector<Tensor>& targets, std::int64_t r,
                                const TrainConfig& tc, const FgaConfig& fc, std::int64_t jobs = 1);

std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Deterministic smooth RGB test texture in [0, 1] (sum of seeded random
/// sinusoids per channel), 3 x H x W.
Tensor make_texture_target(std::int64_t height, std::int64_t width, std::uint64_t seed);

/// Persist / restore a full toy model (frozen feature conv + upsampler) as
/// a directory of FGAT tensors plus a model.json manifest.
void save_toy_model(const std::string& dir, const ToyModel& model);
ToyModel load_toy_model(const std::string& dir);

}  // namespace fga
