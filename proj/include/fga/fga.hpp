#pragma once

#include <functional>
#include <string>

#include "fga/grad.hpp"
#include "fga/tensor.hpp"

namespace fga {

/// Upsampler hyperparameters. channels is the working width C; scale is the
/// total factor r realized by the per-stage shuffles in stage_scales.
struct FgaConfig {
  std::int64_t channels = 64;
  std::int64_t scale = 4;
  std::vector<std::int64_t> stage_scales = {2, 2};
  std::int64_t mlp_hidden = 0;  // 0 means "same as channels"
  std::int64_t win_pre = 5;     // LR-side attention window (per side)
  std::int64_t win_post = 4;    // HR-side attention window (per side)
  double overlap = 0.5;         // alpha; enters overlapped window sizing and FLOPs
  bool use_ff = true;
  bool use_mlp = true;
  bool use_cal = true;
  bool mlp_per_group = false;  // default: one MLP shared across sub-pixel groups
  std::int64_t out_channels = 3;
  std::uint64_t seed = 0x5eedULL;

  std::int64_t hidden() const { return mlp_hidden > 0 ? mlp_hidden : channels; }
  /// Throws ConfigError on inconsistent settings (odd C, stage product != r,
  /// CAL window not divisible by r, alpha out of [0,1), ...).
  void validate() const;
  /// Default config for a given total scale: stages factored into 2s and 3s,
  /// win_post raised to the smallest multiple of r >= 4 so CAL pairing works.
  static FgaConfig defaults(std::int64_t r);
};

/// One per-stage FF-MLP (two 1x1 affine layers with GELU between), stored as
/// rank-4 conv weights so the stage can apply them spatially.
struct StageMlp {
  Tensor w1;  // hidden x C x 1 x 1
  Tensor b1;  // hidden
  Tensor w2;  // C x hidden x 1 x 1
  Tensor b2;  // C
};

struct StageParams {
  Tensor conv_w;  // s^2 C x C x 3 x 3 channel-expansion conv
  Tensor conv_b;  // s^2 C
  Tensor freq;    // s^2 x C/2 x 2 per-group frequency matrix
  std::vector<StageMlp> mlp;  // 1 entry (shared) or s^2 entries (per group)
};

struct CalParams {
  Tensor p_k, p_v;              // C x C projections (no bias)
  Tensor proj_w;                // C x C attention output projection
  Tensor proj_b;                // C
  Tensor norm1_gamma, norm1_beta;  // pre-attention normalization
  Tensor norm2_gamma, norm2_beta;  // pre-MLP normalization
  Tensor ff_w1;                 // 2C x C
  Tensor ff_b1;                 // 2C
  Tensor ff_w2;                 // C x 2C
  Tensor ff_b2;                 // C
};

struct FgaParams {
  std::vector<StageParams> stages;
  CalParams cal;
  Tensor final_w;  // out_channels x C x 3 x 3
  Tensor final_b;  // out_channels

  /// Enumerate every tensor with a stable dotted name (also the
  /// initialization draw order and the serialization key order).
  void visit(const std::function<void(const std::string&, Tensor&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

enum class BaselineKind { spc, deconv, interp_conv };

/// Baseline upsamplers share a head + final-conv shape so the comparison
/// harness can treat them uniformly. head is kind-specific:
///   spc:         3x3 conv C -> r^2 C, then pixel_shuffle(r)
///   deconv:      2r x 2r transposed conv C -> C at stride r, cropped to rx
///   interp_conv: nn_interp(r), then 3x3 conv C -> C
struct BaselineParams {
  BaselineKind kind = BaselineKind::spc;
  Tensor head_w;
  Tensor head_b;
  Tensor final_w;  // out_channels x C x 3 x 3
  Tensor final_b;

  void visit(const std::function<void(const std::string&, Tensor&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

const char* baseline_kind_name(BaselineKind kind);
BaselineKind baseline_kind_from_name(const std::string& name);

/// Deterministic initialization: affine/conv weights uniform in
/// +-sqrt(1/fan_in), biases zero, normalization gains 1, frequency rows set
/// to the integer lattice {(0,0),(0,1),(1,0),...} ordered by (a^2+b^2, a, b).
FgaParams init_params(const FgaConfig& cfg);
BaselineParams init_baseline(BaselineKind kind, const FgaConfig& cfg);

std::int64_t parameter_count(const FgaConfig& cfg);
std::int64_t baseline_parameter_count(BaselineKind kind, const FgaConfig& cfg);

/// Sub-pixel group g of a tensor with s^2 * C channels occupies channels
/// { c * s^2 + g : c in [0, C) } — the channels pixel_shuffle sends to the
/// in-block offset (g / s, g % s).
std::vector<std::int64_t> subpixel_group_channels(std::int64_t channels, std::int64_t s,
                                                  std::int64_t g);

/// Fourier-feature modulation of an expanded feature map F (N x s^2 C x h x w):
/// each sub-pixel group g is multiplied elementwise by
/// concat(cos(pi phi_g), sin(pi phi_g)) with phi_g = freq[g] . V_g, where
/// V_g is that group's slice of the pixel-unshuffled normalized coordinate
/// grid of the stage output.
Tensor fourier_feature_embed(const Tensor& f, std::int64_t s, const Tensor& freq);

/// One upsampling stage: 3x3 expansion conv -> Fourier modulation (use_ff)
/// -> per-group MLP (use_mlp) -> pixel_shuffle(s).
Tensor ffmlp_stage(const Tensor& x, const StageParams& stage, std::int64_t s,
                   const FgaConfig& cfg);

/// Cross-resolution window attention + feed-forward, windows paired per
/// config (HR: win_post non-overlapping; LR: win_pre at stride win_post/r).
Tensor cal_forward(const Tensor& f_lr, const Tensor& f_hr, const CalParams& cal,
                   const FgaConfig& cfg);

/// Optional intermediate dumps from fga_forward.
struct FgaTrace {
  Tensor pre_attention;   // features entering CAL (after the last stage)
  Tensor post_attention;  // features after CAL (== pre when use_cal false)
};

/// Full upsampler: stages -> optional CAL against the original input -> 3x3
/// output conv. Input N x C x h x w, output N x out_channels x rh x rw.
Tensor fga_forward(const Tensor& f, const FgaParams& params, const FgaConfig& cfg,
                   FgaTrace* trace = nullptr);

Tensor baseline_forward(const BaselineParams& params, const Tensor& x, std::int64_t r,
                        FgaTrace* trace = nullptr);

/// Closed-form attention FLOPs (kind: "sa", "ca", "owca"):
///   sa   = 4 H W C^2 + 2 M^2 H W C
///   ca   = (1 + 2/r^2) H W C^2 + (2 M^2 / r^2) H W C
///   owca = (1 + 2/r^2) H W C^2 + (1+alpha)^2 (2 M^2 / r^2) H W C
double flops_estimate(const std::string& kind, double h, double w, double c, double m, double r,
                      double alpha);

// --- taped forwards (training path; the plain functions above wrap these) --

/// Tape handles mirroring the parameter structs.
struct StageMlpVars {
  Var w1, b1, w2, b2;
};
struct StageVars {
  Var conv_w, conv_b, freq;
  std::vector<StageMlpVars> mlp;
};
struct CalVars {
  Var p_k, p_v, proj_w, proj_b;
  Var norm1_gamma, norm1_beta, norm2_gamma, norm2_beta;
  Var ff_w1, ff_b1, ff_w2, ff_b2;
};
struct FgaVars {
  std::vector<StageVars> stages;
  CalVars cal;
  Var final_w, final_b;
};

struct BaselineVars {
  Var head_w, head_b, final_w, final_b;
};

FgaVars lift_params(GradTape& tape, const FgaParams& params);
BaselineVars lift_params(GradTape& tape, const BaselineParams& params);

struct TapedTrace {
  Var pre_attention;
  Var post_attention;
};

Var fga_forward_taped(GradTape& tape, Var f, const FgaVars& vars, const FgaConfig& cfg,
                      TapedTrace* trace = nullptr);
Var baseline_forward_taped(GradTape& tape, Var x, const BaselineVars& vars, BaselineKind kind,
                           std::int64_t r, TapedTrace* trace = nullptr);

/// Collect (name, leaf Var) pairs in the same order as visit().
std::vector<std::pair<std::string, Var>> named_vars(const FgaVars& vars, FgaParams& params);
std::vector<std::pair<std::string, Var>> named_vars(const BaselineVars& vars,
                                                    BaselineParams& params);

// --- serialization ---------------------------------------------------------

/// Compact JSON rendering of a config (for run manifests).
std::string config_to_json_string(const FgaConfig& cfg);
FgaConfig config_from_json_string(const std::string& text);

/// Write a parameter directory: one FGAT file per tensor plus params.json
/// mapping names to files and recording the config.
void save_fga_params(const std::string& dir, const FgaConfig& cfg, const FgaParams& params);
void save_baseline_params(const std::string& dir, const FgaConfig& cfg,
                          const BaselineParams& params);

/// model name stored in a params.json ("fga", "spc", "deconv", "interp_conv").
std::string peek_params_model(const std::string& dir);
FgaConfig peek_params_config(const std::string& dir);

FgaParams load_fga_params(const std::string& dir, FgaConfig& cfg_out);
BaselineParams load_baseline_params(const std::string& dir, FgaConfig& cfg_out);

}  // namespace fga
