#include "fga/fga.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "fga/io.hpp"
#include "fga/ops.hpp"
#include "json.hpp"

namespace fga {

namespace {

using nlohmann::json;

std::int64_t product(const std::vector<std::int64_t>& v) {
  std::int64_t p = 1;
  for (std::int64_t e : v) p *= e;
  return p;
}

}  // namespace

void FgaConfig::validate() const {
  if (channels < 2 || channels % 2 != 0) {
    throw ConfigError("FgaConfig: channels must be even and >= 2 (cos/sin split needs C/2 rows)");
  }
  if (scale < 1) throw ConfigError("FgaConfig: scale must be >= 1");
  if (stage_scales.empty()) throw ConfigError("FgaConfig: stage_scales must not be empty");
  for (std::int64_t s : stage_scales) {
    if (s < 1) throw ConfigError("FgaConfig: every stage scale must be >= 1");
  }
  if (product(stage_scales) != scale) {
    throw ConfigError("FgaConfig: product of stage_scales must equal scale " + std::to_string(scale));
  }
  if (mlp_hidden < 0) throw ConfigError("FgaConfig: mlp_hidden must be >= 0 (0 means channels)");
  if (overlap < 0.0 || overlap >= 1.0) throw ConfigError("FgaConfig: overlap must lie in [0, 1)");
  if (out_channels < 1) throw ConfigError("FgaConfig: out_channels must be >= 1");
  if (win_pre < 1 || win_post < 1) throw ConfigError("FgaConfig: windows must be >= 1");
  if (use_cal) {
    if (win_post % scale != 0) {
      throw ConfigError("FgaConfig: win_post must be divisible by scale for window pairing (got " +
                        std::to_string(win_post) + " vs scale " + std::to_string(scale) + ")");
    }
    if (win_pre < win_post / scale) {
      throw ConfigError("FgaConfig: win_pre must be at least win_post/scale (LR window covers its stride)");
    }
  }
}

FgaConfig FgaConfig::defaults(std::int64_t r) {
  FgaConfig cfg;
  cfg.scale = r;
  cfg.stage_scales.clear();
  std::int64_t rem = r;
  while (rem % 2 == 0 && rem > 1) {
    cfg.stage_scales.push_back(2);
    rem /= 2;
  }
  while (rem % 3 == 0 && rem > 1) {
    cfg.stage_scales.push_back(3);
    rem /= 3;
  }
  if (rem > 1 || cfg.stage_scales.empty()) cfg.stage_scales.push_back(rem);
  // smallest multiple of r that is >= 4, so the HR window stays near the
  // default 4x4 while keeping win_post % r == 0
  cfg.win_post = r >= 4 ? r : ((4 + r - 1) / r) * r;
  return cfg;
}

void FgaParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string p = "stage" + std::to_string(i) + ".";
    StageParams& st = stages[i];
    fn(p + "conv_w", st.conv_w);
    fn(p + "conv_b", st.conv_b);
    if (st.freq.numel() > 0) fn(p + "freq", st.freq);
    for (std::size_t j = 0; j < st.mlp.size(); ++j) {
      const std::string q = p + "mlp" + std::to_string(j) + ".";
      fn(q + "w1", st.mlp[j].w1);
      fn(q + "b1", st.mlp[j].b1);
      fn(q + "w2", st.mlp[j].w2);
      fn(q + "b2", st.mlp[j].b2);
    }
  }
  if (cal.p_k.numel() > 0) {
    fn("cal.p_k", cal.p_k);
    fn("cal.p_v", cal.p_v);
    fn("cal.proj_w", cal.proj_w);
    fn("cal.proj_b", cal.proj_b);
    fn("cal.norm1_gamma", cal.norm1_gamma);
    fn("cal.norm1_beta", cal.norm1_beta);
    fn("cal.norm2_gamma", cal.norm2_gamma);
    fn("cal.norm2_beta", cal.norm2_beta);
    fn("cal.ff_w1", cal.ff_w1);
    fn("cal.ff_b1", cal.ff_b1);
    fn("cal.ff_w2", cal.ff_w2);
    fn("cal.ff_b2", cal.ff_b2);
  }
  fn("final.w", final_w);
  fn("final.b", final_b);
}

void FgaParams::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<FgaParams*>(this)->visit(
      [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

void BaselineParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("head.w", head_w);
  fn("head.b", head_b);
  fn("final.w", final_w);
  fn("final.b", final_b);
}

void BaselineParams::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<BaselineParams*>(this)->visit(
      [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

const char* baseline_kind_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::spc: return "spc";
    case BaselineKind::deconv: return "deconv";
    case BaselineKind::interp_conv: return "interp_conv";
  }
  throw ConfigError("unknown baseline kind");
}

BaselineKind baseline_kind_from_name(const std::string& name) {
  if (name == "spc") return BaselineKind::spc;
  if (name == "deconv") return BaselineKind::deconv;
  if (name == "interp_conv" || name == "interp") return BaselineKind::interp_conv;
  throw ConfigError("unknown baseline kind '" + name + "'");
}

namespace {

void fill_fan_in(Rng& rng, Tensor& w, std::int64_t fan_in) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  rng.fill_uniform(w, -bound, bound);
}

// Integer lattice frequencies {(0,0), (0,1), (1,0), ...} ordered by
// (a^2+b^2, a, b); the modulation applies the factor pi itself.
void fill_freq_lattice(Tensor& freq) {
  const std::int64_t groups = freq.extent(0);
  const std::int64_t rows = freq.extent(1);
  std::vector<std::pair<std::int64_t, std::int64_t>> lattice;
  const std::int64_t span = static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(rows)))) + 2;
  for (std::int64_t a = 0; a < span; ++a)
    for (std::int64_t b = 0; b < span; ++b) lattice.emplace_back(a, b);
  std::sort(lattice.begin(), lattice.end(), [](const auto& p, const auto& q) {
    const std::int64_t rp = p.first * p.first + p.second * p.second;
    const std::int64_t rq = q.first * q.first + q.second * q.second;
    if (rp != rq) return rp < rq;
    return p < q;
  });
  for (std::int64_t g = 0; g < groups; ++g) {
    for (std::int64_t k = 0; k < rows; ++k) {
      freq.at(g, k, 0) = static_cast<double>(lattice[static_cast<std::size_t>(k)].first);
      freq.at(g, k, 1) = static_cast<double>(lattice[static_cast<std::size_t>(k)].second);
    }
  }
}

StageMlp init_stage_mlp(Rng& rng, std::int64_t c, std::int64_t hidden) {
  StageMlp m;
  m.w1 = Tensor({hidden, c, 1, 1});
  fill_fan_in(rng, m.w1, c);
  m.b1 = Tensor({hidden});
  m.w2 = Tensor({c, hidden, 1, 1});
  fill_fan_in(rng, m.w2, hidden);
  m.b2 = Tensor({c});
  return m;
}

}  // namespace

FgaParams init_params(const FgaConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::int64_t c = cfg.channels;
  FgaParams p;
  for (std::int64_t s : cfg.stage_scales) {
    StageParams st;
    const std::int64_t s2 = s * s;
    st.conv_w = Tensor({s2 * c, c, 3, 3});
    fill_fan_in(rng, st.conv_w, 9 * c);
    st.conv_b = Tensor({s2 * c});
    if (cfg.use_ff) {
      st.freq = Tensor({s2, c / 2, 2});
      fill_freq_lattice(st.freq);
    }
    if (cfg.use_mlp) {
      const std::int64_t n_mlp = cfg.mlp_per_group ? s2 : 1;
      for (std::int64_t j = 0; j < n_mlp; ++j) st.mlp.push_back(init_stage_mlp(rng, c, cfg.hidden()));
    }
    p.stages.push_back(std::move(st));
  }
  if (cfg.use_cal) {
    CalParams& cal = p.cal;
    cal.p_k = Tensor({c, c});
    fill_fan_in(rng, cal.p_k, c);
    cal.p_v = Tensor({c, c});
    fill_fan_in(rng, cal.p_v, c);
    cal.proj_w = Tensor({c, c});
    fill_fan_in(rng, cal.proj_w, c);
    cal.proj_b = Tensor({c});
    cal.norm1_gamma = Tensor::full({c}, 1.0);
    cal.norm1_beta = Tensor({c});
    cal.norm2_gamma = Tensor::full({c}, 1.0);
    cal.norm2_beta = Tensor({c});
    cal.ff_w1 = Tensor({2 * c, c});
    fill_fan_in(rng, cal.ff_w1, c);
    cal.ff_b1 = Tensor({2 * c});
    cal.ff_w2 = Tensor({c, 2 * c});
    fill_fan_in(rng, cal.ff_w2, 2 * c);
    cal.ff_b2 = Tensor({c});
  }
  p.final_w = Tensor({cfg.out_channels, c, 3, 3});
  fill_fan_in(rng, p.final_w, 9 * c);
  p.final_b = Tensor({cfg.out_channels});
  return p;
}

BaselineParams init_baseline(BaselineKind kind, const FgaConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::int64_t c = cfg.channels, r = cfg.scale;
  BaselineParams p;
  p.kind = kind;
  switch (kind) {
    case BaselineKind::spc:
      p.head_w = Tensor({r * r * c, c, 3, 3});
      fill_fan_in(rng, p.head_w, 9 * c);
      p.head_b = Tensor({r * r * c});
      break;
    case BaselineKind::deconv:
      p.head_w = Tensor({c, c, 2 * r, 2 * r});
      fill_fan_in(rng, p.head_w, 4 * r * r * c);
      p.head_b = Tensor({c});
      break;
    case BaselineKind::interp_conv:
      p.head_w = Tensor({c, c, 3, 3});
      fill_fan_in(rng, p.head_w, 9 * c);
      p.head_b = Tensor({c});
      break;
  }
  p.final_w = Tensor({cfg.out_channels, c, 3, 3});
  fill_fan_in(rng, p.final_w, 9 * c);
  p.final_b = Tensor({cfg.out_channels});
  return p;
}

std::int64_t parameter_count(const FgaConfig& cfg) {
  cfg.validate();
  FgaParams p = init_params(cfg);
  std::int64_t n = 0;
  p.visit([&n](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

std::int64_t baseline_parameter_count(BaselineKind kind, const FgaConfig& cfg) {
  BaselineParams p = init_baseline(kind, cfg);
  std::int64_t n = 0;
  p.visit([&n](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

std::vector<std::int64_t> subpixel_group_channels(std::int64_t channels, std::int64_t s,
                                                  std::int64_t g) {
  const std::int64_t s2 = s * s;
  if (g < 0 || g >= s2) throw ConfigError("subpixel group index out of range");
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(channels));
  for (std::int64_t c = 0; c < channels; ++c) idx.push_back(c * s2 + g);
  return idx;
}

// ---------------------------------------------------------------------------
// Taped model
// ---------------------------------------------------------------------------

namespace {

// Modulation vectors m_g = concat(cos(pi phi), sin(pi phi)) for every group,
// from the pixel-unshuffled coordinate grid of the stage output.
std::vector<Var> taped_modulations(GradTape& t, Var freq, std::int64_t s, std::int64_t c,
                                   std::int64_t h, std::int64_t w) {
  const std::int64_t s2 = s * s;
  const Tensor grid = coordinate_grid(s * h, s * w);  // 2 x sh x sw
  const Tensor v_all = pixel_unshuffle(Tensor({1, 2, s * h, s * w}, std::vector<double>(grid.values())), s);
  Var v_leaf = t.leaf(v_all);  // 1 x 2 s^2 x h x w, constant
  Var freq2d = t.reshape(freq, {s2 * (c / 2), 2});
  Var zero_bias = t.leaf(Tensor({c / 2}));
  std::vector<Var> mods;
  for (std::int64_t g = 0; g < s2; ++g) {
    Var vg = t.gather_channels(v_leaf, {g, s2 + g});  // (y_g, x_g)
    Var fr = t.reshape(t.slice_dim0(freq2d, g * (c / 2), c / 2), {c / 2, 2, 1, 1});
    Var phi = t.conv2d(vg, fr, zero_bias, 1, 0);  // 1 x C/2 x h x w
    mods.push_back(t.concat_channels({t.cos_pi(phi), t.sin_pi(phi)}));
  }
  return mods;
}

// Reassemble per-group tensors (group-major concat) back into the
// interleaved s^2 C channel order pixel_shuffle expects.
Var taped_regroup(GradTape& t, const std::vector<Var>& groups, std::int64_t s, std::int64_t c) {
  const std::int64_t s2 = s * s;
  Var cat = t.concat_channels(groups);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(s2 * c));
  for (std::int64_t k = 0; k < s2 * c; ++k) {
    idx[static_cast<std::size_t>(k)] = (k % s2) * c + (k / s2);
  }
  return t.gather_channels(cat, idx);
}

Var taped_stage(GradTape& t, Var x, const StageVars& sv, std::int64_t s, const FgaConfig& cfg) {
  const std::int64_t c = cfg.channels;
  Var f = t.conv2d(x, sv.conv_w, sv.conv_b, 1, 1);
  if (!cfg.use_ff && !cfg.use_mlp) return t.pixel_shuffle(f, s);

  const Tensor& fv = t.value(f);
  const std::int64_t h = fv.extent(2), w = fv.extent(3);
  const std::int64_t s2 = s * s;
  std::vector<Var> mods;
  if (cfg.use_ff) mods = taped_modulations(t, sv.freq, s, c, h, w);

  std::vector<Var> groups;
  groups.reserve(static_cast<std::size_t>(s2));
  for (std::int64_t g = 0; g < s2; ++g) {
    Var fg = t.gather_channels(f, subpixel_group_channels(c, s, g));
    if (cfg.use_ff) fg = t.mul(fg, mods[static_cast<std::size_t>(g)]);
    if (cfg.use_mlp) {
      const StageMlpVars& mv = sv.mlp[cfg.mlp_per_group ? static_cast<std::size_t>(g) : 0];
      Var hdn = t.gelu(t.conv2d(fg, mv.w1, mv.b1, 1, 0));
      fg = t.conv2d(hdn, mv.w2, mv.b2, 1, 0);
    }
    groups.push_back(fg);
  }
  return t.pixel_shuffle(taped_regroup(t, groups, s, c), s);
}

Var taped_cal(GradTape& t, Var f_lr, Var f_hr, const CalVars& cv, const FgaConfig& cfg) {
  const Tensor& lr = t.value(f_lr);
  const Tensor& hr = t.value(f_hr);
  const std::int64_t c = cfg.channels, r = cfg.scale;
  const std::int64_t h = lr.extent(2), w = lr.extent(3);
  const std::int64_t hh = hr.extent(2), hw = hr.extent(3);
  if (hh != r * h || hw != r * w) {
    throw ShapeError("cal_forward: HR extents must be scale x LR extents, got " + hr.shape_str() +
                     " vs " + lr.shape_str());
  }
  const std::int64_t big_m = cfg.win_post;
  const std::int64_t p = cfg.win_pre;
  if (big_m % r != 0) {
    throw ConfigError("cal_forward: win_post must be divisible by scale for window pairing");
  }
  if (p < big_m / r) throw ConfigError("cal_forward: win_pre must cover the LR stride win_post/scale");
  const std::int64_t m = big_m / r;  // LR-side window stride
  const std::int64_t rows = (hh + big_m - 1) / big_m;
  const std::int64_t cols = (hw + big_m - 1) / big_m;

  const std::int64_t hr_pad_b = rows * big_m - hh;
  const std::int64_t hr_pad_r = cols * big_m - hw;
  Var hrp = (hr_pad_b || hr_pad_r) ? t.reflection_pad2d(f_hr, 0, hr_pad_b, 0, hr_pad_r) : f_hr;

  const std::int64_t lr_pad_t = (p - m) / 2;
  const std::int64_t lr_pad_l = lr_pad_t;
  const std::int64_t lr_pad_b = (rows - 1) * m + p - lr_pad_t - h;
  const std::int64_t lr_pad_r = (cols - 1) * m + p - lr_pad_l - w;
  Var lrp = (lr_pad_t || lr_pad_b || lr_pad_l || lr_pad_r)
                ? t.reflection_pad2d(f_lr, lr_pad_t, lr_pad_b, lr_pad_l, lr_pad_r)
                : f_lr;
  const std::int64_t lh = h + lr_pad_t + lr_pad_b;
  const std::int64_t lw = w + lr_pad_l + lr_pad_r;

  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
  Var merged;
  bool first = true;
  for (std::int64_t gr = 0; gr < rows; ++gr) {
    for (std::int64_t gc = 0; gc < cols; ++gc) {
      Var hb = t.crop2d(hrp, gr * big_m, (rows - 1 - gr) * big_m, gc * big_m,
                        (cols - 1 - gc) * big_m);
      Var lb = t.crop2d(lrp, gr * m, lh - (gr * m + p), gc * m, lw - (gc * m + p));
      Var hr_tok = t.chw_to_tokens(hb);
      Var lr_tok = t.chw_to_tokens(lb);
      Var nh = t.layer_norm_rows(hr_tok, cv.norm1_gamma, cv.norm1_beta, 1e-5);
      Var nl = t.layer_norm_rows(lr_tok, cv.norm1_gamma, cv.norm1_beta, 1e-5);
      Var k_m = t.project(nl, cv.p_k);
      Var v_m = t.project(nl, cv.p_v);
      Var attn = t.softmax_rows(t.scale(t.matmul(nh, t.transpose(k_m)), inv_sqrt_c));
      Var o = t.linear(t.matmul(attn, v_m), cv.proj_w, cv.proj_b);
      Var h1 = t.add(hr_tok, o);
      Var n2 = t.layer_norm_rows(h1, cv.norm2_gamma, cv.norm2_beta, 1e-5);
      Var ff = t.linear(t.gelu(t.linear(n2, cv.ff_w1, cv.ff_b1)), cv.ff_w2, cv.ff_b2);
      Var blk = t.tokens_to_chw(t.add(h1, ff), c, big_m, big_m);
      Var emb = t.zero_pad2d(blk, gr * big_m, (rows - 1 - gr) * big_m, gc * big_m,
                             (cols - 1 - gc) * big_m);
      merged = first ? emb : t.add(merged, emb);
      first = false;
    }
  }
  if (hr_pad_b || hr_pad_r) merged = t.crop2d(merged, 0, hr_pad_b, 0, hr_pad_r);
  return merged;
}

}  // namespace

FgaVars lift_params(GradTape& tape, const FgaParams& params) {
  FgaVars v;
  for (const StageParams& st : params.stages) {
    StageVars sv;
    sv.conv_w = tape.leaf(st.conv_w);
    sv.conv_b = tape.leaf(st.conv_b);
    if (st.freq.numel() > 0) sv.freq = tape.leaf(st.freq);
    for (const StageMlp& m : st.mlp) {
      StageMlpVars mv;
      mv.w1 = tape.leaf(m.w1);
      mv.b1 = tape.leaf(m.b1);
      mv.w2 = tape.leaf(m.w2);
      mv.b2 = tape.leaf(m.b2);
      sv.mlp.push_back(mv);
    }
    v.stages.push_back(std::move(sv));
  }
  if (params.cal.p_k.numel() > 0) {
    v.cal.p_k = tape.leaf(params.cal.p_k);
    v.cal.p_v = tape.leaf(params.cal.p_v);
    v.cal.proj_w = tape.leaf(params.cal.proj_w);
    v.cal.proj_b = tape.leaf(params.cal.proj_b);
    v.cal.norm1_gamma = tape.leaf(params.cal.norm1_gamma);
    v.cal.norm1_beta = tape.leaf(params.cal.norm1_beta);
    v.cal.norm2_gamma = tape.leaf(params.cal.norm2_gamma);
    v.cal.norm2_beta = tape.leaf(params.cal.norm2_beta);
    v.cal.ff_w1 = tape.leaf(params.cal.ff_w1);
    v.cal.ff_b1 = tape.leaf(params.cal.ff_b1);
    v.cal.ff_w2 = tape.leaf(params.cal.ff_w2);
    v.cal.ff_b2 = tape.leaf(params.cal.ff_b2);
  }
  v.final_w = tape.leaf(params.final_w);
  v.final_b = tape.leaf(params.final_b);
  return v;
}

BaselineVars lift_params(GradTape& tape, const BaselineParams& params) {
  BaselineVars v;
  v.head_w = tape.leaf(params.head_w);
  v.head_b = tape.leaf(params.head_b);
  v.final_w = tape.leaf(params.final_w);
  v.final_b = tape.leaf(params.final_b);
  return v;
}

Var fga_forward_taped(GradTape& tape, Var f, const FgaVars& vars, const FgaConfig& cfg,
                      TapedTrace* trace) {
  cfg.validate();
  const Tensor& fv = tape.value(f);
  if (fv.rank() != 4 || fv.extent(1) != cfg.channels) {
    throw ShapeError("fga_forward: expected N x " + std::to_string(cfg.channels) + " x h x w, got " +
                     fv.shape_str());
  }
  if (fv.extent(0) != 1) throw ShapeError("fga_forward: the taped path is single-sample (N = 1)");
  if (vars.stages.size() != cfg.stage_scales.size()) {
    throw ConfigError("fga_forward: parameter/stage count mismatch");
  }
  Var x = f;
  for (std::size_t i = 0; i < cfg.stage_scales.size(); ++i) {
    x = taped_stage(tape, x, vars.stages[i], cfg.stage_scales[i], cfg);
  }
  if (trace) trace->pre_attention = x;
  if (cfg.use_cal) x = taped_cal(tape, f, x, vars.cal, cfg);
  if (trace) trace->post_attention = x;
  return tape.conv2d(x, vars.final_w, vars.final_b, 1, 1);
}

Var baseline_forward_taped(GradTape& tape, Var x, const BaselineVars& vars, BaselineKind kind,
                           std::int64_t r, TapedTrace* trace) {
  if (r < 1) throw ConfigError("baseline_forward: scale must be >= 1");
  Var y;
  switch (kind) {
    case BaselineKind::spc:
      y = tape.pixel_shuffle(tape.conv2d(x, vars.head_w, vars.head_b, 1, 1), r);
      break;
    case BaselineKind::deconv: {
      // output extent r*(n-1) + 2r = rn + r; crop r rows/cols to land on rx
      Var full = tape.transposed_conv2d(x, vars.head_w, vars.head_b, r);
      y = tape.crop2d(full, r / 2, r - r / 2, r / 2, r - r / 2);
      break;
    }
    case BaselineKind::interp_conv:
      y = tape.conv2d(tape.nn_interp(x, r), vars.head_w, vars.head_b, 1, 1);
      break;
  }
  if (trace) {
    trace->pre_attention = y;
    trace->post_attention = y;
  }
  return tape.conv2d(y, vars.final_w, vars.final_b, 1, 1);
}

// ---------------------------------------------------------------------------
// Plain wrappers (single source of truth is the taped path)
// ---------------------------------------------------------------------------

namespace {

// Split an N x ... tensor into per-sample 1 x ... tensors.
std::vector<Tensor> split_batch(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("expected rank-4 N x C x H x W, got " + x.shape_str());
  const std::int64_t n = x.extent(0);
  const std::int64_t inner = x.numel() / n;
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    std::vector<double> vals(x.values().begin() + i * inner, x.values().begin() + (i + 1) * inner);
    out.emplace_back(std::vector<std::int64_t>{1, x.extent(1), x.extent(2), x.extent(3)},
                     std::move(vals));
  }
  return out;
}

Tensor join_batch(const std::vector<Tensor>& parts) {
  const std::int64_t n = static_cast<std::int64_t>(parts.size());
  std::vector<std::int64_t> shape = parts[0].shape();
  shape[0] = n;
  Tensor out(shape);
  const std::int64_t inner = parts[0].numel();
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy(parts[static_cast<std::size_t>(i)].values().begin(),
              parts[static_cast<std::size_t>(i)].values().end(), out.values().begin() + i * inner);
  }
  return out;
}

Tensor as_rank4(const Tensor& x, const char* op) {
  if (x.rank() == 4) return x;
  if (x.rank() == 3) {
    return Tensor({1, x.extent(0), x.extent(1), x.extent(2)}, std::vector<double>(x.values()));
  }
  throw ShapeError(std::string(op) + ": expected 3-D or 4-D input, got " + x.shape_str());
}

}  // namespace

Tensor fourier_feature_embed(const Tensor& f, std::int64_t s, const Tensor& freq) {
  const Tensor f4 = as_rank4(f, "fourier_feature_embed");
  const std::int64_t s2 = s * s;
  if (f4.extent(1) % s2 != 0) {
    throw ShapeError("fourier_feature_embed: channels " + std::to_string(f4.extent(1)) +
                     " not divisible by s^2");
  }
  const std::int64_t c = f4.extent(1) / s2;
  if (freq.rank() != 3 || freq.extent(0) != s2 || freq.extent(1) != c / 2 || freq.extent(2) != 2) {
    throw ShapeError("fourier_feature_embed: freq matrix must be s^2 x C/2 x 2, got " +
                     freq.shape_str());
  }
  std::vector<Tensor> outs;
  for (const Tensor& sample : split_batch(f4)) {
    GradTape tape;
    Var fv = tape.leaf(sample);
    Var fr = tape.leaf(freq);
    const std::int64_t h = sample.extent(2), w = sample.extent(3);
    std::vector<Var> mods = taped_modulations(tape, fr, s, c, h, w);
    std::vector<Var> groups;
    for (std::int64_t g = 0; g < s2; ++g) {
      groups.push_back(
          tape.mul(tape.gather_channels(fv, subpixel_group_channels(c, s, g)), mods[static_cast<std::size_t>(g)]));
    }
    outs.push_back(tape.value(taped_regroup(tape, groups, s, c)));
  }
  Tensor joined = join_batch(outs);
  if (f.rank() == 3) {
    return Tensor({joined.extent(1), joined.extent(2), joined.extent(3)},
                  std::vector<double>(joined.values()));
  }
  return joined;
}

Tensor ffmlp_stage(const Tensor& x, const StageParams& stage, std::int64_t s,
                   const FgaConfig& cfg) {
  std::vector<Tensor> outs;
  for (const Tensor& sample : split_batch(as_rank4(x, "ffmlp_stage"))) {
    GradTape tape;
    StageVars sv;
    sv.conv_w = tape.leaf(stage.conv_w);
    sv.conv_b = tape.leaf(stage.conv_b);
    if (stage.freq.numel() > 0) sv.freq = tape.leaf(stage.freq);
    for (const StageMlp& m : stage.mlp) {
      StageMlpVars mv{tape.leaf(m.w1), tape.leaf(m.b1), tape.leaf(m.w2), tape.leaf(m.b2)};
      sv.mlp.push_back(mv);
    }
    outs.push_back(tape.value(taped_stage(tape, tape.leaf(sample), sv, s, cfg)));
  }
  return join_batch(outs);
}

Tensor cal_forward(const Tensor& f_lr, const Tensor& f_hr, const CalParams& cal,
                   const FgaConfig& cfg) {
  const Tensor lr4 = as_rank4(f_lr, "cal_forward");
  const Tensor hr4 = as_rank4(f_hr, "cal_forward");
  if (lr4.extent(0) != hr4.extent(0)) throw ShapeError("cal_forward: batch extents differ");
  FgaParams holder;
  holder.cal = cal;
  std::vector<Tensor> outs;
  const std::vector<Tensor> lr_parts = split_batch(lr4);
  const std::vector<Tensor> hr_parts = split_batch(hr4);
  for (std::size_t i = 0; i < lr_parts.size(); ++i) {
    GradTape tape;
    FgaVars vars = lift_params(tape, holder);
    outs.push_back(tape.value(
        taped_cal(tape, tape.leaf(lr_parts[i]), tape.leaf(hr_parts[i]), vars.cal, cfg)));
  }
  return join_batch(outs);
}

Tensor fga_forward(const Tensor& f, const FgaParams& params, const FgaConfig& cfg,
                   FgaTrace* trace) {
  std::vector<Tensor> outs, pre, post;
  for (const Tensor& sample : split_batch(as_rank4(f, "fga_forward"))) {
    GradTape tape;
    FgaVars vars = lift_params(tape, params);
    TapedTrace tt;
    Var out = fga_forward_taped(tape, tape.leaf(sample), vars, cfg, trace ? &tt : nullptr);
    outs.push_back(tape.value(out));
    if (trace) {
      pre.push_back(tape.value(tt.pre_attention));
      post.push_back(tape.value(tt.post_attention));
    }
  }
  if (trace) {
    trace->pre_attention = join_batch(pre);
    trace->post_attention = join_batch(post);
  }
  return join_batch(outs);
}

Tensor baseline_forward(const BaselineParams& params, const Tensor& x, std::int64_t r,
                        FgaTrace* trace) {
  std::vector<Tensor> outs, pre, post;
  for (const Tensor& sample : split_batch(as_rank4(x, "baseline_forward"))) {
    GradTape tape;
    BaselineVars vars = lift_params(tape, params);
    TapedTrace tt;
    Var out =
        baseline_forward_taped(tape, tape.leaf(sample), vars, params.kind, r, trace ? &tt : nullptr);
    outs.push_back(tape.value(out));
    if (trace) {
      pre.push_back(tape.value(tt.pre_attention));
      post.push_back(tape.value(tt.post_attention));
    }
  }
  if (trace) {
    trace->pre_attention = join_batch(pre);
    trace->post_attention = join_batch(post);
  }
  return join_batch(outs);
}

double flops_estimate(const std::string& kind, double h, double w, double c, double m, double r,
                      double alpha) {
  if (h <= 0 || w <= 0 || c <= 0 || m <= 0 || r <= 0) {
    throw ConfigError("flops_estimate: arguments must be positive");
  }
  const double hwc2 = h * w * c * c;
  const double hwc = h * w * c;
  if (kind == "sa") return 4.0 * hwc2 + 2.0 * m * m * hwc;
  if (kind == "ca") return (1.0 + 2.0 / (r * r)) * hwc2 + (2.0 * m * m / (r * r)) * hwc;
  if (kind == "owca") {
    return (1.0 + 2.0 / (r * r)) * hwc2 +
           (1.0 + alpha) * (1.0 + alpha) * (2.0 * m * m / (r * r)) * hwc;
  }
  throw ConfigError("flops_estimate: kind must be sa, ca, or owca");
}

std::vector<std::pair<std::string, Var>> named_vars(const FgaVars& vars, FgaParams& params) {
  std::vector<std::pair<std::string, Var>> out;
  // Walk the two mirrored structures in the same order as visit().
  for (std::size_t i = 0; i < params.stages.size(); ++i) {
    const std::string p = "stage" + std::to_string(i) + ".";
    out.emplace_back(p + "conv_w", vars.stages[i].conv_w);
    out.emplace_back(p + "conv_b", vars.stages[i].conv_b);
    if (params.stages[i].freq.numel() > 0) out.emplace_back(p + "freq", vars.stages[i].freq);
    for (std::size_t j = 0; j < params.stages[i].mlp.size(); ++j) {
      const std::string q = p + "mlp" + std::to_string(j) + ".";
      out.emplace_back(q + "w1", vars.stages[i].mlp[j].w1);
      out.emplace_back(q + "b1", vars.stages[i].mlp[j].b1);
      out.emplace_back(q + "w2", vars.stages[i].mlp[j].w2);
      out.emplace_back(q + "b2", vars.stages[i].mlp[j].b2);
    }
  }
  if (params.cal.p_k.numel() > 0) {
    out.emplace_back("cal.p_k", vars.cal.p_k);
    out.emplace_back("cal.p_v", vars.cal.p_v);
    out.emplace_back("cal.proj_w", vars.cal.proj_w);
    out.emplace_back("cal.proj_b", vars.cal.proj_b);
    out.emplace_back("cal.norm1_gamma", vars.cal.norm1_gamma);
    out.emplace_back("cal.norm1_beta", vars.cal.norm1_beta);
    out.emplace_back("cal.norm2_gamma", vars.cal.norm2_gamma);
    out.emplace_back("cal.norm2_beta", vars.cal.norm2_beta);
    out.emplace_back("cal.ff_w1", vars.cal.ff_w1);
    out.emplace_back("cal.ff_b1", vars.cal.ff_b1);
    out.emplace_back("cal.ff_w2", vars.cal.ff_w2);
    out.emplace_back("cal.ff_b2", vars.cal.ff_b2);
  }
  out.emplace_back("final.w", vars.final_w);
  out.emplace_back("final.b", vars.final_b);
  return out;
}

std::vector<std::pair<std::string, Var>> named_vars(const BaselineVars& vars,
                                                    BaselineParams& params) {
  (void)params;
  return {{"head.w", vars.head_w},
          {"head.b", vars.head_b},
          {"final.w", vars.final_w},
          {"final.b", vars.final_b}};
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json config_to_json(const FgaConfig& cfg) {
  return json{{"channels", cfg.channels},
              {"scale", cfg.scale},
              {"stage_scales", cfg.stage_scales},
              {"mlp_hidden", cfg.mlp_hidden},
              {"win_pre", cfg.win_pre},
              {"win_post", cfg.win_post},
              {"overlap", cfg.overlap},
              {"use_ff", cfg.use_ff},
              {"use_mlp", cfg.use_mlp},
              {"use_cal", cfg.use_cal},
              {"mlp_per_group", cfg.mlp_per_group},
              {"out_channels", cfg.out_channels},
              {"seed", cfg.seed}};
}

FgaConfig config_from_json(const json& j) {
  FgaConfig cfg;
  cfg.channels = j.at("channels").get<std::int64_t>();
  cfg.scale = j.at("scale").get<std::int64_t>();
  cfg.stage_scales = j.at("stage_scales").get<std::vector<std::int64_t>>();
  cfg.mlp_hidden = j.at("mlp_hidden").get<std::int64_t>();
  cfg.win_pre = j.at("win_pre").get<std::int64_t>();
  cfg.win_post = j.at("win_post").get<std::int64_t>();
  cfg.overlap = j.at("overlap").get<double>();
  cfg.use_ff = j.at("use_ff").get<bool>();
  cfg.use_mlp = j.at("use_mlp").get<bool>();
  cfg.use_cal = j.at("use_cal").get<bool>();
  cfg.mlp_per_group = j.at("mlp_per_group").get<bool>();
  cfg.out_channels = j.at("out_channels").get<std::int64_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

json load_manifest(const std::string& dir) {
  const std::string path = dir + "/params.json";
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed params.json in " + dir + ": " + e.what());
  }
  if (j.value("format", "") != "fga-params") throw IoError(dir + " is not a parameter directory");
  return j;
}

template <typename Params>
void save_params_dir(const std::string& dir, const FgaConfig& cfg, const std::string& model,
                     const Params& params) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  json tensors = json::object();
  params.visit([&](const std::string& name, const Tensor& t) {
    const std::string file = name + ".fgat";
    write_fgat(dir + "/" + file, t);
    tensors[name] = json{{"file", file}, {"shape", t.shape()}};
  });
  json manifest{{"format", "fga-params"},
                {"version", 1},
                {"model", model},
                {"config", config_to_json(cfg)},
                {"tensors", tensors}};
  std::ofstream out(dir + "/params.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + dir + "/params.json");
  out << manifest.dump(2) << "\n";
}

template <typename Params>
void load_params_tensors(const std::string& dir, const json& manifest, Params& params) {
  const json& tensors = manifest.at("tensors");
  params.visit([&](const std::string& name, Tensor& t) {
    if (!tensors.contains(name)) {
      throw IoError("parameter directory " + dir + " is missing tensor '" + name + "'");
    }
    const std::string file = tensors.at(name).at("file").get<std::string>();
    Tensor loaded = read_fgat(dir + "/" + file);
    if (!loaded.same_shape(t)) {
      throw IoError("tensor '" + name + "' has shape " + loaded.shape_str() + ", expected " +
                    t.shape_str());
    }
    t = std::move(loaded);
  });
}

}  // namespace

std::string config_to_json_string(const FgaConfig& cfg) { return config_to_json(cfg).dump(); }

FgaConfig config_from_json_string(const std::string& text) {
  try {
    return config_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed config JSON: ") + e.what());
  }
}

void save_fga_params(const std::string& dir, const FgaConfig& cfg, const FgaParams& params) {
  save_params_dir(dir, cfg, "fga", params);
}

void save_baseline_params(const std::string& dir, const FgaConfig& cfg,
                          const BaselineParams& params) {
  save_params_dir(dir, cfg, baseline_kind_name(params.kind), params);
}

std::string peek_params_model(const std::string& dir) {
  return load_manifest(dir).at("model").get<std::string>();
}

FgaConfig peek_params_config(const std::string& dir) {
  return config_from_json(load_manifest(dir).at("config"));
}

FgaParams load_fga_params(const std::string& dir, FgaConfig& cfg_out) {
  const json manifest = load_manifest(dir);
  if (manifest.at("model").get<std::string>() != "fga") {
    throw ConfigError("parameter directory " + dir + " holds a '" +
                      manifest.at("model").get<std::string>() + "' model, not fga");
  }
  cfg_out = config_from_json(manifest.at("config"));
  FgaParams params = init_params(cfg_out);
  load_params_tensors(dir, manifest, params);
  return params;
}

BaselineParams load_baseline_params(const std::string& dir, FgaConfig& cfg_out) {
  const json manifest = load_manifest(dir);
  const std::string model = manifest.at("model").get<std::string>();
  if (model == "fga") throw ConfigError("parameter directory " + dir + " holds an fga model");
  cfg_out = config_from_json(manifest.at("config"));
  BaselineParams params = init_baseline(baseline_kind_from_name(model), cfg_out);
  load_params_tensors(dir, manifest, params);
  return params;
}

}  // namespace fga
