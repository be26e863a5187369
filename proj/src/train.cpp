#include "fga/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>
#include <utility>

#include "fga/grad.hpp"
#include "fga/io.hpp"
#include "fga/losses.hpp"
#include "fga/metrics.hpp"
#include "fga/ops.hpp"
#include "json.hpp"

namespace fga {

namespace {

// Feature-conv draws come from a stream decorrelated from the upsampler
// parameter stream so both depend only on cfg.seed.
constexpr std::uint64_t kFeatureSeedSalt = 0x9e3779b97f4a7c15ULL;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Tensor as_batched_image(const Tensor& t) {
  if (t.rank() == 3) {
    Tensor out({1, t.extent(0), t.extent(1), t.extent(2)});
    out.values() = t.values();
    return out;
  }
  if (t.rank() == 4) {
    if (t.extent(0) != 1) {
      throw ShapeError("train_toy expects a single image, got batch " +
                       std::to_string(t.extent(0)));
    }
    return t;
  }
  throw ShapeError("expected C x H x W or 1 x C x H x W image, got " + t.shape_str());
}

Tensor drop_batch(const Tensor& t) {
  if (t.rank() == 4 && t.extent(0) == 1) {
    Tensor out({t.extent(1), t.extent(2), t.extent(3)});
    out.values() = t.values();
    return out;
  }
  return t;
}

struct ParamBinding {
  std::string name;
  Tensor* tensor = nullptr;
  Var var;
};

// Zip visit() order with named_vars() order; both walk the same structure.
template <typename Params, typename Vars>
std::vector<ParamBinding> bind_params(Params& params, const Vars& vars) {
  std::vector<std::pair<std::string, Tensor*>> slots;
  params.visit([&](const std::string& name, Tensor& t) { slots.emplace_back(name, &t); });
  auto pairs = named_vars(vars, params);
  if (slots.size() != pairs.size()) {
    throw std::logic_error("parameter/leaf count mismatch");
  }
  std::vector<ParamBinding> out;
  out.reserve(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].first != pairs[i].first) {
      throw std::logic_error("parameter order mismatch: " + slots[i].first + " vs " +
                             pairs[i].first);
    }
    out.push_back({slots[i].first, slots[i].second, pairs[i].second});
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (lambda_pix < 0.0 || lambda_freq < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
}

void adam_step(const std::vector<NamedTensorRef>& params, const std::vector<Tensor>& grads,
               OptimizerState& state, double lr, double beta1, double beta2, double eps) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params vs " +
                     std::to_string(grads.size()) + " grads");
  }
  if (state.step == 0 && state.m.empty()) {
    state.names.reserve(params.size());
    for (const auto& p : params) {
      state.names.push_back(p.name);
      state.m.push_back(Tensor::zeros(p.tensor->shape()));
      state.v.push_back(Tensor::zeros(p.tensor->shape()));
    }
  }
  if (state.names.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.names.size()) +
                     " params, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.names[i] != params[i].name) {
      throw ConfigError("adam_step: state/param order mismatch: " + state.names[i] + " vs " +
                        params[i].name);
    }
    if (!params[i].tensor->same_shape(grads[i])) {
      throw ShapeError("adam_step: gradient shape mismatch for " + params[i].name);
    }
    if (!grads[i].all_finite()) {
      throw NumericError("non-finite gradient for parameter " + params[i].name);
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].tensor->values();
    auto& m = state.m[i].values();
    auto& v = state.v[i].values();
    const auto& g = grads[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
      v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

const char* upsampler_kind_name(UpsamplerKind kind) {
  switch (kind) {
    case UpsamplerKind::fga: return "fga";
    case UpsamplerKind::spc: return "spc";
    case UpsamplerKind::deconv: return "deconv";
    case UpsamplerKind::interp_conv: return "interp";
  }
  throw ConfigError("unknown upsampler kind");
}

UpsamplerKind upsampler_kind_from_name(const std::string& name) {
  if (name == "fga") return UpsamplerKind::fga;
  if (name == "spc") return UpsamplerKind::spc;
  if (name == "deconv") return UpsamplerKind::deconv;
  if (name == "interp" || name == "interp_conv") return UpsamplerKind::interp_conv;
  throw ConfigError("unknown upsampler kind: " + name);
}

namespace {

BaselineKind to_baseline_kind(UpsamplerKind kind) {
  switch (kind) {
    case UpsamplerKind::spc: return BaselineKind::spc;
    case UpsamplerKind::deconv: return BaselineKind::deconv;
    case UpsamplerKind::interp_conv: return BaselineKind::interp_conv;
    default: throw ConfigError("not a baseline kind");
  }
}

}  // namespace

ToyModel init_toy_model(UpsamplerKind kind, const FgaConfig& cfg, std::int64_t in_channels) {
  cfg.validate();
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  ToyModel model;
  model.kind = kind;
  model.cfg = cfg;
  model.feat_w = Tensor({cfg.channels, in_channels, 3, 3});
  model.feat_b = Tensor({cfg.channels});
  Rng rng(cfg.seed ^ kFeatureSeedSalt);
  const double bound = std::sqrt(1.0 / static_cast<double>(9 * in_channels));
  rng.fill_uniform(model.feat_w, -bound, bound);
  if (kind == UpsamplerKind::fga) {
    model.fga = init_params(cfg);
  } else {
    model.baseline = init_baseline(to_baseline_kind(kind), cfg);
  }
  return model;
}

Tensor toy_forward(const ToyModel& model, const Tensor& lr_image, FgaTrace* trace) {
  const Tensor x = as_batched_image(lr_image);
  const Tensor feat = conv2d(x, model.feat_w, model.feat_b, 1, 1);
  if (model.kind == UpsamplerKind::fga) {
    return fga_forward(feat, model.fga, model.cfg, trace);
  }
  return baseline_forward(model.baseline, feat, model.cfg.scale, trace);
}

TrainResult train_toy(const Tensor& target_hr, std::int64_t r, const TrainConfig& tc,
                      const FgaConfig& fc, UpsamplerKind kind) {
  tc.validate();
  const Tensor target = as_batched_image(target_hr);
  if (r < 1) throw ConfigError("scale must be >= 1");
  if (target.extent(2) % r != 0 || target.extent(3) % r != 0) {
    throw ShapeError("target extents " + target.shape_str() + " not divisible by scale " +
                     std::to_string(r));
  }

  FgaConfig cfg = fc;
  cfg.scale = r;
  std::int64_t stage_product = 1;
  for (std::int64_t s : cfg.stage_scales) stage_product *= s;
  if (cfg.stage_scales.empty() || stage_product != r) {
    cfg.stage_scales = FgaConfig::defaults(r).stage_scales;
  }
  cfg.use_mlp = tc.use_mlp;
  cfg.use_ff = tc.use_ff;
  cfg.use_cal = tc.use_cal;
  cfg.out_channels = target.extent(1);
  cfg.validate();

  const double lambda_pix = tc.lambda_pix;
  const double lambda_freq = tc.use_freq_loss ? tc.lambda_freq : 0.0;

  TrainResult result;
  result.model = init_toy_model(kind, cfg, target.extent(1));
  result.lr_input = block_mean_downsample(target, r);

  OptimizerState opt;
  ToyModel last_good = result.model;

  for (std::int64_t iter = 0; iter < tc.iterations; ++iter) {
    GradTape tape;
    const Var x = tape.leaf(result.lr_input);
    const Var fw = tape.leaf(result.model.feat_w);
    const Var fb = tape.leaf(result.model.feat_b);
    const Var feat = tape.conv2d(x, fw, fb, 1, 1);

    Var pred{};
    std::vector<ParamBinding> bindings;
    if (kind == UpsamplerKind::fga) {
      const FgaVars vars = lift_params(tape, result.model.fga);
      bindings = bind_params(result.model.fga, vars);
      pred = fga_forward_taped(tape, feat, vars, cfg, nullptr);
    } else {
      const BaselineVars vars = lift_params(tape, result.model.baseline);
      bindings = bind_params(result.model.baseline, vars);
      pred = baseline_forward_taped(tape, feat, vars, to_baseline_kind(kind), r, nullptr);
    }

    const Var l1 = tape.l1_pixel_loss(pred, target);
    const Var fl1 = tape.l1_freq_loss(pred, target);
    const Var loss =
        tape.add(tape.scale(l1, lambda_pix), tape.scale(fl1, lambda_freq));

    const double loss_value = tape.value(loss).values()[0];
    if (!std::isfinite(loss_value) || loss_value > 1e6) {
      result.model = last_good;
      result.diverged = true;
      break;
    }

    TrainLogRow row;
    row.iter = iter;
    row.l1 = tape.value(l1).values()[0];
    row.fl1 = tape.value(fl1).values()[0];
    row.psnr = psnr(tape.value(pred), target);
    result.log.push_back(row);

    last_good = result.model;

    tape.backward(loss);
    std::vector<NamedTensorRef> refs;
    std::vector<Tensor> grads;
    refs.reserve(bindings.size());
    grads.reserve(bindings.size());
    for (const auto& b : bindings) {
      refs.push_back({b.name, b.tensor});
      grads.push_back(tape.grad(b.var));
    }
    adam_step(refs, grads, opt, tc.lr, tc.beta1, tc.beta2, tc.eps);
  }

  result.final_output = toy_forward(result.model, result.lr_input);
  return result;
}

std::string train_log_csv(const std::vector<TrainLogRow>& log) {
  std::string out = "iter,l1,fl1,psnr\n";
  for (const auto& row : log) {
    out += std::to_string(row.iter);
    out += ',';
    out += format_double(row.l1);
    out += ',';
    out += format_double(row.fl1);
    out += ',';
    out += format_double(row.psnr);
    out += '\n';
  }
  return out;
}

std::vector<AblationRow> ablation_suite() {
  std::vector<AblationRow> rows(5);
  rows[0].label = "conv";
  rows[1].label = "+mlp";
  rows[1].use_mlp = true;
  rows[2].label = "+ff";
  rows[2].use_mlp = rows[2].use_ff = true;
  rows[3].label = "+cal";
  rows[3].use_mlp = rows[3].use_ff = rows[3].use_cal = true;
  rows[4].label = "+fl1";
  rows[4].use_mlp = rows[4].use_ff = rows[4].use_cal = rows[4].use_freq_loss = true;
  return rows;
}

std::vector<AblationRow> ablate(const std::vector<Tensor>& targets, std::int64_t r,
                                const TrainConfig& tc, const FgaConfig& fc, std::int64_t jobs) {
  std::vector<AblationRow> rows = ablation_suite();
  if (targets.empty()) return {};

  auto run_row = [&](AblationRow& row) {
    try {
      TrainConfig row_tc = tc;
      row_tc.use_mlp = row.use_mlp;
      row_tc.use_ff = row.use_ff;
      row_tc.use_cal = row.use_cal;
      row_tc.use_freq_loss = row.use_freq_loss;
      double l1_sum = 0.0, fl1_sum = 0.0, psnr_sum = 0.0, ssim_sum = 0.0, auc_sum = 0.0;
      for (const Tensor& target : targets) {
        TrainResult res = train_toy(target, r, row_tc, fc, UpsamplerKind::fga);
        const Tensor target4 = as_batched_image(target);
        l1_sum += l1_pixel(res.final_output, target4).value;
        fl1_sum += l1_freq(res.final_output, target4, false).value;
        const Tensor pred_y = luminance(drop_batch(res.final_output));
        const Tensor target_y = luminance(drop_batch(target4));
        psnr_sum += psnr(pred_y, target_y);
        ssim_sum += ssim(pred_y, target_y);
        const RingIndexMap rings = ring_index_map(pred_y.extent(0), pred_y.extent(1));
        auc_sum += frc(pred_y, target_y, rings).auc;
      }
      const double n = static_cast<double>(targets.size());
      row.final_l1 = l1_sum / n;
      row.final_fl1 = fl1_sum / n;
      row.psnr = psnr_sum / n;
      row.ssim = ssim_sum / n;
      row.frc_auc = auc_sum / n;
    } catch (const std::exception&) {
      row.failed = true;
    }
  };

  const std::int64_t n_jobs =
      std::clamp<std::int64_t>(jobs, 1, static_cast<std::int64_t>(rows.size()));
  if (n_jobs <= 1) {
    for (auto& row : rows) run_row(row);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (std::int64_t t = 0; t < n_jobs; ++t) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= rows.size()) return;
          run_row(rows[i]);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "label,mlp,ff,cal,loss,psnr,ssim,frc_auc,final_l1,final_fl1,status\n";
  for (const auto& row : rows) {
    out += row.label;
    out += ',';
    out += row.use_mlp ? '1' : '0';
    out += ',';
    out += row.use_ff ? '1' : '0';
    out += ',';
    out += row.use_cal ? '1' : '0';
    out += ',';
    out += row.use_freq_loss ? "l1+fl1" : "l1";
    out += ',';
    out += format_double(row.psnr);
    out += ',';
    out += format_double(row.ssim);
    out += ',';
    out += format_double(row.frc_auc);
    out += ',';
    out += format_double(row.final_l1);
    out += ',';
    out += format_double(row.final_fl1);
    out += ',';
    out += row.failed ? "failed" : "ok";
    out += '\n';
  }
  return out;
}

Tensor make_texture_target(std::int64_t height, std::int64_t width, std::uint64_t seed) {
  if (height < 1 || width < 1) throw ShapeError("texture extents must be positive");
  Tensor out({3, height, width});
  Rng rng(seed);
  constexpr int kComponents = 10;
  constexpr double kPi = 3.14159265358979323846;
  for (std::int64_t c = 0; c < 3; ++c) {
    std::vector<double> fy(kComponents), fx(kComponents), amp(kComponents), phase(kComponents);
    for (int k = 0; k < kComponents; ++k) {
      fy[k] = std::floor(rng.uniform(0.0, static_cast<double>(height) / 2.0 + 1.0));
      fx[k] = std::floor(rng.uniform(0.0, static_cast<double>(width) / 2.0 + 1.0));
      amp[k] = 1.0 / (1.0 + std::hypot(fy[k], fx[k]));
      phase[k] = rng.uniform(0.0, 2.0 * kPi);
    }
    double lo = 1e300, hi = -1e300;
    for (std::int64_t i = 0; i < height; ++i) {
      for (std::int64_t j = 0; j < width; ++j) {
        double v = 0.0;
        for (int k = 0; k < kComponents; ++k) {
          v += amp[k] * std::sin(2.0 * kPi *
                                     (fy[k] * static_cast<double>(i) / static_cast<double>(height) +
                                      fx[k] * static_cast<double>(j) / static_cast<double>(width)) +
                                 phase[k]);
        }
        out.at(c, i, j) = v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    const double range = hi - lo;
    for (std::int64_t i = 0; i < height; ++i) {
      for (std::int64_t j = 0; j < width; ++j) {
        double& v = out.at(c, i, j);
        v = range > 1e-12 ? 0.05 + 0.9 * (v - lo) / range : 0.5;
      }
    }
  }
  return out;
}

namespace {

std::string sanitize_file_name(const std::string& name) {
  std::string file = name;
  for (char& ch : file) {
    if (ch == '/' || ch == '\\') ch = '_';
  }
  return file + ".fgat";
}

}  // namespace

void save_toy_model(const std::string& dir, const ToyModel& model) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());

  std::vector<std::pair<std::string, const Tensor*>> entries;
  entries.emplace_back("feature.w", &model.feat_w);
  entries.emplace_back("feature.b", &model.feat_b);
  auto collect = [&](const std::string& name, const Tensor& t) {
    entries.emplace_back(name, &t);
  };
  if (model.kind == UpsamplerKind::fga) {
    model.fga.visit(collect);
  } else {
    model.baseline.visit(collect);
  }

  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, tensor] : entries) {
    const std::string file = sanitize_file_name(name);
    write_fgat(dir + "/" + file, *tensor);
    tensors[name] = nlohmann::json{{"file", file}, {"shape", tensor->shape()}};
  }
  nlohmann::json manifest{{"format", "fga-toy-model"},
                          {"version", 1},
                          {"model", upsampler_kind_name(model.kind)},
                          {"in_channels", model.feat_w.extent(1)},
                          {"config", nlohmann::json::parse(config_to_json_string(model.cfg))},
                          {"tensors", tensors}};
  std::ofstream out(dir + "/model.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + dir + "/model.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + dir + "/model.json");
}

ToyModel load_toy_model(const std::string& dir) {
  std::ifstream f(dir + "/model.json");
  if (!f) throw IoError("cannot open " + dir + "/model.json");
  nlohmann::json manifest;
  try {
    f >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed model.json in " + dir + ": " + e.what());
  }
  if (manifest.value("format", "") != "fga-toy-model") {
    throw IoError(dir + " is not a toy model directory");
  }

  ToyModel model;
  try {
    model.kind = upsampler_kind_from_name(manifest.at("model").get<std::string>());
    model.cfg = config_from_json_string(manifest.at("config").dump());
    const std::int64_t in_channels = manifest.at("in_channels").get<std::int64_t>();
    // Allocate the expected parameter layout, then overwrite from disk.
    ToyModel fresh = init_toy_model(model.kind, model.cfg, in_channels);
    model.feat_w = std::move(fresh.feat_w);
    model.feat_b = std::move(fresh.feat_b);
    model.fga = std::move(fresh.fga);
    model.baseline = std::move(fresh.baseline);

    const nlohmann::json& tensors = manifest.at("tensors");
    auto restore = [&](const std::string& name, Tensor& t) {
      if (!tensors.contains(name)) {
        throw IoError("model.json in " + dir + " is missing tensor " + name);
      }
      const std::string file = tensors.at(name).at("file").get<std::string>();
      Tensor loaded = read_fgat(dir + "/" + file);
      if (!loaded.same_shape(t)) {
        throw ShapeError("tensor " + name + " has shape " + loaded.shape_str() + ", expected " +
                         t.shape_str());
      }
      t = std::move(loaded);
    };
    restore("feature.w", model.feat_w);
    restore("feature.b", model.feat_b);
    if (model.kind == UpsamplerKind::fga) {
      model.fga.visit(restore);
    } else {
      model.baseline.visit(restore);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed model.json in " + dir + ": " + e.what());
  }
  return model;
}

}  // namespace fga
