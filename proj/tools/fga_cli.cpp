#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fga/fft.hpp"
#include "fga/fga.hpp"
#include "fga/io.hpp"
#include "fga/losses.hpp"
#include "fga/metrics.hpp"
#include "fga/ops.hpp"
#include "fga/tensor.hpp"
#include "fga/train.hpp"
#include "json.hpp"

namespace {

using nlohmann::json;

constexpr const char* kToolVersion = "1.0.0";

// Exit codes: 0 success, 1 I/O failure, 2 validation failure.
int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const fga::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::uint64_t resolve_seed(std::uint64_t flag_seed) {
  if (const char* env = std::getenv("FGA_SEED")) {
    std::size_t pos = 0;
    std::uint64_t value = 0;
    try {
      value = std::stoull(env, &pos);
    } catch (const std::exception&) {
      throw fga::ConfigError(std::string("FGA_SEED is not an integer: ") + env);
    }
    if (pos != std::string(env).size()) {
      throw fga::ConfigError(std::string("FGA_SEED is not an integer: ") + env);
    }
    return value;
  }
  return flag_seed;
}

fga::Tensor load_tensor_or_image(const std::string& path) {
  if (has_suffix(path, ".fgat")) return fga::read_fgat(path);
  return fga::read_png(path);
}

// PNG loads are C x H x W; FGAT tensors may carry a singleton batch.
fga::Tensor as_chw(const fga::Tensor& t) {
  if (t.rank() == 2) {
    fga::Tensor out({1, t.extent(0), t.extent(1)});
    out.values() = t.values();
    return out;
  }
  if (t.rank() == 3) return t;
  if (t.rank() == 4 && t.extent(0) == 1) {
    fga::Tensor out({t.extent(1), t.extent(2), t.extent(3)});
    out.values() = t.values();
    return out;
  }
  throw fga::ShapeError("expected an image-shaped tensor, got " + t.shape_str());
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw fga::IoError("cannot write " + path);
  out << text;
  if (!out) throw fga::IoError("failed writing " + path);
}

void write_run_manifest(const std::string& primary_output, const std::string& command,
                        const json& config, const std::vector<std::string>& inputs,
                        std::uint64_t seed) {
  json inputs_j = json::object();
  for (const auto& path : inputs) inputs_j[path] = fga::fnv1a64_file_hex(path);
  const json manifest{{"command", command},
                      {"config", config},
                      {"inputs", inputs_j},
                      {"tool_version", kToolVersion},
                      {"seed", seed}};
  write_text_file(primary_output + ".manifest.json", manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// schema validation for the files this tool emits

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string current;
  for (char ch : text) {
    if (ch == '\n') {
      lines.push_back(current);
      current.clear();
    } else {
      current += ch;
    }
  }
  if (!current.empty()) lines.push_back(current);
  return lines;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(current);
      current.clear();
    } else {
      current += ch;
    }
  }
  fields.push_back(current);
  return fields;
}

bool parse_double(const std::string& s, double& out) {
  try {
    std::size_t pos = 0;
    out = std::stod(s, &pos);
    return pos == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

void check(bool ok, const std::string& message) {
  if (!ok) throw fga::ConfigError(message);
}

void validate_frc_csv(const std::string& text) {
  const auto lines = split_lines(text);
  check(lines.size() >= 3, "frc csv needs a header, at least one ring and an auc trailer");
  check(lines.front() == "ring,frc", "frc csv header must be 'ring,frc'");
  check(lines.back().rfind("# frc_auc=", 0) == 0, "frc csv must end with '# frc_auc='");
  std::vector<double> values;
  for (std::size_t i = 1; i + 1 < lines.size(); ++i) {
    const auto fields = split_fields(lines[i]);
    check(fields.size() == 2, "frc csv row must have 2 fields: " + lines[i]);
    double ring = 0.0, value = 0.0;
    check(parse_double(fields[0], ring) && ring == static_cast<double>(i - 1),
          "frc csv ring indices must count from 0");
    check(parse_double(fields[1], value), "frc csv value not numeric: " + fields[1]);
    check(value >= -1.0 - 1e-9 && value <= 1.0 + 1e-9, "frc value out of [-1,1]");
    values.push_back(value);
  }
  double auc = 0.0;
  check(parse_double(lines.back().substr(std::string("# frc_auc=").size()), auc),
        "frc csv auc trailer not numeric");
  const std::int64_t n = static_cast<std::int64_t>(values.size());
  const std::int64_t i0 = fga::hf_start(n);
  double expect = 0.0;
  for (std::int64_t i = i0; i < n; ++i) expect += values[i];
  expect = i0 < n ? expect / static_cast<double>(n - i0) : 0.0;
  check(std::abs(expect - auc) <= 1e-12 * std::max(1.0, std::abs(expect)),
        "frc csv auc does not match its rings");
}

void validate_frc_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw fga::ConfigError(std::string("invalid JSON: ") + e.what());
  }
  check(j.contains("n_rings") && j.contains("values") && j.contains("frc_auc") &&
            j.contains("i_hf"),
        "frc json needs n_rings, values, frc_auc, i_hf");
  const std::int64_t n = j.at("n_rings").get<std::int64_t>();
  const auto values = j.at("values").get<std::vector<double>>();
  check(static_cast<std::int64_t>(values.size()) == n, "frc json values length != n_rings");
  check(j.at("i_hf").get<std::int64_t>() == fga::hf_start(n), "frc json i_hf mismatch");
  double expect = 0.0;
  const std::int64_t i0 = fga::hf_start(n);
  for (std::int64_t i = i0; i < n; ++i) expect += values[i];
  expect = i0 < n ? expect / static_cast<double>(n - i0) : 0.0;
  check(std::abs(expect - j.at("frc_auc").get<double>()) <=
            1e-12 * std::max(1.0, std::abs(expect)),
        "frc json frc_auc does not match values");
}

void validate_train_csv(const std::string& text) {
  const auto lines = split_lines(text);
  check(!lines.empty() && lines.front() == "iter,l1,fl1,psnr",
        "train csv header must be 'iter,l1,fl1,psnr'");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split_fields(lines[i]);
    check(fields.size() == 4, "train csv row must have 4 fields: " + lines[i]);
    double iter = 0.0;
    check(parse_double(fields[0], iter) && iter == static_cast<double>(i - 1),
          "train csv iterations must count from 0");
    for (int k = 1; k < 4; ++k) {
      double v = 0.0;
      check(parse_double(fields[k], v), "train csv value not numeric: " + fields[k]);
    }
  }
}

void validate_ablation_csv(const std::string& text) {
  const auto lines = split_lines(text);
  check(!lines.empty() &&
            lines.front() == "label,mlp,ff,cal,loss,psnr,ssim,frc_auc,final_l1,final_fl1,status",
        "ablation csv header mismatch");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split_fields(lines[i]);
    check(fields.size() == 11, "ablation csv row must have 11 fields: " + lines[i]);
    for (int k = 1; k <= 3; ++k) {
      check(fields[k] == "0" || fields[k] == "1", "ablation toggle must be 0/1");
    }
    check(fields[4] == "l1" || fields[4] == "l1+fl1", "ablation loss must be l1 or l1+fl1");
    check(fields[10] == "ok" || fields[10] == "failed", "ablation status must be ok/failed");
    if (fields[10] == "ok") {
      for (int k = 5; k <= 9; ++k) {
        double v = 0.0;
        check(parse_double(fields[k], v), "ablation metric not numeric: " + fields[k]);
      }
    }
  }
}

void validate_manifest_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw fga::ConfigError(std::string("invalid JSON: ") + e.what());
  }
  check(j.contains("command") && j.at("command").is_string(), "manifest needs a command string");
  check(j.contains("config") && j.at("config").is_object(), "manifest needs a config object");
  check(j.contains("inputs") && j.at("inputs").is_object(), "manifest needs an inputs object");
  check(j.contains("tool_version") && j.at("tool_version").is_string(),
        "manifest needs tool_version");
  check(j.contains("seed"), "manifest needs a seed");
  for (const auto& [path, hash] : j.at("inputs").items()) {
    check(hash.is_string() && hash.get<std::string>().size() == 16,
          "manifest input hash must be 16 hex digits: " + path);
  }
}

std::string detect_schema(const std::string& path, const std::string& text) {
  if (has_suffix(path, ".json")) {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception&) {
      return "manifest";  // let the validator report the parse error
    }
    if (j.is_object() && j.contains("n_rings")) return "frc-json";
    return "manifest";
  }
  const auto lines = split_lines(text);
  if (!lines.empty()) {
    if (lines.front() == "ring,frc") return "frc-csv";
    if (lines.front() == "iter,l1,fl1,psnr") return "train-csv";
    if (lines.front().rfind("label,mlp,ff,cal", 0) == 0) return "ablation-csv";
  }
  throw fga::ConfigError("cannot infer schema of " + path + "; pass --schema");
}

// ---------------------------------------------------------------------------

fga::Tensor squeeze_batch(const fga::Tensor& t) {
  if (t.rank() == 4 && t.extent(0) == 1) {
    fga::Tensor out({t.extent(1), t.extent(2), t.extent(3)});
    out.values() = t.values();
    return out;
  }
  return t;
}

fga::Tensor centered_spectrum_tensor(const fga::Tensor& chw) {
  fga::Tensor out({chw.extent(0), 2, chw.extent(1), chw.extent(2)});
  for (std::int64_t c = 0; c < chw.extent(0); ++c) {
    fga::Tensor plane({chw.extent(1), chw.extent(2)});
    for (std::int64_t i = 0; i < plane.extent(0); ++i) {
      for (std::int64_t j = 0; j < plane.extent(1); ++j) plane.at(i, j) = chw.at(c, i, j);
    }
    const fga::Spectrum centered = fga::fftshift(fga::fft2d(plane));
    for (std::int64_t i = 0; i < plane.extent(0); ++i) {
      for (std::int64_t j = 0; j < plane.extent(1); ++j) {
        out.at(c, 0, i, j) = centered.at(i, j).real();
        out.at(c, 1, i, j) = centered.at(i, j).imag();
      }
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fourier-guided attention upsampler toolkit"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  int rc = 0;

  // --- frc -----------------------------------------------------------------
  std::string frc_a, frc_b, frc_out;
  std::int64_t frc_rings = 64;
  auto* cmd_frc = app.add_subcommand("frc", "Fourier ring correlation between two images");
  cmd_frc->add_option("img_a", frc_a, "first image (PNG or FGAT)")->required();
  cmd_frc->add_option("img_b", frc_b, "second image (PNG or FGAT)")->required();
  cmd_frc->add_option("--rings", frc_rings, "number of concentric rings");
  cmd_frc->add_option("--out", frc_out, "curve output (.csv or .json)");
  cmd_frc->callback([&] {
    rc = guarded([&] {
      const fga::Tensor a = fga::luminance(as_chw(load_tensor_or_image(frc_a)));
      const fga::Tensor b = fga::luminance(as_chw(load_tensor_or_image(frc_b)));
      if (!a.same_shape(b)) {
        throw fga::ShapeError("image sizes differ: " + a.shape_str() + " vs " + b.shape_str());
      }
      const fga::RingIndexMap rings = fga::ring_index_map(a.extent(0), a.extent(1), frc_rings);
      const fga::FrcCurve curve = fga::frc(a, b, rings);
      if (!frc_out.empty()) {
        write_text_file(frc_out, has_suffix(frc_out, ".json") ? fga::frc_curve_json(curve)
                                                              : fga::frc_curve_csv(curve));
        write_run_manifest(frc_out, "frc",
                           json{{"rings", frc_rings}, {"out", frc_out}}, {frc_a, frc_b}, 0);
      }
      std::cout << "frc_auc " << format_double(curve.auc) << "\n";
      return 0;
    });
  });

  // --- spectrum ------------------------------------------------------------
  std::string spec_in, spec_png, spec_fgat;
  auto* cmd_spectrum = app.add_subcommand("spectrum", "centered 2-D spectrum of an image/tensor");
  cmd_spectrum->add_option("input", spec_in, "input image (PNG or FGAT)")->required();
  cmd_spectrum->add_option("--out-png", spec_png, "log-magnitude spectrum image");
  cmd_spectrum->add_option("--out-fgat", spec_fgat, "raw centered spectrum (C x 2 x H x W)");
  cmd_spectrum->callback([&] {
    rc = guarded([&] {
      const fga::Tensor img = as_chw(load_tensor_or_image(spec_in));
      const std::string primary = !spec_png.empty() ? spec_png : spec_fgat;
      if (!spec_png.empty()) fga::write_png(spec_png, fga::spectrum_dump(img));
      if (!spec_fgat.empty()) fga::write_fgat(spec_fgat, centered_spectrum_tensor(img));
      if (!primary.empty()) {
        write_run_manifest(primary, "spectrum",
                           json{{"out_png", spec_png}, {"out_fgat", spec_fgat}}, {spec_in}, 0);
      }
      return 0;
    });
  });

  // --- upsample ------------------------------------------------------------
  std::string up_in, up_out, up_method = "fga", up_weights, up_dump_pre, up_dump_post;
  std::int64_t up_scale = 0, up_channels = 32;
  std::uint64_t up_seed = 0x5eed;
  auto* cmd_upsample = app.add_subcommand("upsample", "run an upsampler on an image");
  cmd_upsample->add_option("input", up_in, "input PNG")->required();
  cmd_upsample->add_option("output", up_out, "output PNG")->required();
  cmd_upsample->add_option("--method", up_method, "fga|spc|deconv|interp");
  cmd_upsample->add_option("--scale", up_scale, "upsampling factor");
  cmd_upsample->add_option("--weights", up_weights, "toy model directory");
  cmd_upsample->add_option("--channels", up_channels, "feature width when initializing fresh");
  cmd_upsample->add_option("--seed", up_seed, "init seed when no weights given");
  cmd_upsample->add_option("--dump-pre", up_dump_pre, "pre-attention features FGAT");
  cmd_upsample->add_option("--dump-post", up_dump_post, "post-attention features FGAT");
  cmd_upsample->callback([&] {
    rc = guarded([&] {
      const fga::Tensor img = as_chw(load_tensor_or_image(up_in));
      fga::ToyModel model;
      if (!up_weights.empty()) {
        model = fga::load_toy_model(up_weights);
        if (cmd_upsample->count("--method") > 0 &&
            model.kind != fga::upsampler_kind_from_name(up_method)) {
          throw fga::ConfigError(std::string("weights are for method ") +
                                 fga::upsampler_kind_name(model.kind) + ", requested " +
                                 up_method);
        }
        if (up_scale != 0 && up_scale != model.cfg.scale) {
          throw fga::ConfigError("weights are for scale " + std::to_string(model.cfg.scale) +
                                 ", requested " + std::to_string(up_scale));
        }
      } else {
        const std::int64_t r = up_scale != 0 ? up_scale : 4;
        fga::FgaConfig cfg = fga::FgaConfig::defaults(r);
        cfg.channels = up_channels;
        cfg.out_channels = img.extent(0);
        cfg.seed = resolve_seed(up_seed);
        model = fga::init_toy_model(fga::upsampler_kind_from_name(up_method), cfg, img.extent(0));
      }
      fga::FgaTrace trace;
      const bool want_trace = !up_dump_pre.empty() || !up_dump_post.empty();
      const fga::Tensor pred = fga::toy_forward(model, img, want_trace ? &trace : nullptr);
      fga::write_png(up_out, squeeze_batch(pred));
      if (!up_dump_pre.empty()) fga::write_fgat(up_dump_pre, trace.pre_attention);
      if (!up_dump_post.empty()) fga::write_fgat(up_dump_post, trace.post_attention);
      write_run_manifest(up_out, "upsample",
                         json{{"method", up_method},
                              {"scale", model.cfg.scale},
                              {"weights", up_weights},
                              {"config", json::parse(fga::config_to_json_string(model.cfg))}},
                         {up_in}, model.cfg.seed);
      return 0;
    });
  });

  // --- train-toy -----------------------------------------------------------
  std::string tt_target, tt_out = "train_log.csv", tt_weights_out, tt_png_out,
              tt_method = "fga", tt_loss = "l1+fl1";
  std::int64_t tt_scale = 2, tt_iterations = 200, tt_channels = 32, tt_size = 32;
  double tt_lr = 4e-3, tt_lambda_pix = 1.0, tt_lambda_freq = 1.0;
  std::uint64_t tt_seed = 1;
  bool tt_no_mlp = false, tt_no_ff = false, tt_no_cal = false;
  auto* cmd_train = app.add_subcommand("train-toy", "overfit an upsampler to one target");
  cmd_train->add_option("--target", tt_target, "target PNG (default: generated texture)");
  cmd_train->add_option("--size", tt_size, "generated texture size");
  cmd_train->add_option("--scale", tt_scale, "upsampling factor");
  cmd_train->add_option("--iterations", tt_iterations, "training iterations");
  cmd_train->add_option("--lr", tt_lr, "Adam learning rate");
  cmd_train->add_option("--channels", tt_channels, "feature width");
  cmd_train->add_option("--method", tt_method, "fga|spc|deconv|interp");
  cmd_train->add_option("--loss", tt_loss, "l1|l1+fl1");
  cmd_train->add_option("--lambda-pix", tt_lambda_pix, "pixel L1 weight");
  cmd_train->add_option("--lambda-freq", tt_lambda_freq, "FL1 weight");
  cmd_train->add_option("--seed", tt_seed, "model + texture seed");
  cmd_train->add_flag("--no-mlp", tt_no_mlp, "disable the FF-MLP");
  cmd_train->add_flag("--no-ff", tt_no_ff, "disable Fourier modulation");
  cmd_train->add_flag("--no-cal", tt_no_cal, "disable correlation attention");
  cmd_train->add_option("--out", tt_out, "training log CSV");
  cmd_train->add_option("--out-weights", tt_weights_out, "save trained model directory");
  cmd_train->add_option("--out-png", tt_png_out, "save final prediction PNG");
  cmd_train->callback([&] {
    rc = guarded([&] {
      const std::uint64_t seed = resolve_seed(tt_seed);
      if (tt_loss != "l1" && tt_loss != "l1+fl1") {
        throw fga::ConfigError("--loss must be l1 or l1+fl1");
      }
      const fga::Tensor target = !tt_target.empty()
                                     ? as_chw(load_tensor_or_image(tt_target))
                                     : fga::make_texture_target(tt_size, tt_size, seed);
      fga::TrainConfig tc;
      tc.iterations = tt_iterations;
      tc.lr = tt_lr;
      tc.lambda_pix = tt_lambda_pix;
      tc.lambda_freq = tt_lambda_freq;
      tc.use_mlp = !tt_no_mlp;
      tc.use_ff = !tt_no_ff;
      tc.use_cal = !tt_no_cal;
      tc.use_freq_loss = tt_loss == "l1+fl1";
      tc.seed = seed;
      fga::FgaConfig fc = fga::FgaConfig::defaults(tt_scale);
      fc.channels = tt_channels;
      fc.seed = seed;
      const fga::TrainResult res = fga::train_toy(
          target, tt_scale, tc, fc, fga::upsampler_kind_from_name(tt_method));
      write_text_file(tt_out, fga::train_log_csv(res.log));
      if (!tt_weights_out.empty()) fga::save_toy_model(tt_weights_out, res.model);
      if (!tt_png_out.empty()) fga::write_png(tt_png_out, squeeze_batch(res.final_output));
      std::vector<std::string> inputs;
      if (!tt_target.empty()) inputs.push_back(tt_target);
      write_run_manifest(tt_out, "train-toy",
                         json{{"target", tt_target},     {"size", tt_size},
                              {"scale", tt_scale},       {"iterations", tt_iterations},
                              {"lr", tt_lr},             {"channels", tt_channels},
                              {"method", tt_method},     {"loss", tt_loss},
                              {"lambda_pix", tt_lambda_pix}, {"lambda_freq", tt_lambda_freq},
                              {"mlp", !tt_no_mlp},       {"ff", !tt_no_ff},
                              {"cal", !tt_no_cal}},
                         inputs, seed);
      if (res.diverged) std::cerr << "warning: training diverged; kept last good parameters\n";
      if (!res.log.empty()) {
        const auto& last = res.log.back();
        std::cout << "final iter " << last.iter << " l1 " << format_double(last.l1) << " fl1 "
                  << format_double(last.fl1) << " psnr " << format_double(last.psnr) << "\n";
      }
      return 0;
    });
  });

  // --- ablate --------------------------------------------------------------
  std::string ab_out = "ablation.csv";
  std::int64_t ab_targets = 5, ab_size = 32, ab_scale = 2, ab_iterations = 150, ab_channels = 16,
               ab_jobs = 1;
  double ab_lr = 4e-3;
  std::uint64_t ab_seed = 1;
  auto* cmd_ablate = app.add_subcommand("ablate", "toggle suite over seeded textures");
  cmd_ablate->add_option("--targets", ab_targets, "number of generated targets");
  cmd_ablate->add_option("--size", ab_size, "target size");
  cmd_ablate->add_option("--scale", ab_scale, "upsampling factor");
  cmd_ablate->add_option("--iterations", ab_iterations, "iterations per row");
  cmd_ablate->add_option("--lr", ab_lr, "Adam learning rate");
  cmd_ablate->add_option("--channels", ab_channels, "feature width");
  cmd_ablate->add_option("--jobs", ab_jobs, "rows trained concurrently");
  cmd_ablate->add_option("--seed", ab_seed, "texture/model seed");
  cmd_ablate->add_option("--out", ab_out, "report CSV");
  cmd_ablate->callback([&] {
    rc = guarded([&] {
      const std::uint64_t seed = resolve_seed(ab_seed);
      std::vector<fga::Tensor> targets;
      targets.reserve(ab_targets);
      for (std::int64_t i = 0; i < ab_targets; ++i) {
        targets.push_back(fga::make_texture_target(ab_size, ab_size, seed + i));
      }
      fga::TrainConfig tc;
      tc.iterations = ab_iterations;
      tc.lr = ab_lr;
      tc.seed = seed;
      fga::FgaConfig fc = fga::FgaConfig::defaults(ab_scale);
      fc.channels = ab_channels;
      fc.seed = seed;
      const auto rows = fga::ablate(targets, ab_scale, tc, fc, ab_jobs);
      write_text_file(ab_out, fga::ablation_csv(rows));
      write_run_manifest(ab_out, "ablate",
                         json{{"targets", ab_targets}, {"size", ab_size},
                              {"scale", ab_scale},     {"iterations", ab_iterations},
                              {"lr", ab_lr},           {"channels", ab_channels},
                              {"jobs", ab_jobs}},
                         {}, seed);
      for (const auto& row : rows) {
        std::cout << row.label << " psnr " << format_double(row.psnr) << " frc_auc "
                  << format_double(row.frc_auc) << (row.failed ? " failed" : "") << "\n";
      }
      return 0;
    });
  });

  // --- flops ---------------------------------------------------------------
  double fl_h = 64, fl_w = 64, fl_c = 64, fl_m = 16, fl_r = 4, fl_alpha = 0.5;
  auto* cmd_flops = app.add_subcommand("flops", "closed-form attention FLOPs counts");
  cmd_flops->add_option("--height", fl_h, "feature height H");
  cmd_flops->add_option("--width", fl_w, "feature width W");
  cmd_flops->add_option("--channels", fl_c, "channels C");
  cmd_flops->add_option("--window", fl_m, "window size M");
  cmd_flops->add_option("--scale", fl_r, "upsampling factor r");
  cmd_flops->add_option("--alpha", fl_alpha, "overlap ratio");
  cmd_flops->callback([&] {
    rc = guarded([&] {
      if (fl_alpha < 0.0 || fl_alpha >= 1.0) {
        throw fga::ConfigError("alpha must lie in [0, 1)");
      }
      for (const char* kind : {"sa", "ca", "owca"}) {
        std::cout << kind << " "
                  << format_double(fga::flops_estimate(kind, fl_h, fl_w, fl_c, fl_m, fl_r, fl_alpha))
                  << "\n";
      }
      return 0;
    });
  });

  // --- validate ------------------------------------------------------------
  std::string val_file, val_schema = "auto";
  auto* cmd_validate = app.add_subcommand("validate", "check an emitted CSV/JSON file");
  cmd_validate->add_option("file", val_file, "file to validate")->required();
  cmd_validate->add_option("--schema", val_schema,
                           "auto|frc-csv|frc-json|train-csv|ablation-csv|manifest");
  cmd_validate->callback([&] {
    rc = guarded([&] {
      std::ifstream f(val_file, std::ios::binary);
      if (!f) throw fga::IoError("cannot open " + val_file);
      std::ostringstream buf;
      buf << f.rdbuf();
      const std::string text = buf.str();
      std::string schema = val_schema;
      if (schema == "auto") schema = detect_schema(val_file, text);
      if (schema == "frc-csv") {
        validate_frc_csv(text);
      } else if (schema == "frc-json") {
        validate_frc_json(text);
      } else if (schema == "train-csv") {
        validate_train_csv(text);
      } else if (schema == "ablation-csv") {
        validate_ablation_csv(text);
      } else if (schema == "manifest") {
        validate_manifest_json(text);
      } else {
        throw fga::ConfigError("unknown schema: " + schema);
      }
      std::cout << "valid " << schema << "\n";
      return 0;
    });
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  return rc;
}
