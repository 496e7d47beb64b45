// gs2d: fit, compress, decode, and evaluate 2D Gaussian splat images.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gs2d/codec.hpp"
#include "gs2d/csv.hpp"
#include "gs2d/errors.hpp"
#include "gs2d/image.hpp"
#include "gs2d/manifest.hpp"
#include "gs2d/metrics.hpp"
#include "gs2d/parallel.hpp"
#include "gs2d/training.hpp"

namespace {

using namespace gs2d;

void apply_threads(int threads) {
  if (threads <= 0) {
    if (const char* env = std::getenv("GS2D_THREADS")) threads = std::atoi(env);
  }
  if (threads > 0) set_threads(threads);
}

bool is_png(const std::vector<std::uint8_t>& bytes) {
  static const std::uint8_t sig[4] = {0x89, 'P', 'N', 'G'};
  return bytes.size() >= 4 && std::equal(sig, sig + 4, bytes.begin());
}

void write_history_csv(const std::string& path, const History& history) {
  CsvWriter csv(path, {"iteration", "total", "mse", "geometry", "bitwidth",
                       "residual", "psnr"});
  for (const auto& row : history)
    csv.row({std::to_string(row.iteration)},
            {row.total, row.mse, row.geometry, row.bitwidth, row.residual,
             row.psnr});
}

nlohmann::json config_json(const FitConfig& cfg) {
  nlohmann::json j;
  j["gaussians"] = cfg.n_gaussians;
  j["iterations"] = cfg.iterations;
  j["lambda_g"] = cfg.lambda_g;
  j["seed"] = cfg.seed;
  j["init"] = cfg.init == InitMode::kRandom ? "random" : "sgi";
  j["lr_position"] = cfg.lr_position;
  j["lr_color"] = cfg.lr_color;
  j["lr_cholesky"] = cfg.lr_cholesky;
  j["lr_quantizer"] = cfg.lr_quantizer;
  j["slic_regions"] = cfg.slic_regions;
  j["slic_compactness"] = cfg.slic_compactness;
  j["slic_iterations"] = cfg.slic_iterations;
  j["init_scale"] = cfg.init_scale;
  j["alloc"] = {{"phi", cfg.alloc.phi},
                {"gamma", cfg.alloc.gamma},
                {"n0", cfg.alloc.n0},
                {"threshold_k", cfg.alloc.threshold_k},
                {"threshold_alpha", cfg.alloc.threshold_alpha}};
  j["tune_iterations"] = cfg.tune_iterations;
  j["lambda_b"] = cfg.lambda_b;
  j["lambda_r"] = cfg.lambda_r;
  j["position_bits"] = cfg.quant.position_bits;
  j["bit_range"] = {cfg.quant.bit_min, cfg.quant.bit_max};
  j["rvq_stages"] = cfg.quant.rvq_stages;
  j["rvq_k"] = cfg.quant.rvq_k;
  j["threads"] = hardware_threads();
  return j;
}

struct FitCli {
  std::string input, out = "scene.gs2c", history, render_png, init_debug_png,
              labels_debug_png;
  FitConfig cfg;
  std::string init_mode = "sgi";
  int threads = 0;
};

void run_fit(FitCli& o) {
  apply_threads(o.threads);
  o.cfg.init = o.init_mode == "random" ? InitMode::kRandom : InitMode::kStructureGuided;
  RunManifest manifest("fit");

  const auto input_bytes = read_file(o.input);
  manifest.set_input(o.input, input_bytes);
  const ImageBuffer img = load_image(o.input);

  FitResult result;
  {
    PhaseTimer t(manifest, "fit");
    result = fit(img, o.cfg);
  }
  write_file(o.out, encode_scene(result.scene));
  const std::string history_path =
      o.history.empty() ? o.out + ".history.csv" : o.history;
  write_history_csv(history_path, result.history);

  if (!o.render_png.empty())
    save_image(render(result.scene).clamped01(), o.render_png);
  if (!o.init_debug_png.empty()) {
    FitConfig icfg = o.cfg;
    GaussianScene init = initialize_scene(img, icfg);
    ImageBuffer overlay = detail::ensure_rgb(img);
    const std::size_t plane = overlay.plane_size();
    for (std::size_t i = 0; i < init.size(); ++i) {
      const int x = std::clamp(
          static_cast<int>((init.mu[2 * i] + 1) * 0.5 * img.width), 0,
          img.width - 1);
      const int y = std::clamp(
          static_cast<int>((init.mu[2 * i + 1] + 1) * 0.5 * img.height), 0,
          img.height - 1);
      const std::size_t p = static_cast<std::size_t>(y) * img.width + x;
      overlay.data[p] = 1.f;
      overlay.data[plane + p] = 0.f;
      overlay.data[2 * plane + p] = 0.f;
    }
    save_image(overlay, o.init_debug_png);
  }
  if (!o.labels_debug_png.empty()) {
    const int hw = img.width * img.height;
    const int regions = o.cfg.slic_regions > 0
                            ? o.cfg.slic_regions
                            : std::max(64, (hw + 512) / 1024);
    const SegmentationMap seg =
        slic_segment(img, regions, o.cfg.slic_compactness,
                     o.cfg.slic_iterations, o.cfg.seed);
    save_image(segmentation_debug_image(seg, o.cfg.seed), o.labels_debug_png);
  }

  manifest.doc["config"] = config_json(o.cfg);
  manifest.doc["outputs"] = {o.out, history_path};
  if (!result.history.empty()) {
    manifest.doc["final_psnr_db"] = result.history.back().psnr;
    std::printf("fit: %s -> %s (%zu gaussians, final PSNR %.2f dB)\n",
                o.input.c_str(), o.out.c_str(), result.scene.size(),
                result.history.back().psnr);
  } else {
    std::printf("fit: %s -> %s (%zu gaussians, 0 iterations)\n",
                o.input.c_str(), o.out.c_str(), result.scene.size());
  }
  manifest.write(o.out + ".manifest.json");
}

struct EncodeCli {
  std::string input, image, out = "out.gs2c", history;
  FitConfig cfg;
  std::string bit_range = "6:16";
  int threads = 0;
};

void parse_bit_range(const std::string& s, QuantizerConfig& q) {
  const auto colon = s.find(':');
  if (colon == std::string::npos)
    throw std::invalid_argument("--bit-range expects LO:HI");
  const double lo = std::stod(s.substr(0, colon));
  const double hi = std::stod(s.substr(colon + 1));
  if (!(lo >= 1 && hi <= 30 && lo < hi))
    throw std::invalid_argument("--bit-range expects 1 <= LO < HI <= 30");
  q.bit_min = lo;
  q.bit_max = hi;
  q.init_bitwidth = std::clamp(q.init_bitwidth, lo, hi);
}

void run_encode(EncodeCli& o) {
  apply_threads(o.threads);
  parse_bit_range(o.bit_range, o.cfg.quant);
  RunManifest manifest("encode");

  const auto input_bytes = read_file(o.input);
  manifest.set_input(o.input, input_bytes);

  ImageBuffer img;
  GaussianScene scene;
  if (is_png(input_bytes)) {
    img = load_image(o.input);
    PhaseTimer t(manifest, "fit");
    scene = fit(img, o.cfg).scene;
  } else {
    scene = decode_scene(input_bytes);
    if (o.image.empty())
      throw std::invalid_argument(
          "encode: --image is required when the input is a scene file");
    const auto image_bytes = read_file(o.image);
    manifest.set_input(o.image, image_bytes);
    img = load_image(o.image);
    if (img.width != scene.width || img.height != scene.height)
      throw std::invalid_argument("encode: scene/image dimension mismatch");
  }

  FinetuneResult tuned;
  {
    PhaseTimer t(manifest, "finetune");
    tuned = finetune(scene, img, o.cfg);
  }
  std::vector<std::uint8_t> bytes;
  {
    PhaseTimer t(manifest, "encode");
    bytes = encode(tuned.quantized);
  }
  write_file(o.out, bytes);
  const std::string history_path =
      o.history.empty() ? o.out + ".history.csv" : o.history;
  write_history_csv(history_path, tuned.history);

  const ImageBuffer recon = render(tuned.quantized.dequantize()).clamped01();
  const double rate = bpp(bytes, img.width, img.height);
  const double quality = psnr(recon, detail::ensure_rgb(img));
  double mean_bits = 0;
  for (const auto& g : tuned.quantized.groups)
    mean_bits += static_cast<double>(g.bits) * g.count;
  mean_bits /= std::max<std::size_t>(1, tuned.quantized.size());

  manifest.doc["config"] = config_json(o.cfg);
  manifest.doc["outputs"] = {o.out, history_path};
  manifest.doc["bpp"] = rate;
  manifest.doc["psnr_db"] = quality;
  manifest.doc["mean_hard_bitwidth"] = mean_bits;
  manifest.doc["stream_bytes"] = bytes.size();
  manifest.doc["group_table_bytes"] = group_table_bytes(tuned.quantized);
  manifest.write(o.out + ".manifest.json");

  std::printf("encode: %s -> %s (%.4f bpp, PSNR %.2f dB, mean bits %.2f)\n",
              o.input.c_str(), o.out.c_str(), rate, quality, mean_bits);
}

struct DecodeCli {
  std::string input, out = "out.png";
  bool time = false;
  int repeats = 100;
  int threads = 0;
};

void run_decode(DecodeCli& o) {
  apply_threads(o.threads);
  RunManifest manifest("decode");
  const auto bytes = read_file(o.input);
  manifest.set_input(o.input, bytes);

  GaussianScene scene;
  const std::uint8_t version = peek_version(bytes);
  {
    PhaseTimer t(manifest, "decode");
    scene = version == kVersionQuantized ? decode(bytes).dequantize()
                                         : decode_scene(bytes);
  }
  ImageBuffer img;
  {
    PhaseTimer t(manifest, "render");
    img = render(scene);
  }
  save_image(img.clamped01(), o.out);

  if (o.time) {
    const int reps = std::max(100, o.repeats);
    std::vector<double> ms(reps);
    for (int r = 0; r < reps; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      GaussianScene s = version == kVersionQuantized ? decode(bytes).dequantize()
                                                     : decode_scene(bytes);
      const ImageBuffer frame = render(s);
      const auto t1 = std::chrono::steady_clock::now();
      ms[r] = std::chrono::duration<double, std::milli>(t1 - t0).count();
      if (frame.data.empty()) std::abort();  // keep the loop observable
    }
    std::sort(ms.begin(), ms.end());
    double mean = 0;
    for (const double v : ms) mean += v;
    mean /= reps;
    const double p95 = ms[static_cast<std::size_t>(0.95 * (reps - 1))];
    manifest.doc["decode_render_ms_mean"] = mean;
    manifest.doc["decode_render_ms_p95"] = p95;
    manifest.doc["decode_render_fps"] = 1000.0 / mean;
    manifest.doc["timing_repetitions"] = reps;
    std::printf("decode timing: mean %.3f ms, p95 %.3f ms, %.1f FPS (%d reps)\n",
                mean, p95, 1000.0 / mean, reps);
  }

  manifest.doc["outputs"] = {o.out};
  manifest.doc["gaussians"] = scene.size();
  manifest.write(o.out + ".manifest.json");
  std::printf("decode: %s -> %s (%zu gaussians, %dx%d)\n", o.input.c_str(),
              o.out.c_str(), scene.size(), scene.width, scene.height);
}

struct EvalCli {
  std::string a, b, manifest;
  int threads = 0;
};

void run_eval(EvalCli& o) {
  apply_threads(o.threads);
  RunManifest manifest("eval");
  manifest.set_input(o.a, read_file(o.a));
  manifest.set_input(o.b, read_file(o.b));
  const ImageBuffer a = load_image(o.a), b = load_image(o.b);
  const double p = psnr(a, b);
  const MsSsimResult m = ms_ssim_detail(a, b);
  std::printf("psnr_db=%.6f ms_ssim=%.8f ms_ssim_scales=%d\n", p, m.value,
              m.scales_used);
  manifest.doc["psnr_db"] = p;
  manifest.doc["ms_ssim"] = m.value;
  manifest.doc["ms_ssim_scales"] = m.scales_used;
  manifest.write(o.manifest.empty() ? o.b + ".eval.manifest.json" : o.manifest);
}

struct SweepCli {
  std::vector<std::string> inputs;
  std::string out = "rd_points.csv";
  std::string bd_reference;
  std::vector<std::int64_t> budgets;
  std::vector<double> lambda_b_list;
  FitConfig cfg;
  int threads = 0;
};

std::vector<RdPoint> parse_rd_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::array<std::string, 6>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::array<std::string, 6> cells;
    std::stringstream ss(line);
    for (auto& c : cells) std::getline(ss, c, ',');
    rows.push_back(cells);
  }
  const bool has_mean =
      std::any_of(rows.begin(), rows.end(),
                  [](const auto& r) { return r[0] == "(mean)"; });
  std::vector<RdPoint> pts;
  for (const auto& r : rows)
    if (!has_mean || r[0] == "(mean)")
      pts.push_back({std::stod(r[3]), std::stod(r[4])});
  return pts;
}

void run_sweep(SweepCli& o) {
  apply_threads(o.threads);
  RunManifest manifest("sweep");
  if (o.budgets.empty() && o.lambda_b_list.empty())
    throw std::invalid_argument("sweep: provide --budgets or --lambda-b-list");

  struct Point {
    std::int64_t budget;
    double lambda_b;
  };
  std::vector<Point> points;
  if (!o.budgets.empty())
    for (const auto b : o.budgets) points.push_back({b, o.cfg.lambda_b});
  else
    for (const double lb : o.lambda_b_list)
      points.push_back({o.cfg.n_gaussians, lb});

  CsvWriter csv(o.out,
                {"image", "gaussians", "lambda_b", "bpp", "psnr", "ms_ssim"});
  std::vector<std::vector<RdPoint>> per_point(points.size());
  std::vector<RdPoint> aggregate;

  for (const std::string& path : o.inputs) {
    const auto bytes = read_file(path);
    manifest.set_input(path, bytes);
    const ImageBuffer img = load_image(path);
    const ImageBuffer target = detail::ensure_rgb(img);
    for (std::size_t pi = 0; pi < points.size(); ++pi) {
      FitConfig cfg = o.cfg;
      cfg.n_gaussians = points[pi].budget;
      cfg.lambda_b = points[pi].lambda_b;
      const GaussianScene scene = fit(img, cfg).scene;
      const FinetuneResult tuned = finetune(scene, img, cfg);
      const auto stream = encode(tuned.quantized);
      const ImageBuffer recon = render(tuned.quantized.dequantize()).clamped01();
      const double rate = bpp(stream, img.width, img.height);
      const double quality = psnr(recon, target);
      const double ssim = ms_ssim(recon, target);
      csv.row({path, std::to_string(points[pi].budget),
               std::to_string(points[pi].lambda_b)},
              {rate, quality, ssim});
      per_point[pi].push_back({rate, quality});
      std::printf("sweep: %s n=%lld lambda_b=%g -> %.4f bpp, %.2f dB\n",
                  path.c_str(), static_cast<long long>(points[pi].budget),
                  points[pi].lambda_b, rate, quality);
    }
  }

  // Aggregate rows: mean rate/quality across images per operating point.
  // The BD curve uses the published CSV precision so a sweep compared against
  // its own CSV reports exactly zero.
  auto csv_precision = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::atof(buf);
  };
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    double mb = 0, mq = 0;
    for (const auto& p : per_point[pi]) {
      mb += p.bpp;
      mq += p.quality;
    }
    const double k = static_cast<double>(per_point[pi].size());
    aggregate.push_back({csv_precision(mb / k), csv_precision(mq / k)});
    if (o.inputs.size() > 1)
      csv.row({"(mean)", std::to_string(points[pi].budget),
               std::to_string(points[pi].lambda_b)},
              {mb / k, mq / k, 0.0});
  }

  manifest.doc["config"] = config_json(o.cfg);
  manifest.doc["outputs"] = {o.out};
  if (!o.bd_reference.empty()) {
    if (aggregate.size() < 4) {
      std::fprintf(stderr,
                   "sweep: fewer than 4 operating points, BD summary skipped\n");
    } else {
      const auto ref = parse_rd_csv(o.bd_reference);
      const double rate_delta = bd_rate(ref, aggregate);
      const double psnr_delta = bd_psnr(ref, aggregate);
      manifest.doc["bd_rate_percent"] = rate_delta;
      manifest.doc["bd_psnr_db"] = psnr_delta;
      std::printf("BD-rate %+.4f%%  BD-PSNR %+.4f dB (vs %s)\n", rate_delta,
                  psnr_delta, o.bd_reference.c_str());
    }
  }
  manifest.write(o.out + ".manifest.json");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"2D Gaussian splatting image representation and compression"};
  app.set_version_flag("--version", gs2d::kToolVersion);
  app.require_subcommand(1);

  FitCli fit_cli;
  auto* fit_cmd = app.add_subcommand("fit", "Overfit a Gaussian scene to an image");
  fit_cmd->add_option("input", fit_cli.input, "input PNG")->required();
  fit_cmd->add_option("--gaussians", fit_cli.cfg.n_gaussians, "point budget");
  fit_cmd->add_option("--iters", fit_cli.cfg.iterations, "training iterations");
  fit_cmd->add_option("--lambda-g", fit_cli.cfg.lambda_g, "geometry loss weight");
  fit_cmd->add_option("--seed", fit_cli.cfg.seed, "RNG seed");
  fit_cmd->add_option("--out", fit_cli.out, "output scene file");
  fit_cmd->add_option("--init", fit_cli.init_mode, "sgi|random")
      ->check(CLI::IsMember({"sgi", "random"}));
  fit_cmd->add_option("--history", fit_cli.history, "history CSV path");
  fit_cmd->add_option("--render", fit_cli.render_png, "also export the render");
  fit_cmd->add_option("--debug-init", fit_cli.init_debug_png,
                      "dump initial positions over the image");
  fit_cmd->add_option("--debug-labels", fit_cli.labels_debug_png,
                      "dump the SLIC label map");
  fit_cmd->add_option("--slic-regions", fit_cli.cfg.slic_regions);
  fit_cmd->add_option("--init-scale", fit_cli.cfg.init_scale);
  fit_cmd->add_option("--lr-position", fit_cli.cfg.lr_position);
  fit_cmd->add_option("--lr-color", fit_cli.cfg.lr_color);
  fit_cmd->add_option("--lr-cholesky", fit_cli.cfg.lr_cholesky);
  fit_cmd->add_option("--log-interval", fit_cli.cfg.log_interval);
  fit_cmd->add_option("--threads", fit_cli.threads, "pin thread count");
  fit_cmd->callback([&] { run_fit(fit_cli); });

  EncodeCli enc_cli;
  auto* enc_cmd =
      app.add_subcommand("encode", "Fine-tune under quantization and compress");
  enc_cmd->add_option("input", enc_cli.input, "input PNG or scene file")
      ->required();
  enc_cmd->add_option("--image", enc_cli.image,
                      "target image (required for scene-file input)");
  enc_cmd->add_option("--out", enc_cli.out, "output .gs2c stream");
  enc_cmd->add_option("--gaussians", enc_cli.cfg.n_gaussians);
  enc_cmd->add_option("--iters", enc_cli.cfg.iterations);
  enc_cmd->add_option("--lambda-g", enc_cli.cfg.lambda_g);
  enc_cmd->add_option("--seed", enc_cli.cfg.seed);
  enc_cmd->add_option("--tune-iters", enc_cli.cfg.tune_iterations);
  enc_cmd->add_option("--lambda-b", enc_cli.cfg.lambda_b);
  enc_cmd->add_option("--lambda-r", enc_cli.cfg.lambda_r);
  enc_cmd->add_option("--bit-range", enc_cli.bit_range, "soft bitwidth range LO:HI");
  enc_cmd->add_option("--pos-bits", enc_cli.cfg.quant.position_bits)
      ->check(CLI::Range(1, 16));
  enc_cmd->add_option("--rvq-stages", enc_cli.cfg.quant.rvq_stages)
      ->check(CLI::Range(1, 8));
  enc_cmd->add_option("--rvq-k", enc_cli.cfg.quant.rvq_k)
      ->check(CLI::Range(1, 65535));
  enc_cmd->add_option("--history", enc_cli.history);
  enc_cmd->add_option("--threads", enc_cli.threads);
  enc_cmd->callback([&] { run_encode(enc_cli); });

  DecodeCli dec_cli;
  auto* dec_cmd = app.add_subcommand("decode", "Decode a stream and render it");
  dec_cmd->add_option("input", dec_cli.input, ".gs2c stream or scene file")
      ->required();
  dec_cmd->add_option("--out", dec_cli.out, "output PNG");
  dec_cmd->add_flag("--time", dec_cli.time, "report decode+render timing");
  dec_cmd->add_option("--repeats", dec_cli.repeats,
                      "timing repetitions (>= 100)");
  dec_cmd->add_option("--threads", dec_cli.threads);
  dec_cmd->callback([&] { run_decode(dec_cli); });

  EvalCli eval_cli;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR / MS-SSIM between two PNGs");
  eval_cmd->add_option("a", eval_cli.a)->required();
  eval_cmd->add_option("b", eval_cli.b)->required();
  eval_cmd->add_option("--manifest", eval_cli.manifest, "manifest path");
  eval_cmd->add_option("--threads", eval_cli.threads);
  eval_cmd->callback([&] { run_eval(eval_cli); });

  SweepCli sweep_cli;
  auto* sweep_cmd =
      app.add_subcommand("sweep", "Rate-distortion sweep with CSV output");
  sweep_cmd->add_option("inputs", sweep_cli.inputs, "input PNGs")->required();
  sweep_cmd->add_option("--budgets", sweep_cli.budgets,
                        "comma-separated Gaussian budgets")
      ->delimiter(',');
  sweep_cmd->add_option("--lambda-b-list", sweep_cli.lambda_b_list,
                        "comma-separated bitwidth loss weights")
      ->delimiter(',');
  sweep_cmd->add_option("--out", sweep_cli.out, "RD points CSV");
  sweep_cmd->add_option("--bd", sweep_cli.bd_reference,
                        "reference RD CSV for a BD summary");
  sweep_cmd->add_option("--gaussians", sweep_cli.cfg.n_gaussians);
  sweep_cmd->add_option("--iters", sweep_cli.cfg.iterations);
  sweep_cmd->add_option("--tune-iters", sweep_cli.cfg.tune_iterations);
  sweep_cmd->add_option("--lambda-g", sweep_cli.cfg.lambda_g);
  sweep_cmd->add_option("--lambda-b", sweep_cli.cfg.lambda_b);
  sweep_cmd->add_option("--pos-bits", sweep_cli.cfg.quant.position_bits)
      ->check(CLI::Range(1, 16));
  sweep_cmd->add_option("--seed", sweep_cli.cfg.seed);
  sweep_cmd->add_option("--threads", sweep_cli.threads);
  sweep_cmd->callback([&] { run_sweep(sweep_cli); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const gs2d::CorruptionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const gs2d::FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const gs2d::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 0;
}
