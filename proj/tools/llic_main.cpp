#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include "llic/analysis.hpp"
#include "llic/checkpoint.hpp"
#include "llic/codec.hpp"
#include "llic/config.hpp"
#include "llic/image_io.hpp"
#include "llic/metrics.hpp"
#include "llic/nn.hpp"
#include "llic/ops.hpp"
#include "llic/selftest.hpp"
#include "llic/train.hpp"

namespace fs = std::filesystem;
using namespace llic;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kFormat = 3, kNumeric = 4 };

struct ModelSource {
  std::string ckpt;
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;

  void attach(CLI::App* app) {
    app->add_option("--ckpt", ckpt, "Trained checkpoint");
    app->add_option("--config", config, "Config file (used when no checkpoint is given)");
    app->add_option("--set", sets, "key=value override, repeatable");
    app->add_option("--seed", seed, "Initialization seed for a config-built model");
  }
};

KeyValues parse_sets(const std::vector<std::string>& sets) {
  KeyValues out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("--set", "expected key=value, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

Settings settings_from(const std::string& config, const KeyValues& overrides) {
  const KeyValues file = config.empty() ? KeyValues{} : load_key_values(config);
  return resolve_settings(file, overrides);
}

CompressionModel load_model(const ModelSource& src) {
  if (!src.ckpt.empty()) return model_from_checkpoint(load_checkpoint(src.ckpt));
  return CompressionModel(settings_from(src.config, parse_sets(src.sets)).model, src.seed);
}

std::uint8_t lambda_index_of(const fs::path& ckpt_path) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (const Tensor* l = ckpt.find("train.lambda"); l && l->numel() == 1) {
    for (std::size_t i = 0; i < kMseLambdas.size(); ++i) {
      if ((*l)[0] == kMseLambdas[i] || (*l)[0] == kMsssimLambdas[i]) return static_cast<std::uint8_t>(i);
    }
  }
  return 0;
}

// Square centre crop, replicate-padded when the image is smaller.
Tensor centre_crop(const Tensor& img, std::size_t s) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  Tensor src = reshape(img, {1, 3, h, w});
  if (h < s || w < s) src = pad_replicate(src, std::max(h, s), std::max(w, s));
  const std::size_t ph = src.dim(2), pw = src.dim(3), oy = (ph - s) / 2, ox = (pw - s) / 2;
  Tensor out({3, s, s});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) out.data()[(c * s + y) * s + x] = src[(c * ph + oy + y) * pw + ox + x];
    }
  }
  return out;
}

std::vector<Tensor> load_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<Tensor> out;
  for (const auto& p : list_ppm(dir)) out.push_back(load_ppm(p));
  if (out.empty()) throw IoError("no .ppm images in " + dir.string());
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_train(const fs::path& config, const fs::path& data, const fs::path& out, const fs::path& resume,
              const KeyValues& overrides, std::size_t log_every, std::size_t save_every) {
  const Settings s = settings_from(config.string(), overrides);
  const std::vector<Tensor> images = load_images(data);
  CompressionModel model(s.model, s.train.seed);
  Trainer trainer(model, s.train, images);
  if (!resume.empty()) trainer.restore(load_checkpoint(resume));
  std::printf("training %zu steps on %zu images, lambda %g, model digest %016llx\n", s.train.total_steps,
              images.size(), s.train.lambda, static_cast<unsigned long long>(s.model.digest()));
  const auto t0 = std::chrono::steady_clock::now();
  trainer.run(s.train.total_steps, [&](const StepStats& st) {
    const std::size_t done = st.step + 1;
    if (log_every && (done % log_every == 0 || done == s.train.total_steps)) {
      std::printf("step %zu loss %.6f bpp %.5f D %.4f lr %.1e  %.1fs\n", done, st.loss, st.rate, st.distortion, st.lr,
                  seconds_since(t0));
      std::fflush(stdout);
    }
    if (save_every && done % save_every == 0) save_checkpoint(trainer.checkpoint(), out);
  });
  save_checkpoint(trainer.checkpoint(), out);
  std::printf("saved %s\n", out.string().c_str());
  return kOk;
}

int cmd_encode(const ModelSource& src, const fs::path& in, const fs::path& out, std::optional<int> lambda_index) {
  const CompressionModel model = load_model(src);
  const Tensor x = load_ppm(in);
  const auto li = lambda_index ? static_cast<std::uint8_t>(*lambda_index)
                               : (src.ckpt.empty() ? std::uint8_t{0} : lambda_index_of(src.ckpt));
  const EncodeResult r = encode_image(model, x, li);
  write_file(out, r.stream.serialize());
  std::printf("%s: %zux%zu, %zu bytes, %.5f bpp (estimate %.5f)\n", out.string().c_str(), x.dim(2), x.dim(1),
              r.stream.total_bytes(), r.stream.bpp(), r.estimated_bits / static_cast<double>(x.dim(1) * x.dim(2)));
  return kOk;
}

int cmd_decode(const ModelSource& src, const fs::path& in, const fs::path& out) {
  const CompressionModel model = load_model(src);
  const Bitstream stream = Bitstream::parse(read_file(in));
  const DecodeResult r = decode_image(model, stream);
  save_ppm(r.x_hat, out);
  std::printf("%s: %ux%u\n", out.string().c_str(), stream.header.orig_w, stream.header.orig_h);
  return kOk;
}

int cmd_eval(const std::vector<std::string>& ckpts, const fs::path& images_dir, const fs::path& out) {
  const std::vector<Tensor> images = load_images(images_dir);
  RDCurve curve;
  for (std::size_t k = 0; k < ckpts.size(); ++k) {
    const CompressionModel model = model_from_checkpoint(load_checkpoint(ckpts[k]));
    RDPoint p;
    p.lambda_index = lambda_index_of(ckpts[k]);
    double ms = 0.0;
    bool all_large = true;
    for (const Tensor& img : images) {
      const EncodeResult enc = encode_image(model, img, static_cast<std::uint8_t>(p.lambda_index));
      const DecodeResult dec = decode_image(model, Bitstream::parse(enc.stream.serialize()));
      const Tensor ref = reshape(img, {1, 3, img.dim(1), img.dim(2)});
      p.bpp += enc.stream.bpp();
      p.psnr += psnr(ref, dec.x_hat);
      if (std::min(img.dim(1), img.dim(2)) >= 160) {
        ms += ms_ssim(ref, dec.x_hat);
      } else {
        all_large = false;
      }
    }
    const double n = static_cast<double>(images.size());
    p.bpp /= n;
    p.psnr /= n;
    if (all_large) p.msssim = ms / n;
    std::printf("%s: bpp %.5f psnr %.4f\n", ckpts[k].c_str(), p.bpp, p.psnr);
    curve.push_back(p);
  }
  write_rd_csv(curve, out);
  return kOk;
}

int cmd_erf(const ModelSource& src, const fs::path& images_dir, std::size_t size, const std::string& outs,
            bool per_image_norm, bool hold) {
  if (size == 0 || size % 16 != 0) throw CLI::ValidationError("--size", "must be a positive multiple of 16");
  const CompressionModel model = load_model(src);
  std::vector<Tensor> crops;
  for (const Tensor& img : load_images(images_dir)) crops.push_back(centre_crop(img, size));
  ErfOptions opt;
  if (per_image_norm) opt.normalization = ErfNormalization::normalize_then_average;
  if (hold) opt.condition = ConditionGradient::hold;
  const ErfMap map = erf_map(model, crops, opt);
  std::stringstream ss(outs);
  for (std::string path; std::getline(ss, path, ',');) {
    if (path.ends_with(".csv")) {
      const std::string csv = erf_csv(map);
      write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
    } else {
      write_file(path, erf_pgm(map));
    }
  }
  for (double t : {1e-12, 1e-6, 1e-3}) {
    double peak = 0.0;
    for (double v : map.values) peak = std::max(peak, v);
    std::printf("support radius at %g: %ld (relative %g: %ld)\n", t, map.support_radius(t), t,
                map.support_radius(t * peak));
  }
  return kOk;
}

std::pair<std::size_t, std::size_t> parse_res(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t a = 0, b = 0;
    const std::size_t w = std::stoul(s.substr(0, x), &a), h = std::stoul(s.substr(x + 1), &b);
    if (a != x || b != s.size() - x - 1) throw std::invalid_argument(s);
    return {w, h};
  } catch (const std::exception&) {
    throw CLI::ValidationError("--res", "expected WxH, got '" + s + "'");
  }
}

int cmd_bench(const ModelSource& src, const fs::path& in, std::size_t repeat) {
  const CompressionModel model = load_model(src);
  const Tensor x = load_ppm(in);
  double enc_s = 0.0, dec_s = 0.0;
  EncodeResult r;
  for (std::size_t i = 0; i < repeat; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    r = encode_image(model, x);
    enc_s += seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    decode_image(model, r.stream);
    dec_s += seconds_since(t0);
  }
  std::printf("encode %.3f s  decode %.3f s  (mean of %zu, %zu bytes)\n", enc_s / repeat, dec_s / repeat, repeat,
              r.stream.total_bytes());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LLIC learned image codec"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a model on a directory of PPM images");
  std::string train_config, data, out_ckpt, resume;
  std::vector<std::string> train_sets;
  std::optional<std::size_t> steps, lambda_index, batch;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::string> preset;
  std::size_t log_every = 100, save_every = 0;
  train->add_option("--config", train_config, "Config file (key = value)");
  train->add_option("--data", data, "Directory of .ppm training images")->required();
  train->add_option("--out", out_ckpt, "Output checkpoint")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");
  train->add_option("--set", train_sets, "key=value override, repeatable");
  train->add_option("--preset", preset, "full or desk");
  train->add_option("--steps", steps, "total_steps");
  train->add_option("--lambda-index", lambda_index, "Index into the lambda ladder (0-5)");
  train->add_option("--batch", batch, "batch_size");
  train->add_option("--seed", train_seed, "seed");
  train->add_option("--log-every", log_every, "Print every N steps (0: never)");
  train->add_option("--save-every", save_every, "Also checkpoint every N steps");

  // encode / decode
  auto* encode = app.add_subcommand("encode", "Compress a PPM image");
  ModelSource enc_src;
  std::string enc_in, enc_out;
  std::optional<int> enc_lambda;
  enc_src.attach(encode);
  encode->add_option("--in", enc_in, "Input .ppm")->required();
  encode->add_option("--out", enc_out, "Output bitstream")->required();
  encode->add_option("--lambda-index", enc_lambda, "Header lambda index (default: from checkpoint)")
      ->check(CLI::Range(0, 255));

  auto* decode = app.add_subcommand("decode", "Decompress a bitstream to PPM");
  ModelSource dec_src;
  std::string dec_in, dec_out;
  dec_src.attach(decode);
  decode->add_option("--in", dec_in, "Input bitstream")->required();
  decode->add_option("--out", dec_out, "Output .ppm")->required();

  // eval / bdrate / ratesave
  auto* eval = app.add_subcommand("eval", "Rate-distortion point per checkpoint over an image set");
  std::vector<std::string> eval_ckpts;
  std::string eval_images, eval_out;
  eval->add_option("--ckpt", eval_ckpts, "Checkpoint, repeatable (one RD point each)")->required();
  eval->add_option("--images", eval_images, "Directory of .ppm images")->required();
  eval->add_option("--out", eval_out, "Output curve CSV")->required();

  auto* bdrate = app.add_subcommand("bdrate", "Bjontegaard delta rate between two RD curves");
  std::string anchor, test, field = "psnr";
  bdrate->add_option("--anchor", anchor, "Anchor curve CSV")->required();
  bdrate->add_option("--test", test, "Test curve CSV")->required();
  bdrate->add_option("--field", field, "psnr or msssim")->check(CLI::IsMember({"psnr", "msssim"}));

  auto* ratesave = app.add_subcommand("ratesave", "Rate saving of test over anchor at fixed PSNR");
  std::string rs_anchor, rs_test, grid;
  ratesave->add_option("--anchor", rs_anchor, "Anchor curve CSV")->required();
  ratesave->add_option("--test", rs_test, "Test curve CSV")->required();
  ratesave->add_option("--grid", grid, "PSNR grid lo:hi:step")->required();

  // erf / macs / bench / selftest
  auto* erf = app.add_subcommand("erf", "Effective receptive field of the analysis transform");
  ModelSource erf_src;
  std::string erf_images, erf_out = "erf.pgm,erf.csv";
  std::size_t erf_size = 512;
  bool erf_per_image = false, erf_hold = false;
  erf_src.attach(erf);
  erf->add_option("--images", erf_images, "Directory of .ppm images")->required();
  erf->add_option("--size", erf_size, "Centre crop size (multiple of 16)");
  erf->add_option("--out", erf_out, "Comma-separated outputs (.pgm and/or .csv)");
  erf->add_flag("--normalize-each", erf_per_image, "Normalize each map before averaging");
  erf->add_flag("--hold-condition", erf_hold, "Treat generated kernels and factors as constants");

  auto* macs = app.add_subcommand("macs", "Forward MACs per layer");
  std::string macs_config, res = "768x512";
  std::vector<std::string> macs_sets;
  macs->add_option("--config", macs_config, "Config file");
  macs->add_option("--set", macs_sets, "key=value override, repeatable");
  macs->add_option("--res", res, "Resolution WxH");

  auto* bench = app.add_subcommand("bench", "Encode/decode wall time");
  ModelSource bench_src;
  std::string bench_in;
  std::size_t repeat = 3;
  bench_src.attach(bench);
  bench->add_option("--in", bench_in, "Input .ppm")->required();
  bench->add_option("--repeat", repeat, "Repetitions")->check(CLI::PositiveNumber);

  auto* selftest = app.add_subcommand("selftest", "Quick invariant checks of every module");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*train) {
      KeyValues overrides;
      if (preset) overrides.emplace_back("preset", *preset);
      for (const auto& kv : parse_sets(train_sets)) overrides.push_back(kv);
      if (steps) overrides.emplace_back("total_steps", std::to_string(*steps));
      if (lambda_index) overrides.emplace_back("lambda_index", std::to_string(*lambda_index));
      if (batch) overrides.emplace_back("batch_size", std::to_string(*batch));
      if (train_seed) overrides.emplace_back("seed", std::to_string(*train_seed));
      return cmd_train(train_config, data, out_ckpt, resume, overrides, log_every, save_every);
    }
    if (*encode) return cmd_encode(enc_src, enc_in, enc_out, enc_lambda);
    if (*decode) return cmd_decode(dec_src, dec_in, dec_out);
    if (*eval) return cmd_eval(eval_ckpts, eval_images, eval_out);
    if (*bdrate) {
      const double v = llic::bd_rate(read_rd_csv(anchor), read_rd_csv(test),
                                     field == "psnr" ? QualityField::psnr : QualityField::msssim);
      std::printf("BD-rate %.4f%%\n", v);
      return kOk;
    }
    if (*ratesave) {
      const auto g = parse_grid(grid);
      std::printf("psnr,percent\n");
      for (const auto& r : rate_saving_curve(read_rd_csv(rs_anchor), read_rd_csv(rs_test), g)) {
        std::printf("%.4f,%.4f\n", r.psnr, r.percent);
      }
      return kOk;
    }
    if (*erf) return cmd_erf(erf_src, erf_images, erf_size, erf_out, erf_per_image, erf_hold);
    if (*macs) {
      const auto [w, h] = parse_res(res);
      std::fputs(count_macs(settings_from(macs_config, parse_sets(macs_sets)).model, h, w).format().c_str(), stdout);
      return kOk;
    }
    if (*bench) return cmd_bench(bench_src, bench_in, repeat);
    if (*selftest) {
      bool all = true;
      for (const auto& r : run_selftest([](const SelfTestResult& r) {
             std::printf("%-4s %s%s%s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.empty() ? "" : "  ",
                         r.detail.c_str());
             std::fflush(stdout);
           })) {
        all = all && r.passed;
      }
      return all ? kOk : kNumeric;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kFormat;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
