// beamlearn: synth / train / enhance / em / eval.
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "beamlearn/audio.hpp"
#include "beamlearn/beamformer.hpp"
#include "beamlearn/dataset.hpp"
#include "beamlearn/evaluate.hpp"
#include "beamlearn/io.hpp"
#include "beamlearn/masknet.hpp"
#include "beamlearn/parallel.hpp"
#include "beamlearn/stft.hpp"
#include "beamlearn/trainer.hpp"

namespace fs = std::filesystem;
using namespace beamlearn;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f << j.dump(2) << '\n';
}

Tensor load_input(const std::vector<std::string>& inputs, int& sample_rate, std::size_t& samples) {
  std::vector<fs::path> paths;
  for (const auto& s : inputs) {
    require_file(s, "input");
    paths.emplace_back(s);
  }
  const auto clip = read_wav_set(paths);
  if (clip.channels.size() < 2)
    throw UsageError("input has " + std::to_string(clip.channels.size()) + " channel(s); at least 2 are needed");
  sample_rate = clip.sample_rate;
  samples = clip.channels[0].size();
  return stft(clip, StftConfig{});
}

// Slice class k of (K, T, F) as (T, F).
Tensor class_mask(const Tensor& gamma, std::size_t k) {
  const std::size_t T = gamma.dim(1), F = gamma.dim(2);
  const auto v = gamma.real_data().subspan(k * T * F, T * F);
  return Tensor::real({T, F}, std::vector<double>(v.begin(), v.end()));
}

void export_masks(const fs::path& dir, const Tensor& gamma, std::size_t speech_class) {
  fs::create_directories(dir);
  io::write_tensor(dir / "masks.btf", gamma);
  for (std::size_t k = 0; k < gamma.dim(0); ++k)
    io::write_pgm(dir / ("mask_" + std::to_string(k) + ".pgm"), class_mask(gamma, k));
  write_json(dir / "masks.json", {{"classes", gamma.dim(0)}, {"frames", gamma.dim(1)}, {"bins", gamma.dim(2)},
                                  {"speech_class", speech_class}});
}

// Beamforms with `gamma`, writes the enhanced mono WAV and optional extras.
void finish_enhancement(const Tensor& spec, const Tensor& gamma, int sample_rate, std::size_t samples,
                        const std::string& output, const std::string& weights_path, const std::string& masks_dir) {
  const auto e = beamformer::enhance(spec, gamma);
  auto clip = istft_clip(e.output, StftConfig{}, sample_rate);
  clip.channels[0].resize(samples, 0.0);
  if (fs::path(output).has_parent_path()) fs::create_directories(fs::path(output).parent_path());
  write_wav(output, clip);
  if (!weights_path.empty()) {
    if (fs::path(weights_path).has_parent_path()) fs::create_directories(fs::path(weights_path).parent_path());
    io::write_tensor(weights_path, e.weights.w);
  }
  if (!masks_dir.empty()) export_masks(masks_dir, gamma, e.speech_class);
  std::printf("wrote %s (speech class %zu)\n", output.c_str(), e.speech_class);
}

int cmd_synth(const std::string& config, const std::string& out, std::optional<long long> count,
              std::optional<long long> seed) {
  require_file(config, "config");
  auto cfg = io::Config::load(config);
  if (count) cfg.set("count", std::to_string(*count));
  if (seed) cfg.set("seed", std::to_string(*seed));
  const auto synth = dataset::SynthConfig::from(cfg);
  if (const auto unknown = cfg.unused(); !unknown.empty()) throw io::ConfigError("unknown synth key: " + unknown[0]);
  if (synth.count == 0) throw io::ConfigError("count must be >= 1");
  const auto manifest = dataset::synthesize(synth, out);
  std::printf("%s\n", manifest.string().c_str());
  return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& config, const std::string& out,
              std::optional<long long> steps, std::optional<long long> seed, bool quiet) {
  require_file(manifest_path, "manifest");
  io::Config kv;
  if (!config.empty()) {
    require_file(config, "config");
    kv = io::Config::load(config);
  }
  if (steps) kv.set("steps", std::to_string(*steps));
  if (seed) kv.set("seed", std::to_string(*seed));
  const auto cfg = trainer::TrainConfig::from(kv);
  const auto utts = dataset::read_manifest(manifest_path);
  if (utts.empty()) throw UsageError("manifest is empty: " + manifest_path);

  auto net_cfg = cfg.net;
  net_cfg.bins = cfg.stft.bins();
  auto net = masknet::MaskNet::init(net_cfg);
  const auto load = [&](std::size_t i) {
    auto spec = stft(dataset::load_mixture(utts[i]), cfg.stft);
    if (spec.dim(0) < 2) throw UsageError(utts[i].id + ": needs at least 2 channels");
    return spec;
  };
  const std::size_t every = std::max<std::size_t>(1, cfg.steps / 20);
  auto report = trainer::train(net, utts.size(), load, cfg, [&](std::size_t step, double loss) {
    if (!quiet && (step % every == 0 || step + 1 == cfg.steps)) std::fprintf(stderr, "step %6zu  loss %.6f\n", step, loss);
  });
  masknet::save_checkpoint(out, net);
  report.checkpoint = fs::path(out).filename().string();
  auto j = trainer::to_json(report);
  j["config"] = {{"loss_variant", trainer::to_string(cfg.variant)},
                 {"activation", masknet::to_string(cfg.net.activation)},
                 {"steps", cfg.steps},
                 {"batch", cfg.accumulate},
                 {"pa_interval", cfg.pa_interval},
                 {"lr", cfg.lr},
                 {"seed", cfg.seed},
                 {"extra_em_step", cfg.extra_em_step}};
  write_json(fs::path(out) / "report.json", j);
  std::printf("steps %zu  rejected %zu  smoothed loss %.6f -> %.6f  %.1f s\n", report.losses.size(), report.rejected,
              report.smoothed_start(), report.smoothed_end(), report.seconds);
  if (report.aborted) {
    std::fprintf(stderr, "training aborted: %zu rejected steps\n", report.rejected);
    return 1;
  }
  return 0;
}

struct EnhanceArgs {
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::string output;
  bool extra_em_step = true;
  std::string pool = "median";
  std::string masks_dir;
  std::string weights;
};

int cmd_enhance(const EnhanceArgs& a) {
  require_file(fs::path(a.checkpoint) / "manifest.json", "checkpoint");
  const auto pooling = masknet::parse_pooling(a.pool);
  const auto net = masknet::load_checkpoint(a.checkpoint);
  int sr = 0;
  std::size_t n = 0;
  const auto spec = load_input(a.inputs, sr, n);
  if (spec.dim(2) != net.config.bins)
    throw UsageError("checkpoint expects " + std::to_string(net.config.bins) + " bins, input has " +
                     std::to_string(spec.dim(2)));
  const auto gamma = trainer::infer_masks(net, spec, a.extra_em_step, pooling);
  finish_enhancement(spec, gamma, sr, n, a.output, a.weights, a.masks_dir);
  return 0;
}

struct EmArgs {
  std::vector<std::string> inputs;
  std::string output;
  int iterations = 50;
  std::string pa = "on";
  long long classes = 2;
  long long seed = 0;
  std::string trace;
  std::string masks_dir;
  std::string weights;
};

int cmd_em(const EmArgs& a) {
  if (a.pa != "on" && a.pa != "off") throw UsageError("--pa must be on or off");
  if (a.classes < 2) throw UsageError("--classes must be >= 2");
  int sr = 0;
  std::size_t n = 0;
  const auto spec = load_input(a.inputs, sr, n);
  evaluate::EmOptions opt;
  opt.classes = static_cast<std::size_t>(a.classes);
  opt.iterations = a.iterations;
  opt.align = a.pa == "on";
  opt.seed = static_cast<std::uint64_t>(a.seed);
  const auto m = evaluate::em_masks(spec, opt);
  nlohmann::json trace = {{"iterations", a.iterations}, {"pa", opt.align}, {"classes", opt.classes},
                          {"log_likelihood", m.trace}};
  if (!a.trace.empty()) write_json(a.trace, trace);
  std::printf("log-likelihood %.6f -> %.6f over %zu iterations\n", m.trace.front(), m.trace.back(), m.trace.size());
  if (opt.classes == 2 || !a.output.empty()) finish_enhancement(spec, m.gamma, sr, n, a.output, a.weights, a.masks_dir);
  return 0;
}

struct EvalArgs {
  std::string manifest;
  std::string enhanced;
  std::string checkpoint;
  bool em = false;
  bool passthrough = false;
  bool extra_em_step = true;
  int iterations = 50;
  std::string json;
};

int cmd_eval(const EvalArgs& a) {
  require_file(a.manifest, "manifest");
  const int modes = !a.enhanced.empty() + !a.checkpoint.empty() + a.em + a.passthrough;
  if (modes != 1) throw UsageError("choose exactly one of --enhanced, --checkpoint, --em, --passthrough");
  const auto utts = dataset::read_manifest(a.manifest);
  if (utts.empty()) throw UsageError("manifest is empty: " + a.manifest);
  for (const auto& u : utts)
    if (!u.has_components()) throw UsageError(u.id + ": manifest record lacks speech/noise components");

  const StftConfig sc;
  std::optional<masknet::MaskNet> net;
  if (!a.checkpoint.empty()) net = masknet::load_checkpoint(a.checkpoint);
  std::vector<evaluate::Score> scores;
  for (const auto& u : utts) {
    if (!a.enhanced.empty()) {
      const auto w = fs::path(a.enhanced) / (u.id + ".weights.btf");
      require_file(w, "beamformer weights");
      scores.push_back(evaluate::score_weights(u, io::read_tensor(w), sc));
    } else if (a.passthrough) {
      const auto c = evaluate::load_components(u, sc);
      Tensor w(DType::complex128, {c.mixture.dim(2), c.mixture.dim(0)});
      for (std::size_t f = 0; f < w.dim(0); ++f) w.complex_data()[f * w.dim(1)] = 1.0;
      scores.push_back({u.id, scene::snr_metrics(c.speech, c.noise, w), 0});
    } else if (net) {
      scores.push_back(evaluate::score(
          u, [&](const Tensor& s) { return trainer::infer_masks(*net, s, a.extra_em_step); }, sc));
    } else {
      evaluate::EmOptions opt;
      opt.iterations = a.iterations;
      scores.push_back(evaluate::score(u, [&](const Tensor& s) { return evaluate::em_masks(s, opt).gamma; }, sc));
    }
  }
  const auto summary = evaluate::summarize(scores);
  std::fputs(evaluate::table(scores, summary).c_str(), stdout);
  if (!a.json.empty()) write_json(a.json, evaluate::to_json(scores, summary));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised neural mask estimation for GEV beamforming"};
  app.require_subcommand(1);
  long long threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = all cores; BEAMLEARN_THREADS overrides)");

  std::string config, out;
  std::optional<long long> count, seed, steps;
  auto* synth = app.add_subcommand("synth", "Synthesize a scene dataset and its manifest");
  synth->add_option("--config", config, "Key-value scene config")->required();
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--count", count, "Override the scene count");
  synth->add_option("--seed", seed, "Override the seed");

  std::string manifest;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train a mask estimator without supervision");
  train->add_option("--manifest", manifest, "JSON-lines manifest")->required();
  train->add_option("--config", config, "Key-value training config");
  train->add_option("--out", out, "Checkpoint directory")->required();
  train->add_option("--steps", steps, "Override the step count");
  train->add_option("--seed", seed, "Override the seed");
  train->add_flag("--quiet", quiet, "No per-step progress");

  EnhanceArgs ea;
  auto* enhance = app.add_subcommand("enhance", "Beamform a recording with network masks");
  enhance->add_option("--checkpoint", ea.checkpoint, "Checkpoint directory")->required();
  enhance->add_option("--input", ea.inputs, "Multichannel WAV or one mono WAV per channel")->required();
  enhance->add_option("--output", ea.output, "Enhanced mono WAV")->required();
  enhance->add_flag("--extra-em-step,!--no-extra-em-step", ea.extra_em_step, "Refine masks with one M- and E-step");
  enhance->add_option("--pool", ea.pool, "Channel pooling: median or mean")->capture_default_str();
  enhance->add_option("--export-masks", ea.masks_dir, "Directory for masks.btf and one PGM per class");
  enhance->add_option("--weights", ea.weights, "Write beamformer weights (F, D) as BTF1");

  EmArgs em;
  auto* emc = app.add_subcommand("em", "Plain cACGMM masks and beamforming");
  emc->add_option("--input", em.inputs, "Multichannel WAV or one mono WAV per channel")->required();
  emc->add_option("--output", em.output, "Enhanced mono WAV")->required();
  emc->add_option("--iterations", em.iterations, "EM iterations")->capture_default_str()->check(CLI::PositiveNumber);
  emc->add_option("--pa", em.pa, "Permutation alignment: on or off")->capture_default_str();
  emc->add_option("--classes", em.classes, "Mixture classes")->capture_default_str();
  emc->add_option("--seed", em.seed, "Seed of the random initial affiliations")->capture_default_str();
  emc->add_option("--trace", em.trace, "Write the log-likelihood trace as JSON");
  emc->add_option("--export-masks", em.masks_dir, "Directory for masks.btf and one PGM per class");
  emc->add_option("--weights", em.weights, "Write beamformer weights (F, D) as BTF1");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "SNR gains on a manifest with speech/noise components");
  eval->add_option("--manifest", ev.manifest, "JSON-lines manifest")->required();
  eval->add_option("--enhanced", ev.enhanced, "Directory of <id>.weights.btf files from enhance/em");
  eval->add_option("--checkpoint", ev.checkpoint, "Run the network pipeline from this checkpoint");
  eval->add_flag("--em", ev.em, "Run the plain cACGMM + alignment pipeline");
  eval->add_flag("--passthrough", ev.passthrough, "Score channel 0 unprocessed");
  eval->add_flag("--extra-em-step,!--no-extra-em-step", ev.extra_em_step, "With --checkpoint")->capture_default_str();
  eval->add_option("--iterations", ev.iterations, "With --em")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--json", ev.json, "Write the table as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (threads < 0) throw UsageError("--threads must be >= 0");
    set_thread_count(static_cast<std::size_t>(threads));
    if (*synth) return cmd_synth(config, out, count, seed);
    if (*train) return cmd_train(manifest, config, out, steps, seed, quiet);
    if (*enhance) return cmd_enhance(ea);
    if (*emc) return cmd_em(em);
    if (*eval) return cmd_eval(ev);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const io::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
