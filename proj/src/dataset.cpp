#include "beamlearn/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

#include "beamlearn/parallel.hpp"

namespace beamlearn::dataset {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

std::vector<Utterance> read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(path.string() + ": cannot open manifest");
  const auto base = path.parent_path();
  std::vector<Utterance> out;
  std::string line;
  int n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(n);
    try {
      auto j = nlohmann::json::parse(line);
      Utterance u;
      u.id = j.at("id").get<std::string>();
      const auto& m = j.at("mixture");
      if (m.is_string()) {
        u.mixture.push_back(resolve(base, m.get<std::string>()));
      } else {
        for (const auto& p : m) u.mixture.push_back(resolve(base, p.get<std::string>()));
      }
      if (u.mixture.empty()) throw std::invalid_argument("empty mixture list");
      if (j.contains("speech")) u.speech = resolve(base, j["speech"].get<std::string>());
      if (j.contains("noise")) u.noise = resolve(base, j["noise"].get<std::string>());
      out.push_back(std::move(u));
    } catch (const std::exception& e) {
      throw io::FormatError(where + ": bad manifest record: " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<nlohmann::json>& records) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  for (const auto& r : records) f << r.dump() << '\n';
  if (!f) throw std::runtime_error(path.string() + ": write failed");
}

AudioClip load_mixture(const Utterance& u) { return read_wav_set(u.mixture); }

SynthConfig SynthConfig::from(const io::Config& c) {
  SynthConfig s;
  const long long count = c.get("count", 0LL);
  if (count < 0) throw io::ConfigError("count must be >= 0");
  s.count = static_cast<std::size_t>(count);
  s.seed = static_cast<std::uint64_t>(c.get("seed", 0LL));
  s.prefix = c.get("prefix", s.prefix);
  s.snr_min = c.get("snr_min", s.snr_min);
  s.snr_max = c.get("snr_max", s.snr_max);
  if (s.snr_min > s.snr_max) throw io::ConfigError("snr_min exceeds snr_max");
  auto& b = s.base;
  b.channels = static_cast<std::size_t>(c.get("channels", static_cast<long long>(b.channels)));
  b.duration = c.get("duration", b.duration);
  b.sample_rate = c.get("sample_rate", b.sample_rate);
  const std::string prop = c.get("propagation", std::string("anechoic"));
  if (prop != "anechoic" && prop != "rir") throw io::ConfigError("propagation must be anechoic or rir");
  b.propagation = prop == "rir" ? scene::Propagation::rir : scene::Propagation::anechoic;
  b.t60 = c.get("t60", b.t60);
  const std::string noise = c.get("noise", std::string("diffuse"));
  if (noise != "white" && noise != "diffuse") throw io::ConfigError("noise must be white or diffuse");
  b.noise = noise == "white" ? scene::NoiseModel::white : scene::NoiseModel::diffuse;
  b.plane_waves = static_cast<std::size_t>(c.get("plane_waves", static_cast<long long>(b.plane_waves)));
  b.spacing = c.get("spacing", b.spacing);
  if (c.has("direction_deg")) b.direction_deg = c.get("direction_deg", 90.0);
  const std::string src = c.get("source_wav", std::string());
  if (!src.empty()) {
    b.source = scene::SourceModel::wav;
    b.source_wav = src;
  }
  try {
    b.validate();
  } catch (const std::invalid_argument& e) {
    throw io::ConfigError(e.what());
  }
  return s;
}

scene::SceneSpec scene_spec(const SynthConfig& cfg, std::size_t index) {
  scene::SceneSpec s = cfg.base;
  s.seed = splitmix64(cfg.seed ^ splitmix64(index));
  std::mt19937_64 rng(splitmix64(s.seed));
  s.snr_db = std::uniform_real_distribution<double>(cfg.snr_min, cfg.snr_max)(rng);
  return s;
}

std::string scene_id(const SynthConfig& cfg, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return cfg.prefix + "_" + buf;
}

std::filesystem::path synthesize(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.count == 0) throw std::invalid_argument("synthesize: zero scenes requested");
  std::filesystem::create_directories(out_dir);
  std::vector<nlohmann::json> records(cfg.count);
  parallel_for(cfg.count, [&](std::size_t i) {
    records[i] = scene::write_scene(out_dir, scene_id(cfg, i), scene::synth_scene(scene_spec(cfg, i)));
  });
  const auto manifest = out_dir / "manifest.jsonl";
  write_manifest(manifest, records);
  return manifest;
}

}  // namespace beamlearn::dataset
