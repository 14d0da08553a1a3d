#include "beamlearn/evaluate.hpp"

#include <cstdio>
#include <stdexcept>

#include "beamlearn/mixture.hpp"

namespace beamlearn::evaluate {

EmMasks em_masks(const Tensor& spec, const EmOptions& opt) {
  const auto y = mixture::normalize(spec);
  auto fit = mixture::em_fit(y, opt.classes, opt.iterations, nullptr, opt.seed);
  EmMasks out{std::move(fit.gamma), std::move(fit.trace)};
  if (opt.align && opt.classes > 1) out.gamma = mixture::permutation_align(out.gamma).gamma;
  return out;
}

Components load_components(const dataset::Utterance& u, const StftConfig& cfg) {
  if (!u.has_components()) throw std::invalid_argument(u.id + ": manifest record has no speech/noise components");
  Components c;
  c.mixture = stft(dataset::load_mixture(u), cfg);
  c.speech = stft(read_wav(*u.speech), cfg);
  c.noise = stft(read_wav(*u.noise), cfg);
  if (c.speech.shape() != c.mixture.shape() || c.noise.shape() != c.mixture.shape())
    throw std::invalid_argument(u.id + ": component shapes differ from the mixture");
  return c;
}

Score score(const dataset::Utterance& u, const MaskFn& masks, const StftConfig& cfg) {
  const auto c = load_components(u, cfg);
  const auto e = beamformer::enhance(c.mixture, masks(c.mixture));
  return {u.id, scene::snr_metrics(c.speech, c.noise, e.weights.w), e.speech_class};
}

Score score_weights(const dataset::Utterance& u, const Tensor& weights, const StftConfig& cfg) {
  const auto c = load_components(u, cfg);
  return {u.id, scene::snr_metrics(c.speech, c.noise, weights), 0};
}

Summary summarize(const std::vector<Score>& scores) {
  Summary s;
  s.count = scores.size();
  if (scores.empty()) return s;
  for (const auto& r : scores) {
    s.mean_input_db += r.snr.input_db.at(0);
    s.mean_output_db += r.snr.output_db;
    s.mean_gain_db += r.snr.gain_db;
    s.mean_gain_best_db += r.snr.gain_best_db;
  }
  const double n = static_cast<double>(scores.size());
  s.mean_input_db /= n;
  s.mean_output_db /= n;
  s.mean_gain_db /= n;
  s.mean_gain_best_db /= n;
  return s;
}

nlohmann::json to_json(const std::vector<Score>& scores, const Summary& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : scores) {
    auto j = scene::to_json(r.snr);
    j["id"] = r.id;
    j["speech_class"] = r.speech_class;
    rows.push_back(j);
  }
  return {{"utterances", rows},
          {"summary",
           {{"count", s.count},
            {"mean_input_snr_db", s.mean_input_db},
            {"mean_output_snr_db", s.mean_output_db},
            {"mean_gain_db", s.mean_gain_db},
            {"mean_gain_over_best_db", s.mean_gain_best_db}}}};
}

std::string table(const std::vector<Score>& scores, const Summary& s) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %10s %10s %10s %12s\n", "id", "in_db", "out_db", "gain_db", "gain_best_db");
  out += line;
  for (const auto& r : scores) {
    std::snprintf(line, sizeof line, "%-24s %10.3f %10.3f %10.3f %12.3f\n", r.id.c_str(), r.snr.input_db.at(0),
                  r.snr.output_db, r.snr.gain_db, r.snr.gain_best_db);
    out += line;
  }
  std::snprintf(line, sizeof line, "%-24s %10.3f %10.3f %10.3f %12.3f\n", "mean", s.mean_input_db, s.mean_output_db,
                s.mean_gain_db, s.mean_gain_best_db);
  out += line;
  return out;
}

}  // namespace beamlearn::evaluate
