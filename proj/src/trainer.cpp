#include "beamlearn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace beamlearn::trainer {

using mixture::Likelihood;
namespace graph = mixture::graph;

LossVariant parse_variant(const std::string& s) {
  if (s == "ml" || s == "ml_gamma0") return LossVariant::ml_gamma0;
  if (s == "ml_gamma") return LossVariant::ml_gamma;
  if (s == "ml_equal") return LossVariant::ml_equal;
  if (s == "aux_gamma0") return LossVariant::aux_gamma0;
  if (s == "aux_gamma") return LossVariant::aux_gamma;
  throw std::invalid_argument("unknown loss variant '" + s +
                              "' (expected ml, ml_gamma0, ml_gamma, ml_equal, aux_gamma0, aux_gamma)");
}

std::string to_string(LossVariant v) {
  switch (v) {
    case LossVariant::ml_gamma0: return "ml_gamma0";
    case LossVariant::ml_gamma: return "ml_gamma";
    case LossVariant::ml_equal: return "ml_equal";
    case LossVariant::aux_gamma0: return "aux_gamma0";
    case LossVariant::aux_gamma: return "aux_gamma";
  }
  return "?";
}

namespace {

std::size_t as_count(const io::Config& c, const std::string& key, std::size_t fallback) {
  const long long v = c.get(key, static_cast<long long>(fallback));
  if (v < 0) throw io::ConfigError(key + " must be >= 0");
  return static_cast<std::size_t>(v);
}

}  // namespace

TrainConfig TrainConfig::from(const io::Config& c) {
  TrainConfig t;
  try {
    t.variant = parse_variant(c.get("loss_variant", to_string(t.variant)));
    t.net.activation = masknet::parse_activation(c.get("activation", masknet::to_string(t.net.activation)));
  } catch (const io::ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw io::ConfigError(e.what());
  }
  t.lr = c.get("lr", t.lr);
  t.beta1 = c.get("beta1", t.beta1);
  t.beta2 = c.get("beta2", t.beta2);
  t.adam_eps = c.get("adam_eps", t.adam_eps);
  t.clip = c.get("clip", t.clip);
  t.weight_decay = c.get("weight_decay", t.weight_decay);
  t.steps = as_count(c, "steps", t.steps);
  t.accumulate = as_count(c, "batch", t.accumulate);
  t.pa_interval = as_count(c, "pa_interval", t.pa_interval);
  t.pa_utterances = as_count(c, "pa_utterances", t.pa_utterances);
  t.seed = static_cast<std::uint64_t>(c.get("seed", 0LL));
  t.net.seed = t.seed;
  t.net.hidden = as_count(c, "hidden", t.net.hidden);
  t.net.dense = as_count(c, "dense", t.net.dense);
  t.extra_em_step = c.get("extra_em_step", t.extra_em_step);
  const auto unknown = c.unused();
  if (!unknown.empty()) {
    std::string msg = "unknown training key(s):";
    for (const auto& k : unknown) msg += " " + k;
    throw io::ConfigError(msg);
  }
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw io::ConfigError(e.what());
  }
  return t;
}

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("step count must be >= 1");
  if (accumulate < 1) throw std::invalid_argument("batch must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("beta1 and beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be positive");
  if (clip < 0.0 || weight_decay < 0.0) throw std::invalid_argument("clip and weight_decay must be >= 0");
  if (pa_interval > 0 && pa_utterances < 1) throw std::invalid_argument("pa_utterances must be >= 1");
  if (net.hidden < 1 || net.dense < 1) throw std::invalid_argument("hidden and dense must be >= 1");
}

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// (t, f) cells where any class of a (K, T, F) tensor is not finite.
void collect_culprits(const Tensor& ktf, std::vector<std::pair<std::size_t, std::size_t>>& out) {
  const std::size_t K = ktf.dim(0), T = ktf.dim(1), F = ktf.dim(2);
  const auto v = ktf.real_data();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t k = 0; k < K; ++k)
        if (!std::isfinite(v[(k * T + t) * F + f])) {
          out.emplace_back(t, f);
          break;
        }
}

}  // namespace

StepResult training_step(const masknet::MaskNet& net, const Tensor& spec, LossVariant variant) {
  if (spec.rank() != 3 || !spec.is_complex()) throw std::invalid_argument("training_step: expected complex (D, T, F)");
  if (spec.dim(0) < 2) throw std::invalid_argument("training_step: need at least 2 channels, got " +
                                                   std::to_string(spec.dim(0)));
  const std::size_t T = spec.dim(1), F = spec.dim(2);
  StepResult r;
  ad::Tape tape;
  const auto vars = masknet::attach(tape, net);
  const auto y = tape.constant(mixture::normalize(spec));

  ad::Var gamma0, lp, loss;
  graph::Params p;
  try {
    gamma0 = masknet::pooled_affiliations(masknet::forward(net, vars, spec), net.config.activation);
    p = graph::m_step(y, gamma0);
    lp = graph::log_densities(y, p.B);
    const auto gamma = graph::posterior(lp, p.pi);
    ad::Var ll;
    switch (variant) {
      case LossVariant::ml_gamma0: ll = graph::log_likelihood_from(lp, p.pi, Likelihood::ml); break;
      case LossVariant::ml_equal: ll = graph::log_likelihood_from(lp, p.pi, Likelihood::ml_equal); break;
      case LossVariant::aux_gamma0:
        ll = graph::log_likelihood_from(lp, p.pi, Likelihood::auxiliary, gamma0);
        break;
      case LossVariant::aux_gamma:
        ll = graph::log_likelihood_from(lp, p.pi, Likelihood::auxiliary, gamma);
        break;
      case LossVariant::ml_gamma: {
        p = graph::m_step(y, gamma);
        ll = graph::log_likelihood_from(graph::log_densities(y, p.B), p.pi, Likelihood::ml);
        break;
      }
    }
    r.gamma0 = gamma0.value();
    r.gamma = gamma.value();
    r.params = {p.pi.value(), p.B.value()};
    r.log_likelihood = ll.value().item();
    loss = ad::scale(ll, -1.0 / static_cast<double>(T * F));
    r.loss = loss.value().item();
  } catch (const NumericalError& e) {
    r.ok = false;
    r.reason = e.what();
    if (lp.valid()) collect_culprits(lp.value(), r.culprits);
    return r;
  }

  if (!std::isfinite(r.loss)) {
    r.ok = false;
    r.reason = "non-finite loss";
    collect_culprits(lp.value(), r.culprits);
    if (r.culprits.empty()) collect_culprits(gamma0.value(), r.culprits);
    return r;
  }

  const auto g = tape.backward(loss);
  r.grads.reserve(vars.size());
  for (const auto& v : vars) r.grads.push_back(g.at(v.id()));
  for (const auto& gr : r.grads)
    if (!all_finite(gr.real_data())) {
      r.ok = false;
      r.reason = "non-finite gradient";
      collect_culprits(lp.value(), r.culprits);
      break;
    }
  return r;
}

StepResult batch_step(const masknet::MaskNet& net, std::span<const Tensor> specs, LossVariant variant) {
  if (specs.empty()) throw std::invalid_argument("batch_step: empty batch");
  StepResult total;
  double loss = 0.0, ll = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto r = training_step(net, specs[i], variant);
    if (!r.ok) return r;
    loss += r.loss;
    ll += r.log_likelihood;
    if (i == 0) {
      total = std::move(r);
      continue;
    }
    for (std::size_t j = 0; j < total.grads.size(); ++j) {
      auto dst = total.grads[j].real_data();
      const auto src = r.grads[j].real_data();
      for (std::size_t n = 0; n < dst.size(); ++n) dst[n] += src[n];
    }
  }
  const double n = static_cast<double>(specs.size());
  total.loss = loss / n;
  total.log_likelihood = ll / n;
  return total;
}

Adam::Adam(const TrainConfig& cfg, const masknet::MaskNet& net)
    : lr_(cfg.lr), b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.adam_eps), clip_(cfg.clip), decay_(cfg.weight_decay) {
  for (const auto& p : net.params) {
    m_.push_back(Tensor::zeros_like(p));
    v_.push_back(Tensor::zeros_like(p));
  }
}

double Adam::update(masknet::MaskNet& net, std::vector<Tensor> grads) {
  if (grads.size() != net.params.size()) throw std::invalid_argument("Adam::update: gradient count mismatch");
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g.real_data()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("Adam::update: non-finite gradient norm");
  const double s = clip_ > 0.0 && norm > clip_ ? clip_ / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto w = net.params[i].real_data();
    const auto g = grads[i].real_data();
    auto m = m_[i].real_data();
    auto v = v_[i].real_data();
    for (std::size_t n = 0; n < w.size(); ++n) {
      const double gi = s * g[n] + decay_ * w[n];
      m[n] = b1_ * m[n] + (1.0 - b1_) * gi;
      v[n] = b2_ * v[n] + (1.0 - b2_) * gi * gi;
      w[n] -= lr_ * (m[n] / c1) / (std::sqrt(v[n] / c2) + eps_);
    }
  }
  return norm;
}

void Adam::permute_output(const masknet::MaskNet& net, const mixture::PermutationMap& perm) {
  const auto iw = net.index("out.W"), ib = net.index("out.b");
  masknet::permute_output_columns(m_[iw], m_[ib], perm);
  masknet::permute_output_columns(v_[iw], v_[ib], perm);
}

double TrainReport::smoothed_start(double fraction) const {
  if (losses.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(losses.size())));
  return std::accumulate(losses.begin(), losses.begin() + static_cast<std::ptrdiff_t>(n), 0.0) / static_cast<double>(n);
}

double TrainReport::smoothed_end(double fraction) const {
  if (losses.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(losses.size())));
  return std::accumulate(losses.end() - static_cast<std::ptrdiff_t>(n), losses.end(), 0.0) / static_cast<double>(n);
}

namespace {

Tensor concat_time(const std::vector<Tensor>& parts) {
  const std::size_t K = parts[0].dim(0), F = parts[0].dim(2);
  std::size_t T = 0;
  for (const auto& p : parts) T += p.dim(1);
  Tensor out(DType::real64, {K, T, F});
  auto o = out.real_data();
  std::size_t t0 = 0;
  for (const auto& p : parts) {
    const auto v = p.real_data();
    const std::size_t Tp = p.dim(1);
    for (std::size_t k = 0; k < K; ++k)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(k * Tp * F), Tp * F,
                  o.begin() + static_cast<std::ptrdiff_t>((k * T + t0) * F));
    t0 += Tp;
  }
  return out;
}

}  // namespace

TrainReport train(masknet::MaskNet& net, std::size_t count, const UtteranceLoader& load, const TrainConfig& cfg,
                  const ProgressFn& progress) {
  cfg.validate();
  if (count == 0) throw std::invalid_argument("train: empty manifest");
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  Adam adam(cfg, net);
  std::mt19937_64 order_rng(cfg.seed ^ 0x5eedf00dULL);
  std::mt19937_64 pa_rng(cfg.seed ^ 0xa11a11ULL);
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), order_rng);
  std::size_t cursor = 0;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<Tensor> batch;
    for (std::size_t i = 0; i < cfg.accumulate; ++i) {
      if (cursor == count) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      batch.push_back(load(order[cursor++]));
    }
    const auto r = batch_step(net, batch, cfg.variant);
    if (r.ok) {
      adam.update(net, r.grads);
      report.losses.push_back(r.loss);
      report.log_likelihoods.push_back(r.log_likelihood);
      if (progress) progress(step, r.loss);
    } else {
      ++report.rejected;
    }
    const std::size_t attempted = step + 1;
    if (2 * report.rejected >= attempted && attempted >= std::min<std::size_t>(10, cfg.steps)) {
      report.aborted = true;
      break;
    }

    if (cfg.pa_interval > 0 && attempted % cfg.pa_interval == 0) {
      std::vector<Tensor> parts;
      std::uniform_int_distribution<std::size_t> pick(0, count - 1);
      for (std::size_t i = 0; i < cfg.pa_utterances; ++i) {
        const auto pooled = masknet::pool(masknet::forward(net, load(pick(pa_rng))), masknet::Pooling::mean,
                                          net.config.activation);
        parts.push_back(masknet::to_affiliations(pooled, net.config.activation));
      }
      const auto aligned = mixture::permutation_align(concat_time(parts));
      PermutationFix fix{attempted, 0};
      for (const auto& pf : aligned.perm)
        for (std::size_t k = 0; k < pf.size(); ++k)
          if (pf[k] != k) {
            ++fix.changed;
            break;
          }
      if (fix.changed > 0) {
        masknet::permute_output_weights(net, aligned.perm);
        adam.permute_output(net, aligned.perm);
      }
      report.permutation_fixes.push_back(fix);
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

Tensor infer_masks(const masknet::MaskNet& net, const Tensor& spec, bool extra_em_step, masknet::Pooling pooling) {
  const auto act = net.config.activation;
  const auto pooled = masknet::pool(masknet::forward(net, spec), pooling, act);
  auto gamma = masknet::to_affiliations(pooled, act);
  if (!extra_em_step) return gamma;
  const auto y = mixture::normalize(spec);
  return mixture::e_step(y, mixture::m_step(y, gamma));
}

nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json fixes = nlohmann::json::array();
  for (const auto& f : r.permutation_fixes) fixes.push_back({{"step", f.step}, {"changed", f.changed}});
  return {{"losses", r.losses},
          {"log_likelihoods", r.log_likelihoods},
          {"permutation_fixes", fixes},
          {"rejected", r.rejected},
          {"aborted", r.aborted},
          {"seconds", r.seconds},
          {"smoothed_start", r.smoothed_start()},
          {"smoothed_end", r.smoothed_end()},
          {"checkpoint", r.checkpoint}};
}

}  // namespace beamlearn::trainer
