#include "beamlearn/masknet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <random>
#include <stdexcept>

#include "beamlearn/io.hpp"

namespace beamlearn::masknet {

namespace {

struct Layout {
  std::string name;
  Shape shape;
  std::size_t fan_in;
};

std::vector<Layout> layout(const MaskNetConfig& c) {
  const std::size_t F = c.bins, H = c.hidden, G = 4 * c.hidden, N = c.dense, O = c.classes * c.bins;
  return {
      {"blstm.fwd.W", {F, G}, F}, {"blstm.fwd.b", {G}, F},    {"blstm.fwd.U", {H, G}, H},
      {"blstm.bwd.W", {F, G}, F}, {"blstm.bwd.b", {G}, F},    {"blstm.bwd.U", {H, G}, H},
      {"dense1.W", {2 * H, N}, 2 * H}, {"dense1.b", {N}, 2 * H}, {"dense2.W", {N, N}, N},
      {"dense2.b", {N}, N},       {"out.W", {N, O}, N},      {"out.b", {O}, N},
  };
}

void check_config(const MaskNetConfig& c) {
  if (c.bins == 0 || c.hidden == 0 || c.dense == 0) throw std::invalid_argument("mask network: sizes must be positive");
  if (c.classes < 2) throw std::invalid_argument("mask network: at least two classes are needed");
}

}  // namespace

Activation parse_activation(const std::string& s) {
  if (s == "softmax") return Activation::softmax;
  if (s == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation '" + s + "' (softmax | sigmoid)");
}

std::string to_string(Activation a) { return a == Activation::softmax ? "softmax" : "sigmoid"; }

Pooling parse_pooling(const std::string& s) {
  if (s == "mean") return Pooling::mean;
  if (s == "median") return Pooling::median;
  throw std::invalid_argument("unknown pooling '" + s + "' (mean | median)");
}

MaskNet MaskNet::init(const MaskNetConfig& cfg) {
  check_config(cfg);
  MaskNet net;
  net.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  for (const auto& l : layout(cfg)) {
    const double a = 1.0 / std::sqrt(static_cast<double>(l.fan_in));
    std::uniform_real_distribution<double> u(-a, a);
    Tensor t(DType::real64, l.shape);
    for (auto& v : t.real_data()) v = u(rng);
    net.names.push_back(l.name);
    net.params.push_back(std::move(t));
  }
  return net;
}

std::size_t MaskNet::index(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::out_of_range("mask network has no parameter '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

Tensor& MaskNet::param(const std::string& name) { return params[index(name)]; }
const Tensor& MaskNet::param(const std::string& name) const { return params[index(name)]; }

std::size_t MaskNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

Tensor features(const Tensor& spec) {
  require_dtype(spec, DType::complex128, "features spectrogram");
  require_rank(spec, 3, "features spectrogram");
  const std::size_t D = spec.dim(0), T = spec.dim(1), F = spec.dim(2);
  Tensor out(DType::real64, {T, D, F});
  auto y = spec.complex_data();
  auto x = out.real_data();
  const double n = static_cast<double>(T * F);
  for (std::size_t d = 0; d < D; ++d) {
    double mean = 0.0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < F; ++f) {
        const double v = std::log(std::norm(y[(d * T + t) * F + f]) + kPowerFloor);
        x[(t * D + d) * F + f] = v;
        mean += v;
      }
    mean /= n;
    double var = 0.0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < F; ++f) var += (x[(t * D + d) * F + f] - mean) * (x[(t * D + d) * F + f] - mean);
    const double sd = std::sqrt(var / n);
    const double inv = sd > 1e-8 ? 1.0 / sd : 0.0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < F; ++f) x[(t * D + d) * F + f] = (x[(t * D + d) * F + f] - mean) * inv;
  }
  return out;
}

std::vector<ad::Var> attach(ad::Tape& tape, const MaskNet& net) {
  std::vector<ad::Var> out;
  out.reserve(net.params.size());
  for (const auto& p : net.params) out.push_back(tape.parameter(p));
  return out;
}

ad::Var forward(const MaskNet& net, std::span<const ad::Var> p, const Tensor& spec) {
  const auto& c = net.config;
  if (p.size() != net.params.size()) throw std::invalid_argument("forward: parameter count mismatch");
  require_rank(spec, 3, "forward spectrogram");
  const std::size_t D = spec.dim(0), T = spec.dim(1), F = spec.dim(2), H = c.hidden, K = c.classes;
  if (F != c.bins)
    throw ShapeError("forward: spectrogram has " + std::to_string(F) + " bins, network expects " +
                     std::to_string(c.bins));
  ad::Tape& tape = p[0].tape();
  ad::Var x = tape.constant(features(spec).reshaped({T * D, F}));

  auto direction = [&](std::size_t base, bool reverse) {
    ad::Var pre = ad::reshape(ad::linear(x, p[base], p[base + 1]), {T, D, 4 * H});
    return ad::lstm(pre, p[base + 2], reverse);
  };
  ad::Var parts[2] = {direction(0, false), direction(3, true)};
  ad::Var h = ad::reshape(ad::concat(parts, 2), {T * D, 2 * H});
  h = ad::relu(ad::linear(h, p[6], p[7]));
  h = ad::relu(ad::linear(h, p[8], p[9]));
  ad::Var o = ad::reshape(ad::linear(h, p[10], p[11]), {T, D, K, F});
  o = c.activation == Activation::softmax ? ad::softmax(o, 2) : ad::sigmoid(o);
  return ad::permute(o, {1, 2, 0, 3});
}

Tensor forward(const MaskNet& net, const Tensor& spec) {
  ad::Tape tape;
  std::vector<ad::Var> p;
  for (const auto& t : net.params) p.push_back(tape.constant(t));
  return forward(net, p, spec).value();
}

Tensor pool(const Tensor& x, Pooling mode, Activation activation) {
  require_dtype(x, DType::real64, "pool input");
  require_rank(x, 4, "pool input");
  const std::size_t D = x.dim(0), K = x.dim(1), T = x.dim(2), F = x.dim(3), n = K * T * F;
  if (D == 0) throw ShapeError("pool: no channels");
  Tensor out(DType::real64, {K, T, F});
  auto in = x.real_data();
  auto o = out.real_data();
  if (mode == Pooling::mean) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t d = 0; d < D; ++d) s += in[d * n + i];
      o[i] = s / static_cast<double>(D);
    }
    return out;
  }
  std::vector<double> v(D);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < D; ++d) v[d] = in[d * n + i];
    std::sort(v.begin(), v.end());
    o[i] = D % 2 ? v[D / 2] : 0.5 * (v[D / 2 - 1] + v[D / 2]);
  }
  if (activation == Activation::softmax && D > 1) {
    for (std::size_t i = 0; i < T * F; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += o[k * T * F + i];
      if (s > 0.0)
        for (std::size_t k = 0; k < K; ++k) o[k * T * F + i] /= s;
    }
  }
  return out;
}

Tensor to_affiliations(const Tensor& pooled, Activation activation) {
  require_rank(pooled, 3, "to_affiliations input");
  if (activation == Activation::softmax) return pooled;
  const std::size_t K = pooled.dim(0), n = pooled.dim(1) * pooled.dim(2);
  Tensor out = pooled;
  auto o = out.real_data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = kRenormEps;
    for (std::size_t k = 0; k < K; ++k) s += o[k * n + i];
    for (std::size_t k = 0; k < K; ++k) o[k * n + i] /= s;
  }
  return out;
}

ad::Var pooled_affiliations(ad::Var per_channel, Activation activation) {
  ad::Var m = ad::mean(per_channel, 0);
  return activation == Activation::softmax ? m : ad::normalize_sum(m, 0, kRenormEps);
}

void permute_output_columns(Tensor& W, Tensor& b, const mixture::PermutationMap& perm) {
  require_rank(W, 2, "output weights");
  const std::size_t F = perm.size();
  const std::size_t K = F ? perm[0].size() : 0;
  mixture::validate_permutation(perm, K, F);
  const std::size_t rows = W.dim(0), O = K * F;
  require_shape(W, {rows, O}, "output weights");
  require_shape(b, {O}, "output bias");
  Tensor W2 = W, b2 = b;
  auto src = W.real_data();
  auto dst = W2.real_data();
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t to = k * F + f, from = perm[f][k] * F + f;
      for (std::size_t r = 0; r < rows; ++r) dst[r * O + to] = src[r * O + from];
      b2.real_data()[to] = b.real_data()[from];
    }
  W = std::move(W2);
  b = std::move(b2);
}

void permute_output_weights(MaskNet& net, const mixture::PermutationMap& perm) {
  mixture::validate_permutation(perm, net.config.classes, net.config.bins);
  permute_output_columns(net.param("out.W"), net.param("out.b"), perm);
}

void save_checkpoint(const std::filesystem::path& dir, const MaskNet& net) {
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["format"] = "beamlearn-masknet";
  m["version"] = 1;
  m["bins"] = net.config.bins;
  m["hidden"] = net.config.hidden;
  m["dense"] = net.config.dense;
  m["classes"] = net.config.classes;
  m["activation"] = to_string(net.config.activation);
  m["seed"] = net.config.seed;
  m["layers"] = nlohmann::json::array();
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    const std::string file = net.names[i] + ".btf";
    io::write_tensor(dir / file, net.params[i]);
    m["layers"].push_back({{"name", net.names[i]}, {"shape", net.params[i].shape()}, {"file", file}});
  }
  std::ofstream f(dir / "manifest.json");
  f << m.dump(2) << '\n';
  if (!f) throw std::runtime_error((dir / "manifest.json").string() + ": write failed");
}

MaskNet load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw std::runtime_error(dir.string() + ": no manifest.json (not a checkpoint directory)");
  nlohmann::json m;
  try {
    f >> m;
    if (m.at("format") != "beamlearn-masknet") throw io::FormatError(dir.string() + ": unexpected checkpoint format");
    MaskNetConfig c;
    c.bins = m.at("bins");
    c.hidden = m.at("hidden");
    c.dense = m.at("dense");
    c.classes = m.at("classes");
    c.activation = parse_activation(m.at("activation"));
    c.seed = m.at("seed");
    MaskNet net = MaskNet::init(c);
    const auto& layers = m.at("layers");
    if (layers.size() != net.params.size()) throw io::FormatError(dir.string() + ": layer count mismatch");
    for (const auto& l : layers) {
      const std::size_t i = net.index(l.at("name"));
      Tensor t = io::read_tensor(dir / l.at("file").get<std::string>());
      require_shape(t, net.params[i].shape(), net.names[i]);
      net.params[i] = std::move(t);
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw io::FormatError(dir.string() + ": malformed manifest: " + e.what());
  }
}

}  // namespace beamlearn::masknet
