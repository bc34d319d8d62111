#pragma once

// The detector: encoder -> decoder (masked reconstruction) and
// encoder -> head (benign/malicious logits). The baseline classifier shares
// the layout without a decoder.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madcat/data.hpp"
#include "madcat/errors.hpp"
#include "madcat/masking.hpp"
#include "madcat/numerics.hpp"
#include "madcat/rng.hpp"

namespace madcat {

/// Layer widths. The encoder ends at `latent`; the decoder mirrors it back to
/// `input_dim`; the head maps `latent` to two logits.
struct ArchConfig {
  int input_dim = 1159;
  std::vector<int> encoder_hidden{512};
  int latent = 256;
  std::vector<int> decoder_hidden{512};
  std::vector<int> head_hidden{64};

  void validate() const {
    if (input_dim <= 0 || latent <= 0) throw ConfigError("arch: dimensions must be positive");
    for (const auto* v : {&encoder_hidden, &decoder_hidden, &head_hidden})
      for (int s : *v)
        if (s <= 0) throw ConfigError("arch: hidden widths must be positive");
  }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

inline nlohmann::ordered_json to_json(const ArchConfig& a) {
  return {{"input_dim", a.input_dim},
          {"encoder_hidden", a.encoder_hidden},
          {"latent", a.latent},
          {"decoder_hidden", a.decoder_hidden},
          {"head_hidden", a.head_hidden}};
}

inline ArchConfig arch_from_json(const nlohmann::json& j, ArchConfig a = {}) {
  if (!j.is_object()) throw ConfigError("arch config must be an object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      if (k == "input_dim") a.input_dim = it->get<int>();
      else if (k == "encoder_hidden") a.encoder_hidden = it->get<std::vector<int>>();
      else if (k == "latent") a.latent = it->get<int>();
      else if (k == "decoder_hidden") a.decoder_hidden = it->get<std::vector<int>>();
      else if (k == "head_hidden") a.head_hidden = it->get<std::vector<int>>();
      else throw ConfigError("unknown arch key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("arch config: ") + e.what());
  }
  return a;
}

enum class ModelKind { madcat, baseline };

struct FreezeFlags {
  bool encoder = false;
  bool decoder = false;
  bool head = false;

  friend bool operator==(const FreezeFlags&, const FreezeFlags&) = default;
};

struct ModelBundle {
  ModelKind kind = ModelKind::madcat;
  ArchConfig arch;
  nn::DenseNet encoder;
  nn::DenseNet decoder;  // empty for the baseline
  nn::DenseNet head;
  FreezeFlags frozen;
  nn::OptimizerState encoder_opt;
  nn::OptimizerState decoder_opt;
  nn::OptimizerState head_opt;
  FillMode fill_mode = FillMode::half;
  double mask_fill = 0.5;  // trainable when fill_mode == learned
  std::uint64_t seed = 0;

  bool has_decoder() const { return !decoder.empty(); }

  friend bool operator==(const ModelBundle& a, const ModelBundle& b) {
    return a.kind == b.kind && a.arch == b.arch && a.encoder == b.encoder && a.decoder == b.decoder &&
           a.head == b.head && a.frozen == b.frozen && a.encoder_opt == b.encoder_opt &&
           a.decoder_opt == b.decoder_opt && a.head_opt == b.head_opt && a.fill_mode == b.fill_mode &&
           a.mask_fill == b.mask_fill && a.seed == b.seed;
  }
};

inline double fill_value(FillMode mode, double learned) {
  switch (mode) {
    case FillMode::half: return 0.5;
    case FillMode::zero: return 0.0;
    case FillMode::learned: return learned;
  }
  return 0.5;
}

namespace detail {

inline std::vector<int> chain(int first, const std::vector<int>& hidden, int last) {
  std::vector<int> sizes{first};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(last);
  return sizes;
}

inline std::vector<nn::Activation> acts(std::size_t n, nn::Activation last) {
  std::vector<nn::Activation> a(n - 1, nn::Activation::relu);
  a.push_back(last);
  return a;
}

}  // namespace detail

/// Freshly initialized detector. Sub-networks draw from independent streams
/// of `seed`.
inline ModelBundle build_madcat(const ArchConfig& arch, std::uint64_t seed,
                                const nn::OptimizerConfig& opt = {}, FillMode fill = FillMode::half) {
  arch.validate();
  ModelBundle b;
  b.kind = ModelKind::madcat;
  b.arch = arch;
  b.seed = seed;
  b.fill_mode = fill;
  b.mask_fill = 0.5;
  const auto enc = detail::chain(arch.input_dim, arch.encoder_hidden, arch.latent);
  const auto dec = detail::chain(arch.latent, arch.decoder_hidden, arch.input_dim);
  const auto head = detail::chain(arch.latent, arch.head_hidden, 2);
  Rng r_enc(seed, 1), r_dec(seed, 2), r_head(seed, 3);
  b.encoder = nn::DenseNet::kaiming(enc, detail::acts(enc.size() - 1, nn::Activation::relu), r_enc);
  b.decoder = nn::DenseNet::kaiming(dec, detail::acts(dec.size() - 1, nn::Activation::sigmoid), r_dec);
  b.head = nn::DenseNet::kaiming(head, detail::acts(head.size() - 1, nn::Activation::identity), r_head);
  b.encoder_opt = nn::OptimizerState::for_net(b.encoder, opt);
  b.decoder_opt = nn::OptimizerState::for_net(b.decoder, opt);
  b.head_opt = nn::OptimizerState::for_net(b.head, opt);
  return b;
}

/// Untrained baseline classifier: an encoder-shaped trunk plus head, no
/// decoder. Trained once end-to-end (see training.hpp) and then frozen.
inline ModelBundle build_baseline(const ArchConfig& arch, std::uint64_t seed, const nn::OptimizerConfig& opt = {}) {
  ModelBundle b = build_madcat(arch, seed, opt);
  b.kind = ModelKind::baseline;
  b.decoder = nn::DenseNet{};
  b.decoder_opt = nn::OptimizerState{};
  b.decoder_opt.config = opt;
  return b;
}

struct Prediction {
  int label = kBenign;
  double confidence = 0.5;
  double probabilities[2] = {0.5, 0.5};
};

/// Softmax over two logits; ties go to benign.
inline Prediction prediction_from_logits(double benign_logit, double malicious_logit) {
  if (!std::isfinite(benign_logit) || !std::isfinite(malicious_logit)) throw NumericError("non-finite logits");
  nn::Vector l(2);
  l << benign_logit, malicious_logit;
  const nn::Vector p = nn::softmax(l);
  Prediction pr;
  pr.probabilities[0] = p[0];
  pr.probabilities[1] = p[1];
  pr.label = p[1] > p[0] ? kMalicious : kBenign;
  pr.confidence = std::max(p[0], p[1]);
  return pr;
}

inline void check_input(const ModelBundle& b, Eigen::Index rows) {
  if (rows != b.arch.input_dim)
    throw DataError("input has " + std::to_string(rows) + " features, model expects " +
                    std::to_string(b.arch.input_dim));
}

inline nn::Vector encode(const ModelBundle& b, const nn::Vector& x) {
  check_input(b, x.size());
  return nn::apply(b.encoder, nn::Matrix(x)).col(0);
}

inline nn::Vector decode(const ModelBundle& b, const nn::Vector& latent) {
  if (!b.has_decoder()) throw ConfigError("model has no decoder");
  if (latent.size() != b.decoder.input_dim()) throw DataError("latent length does not match decoder input");
  return nn::apply(b.decoder, nn::Matrix(latent)).col(0);
}

/// Predictions for the columns of `x` (clean inputs, never masked).
inline std::vector<Prediction> classify_batch(const ModelBundle& b, const nn::Matrix& x) {
  check_input(b, x.rows());
  const nn::Matrix logits = nn::apply(b.head, nn::apply(b.encoder, x));
  std::vector<Prediction> out;
  out.reserve(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index c = 0; c < logits.cols(); ++c) out.push_back(prediction_from_logits(logits(0, c), logits(1, c)));
  return out;
}

inline Prediction classify(const ModelBundle& b, const nn::Vector& x) { return classify_batch(b, nn::Matrix(x))[0]; }

// ---------------------------------------------------------------------------
// Checkpoints: a versioned JSON document holding every parameter array,
// optimizer moments, freeze flags, the architecture and the seed. Doubles are
// written in shortest round-trip form, so save -> load -> save is
// byte-identical and load restores bit-identical parameters.

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::ordered_json matrix_json(const nn::Matrix& m) {
  std::vector<double> flat(m.data(), m.data() + m.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

inline nn::Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto flat = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != flat.size())
    throw DataError("checkpoint matrix size mismatch");
  nn::Matrix m(rows, cols);
  std::copy(flat.begin(), flat.end(), m.data());
  return m;
}

inline nlohmann::ordered_json net_json(const nn::DenseNet& net) {
  auto layers = nlohmann::ordered_json::array();
  for (const auto& l : net.layers())
    layers.push_back({{"activation", nn::to_string(l.activation)},
                      {"weight", matrix_json(l.weight)},
                      {"bias", matrix_json(nn::Matrix(l.bias))}});
  return layers;
}

inline nn::DenseNet net_from_json(const nlohmann::json& j) {
  std::vector<nn::Layer> layers;
  for (const auto& l : j) {
    nn::Matrix bias = matrix_from_json(l.at("bias"));
    if (bias.cols() != 1) throw DataError("checkpoint bias must be a column");
    layers.push_back(
        {matrix_from_json(l.at("weight")), bias.col(0), nn::activation_from_string(l.at("activation").get<std::string>())});
  }
  return nn::DenseNet(std::move(layers));
}

inline nlohmann::ordered_json optimizer_json(const nn::OptimizerState& s) {
  nlohmann::ordered_json j;
  j["method"] = nn::to_string(s.config.method);
  j["learning_rate"] = s.config.learning_rate;
  j["beta1"] = s.config.beta1;
  j["beta2"] = s.config.beta2;
  j["epsilon"] = s.config.epsilon;
  j["step"] = s.step;
  auto moments = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < s.m_weight.size(); ++i)
    moments.push_back({{"m_weight", matrix_json(s.m_weight[i])},
                       {"v_weight", matrix_json(s.v_weight[i])},
                       {"m_bias", matrix_json(nn::Matrix(s.m_bias[i]))},
                       {"v_bias", matrix_json(nn::Matrix(s.v_bias[i]))}});
  j["moments"] = moments;
  return j;
}

inline nn::OptimizerState optimizer_from_json(const nlohmann::json& j) {
  nn::OptimizerState s;
  try {
    s.config.method = nn::optimizer_from_string(j.at("method").get<std::string>());
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  s.config.learning_rate = j.at("learning_rate").get<double>();
  s.config.beta1 = j.at("beta1").get<double>();
  s.config.beta2 = j.at("beta2").get<double>();
  s.config.epsilon = j.at("epsilon").get<double>();
  s.step = j.at("step").get<std::uint64_t>();
  for (const auto& m : j.at("moments")) {
    s.m_weight.push_back(matrix_from_json(m.at("m_weight")));
    s.v_weight.push_back(matrix_from_json(m.at("v_weight")));
    s.m_bias.push_back(matrix_from_json(m.at("m_bias")).col(0));
    s.v_bias.push_back(matrix_from_json(m.at("v_bias")).col(0));
  }
  return s;
}

}  // namespace detail

inline std::string serialize_checkpoint(const ModelBundle& b) {
  nlohmann::ordered_json j;
  j["format"] = "madcat-checkpoint";
  j["version"] = kCheckpointVersion;
  j["kind"] = b.kind == ModelKind::madcat ? "madcat" : "baseline";
  j["seed"] = b.seed;
  j["arch"] = to_json(b.arch);
  j["fill_mode"] = to_string(b.fill_mode);
  j["mask_fill"] = b.mask_fill;
  j["frozen"] = {{"encoder", b.frozen.encoder}, {"decoder", b.frozen.decoder}, {"head", b.frozen.head}};
  j["networks"] = {{"encoder", detail::net_json(b.encoder)},
                   {"decoder", detail::net_json(b.decoder)},
                   {"head", detail::net_json(b.head)}};
  j["optimizers"] = {{"encoder", detail::optimizer_json(b.encoder_opt)},
                     {"decoder", detail::optimizer_json(b.decoder_opt)},
                     {"head", detail::optimizer_json(b.head_opt)}};
  return j.dump() + "\n";
}

inline ModelBundle parse_checkpoint(std::string_view text) {
  ModelBundle b;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.value("format", "") != "madcat-checkpoint") throw DataError("not a madcat checkpoint");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) throw DataError("unknown checkpoint version " + std::to_string(version));
    const auto kind = j.at("kind").get<std::string>();
    if (kind != "madcat" && kind != "baseline") throw DataError("unknown checkpoint kind '" + kind + "'");
    b.kind = kind == "madcat" ? ModelKind::madcat : ModelKind::baseline;
    b.seed = j.at("seed").get<std::uint64_t>();
    try {
      b.arch = arch_from_json(j.at("arch"));
      b.fill_mode = fill_mode_from_string(j.at("fill_mode").get<std::string>());
    } catch (const ConfigError& e) {
      throw DataError(e.what());
    }
    b.mask_fill = j.at("mask_fill").get<double>();
    const auto& f = j.at("frozen");
    b.frozen = {f.at("encoder").get<bool>(), f.at("decoder").get<bool>(), f.at("head").get<bool>()};
    const auto& nets = j.at("networks");
    b.encoder = detail::net_from_json(nets.at("encoder"));
    b.decoder = detail::net_from_json(nets.at("decoder"));
    b.head = detail::net_from_json(nets.at("head"));
    const auto& opts = j.at("optimizers");
    b.encoder_opt = detail::optimizer_from_json(opts.at("encoder"));
    b.decoder_opt = detail::optimizer_from_json(opts.at("decoder"));
    b.head_opt = detail::optimizer_from_json(opts.at("head"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint: ") + e.what());
  }
  if (b.encoder.input_dim() != b.arch.input_dim || b.head.input_dim() != b.encoder.output_dim() ||
      (b.has_decoder() && b.decoder.input_dim() != b.encoder.output_dim()))
    throw DataError("checkpoint networks do not chain");
  return b;
}

inline void save_checkpoint(const ModelBundle& b, const std::string& path) {
  detail::write_all(path, serialize_checkpoint(b));
}

inline ModelBundle load_checkpoint(const std::string& path) { return parse_checkpoint(detail::read_all(path)); }

}  // namespace madcat
