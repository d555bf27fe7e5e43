#pragma once

// Encoders and classification heads shared by the student and both teachers.
//
// The conv encoder is a TextCNN: one bank of `channels_per_kernel` filters per
// kernel width, each followed by ReLU and max-over-time pooling, with the
// pooled banks concatenated into the feature vector. The mlp encoder is a
// stack of fully connected ReLU layers over a flat embedding.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dtdbd/autodiff.hpp"
#include "dtdbd/tensor.hpp"

namespace dtdbd {

enum class EncoderKind { conv, mlp };

inline const char* to_string(EncoderKind k) { return k == EncoderKind::conv ? "conv" : "mlp"; }

inline EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "conv") return EncoderKind::conv;
  if (s == "mlp") return EncoderKind::mlp;
  throw ConfigError("unknown encoder kind '" + s + "'");
}

struct EncoderConfig {
  EncoderKind kind = EncoderKind::conv;
  /// Token width for conv, flat input width for mlp.
  std::size_t embed_dim = 4;
  /// conv only: number of tokens a flat feature vector is split into.
  std::size_t seq_len = 8;
  std::vector<std::size_t> kernel_widths{1, 2, 3, 5};
  std::size_t channels_per_kernel = 64;
  std::vector<std::size_t> mlp_hidden{384};
  /// When non-zero, a learned per-domain vector of this length is appended to
  /// the features before the label head (domain-aware clean teacher).
  std::size_t domain_embedding = 0;

  std::size_t feature_dim() const {
    return kind == EncoderKind::conv ? channels_per_kernel * kernel_widths.size()
                                     : mlp_hidden.back();
  }

  /// Length of one sample's features when stored flat.
  std::size_t input_size() const { return kind == EncoderKind::conv ? seq_len * embed_dim : embed_dim; }

  std::size_t max_kernel_width() const {
    std::size_t m = 0;
    for (auto w : kernel_widths) m = std::max(m, w);
    return m;
  }

  void validate() const {
    if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
    if (kind == EncoderKind::conv) {
      if (kernel_widths.empty()) throw ConfigError("conv encoder needs at least one kernel width");
      for (auto w : kernel_widths)
        if (w == 0) throw ConfigError("kernel widths must be positive");
      if (channels_per_kernel == 0) throw ConfigError("channels_per_kernel must be positive");
      if (seq_len < max_kernel_width())
        throw ConfigError("seq_len " + std::to_string(seq_len) + " shorter than widest kernel");
    } else {
      if (mlp_hidden.empty()) throw ConfigError("mlp encoder needs at least one hidden layer");
      for (auto h : mlp_hidden)
        if (h == 0) throw ConfigError("mlp hidden sizes must be positive");
    }
  }

  /// Structural equality ignoring the label-head extension.
  bool same_encoder(const EncoderConfig& o) const {
    if (kind != o.kind || embed_dim != o.embed_dim) return false;
    if (kind == EncoderKind::conv)
      return seq_len == o.seq_len && kernel_widths == o.kernel_widths &&
             channels_per_kernel == o.channels_per_kernel;
    return mlp_hidden == o.mlp_hidden;
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Domain-aware stand-in for a large multi-domain detector: the student's
/// encoder with doubled channels plus a 32-wide domain embedding.
inline EncoderConfig clean_teacher_config(const EncoderConfig& student) {
  EncoderConfig c = student;
  if (c.kind == EncoderKind::conv)
    c.channels_per_kernel *= 2;
  else
    for (auto& h : c.mlp_hidden) h *= 2;
  c.domain_embedding = 32;
  return c;
}

namespace param_names {
inline std::string conv_weight(std::size_t i) { return "encoder.conv" + std::to_string(i) + ".weight"; }
inline std::string conv_bias(std::size_t i) { return "encoder.conv" + std::to_string(i) + ".bias"; }
inline std::string fc_weight(std::size_t i) { return "encoder.fc" + std::to_string(i) + ".weight"; }
inline std::string fc_bias(std::size_t i) { return "encoder.fc" + std::to_string(i) + ".bias"; }
inline const std::string label_weight = "label_head.weight";
inline const std::string label_bias = "label_head.bias";
inline const std::string domain_weight = "domain_head.weight";
inline const std::string domain_bias = "domain_head.bias";
inline const std::string domain_embedding = "domain_embedding";
}  // namespace param_names

struct ModelParams {
  EncoderConfig config;
  std::size_t num_domains = 0;
  std::uint64_t seed = 0;
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ContractError("missing parameter '" + name + "'");
    return it->second;
  }

  /// Order-sensitive FNV-1a hash over names and raw bits; equal iff (almost
  /// surely) bit-identical.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
      }
    };
    for (const auto& [name, t] : tensors) {
      mix(name.data(), name.size());
      mix(t.values().data(), t.size() * sizeof(double));
    }
    return h;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Glorot-uniform weights, zero biases; deterministic in `seed`.
inline ModelParams init_params(const EncoderConfig& config, std::size_t num_domains,
                               std::uint64_t seed) {
  config.validate();
  if (num_domains < 2) throw ConfigError("num_domains must be at least 2");
  ModelParams p{config, num_domains, seed, {}};
  std::mt19937_64 rng(seed);
  auto glorot = [&](const std::string& name, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w({fan_in, fan_out}, 0.0);
    for (auto& v : w.data()) v = u(rng);
    p.tensors.emplace(name, std::move(w));
  };
  auto zeros = [&](const std::string& name, std::size_t n) { p.tensors.emplace(name, Tensor({n}, 0.0)); };

  if (config.kind == EncoderKind::conv) {
    for (std::size_t i = 0; i < config.kernel_widths.size(); ++i) {
      glorot(param_names::conv_weight(i), config.kernel_widths[i] * config.embed_dim,
             config.channels_per_kernel);
      zeros(param_names::conv_bias(i), config.channels_per_kernel);
    }
  } else {
    std::size_t in = config.embed_dim;
    for (std::size_t i = 0; i < config.mlp_hidden.size(); ++i) {
      glorot(param_names::fc_weight(i), in, config.mlp_hidden[i]);
      zeros(param_names::fc_bias(i), config.mlp_hidden[i]);
      in = config.mlp_hidden[i];
    }
  }
  const std::size_t f = config.feature_dim();
  if (config.domain_embedding > 0)
    glorot(param_names::domain_embedding, num_domains, config.domain_embedding);
  glorot(param_names::label_weight, f + config.domain_embedding, 2);
  zeros(param_names::label_bias, 2);
  glorot(param_names::domain_weight, f, num_domains);
  zeros(param_names::domain_bias, num_domains);
  return p;
}

/// Parameters lifted into graph leaves. Trainable bindings report gradients
/// under the parameter's name; frozen bindings are constants.
class BoundParams {
 public:
  BoundParams(const ModelParams& p, bool trainable) : params_(&p) {
    for (const auto& [name, t] : p.tensors)
      vars_.emplace(name, trainable ? ad::Var::param(name, t) : ad::Var::constant(t));
  }
  // Holds a pointer to the parameters; temporaries would dangle.
  BoundParams(ModelParams&&, bool) = delete;

  const ad::Var& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ContractError("missing parameter '" + name + "'");
    return it->second;
  }

  const ModelParams& params() const { return *params_; }
  const EncoderConfig& config() const { return params_->config; }

 private:
  const ModelParams* params_;
  std::map<std::string, ad::Var> vars_;
};

/// Batched encoder. `input` is [B, L, E] for conv and [B, E] for mlp.
inline ad::Var encode(const BoundParams& bp, const ad::Var& input) {
  const auto& cfg = bp.config();
  if (cfg.kind == EncoderKind::conv) {
    if (input.value().rank() != 3 || input.dim(2) != cfg.embed_dim)
      throw ShapeError("conv encoder expects [B, L, " + std::to_string(cfg.embed_dim) + "], got " +
                       shape_str(input.shape()));
    if (input.dim(1) < cfg.max_kernel_width())
      throw ShapeError("sequence length " + std::to_string(input.dim(1)) +
                       " shorter than widest kernel " + std::to_string(cfg.max_kernel_width()));
    std::vector<ad::Var> pooled;
    pooled.reserve(cfg.kernel_widths.size());
    for (std::size_t i = 0; i < cfg.kernel_widths.size(); ++i) {
      auto c = ad::conv1d(input, bp[param_names::conv_weight(i)], bp[param_names::conv_bias(i)]);
      pooled.push_back(ad::max_over_time(ad::relu(c)));
    }
    return pooled.size() == 1 ? pooled.front() : ad::concat_cols(pooled);
  }
  if (input.value().rank() != 2 || input.dim(1) != cfg.embed_dim)
    throw ShapeError("mlp encoder expects [B, " + std::to_string(cfg.embed_dim) + "], got " +
                     shape_str(input.shape()));
  ad::Var h = input;
  for (std::size_t i = 0; i < cfg.mlp_hidden.size(); ++i)
    h = ad::relu(ad::add_bias(ad::matmul(h, bp[param_names::fc_weight(i)]), bp[param_names::fc_bias(i)]));
  return h;
}

/// Affine head: raw logits f * W + b, no softmax.
inline ad::Var classify(const ad::Var& weight, const ad::Var& bias, const ad::Var& features) {
  if (features.value().rank() != 2 || features.dim(1) != weight.dim(0))
    throw ShapeError("classify: features " + shape_str(features.shape()) +
                     " do not match head input " + std::to_string(weight.dim(0)));
  return ad::add_bias(ad::matmul(features, weight), bias);
}

/// One-hot [B, K] rows for domain ids.
inline Tensor one_hot(const std::vector<int>& ids, std::size_t k) {
  Tensor t({ids.size(), k}, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= k)
      throw InputError("id " + std::to_string(ids[i]) + " outside [0, " + std::to_string(k) + ")");
    t.at(i, static_cast<std::size_t>(ids[i])) = 1.0;
  }
  return t;
}

/// Label logits [B, 2]. Domain-aware models append their domain embedding.
inline ad::Var label_logits(const BoundParams& bp, const ad::Var& features,
                            const std::vector<int>& domains) {
  ad::Var head_in = features;
  if (bp.config().domain_embedding > 0) {
    if (domains.size() != features.dim(0))
      throw ShapeError("label_logits: domain ids do not match batch");
    auto emb = ad::matmul(ad::Var::constant(one_hot(domains, bp.params().num_domains)),
                          bp[param_names::domain_embedding]);
    head_in = ad::concat_cols({features, emb});
  }
  return classify(bp[param_names::label_weight], bp[param_names::label_bias], head_in);
}

inline ad::Var domain_logits(const BoundParams& bp, const ad::Var& features) {
  return classify(bp[param_names::domain_weight], bp[param_names::domain_bias], features);
}

// Single-sample, tensor-valued conveniences.

/// Encodes one sample: an L x E matrix (conv) or a length-E vector (mlp).
inline Tensor encode(const ModelParams& p, const Tensor& sample_features) {
  BoundParams bp(p, false);
  Tensor in = sample_features;
  if (p.config.kind == EncoderKind::conv) {
    if (in.rank() != 2) throw ShapeError("conv encoder expects an L x E matrix");
    in = in.reshaped({1, in.dim(0), in.dim(1)});
  } else {
    if (in.rank() != 1) throw ShapeError("mlp encoder expects a vector");
    in = in.reshaped({1, in.dim(0)});
  }
  auto f = encode(bp, ad::Var::constant(in));
  return f.value().reshaped({f.value().size()});
}

inline Tensor classify(const Tensor& weight, const Tensor& bias, const Tensor& f) {
  if (f.rank() != 1) throw ShapeError("classify expects a feature vector");
  auto out = classify(ad::Var::constant(weight), ad::Var::constant(bias),
                      ad::Var::constant(f.reshaped({1, f.size()})));
  return out.value().reshaped({out.value().size()});
}

}  // namespace dtdbd
