#pragma once

// Model checkpoint JSON: {format_version, encoder_config, num_domains, seed,
// params: {name: {shape, data}}}. Keys are emitted sorted.

#include <filesystem>
#include <string>

#include "dtdbd/io.hpp"
#include "dtdbd/models.hpp"
#include "json.hpp"

namespace dtdbd {

inline constexpr int kCheckpointFormatVersion = 1;

inline nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"embed_dim", c.embed_dim},
          {"seq_len", c.seq_len},
          {"kernel_widths", c.kernel_widths},
          {"channels_per_kernel", c.channels_per_kernel},
          {"mlp_hidden", c.mlp_hidden},
          {"domain_embedding", c.domain_embedding}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.kind = encoder_kind_from_string(j.at("kind").get<std::string>());
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.seq_len = j.at("seq_len").get<std::size_t>();
  c.kernel_widths = j.at("kernel_widths").get<std::vector<std::size_t>>();
  c.channels_per_kernel = j.at("channels_per_kernel").get<std::size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::vector<std::size_t>>();
  c.domain_embedding = j.value("domain_embedding", std::size_t{0});
  c.validate();
  return c;
}

inline nlohmann::json checkpoint_to_json(const ModelParams& p) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, t] : p.tensors) params[name] = {{"shape", t.shape()}, {"data", t.values()}};
  return {{"format_version", kCheckpointFormatVersion},
          {"encoder_config", encoder_config_to_json(p.config)},
          {"num_domains", p.num_domains},
          {"seed", p.seed},
          {"params", std::move(params)}};
}

/// Parses and validates a checkpoint: every expected parameter must be present
/// with the shape its encoder config implies.
inline ModelParams checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion)
      throw ParseError("unsupported checkpoint format_version");
    ModelParams p;
    p.config = encoder_config_from_json(j.at("encoder_config"));
    p.num_domains = j.at("num_domains").get<std::size_t>();
    p.seed = j.at("seed").get<std::uint64_t>();
    const auto reference = init_params(p.config, p.num_domains, 0);
    for (const auto& [name, ref] : reference.tensors) {
      const auto& e = j.at("params").at(name);
      auto shape = e.at("shape").get<Shape>();
      if (shape != ref.shape())
        throw ParseError("parameter '" + name + "' has shape " + shape_str(shape) + ", expected " +
                         shape_str(ref.shape()));
      p.tensors.emplace(name, Tensor::from_external(std::move(shape), e.at("data").get<std::vector<double>>()));
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint schema error: ") + e.what());
  }
}

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_to_json(p).dump() + "\n");
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid checkpoint JSON: ") + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace dtdbd
