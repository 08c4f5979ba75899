#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dgen/error.hpp"
#include "dgen/model.hpp"
#include "dgen/training.hpp"
#include "dgen/vocabulary.hpp"

namespace dgen {

// Checkpoint layout (all integers little-endian):
//   8 bytes   magic "DGENCKPT"
//   u32       format version
//   u64       header length in bytes
//   header    JSON: {"model": {...}, "vocab": {...}, "training": {...},
//                    "tensors": [{"name", "rows", "cols"}, ...]}
//   payload   float64 values of each tensor in header order, column-major
inline constexpr char kCheckpointMagic[8] = {'D', 'G', 'E', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim},   {"hidden_dim", c.hidden_dim},
          {"attn_dim", c.attn_dim},     {"num_layers", c.num_layers}, {"dict_size", c.dict_size},
          {"dictionary_guidance", c.dictionary_guidance}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.attn_dim = j.at("attn_dim").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.dict_size = j.at("dict_size").get<std::size_t>();
  c.dictionary_guidance = j.at("dictionary_guidance").get<bool>();
  return c;
}

template <typename Scalar>
struct Checkpoint {
  ModelParameters<Scalar> params;
  Vocabulary vocab;
  TrainingConfig training;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error(ErrorCode::BadSnapshot, "checkpoint truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return v;
}

}  // namespace detail

template <typename Scalar>
std::string checkpoint_to_bytes(const ModelParameters<Scalar>& params, const Vocabulary& vocab,
                                const TrainingConfig& training) {
  if (params.config.vocab_size != vocab.size())
    throw Error(ErrorCode::DimensionMismatch, "vocabulary size differs from model vocab_size");
  nlohmann::json header;
  header["model"] = model_config_to_json(params.config);
  header["vocab"] = vocab_to_json(vocab);
  header["training"] = config_to_json(training);
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : params.tensors())
    header["tensors"].push_back({{"name", name}, {"rows", t->rows()}, {"cols", t->cols()}});
  const std::string h = header.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, h.size());
  out += h;
  for (const auto& [name, t] : params.tensors()) {
    for (Eigen::Index k = 0; k < t->size(); ++k) {
      const double v = static_cast<double>(t->data()[k]);
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      detail::put_le<std::uint64_t>(out, bits);
    }
  }
  return out;
}

template <typename Scalar>
Checkpoint<Scalar> checkpoint_from_bytes(std::string_view in) {
  if (in.size() < sizeof(kCheckpointMagic) || std::memcmp(in.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw Error(ErrorCode::BadSnapshot, "not a checkpoint file");
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = detail::get_le<std::uint32_t>(in, pos);
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::BadSnapshot, "unsupported checkpoint version " + std::to_string(version));
  const auto hlen = detail::get_le<std::uint64_t>(in, pos);
  if (pos + hlen > in.size()) throw Error(ErrorCode::BadSnapshot, "checkpoint header truncated");
  nlohmann::json header;
  Checkpoint<Scalar> ck;
  try {
    header = nlohmann::json::parse(in.substr(pos, hlen));
    const auto cfg = model_config_from_json(header.at("model"));
    cfg.validate();
    ck.vocab = vocab_from_json(header.at("vocab"));
    ck.training = config_from_json(header.at("training"));
    ck.params = ModelParameters<Scalar>::zeros(cfg);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::BadSnapshot, std::string("checkpoint header: ") + ex.what());
  }
  pos += hlen;
  if (ck.vocab.size() != ck.params.config.vocab_size)
    throw Error(ErrorCode::DimensionMismatch, "checkpoint vocabulary size differs from model vocab_size");

  auto tensors = ck.params.tensors();
  const auto& listed = header.at("tensors");
  if (listed.size() != tensors.size()) throw Error(ErrorCode::DimensionMismatch, "checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& [name, t] = tensors[i];
    if (listed[i].at("name").get<std::string>() != name || listed[i].at("rows").get<Eigen::Index>() != t->rows() ||
        listed[i].at("cols").get<Eigen::Index>() != t->cols())
      throw Error(ErrorCode::DimensionMismatch, "checkpoint tensor " + name + " does not match model config");
    for (Eigen::Index k = 0; k < t->size(); ++k) {
      const auto bits = detail::get_le<std::uint64_t>(in, pos);
      double v;
      std::memcpy(&v, &bits, sizeof v);
      t->data()[k] = static_cast<Scalar>(v);
    }
  }
  if (pos != in.size()) throw Error(ErrorCode::BadSnapshot, "trailing bytes after checkpoint payload");
  return ck;
}

template <typename Scalar>
void save_checkpoint(const std::string& path, const ModelParameters<Scalar>& params, const Vocabulary& vocab,
                     const TrainingConfig& training) {
  write_file(path, checkpoint_to_bytes(params, vocab, training));
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path) {
  return checkpoint_from_bytes<Scalar>(read_file(path));
}

}  // namespace dgen
