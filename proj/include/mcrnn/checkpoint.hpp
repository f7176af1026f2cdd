#pragma once

// Checkpoint file:
//   8 bytes   magic "MCRNNCKP"
//   u32 LE    format version
//   u64 LE    header length
//   header    JSON: model config, tensor names/sizes, vocabulary, run config, meta
//   payload   every tensor in visit_tensors order as little-endian IEEE doubles

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcrnn/config.hpp"
#include "mcrnn/data.hpp"
#include "mcrnn/errors.hpp"
#include "mcrnn/model.hpp"

namespace mcrnn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char checkpoint_magic[8] = {'M', 'C', 'R', 'N', 'N', 'C', 'K', 'P'};
inline constexpr std::uint32_t checkpoint_version = 1;

struct CheckpointMeta {
  int epoch = 0;
  std::uint64_t step = 0;
  double val_loss = 0.0;
};

struct Checkpoint {
  Model model;
  Vocab vocab;
  RunConfig run;
  CheckpointMeta meta;
};

namespace detail {

inline nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"input", c.input == InputKind::tokens ? "tokens" : "features"},
          {"head", c.head == HeadKind::softmax ? "softmax" : "regression"},
          {"vocab_size", c.vocab_size},
          {"feature_dim", c.feature_dim},
          {"embed_dim", c.embed_dim},
          {"hidden_dim", c.hidden_dim},
          {"layers", c.layers},
          {"block_size", c.block_size},
          {"cell", c.cell == CellKind::lstm ? "lstm" : "vanilla"},
          {"tie_weights", c.tie_weights},
          {"dropout", c.dropout},
          {"mix_cell_state", c.mix_cell_state},
          {"conventional", c.conventional},
          {"zero_head", c.zero_head}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.input = j.at("input").get<std::string>() == "tokens" ? InputKind::tokens : InputKind::features;
  c.head = j.at("head").get<std::string>() == "softmax" ? HeadKind::softmax : HeadKind::regression;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.layers = j.at("layers").get<int>();
  c.block_size = j.at("block_size").get<int>();
  c.cell = j.at("cell").get<std::string>() == "lstm" ? CellKind::lstm : CellKind::vanilla;
  c.tie_weights = j.at("tie_weights").get<bool>();
  c.dropout = j.at("dropout").get<double>();
  c.mix_cell_state = j.at("mix_cell_state").get<bool>();
  c.conventional = j.at("conventional").get<bool>();
  c.zero_head = j.at("zero_head").get<bool>();
  return c;
}

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw DataError("checkpoint is truncated");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json h;
  h["model"] = detail::model_config_json(ck.model.config);
  h["tensors"] = nlohmann::json::array();
  visit_tensors(ck.model, [&](const std::string& name, std::span<const double> v, bool) {
    h["tensors"].push_back({{"name", name}, {"size", v.size()}});
  });
  h["vocab"] = {{"level", to_string(ck.vocab.level())}, {"tokens", ck.vocab.tokens()}};
  h["run_config"] = serialize_config(ck.run);
  h["meta"] = {{"epoch", ck.meta.epoch}, {"step", ck.meta.step}, {"val_loss", ck.meta.val_loss}};
  const std::string header = h.dump();

  std::string out(checkpoint_magic, sizeof checkpoint_magic);
  detail::put<std::uint32_t>(out, checkpoint_version);
  detail::put<std::uint64_t>(out, header.size());
  out += header;
  visit_tensors(ck.model, [&](const std::string&, std::span<const double> v, bool) {
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  });
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof checkpoint_magic || std::memcmp(bytes.data(), checkpoint_magic, sizeof checkpoint_magic))
    throw DataError("not a checkpoint file (bad magic)");
  std::size_t pos = sizeof checkpoint_magic;
  const auto version = detail::take<std::uint32_t>(bytes, pos);
  if (version != checkpoint_version)
    throw ConsistencyError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(checkpoint_version) + ")");
  const auto hlen = detail::take<std::uint64_t>(bytes, pos);
  if (pos + hlen > bytes.size()) throw DataError("checkpoint is truncated");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header is malformed: ") + e.what());
  }
  pos += hlen;

  Checkpoint ck;
  try {
    ck.model = Model::zeros(detail::model_config_from_json(h.at("model")));
    ck.vocab = Vocab::from_tokens(parse_token_level(h.at("vocab").at("level").get<std::string>()),
                                  h.at("vocab").at("tokens").get<std::vector<std::string>>());
    ck.run = parse_config(h.at("run_config").get<std::string>());
    ck.meta.epoch = h.at("meta").at("epoch").get<int>();
    ck.meta.step = h.at("meta").at("step").get<std::uint64_t>();
    ck.meta.val_loss = h.at("meta").at("val_loss").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header is malformed: ") + e.what());
  }

  const auto& listed = h.at("tensors");
  std::size_t i = 0;
  visit_tensors(ck.model, [&](const std::string& name, std::span<double> v, bool) {
    if (i >= listed.size() || listed[i].at("name").get<std::string>() != name ||
        listed[i].at("size").get<std::size_t>() != v.size())
      throw ConsistencyError("checkpoint tensor list does not match its model config at " + name);
    const std::size_t n = v.size() * sizeof(double);
    if (pos + n > bytes.size()) throw DataError("checkpoint is truncated");
    std::memcpy(v.data(), bytes.data() + pos, n);
    pos += n;
    ++i;
  });
  if (i != listed.size() || pos != bytes.size()) throw ConsistencyError("checkpoint has trailing or missing tensors");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  const std::string bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace mcrnn
