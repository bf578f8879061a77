#pragma once

// Checkpoint file layout: an 8-byte little-endian manifest length, a JSON
// manifest (format tag, model config, tensor names + shapes + byte offsets),
// then every tensor as little-endian 32-bit reals in manifest order.
// Round-trips are bit-exact at standard precision.

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "elvit/model.hpp"
#include "elvit/runconfig.hpp"
#include "json.hpp"

namespace elvit {
namespace detail {

inline void put_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t get_u64(std::istream& in, const char* what) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (in.gcount() != 8)
    throw std::runtime_error(std::string("load_checkpoint: truncated ") + what);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

template <typename R>
void save_checkpoint(const ModelParams<R>& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open '" + path + "'");

  const auto named = params.named();
  nlohmann::json manifest;
  manifest["format"] = "elvit-checkpoint";
  manifest["version"] = 1;
  manifest["model"] = model_config_json(params.cfg);
  int64_t offset = 0;
  for (const auto& [name, node] : named) {
    nlohmann::json t;
    t["name"] = name;
    t["shape"] = node->value.shape;
    t["offset"] = offset;
    t["size"] = node->value.size() * 4;
    manifest["tensors"].push_back(std::move(t));
    offset += node->value.size() * 4;
  }

  const std::string header = manifest.dump();
  detail::put_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  std::vector<unsigned char> buf;
  for (const auto& [name, node] : named) {
    const Tensor<R>& t = node->value;
    buf.resize(static_cast<size_t>(t.size()) * 4);
    for (int64_t i = 0; i < t.size(); ++i) {
      const uint32_t u = std::bit_cast<uint32_t>(static_cast<float>(t[i]));
      for (int k = 0; k < 4; ++k)
        buf[static_cast<size_t>(i) * 4 + static_cast<size_t>(k)] =
            static_cast<unsigned char>(u >> (8 * k));
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for '" + path + "'");
}

template <typename R = float>
ModelParams<R> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");

  const uint64_t header_len = detail::get_u64(in, "header");
  if (header_len > (1ull << 30))
    throw std::runtime_error("load_checkpoint: implausible manifest length " +
                             std::to_string(header_len));
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (in.gcount() != static_cast<std::streamsize>(header_len))
    throw std::runtime_error("load_checkpoint: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("load_checkpoint: bad manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "elvit-checkpoint")
    throw std::runtime_error("load_checkpoint: not an elvit checkpoint");
  if (manifest.value("version", 0) != 1)
    throw std::runtime_error("load_checkpoint: unsupported version");

  ModelParams<R> params = ModelParams<R>::init(model_config_from_json(manifest.at("model")), 0);
  auto named = params.named();
  const nlohmann::json& tensors = manifest.at("tensors");
  if (tensors.size() != named.size())
    throw std::runtime_error("load_checkpoint: manifest lists " +
                             std::to_string(tensors.size()) + " tensors, model has " +
                             std::to_string(named.size()));
  int64_t offset = 0;
  std::vector<unsigned char> buf;
  for (size_t i = 0; i < named.size(); ++i) {
    const nlohmann::json& t = tensors.at(i);
    const std::string name = t.at("name").get<std::string>();
    if (name != named[i].first)
      throw std::runtime_error("load_checkpoint: manifest names tensor '" + name +
                               "' where '" + named[i].first + "' expected");
    Tensor<R>& dst = named[i].second->value;
    const Shape shape = t.at("shape").get<Shape>();
    if (shape != dst.shape)
      throw std::runtime_error("load_checkpoint: shape mismatch for '" + name +
                               "': manifest " + shape_str(shape) + ", model " +
                               shape_str(dst.shape));
    if (t.at("offset").get<int64_t>() != offset)
      throw std::runtime_error("load_checkpoint: tensor '" + name + "' at offset " +
                               std::to_string(t.at("offset").get<int64_t>()) +
                               ", expected " + std::to_string(offset));
    buf.resize(static_cast<size_t>(dst.size()) * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
      throw std::runtime_error("load_checkpoint: blob truncated reading '" + name + "'");
    for (int64_t k = 0; k < dst.size(); ++k) {
      uint32_t u = 0;
      for (int b = 0; b < 4; ++b)
        u |= static_cast<uint32_t>(buf[static_cast<size_t>(k) * 4 + static_cast<size_t>(b)])
             << (8 * b);
      dst[k] = static_cast<R>(std::bit_cast<float>(u));
    }
    offset += dst.size() * 4;
  }
  return params;
}

}  // namespace elvit
