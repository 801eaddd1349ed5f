#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "bscg/network.hpp"

// Checkpoint file layout (all integers little-endian):
//   bytes 0..3   magic "BSCG"
//   bytes 4..7   format version (currently 1)
//   bytes 8..11  header length L
//   bytes 12..12+L  JSON header: format_version, fingerprint, model config,
//                   and per-tensor {name, shape, offset} (offset relative to
//                   the blob section start at 12+L)
//   then one raw float32 blob per tensor, in header order.
// Writing is deterministic: tensors appear in parameter-creation order and
// the JSON serializer emits sorted keys, so identical models produce
// byte-identical files.

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written as native little-endian floats");

namespace bscg {

namespace detail {

inline constexpr char kCkptMagic[4] = {'B', 'S', 'C', 'G'};
inline constexpr std::uint32_t kCkptVersion = 1;

inline nlohmann::json model_config_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["widths"] = cfg.backbone.widths;
  j["convs_per_stage"] = cfg.backbone.convs_per_stage;
  j["cb"] = cfg.cb;
  j["use_bpc"] = cfg.use_bpc;
  j["use_dffc"] = cfg.use_dffc;
  j["use_afr"] = cfg.use_afr;
  j["use_iou_loss"] = cfg.use_iou_loss;
  j["input_size"] = cfg.input_size;
  j["seed"] = cfg.seed;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  for (int i = 0; i < 5; ++i) {
    cfg.backbone.widths[i] = j.at("widths").at(i).get<int>();
    cfg.backbone.convs_per_stage[i] = j.at("convs_per_stage").at(i).get<int>();
  }
  cfg.cb = j.at("cb").get<int>();
  cfg.use_bpc = j.at("use_bpc").get<bool>();
  cfg.use_dffc = j.at("use_dffc").get<bool>();
  cfg.use_afr = j.at("use_afr").get<bool>();
  cfg.use_iou_loss = j.at("use_iou_loss").get<bool>();
  cfg.input_size = j.at("input_size").get<int>();
  cfg.seed = j.at("seed").get<unsigned long long>();
  return cfg;
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw DataError("checkpoint: truncated while reading " + what);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

}  // namespace detail

template <class T>
void save_checkpoint(const BscgNet<T>& net, const std::string& path) {
  const auto& items = net.params().items();
  nlohmann::json header;
  header["format_version"] = detail::kCkptVersion;
  header["fingerprint"] = net.config().fingerprint();
  header["model"] = detail::model_config_json(net.config());
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : items) {
    nlohmann::json t;
    t["name"] = p->name;
    t["shape"] = {p->value.n, p->value.c, p->value.h, p->value.w};
    t["offset"] = offset;
    offset += p->value.size() * sizeof(float);
    tensors.push_back(std::move(t));
  }
  header["tensors"] = std::move(tensors);
  const std::string htext = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("checkpoint: cannot open '" + path + "' for writing");
  os.write(detail::kCkptMagic, 4);
  detail::put_u32(os, detail::kCkptVersion);
  detail::put_u32(os, std::uint32_t(htext.size()));
  os.write(htext.data(), std::streamsize(htext.size()));
  std::vector<float> buf;
  for (const auto& p : items) {
    buf.resize(p->value.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = float(p->value.data[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             std::streamsize(buf.size() * sizeof(float)));
  }
  os.flush();
  if (!os) throw DataError("checkpoint: write to '" + path + "' failed");
}

// Reads only the header: the stored model configuration (used by inference to
// rebuild the architecture before loading weights).
inline ModelConfig read_checkpoint_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, detail::kCkptMagic, 4) != 0)
    throw DataError("checkpoint: '" + path + "' is not a checkpoint file (bad magic)");
  const std::uint32_t version = detail::get_u32(is, "version");
  if (version != detail::kCkptVersion)
    throw DataError("checkpoint: unsupported format version " + std::to_string(version));
  const std::uint32_t hlen = detail::get_u32(is, "header length");
  std::string htext(hlen, '\0');
  if (!is.read(htext.data(), hlen)) throw DataError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: malformed header: " + std::string(e.what()));
  }
  try {
    return detail::model_config_from_json(header.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: malformed model config: " + std::string(e.what()));
  }
}

template <class T>
void load_checkpoint(BscgNet<T>& net, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, detail::kCkptMagic, 4) != 0)
    throw DataError("checkpoint: '" + path + "' is not a checkpoint file (bad magic)");
  const std::uint32_t version = detail::get_u32(is, "version");
  if (version != detail::kCkptVersion)
    throw DataError("checkpoint: unsupported format version " + std::to_string(version));
  const std::uint32_t hlen = detail::get_u32(is, "header length");
  std::string htext(hlen, '\0');
  if (!is.read(htext.data(), hlen)) throw DataError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: malformed header: " + std::string(e.what()));
  }

  const std::string fp = header.at("fingerprint").get<std::string>();
  if (fp != net.config().fingerprint())
    throw ShapeError("checkpoint: fingerprint mismatch: file has '" + fp +
                     "', model is '" + net.config().fingerprint() + "'");

  const auto& tensors = header.at("tensors");
  if (tensors.size() != net.params().tensor_count())
    throw ShapeError("checkpoint: file lists " + std::to_string(tensors.size()) +
                     " tensors, model has " + std::to_string(net.params().tensor_count()));

  const std::streamoff blob_base = 12 + std::streamoff(hlen);
  std::vector<float> buf;
  std::unordered_set<const Parameter<T>*> seen;
  for (const auto& t : tensors) {
    const std::string name = t.at("name").get<std::string>();
    Parameter<T>* p = net.params().find(name);
    if (!p) throw ShapeError("checkpoint: unknown tensor '" + name + "' for this model");
    if (!seen.insert(p).second)
      throw DataError("checkpoint: tensor '" + name + "' listed twice");
    const auto& sh = t.at("shape");
    if (sh.size() != 4 || sh.at(0).get<int>() != p->value.n ||
        sh.at(1).get<int>() != p->value.c || sh.at(2).get<int>() != p->value.h ||
        sh.at(3).get<int>() != p->value.w)
      throw ShapeError("checkpoint: shape mismatch for '" + name + "': file " +
                       sh.dump() + ", model " + p->value.shape_str());
    const std::uint64_t offset = t.at("offset").get<std::uint64_t>();
    is.seekg(blob_base + std::streamoff(offset));
    buf.resize(p->value.size());
    if (!is.read(reinterpret_cast<char*>(buf.data()),
                 std::streamsize(buf.size() * sizeof(float))))
      throw DataError("checkpoint: truncated blob for tensor '" + name + "'");
    for (size_t i = 0; i < buf.size(); ++i) p->value.data[i] = T(buf[i]);
  }
}

}  // namespace bscg
