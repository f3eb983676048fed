#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "coordinet/errors.hpp"

namespace coordinet {

// Checkpoint container: a JSON metadata blob (model config, trainer state)
// plus named float64 tensors.
//
// On-disk layout (all integers little-endian):
//   bytes 0..7    magic "CNCKPT01"
//   bytes 8..15   uint64 header length N
//   bytes 16..    N bytes of UTF-8 JSON:
//                   { "meta": {...},
//                     "tensors": { name: {"offset": o, "size": s}, ... } }
//                 offsets/sizes count float64 elements within the data block
//   remainder     the data block: concatenated float64 values, little-endian
//
// Writes go to a sibling temp file first and are renamed into place, so a
// crash mid-write never corrupts the previous checkpoint.
struct CheckpointData {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Eigen::VectorXd>> tensors;

  const Eigen::VectorXd& tensor(const std::string& name) const {
    for (const auto& [n, v] : tensors) {
      if (n == name) return v;
    }
    fail(ErrorCode::parse, "checkpoint is missing tensor: " + name);
  }
  bool has_tensor(const std::string& name) const {
    for (const auto& [n, v] : tensors) {
      if (n == name) return true;
    }
    return false;
  }
};

inline constexpr char kCheckpointMagic[8] = {'C', 'N', 'C', 'K', 'P', 'T', '0', '1'};

inline void save_checkpoint(const std::string& path, const CheckpointData& data) {
  nlohmann::json header;
  header["meta"] = data.meta;
  nlohmann::json table = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, values] : data.tensors) {
    table[name] = {{"offset", offset}, {"size", static_cast<std::uint64_t>(values.size())}};
    offset += static_cast<std::uint64_t>(values.size());
  }
  header["tensors"] = table;
  const std::string header_str = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::io, "cannot open for writing: " + tmp);
    out.write(kCheckpointMagic, 8);
    const std::uint64_t n = header_str.size();
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, values] : data.tensors) {
      out.write(reinterpret_cast<const char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(double)));
    }
    out.flush();
    require(out.good(), ErrorCode::io, "write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::io, "cannot rename checkpoint into place: " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::io, "cannot open checkpoint: " + path);

  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0, ErrorCode::parse,
          "not a checkpoint file: " + path);

  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), 8);
  require(in.good() && header_len > 0 && header_len < (1u << 30), ErrorCode::parse,
          "corrupt checkpoint header length: " + path);

  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  require(in.good(), ErrorCode::parse, "truncated checkpoint header: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("bad checkpoint header JSON: ") + e.what());
  }

  CheckpointData data;
  data.meta = header.value("meta", nlohmann::json::object());

  struct Entry {
    std::string name;
    std::uint64_t offset;
    std::uint64_t size;
  };
  std::vector<Entry> entries;
  for (const auto& [name, desc] : header.at("tensors").items()) {
    entries.push_back({name, desc.at("offset").get<std::uint64_t>(),
                       desc.at("size").get<std::uint64_t>()});
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.offset < b.offset; });

  for (const auto& e : entries) {
    Eigen::VectorXd values(static_cast<Eigen::Index>(e.size));
    in.seekg(static_cast<std::streamoff>(16 + header_len + e.offset * sizeof(double)));
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(e.size * sizeof(double)));
    require(in.good(), ErrorCode::parse, "truncated checkpoint data: " + path);
    data.tensors.emplace_back(e.name, std::move(values));
  }
  return data;
}

}  // namespace coordinet
