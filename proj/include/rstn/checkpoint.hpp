#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rstn/errors.hpp"
#include "rstn/layers.hpp"
#include "rstn/models.hpp"
#include "rstn/tensor_io.hpp"

// Checkpoint file:
//   "CKPT" | version u8 | u32 manifest line count M |
//   M x (u32 length, UTF-8 bytes)   line 0: model config JSON, lines 1..M-1: parameter names |
//   M-1 TNSR records, in manifest order.

namespace rstn {

inline constexpr std::array<char, 4> kCheckpointMagic{'C', 'K', 'P', 'T'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

template <class T>
void write_checkpoint(std::ostream& os, const nlohmann::json& header, const std::vector<Param<T>*>& params) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  io::write_pod(os, kCheckpointVersion);
  io::write_pod(os, static_cast<std::uint32_t>(params.size() + 1));
  io::write_string(os, header.dump());
  for (const auto* p : params) io::write_string(os, p->name);
  for (const auto* p : params) write_tensor(os, p->value);
}

struct CheckpointContents {
  nlohmann::json header;
  std::vector<std::string> names;
};

// Reads the manifest and assigns each stored tensor to the parameter of the
// same name. Every parameter must be present with a matching shape.
template <class T>
CheckpointContents read_checkpoint_into(std::istream& is, const std::vector<Param<T>*>& params) {
  CheckpointContents c;
  std::array<char, 4> magic{};
  io::read_exact(is, magic.data(), magic.size(), "checkpoint magic");
  if (magic != kCheckpointMagic) throw FormatError("bad checkpoint magic");
  const auto version = io::read_pod<std::uint8_t>(is, "checkpoint version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto lines = io::read_pod<std::uint32_t>(is, "checkpoint manifest count");
  if (lines == 0) throw FormatError("empty checkpoint manifest");
  try {
    c.header = nlohmann::json::parse(io::read_string(is, "checkpoint header"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  for (std::uint32_t i = 1; i < lines; ++i) c.names.push_back(io::read_string(is, "checkpoint parameter name"));
  std::vector<bool> seen(params.size(), false);
  for (const auto& name : c.names) {
    auto t = read_tensor<T>(is);
    auto it = std::find_if(params.begin(), params.end(), [&](const Param<T>* p) { return p->name == name; });
    if (it == params.end()) continue;
    if ((*it)->value.shape() != t.shape()) {
      throw FormatError("checkpoint tensor " + name + " has shape " + shape_str(t.shape()) + ", model expects " +
                        shape_str((*it)->value.shape()));
    }
    (*it)->value = std::move(t);
    seen[static_cast<std::size_t>(it - params.begin())] = true;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!seen[i]) throw FormatError("checkpoint is missing parameter " + params[i]->name);
  }
  return c;
}

template <class T>
void save_model(const std::filesystem::path& path, Model<T>& model, const nlohmann::json& extra = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  nlohmann::json header{{"model", model.config()}};
  if (!extra.is_null()) header["extra"] = extra;
  write_checkpoint(os, header, model.params());
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

template <class T>
std::unique_ptr<Model<T>> load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  // Peek the header to learn the architecture, then rewind for the tensors.
  std::array<char, 4> magic{};
  io::read_exact(is, magic.data(), magic.size(), "checkpoint magic");
  if (magic != kCheckpointMagic) throw FormatError("bad checkpoint magic in " + path.string());
  io::read_pod<std::uint8_t>(is, "checkpoint version");
  io::read_pod<std::uint32_t>(is, "checkpoint manifest count");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(io::read_string(is, "checkpoint header"));
    auto model = build_model<T>(header.at("model").get<ModelConfig>());
    is.seekg(0);
    read_checkpoint_into(is, model->params());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header invalid: ") + e.what());
  }
}

}  // namespace rstn
