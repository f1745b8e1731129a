#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "ueg/errors.hpp"
#include "ueg/model.hpp"

// Archive layout: 8-byte magic, little-endian uint64 header length, JSON
// header, then a float32 little-endian payload addressed by byte offset.

namespace ueg {

namespace {

constexpr char kMagic[8] = {'U', 'E', 'G', 'C', 'K', 'P', 'T', '1'};
constexpr int kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::size_t element_count(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

void append_array(const ParamArray& p, nlohmann::ordered_json& arrays, std::vector<float>& payload) {
  if (arrays.contains(p.name)) {
    throw std::invalid_argument("checkpoint: duplicate array name '" + p.name + "'");
  }
  arrays[p.name] = {{"shape", p.shape}, {"offset", payload.size() * sizeof(float)}, {"length", p.values.size()}};
  for (double v : p.values) {
    payload.push_back(static_cast<float>(v));
  }
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& path, const CheckpointExtras& extras) {
  nlohmann::ordered_json header;
  header["format"] = "ueg-checkpoint";
  header["version"] = kVersion;
  nlohmann::json cfg = state.config;
  header["config"] = cfg;
  nlohmann::ordered_json arrays = nlohmann::ordered_json::object();
  std::vector<float> payload;
  for (const auto& p : state.params()) {
    append_array(p, arrays, payload);
  }
  for (const auto& p : extras.arrays) {
    append_array(p, arrays, payload);
  }
  header["arrays"] = std::move(arrays);
  header["meta"] = extras.meta;
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  // Write to a sibling temp file first so a crash never leaves a torn archive.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot write checkpoint '" + path.string() + "'");
    }
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!out) {
      throw IoError("failed writing checkpoint '" + path.string() + "'");
    }
  }
  std::filesystem::rename(tmp, path);
}

ModelState load_checkpoint(const std::filesystem::path& path, CheckpointExtras* extras) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("checkpoint not found: '" + path.string() + "'");
  }
  const std::string where = "checkpoint '" + path.string() + "'";
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw IoError(where + ": not a checkpoint (bad magic)");
  }
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1u << 30)) {
    throw IoError(where + ": truncated or corrupt header length");
  }
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
    throw IoError(where + ": truncated header");
  }
  const std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(where + ": header is not valid JSON (" + e.what() + ")");
  }
  if (header.value("format", "") != "ueg-checkpoint" || header.value("version", 0) != kVersion) {
    throw IoError(where + ": unsupported format or version");
  }

  ModelConfig config;
  try {
    config = header.at("config").get<ModelConfig>();
  } catch (const ConfigError& e) {
    throw IoError(where + ": " + e.what());
  }
  ModelState state = init_model(config);

  auto read_array = [&](const std::string& name, const nlohmann::json& entry) {
    ParamArray p{name, entry.at("shape").get<std::vector<int>>(), {}};
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto length = entry.at("length").get<std::uint64_t>();
    if (element_count(p.shape) != length) {
      throw IoError(where + ": array '" + name + "' shape does not match its length");
    }
    if (offset % sizeof(float) != 0 || offset + length * sizeof(float) > payload.size()) {
      throw IoError(where + ": array '" + name + "' lies outside the payload (truncated file?)");
    }
    p.values.resize(length);
    for (std::size_t i = 0; i < length; ++i) {
      float f;
      std::memcpy(&f, payload.data() + offset + i * sizeof(float), sizeof f);
      p.values[i] = f;
    }
    return p;
  };

  const auto& arrays = header.at("arrays");
  for (auto& target : state.params()) {
    if (!arrays.contains(target.name)) {
      throw IoError(where + ": missing parameter '" + target.name + "'");
    }
    ParamArray p = read_array(target.name, arrays.at(target.name));
    if (p.shape != target.shape) {
      throw IoError(where + ": parameter '" + target.name + "' has shape " + ad::shape_string(p.shape) +
                    ", expected " + ad::shape_string(target.shape));
    }
    target.values = std::move(p.values);
  }
  if (extras) {
    extras->meta = header.value("meta", nlohmann::json::object());
    extras->arrays.clear();
    for (const auto& [name, entry] : arrays.items()) {
      if (!state.has(name)) {
        extras->arrays.push_back(read_array(name, entry));
      }
    }
  }
  return state;
}

ModelState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected, CheckpointExtras* extras) {
  ModelState state = load_checkpoint(path, extras);
  if (!(state.config == expected)) {
    throw ConfigError("checkpoint '" + path.string() + "' was written for a different model config: " +
                      nlohmann::json(state.config).dump() + " vs expected " + nlohmann::json(expected).dump());
  }
  return state;
}

}  // namespace ueg
