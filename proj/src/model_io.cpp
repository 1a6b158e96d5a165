#include "sponge/model_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "sponge/errors.hpp"

namespace sponge {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "sponge-model";
constexpr int kVersion = 1;

std::uint32_t crc_of(const std::vector<unsigned char>& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; blobs at this scale are far below 4 GiB.
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

void append_le(std::vector<unsigned char>& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xffu));
}

float read_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

json attrs_to_json(const LayerAttrs& a) {
  return json{{"stride", a.stride}, {"padding", a.padding}, {"window", a.window}, {"eps", a.eps}, {"slope", a.slope}};
}

LayerAttrs attrs_from_json(const json& j) {
  LayerAttrs a;
  a.stride = j.value("stride", a.stride);
  a.padding = j.value("padding", a.padding);
  a.window = j.value("window", a.window);
  a.eps = j.value("eps", a.eps);
  a.slope = j.value("slope", a.slope);
  return a;
}

std::filesystem::path blob_path_for(const std::filesystem::path& header) {
  auto p = header;
  p.replace_extension(".bin");
  return p;
}

}  // namespace

void save_model(const ModelGraph& model, const std::filesystem::path& header_path) {
  std::vector<unsigned char> blob;
  json tensors = json::object();
  for (const auto& [name, t] : model.parameters()) {
    const std::size_t offset = blob.size();
    for (float v : t.data()) append_le(blob, v);
    tensors[name] = json{{"shape", t.shape()}, {"offset", offset}, {"length", blob.size() - offset}};
  }
  json layers = json::array();
  for (const auto& layer : model.layers()) {
    layers.push_back(json{{"name", layer.name},
                          {"kind", std::string(to_string(layer.kind))},
                          {"attrs", attrs_to_json(layer.attrs)},
                          {"params", layer.params}});
  }
  const auto blob_path = blob_path_for(header_path);
  json header{{"format", kFormat},
              {"version", kVersion},
              {"input_shape", model.input_shape()},
              {"blob", blob_path.filename().string()},
              {"blob_bytes", blob.size()},
              {"blob_crc32", crc_of(blob)},
              {"layers", layers},
              {"tensors", tensors}};

  if (header_path.has_parent_path()) std::filesystem::create_directories(header_path.parent_path());
  std::ofstream bout(blob_path, std::ios::binary | std::ios::trunc);
  if (!bout) throw ConfigError("cannot write " + blob_path.string());
  bout.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  std::ofstream hout(header_path, std::ios::trunc);
  if (!hout) throw ConfigError("cannot write " + header_path.string());
  hout << header.dump(2) << '\n';
}

ModelGraph load_model(const std::filesystem::path& header_path) {
  std::ifstream hin(header_path);
  if (!hin) throw LoadError("cannot open model header " + header_path.string());
  json header;
  try {
    header = json::parse(hin);
  } catch (const json::exception& e) {
    throw LoadError("malformed model header " + header_path.string() + ": " + e.what());
  }

  try {
    if (header.at("format").get<std::string>() != kFormat) throw LoadError("not a sponge-model header");
    if (header.at("version").get<int>() != kVersion) throw LoadError("unsupported model format version");

    const auto blob_path = header_path.parent_path() / header.at("blob").get<std::string>();
    std::ifstream bin(blob_path, std::ios::binary);
    if (!bin) throw LoadError("cannot open model blob " + blob_path.string());
    std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    const auto expected_bytes = header.at("blob_bytes").get<std::size_t>();
    if (blob.size() != expected_bytes) {
      throw LoadError("model blob " + blob_path.string() + " has " + std::to_string(blob.size()) + " bytes, header declares " +
                      std::to_string(expected_bytes));
    }
    if (crc_of(blob) != header.at("blob_crc32").get<std::uint32_t>()) {
      throw LoadError("model blob " + blob_path.string() + " checksum mismatch");
    }

    std::map<std::string, Tensor> params;
    for (const auto& [name, entry] : header.at("tensors").items()) {
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto length = entry.at("length").get<std::size_t>();
      if (shape_numel(shape) * 4 != length) {
        throw LoadError("tensor '" + name + "' length " + std::to_string(length) + " does not match shape " +
                        shape_to_string(shape));
      }
      if (offset > blob.size() || length > blob.size() - offset) {
        throw LoadError("tensor '" + name + "' offset " + std::to_string(offset) + " + " + std::to_string(length) +
                        " exceeds blob size " + std::to_string(blob.size()));
      }
      std::vector<float> data(length / 4);
      for (std::size_t i = 0; i < data.size(); ++i) data[i] = read_le(blob.data() + offset + 4 * i);
      try {
        params.emplace(name, Tensor(shape, std::move(data)));
      } catch (const DimensionError& e) {
        throw LoadError("tensor '" + name + "': " + e.what());
      }
    }

    std::vector<LayerSpec> layers;
    for (const auto& lj : header.at("layers")) {
      LayerSpec spec;
      spec.name = lj.at("name").get<std::string>();
      try {
        spec.kind = layer_kind_from_string(lj.at("kind").get<std::string>());
      } catch (const ConfigError& e) {
        throw LoadError("layer '" + spec.name + "': " + e.what());
      }
      spec.attrs = attrs_from_json(lj.value("attrs", json::object()));
      spec.params = lj.value("params", std::map<std::string, std::string>{});
      for (const auto& [r, tensor] : spec.params) {
        if (!params.count(tensor)) throw LoadError("layer '" + spec.name + "' references missing tensor '" + tensor + "'");
      }
      layers.push_back(std::move(spec));
    }
    return ModelGraph(header.at("input_shape").get<Shape>(), std::move(layers), std::move(params));
  } catch (const json::exception& e) {
    throw LoadError("malformed model header " + header_path.string() + ": " + e.what());
  } catch (const LoadError&) {
    throw;
  } catch (const Error& e) {
    throw LoadError(std::string("inconsistent model: ") + e.what());
  }
}

}  // namespace sponge
