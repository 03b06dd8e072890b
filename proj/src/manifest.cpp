#include "fpq/manifest.hpp"

#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "fpq/error.hpp"
#include "fpq/tensorstore.hpp"

namespace fpq {
namespace {

using nlohmann::json;

std::string quoted(const std::string& s) { return json(s).dump(); }

std::string exact_decimal(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.16e", v);
  return buf;
}

TensorKind parse_kind(const std::string& s) {
  if (s == "weight") return TensorKind::kWeight;
  if (s == "activation") return TensorKind::kActivation;
  throw ValidationError("unknown tensor kind '" + s + "'");
}

QuantMode parse_mode(const std::string& s) {
  if (s == "fp") return QuantMode::kFp;
  if (s == "int") return QuantMode::kInt;
  if (s == "passthrough") return QuantMode::kPassthrough;
  throw ValidationError("unknown quantization mode '" + s + "'");
}

}  // namespace

const char* to_string(TensorKind kind) {
  return kind == TensorKind::kWeight ? "weight" : "activation";
}

const char* to_string(QuantMode mode) {
  switch (mode) {
    case QuantMode::kFp:
      return "fp";
    case QuantMode::kInt:
      return "int";
    case QuantMode::kPassthrough:
      return "passthrough";
  }
  return "passthrough";
}

const QuantRecord* QuantManifest::find(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

QuantRecord* QuantManifest::find(const std::string& name) {
  for (auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

void QuantManifest::upsert(QuantRecord record) {
  if (auto* existing = find(record.name)) {
    *existing = std::move(record);
  } else {
    records.push_back(std::move(record));
  }
}

std::string manifest_to_json(const QuantManifest& manifest) {
  std::ostringstream os;
  os << "{\n  \"format\": \"fpq-manifest\",\n  \"version\": 1,\n";
  if (manifest.mask_container) {
    os << "  \"mask_container\": " << quoted(*manifest.mask_container) << ",\n";
  }
  os << "  \"records\": [";
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    os << (i ? ",\n" : "\n") << "    {\"name\": " << quoted(r.name)
       << ", \"kind\": \"" << to_string(r.kind) << "\", \"mode\": \""
       << to_string(r.mode) << '"';
    if (r.mode == QuantMode::kFp) {
      os << ", \"e_bits\": " << r.format.e_bits << ", \"m_bits\": " << r.format.m_bits
         << ", \"bias\": " << exact_decimal(r.format.bias);
    } else if (r.mode == QuantMode::kInt) {
      os << ", \"bits\": " << r.bits;
    }
    if (r.rounding_mask_ref) {
      os << ", \"rounding_mask_ref\": " << quoted(*r.rounding_mask_ref);
    }
    os << '}';
  }
  os << (manifest.records.empty() ? "]\n}\n" : "\n  ]\n}\n");
  return os.str();
}

QuantManifest manifest_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
  }
  QuantManifest m;
  try {
    if (doc.value("format", std::string()) != "fpq-manifest") {
      throw ValidationError("not a quantization manifest");
    }
    if (doc.at("version").get<int>() != 1) {
      throw ValidationError("unsupported manifest version");
    }
    if (doc.contains("mask_container")) {
      m.mask_container = doc.at("mask_container").get<std::string>();
    }
    for (const auto& item : doc.at("records")) {
      QuantRecord r;
      r.name = item.at("name").get<std::string>();
      r.kind = parse_kind(item.at("kind").get<std::string>());
      r.mode = parse_mode(item.at("mode").get<std::string>());
      if (r.mode == QuantMode::kFp) {
        r.format = make_format(item.at("e_bits").get<int>(), item.at("m_bits").get<int>(),
                               item.at("bias").get<double>());
      } else if (r.mode == QuantMode::kInt) {
        r.bits = item.at("bits").get<int>();
        if (r.bits < 2 || r.bits > 24) {
          throw ValidationError("record '" + r.name + "': bits must be in [2, 24]");
        }
      }
      if (item.contains("rounding_mask_ref")) {
        if (r.mode != QuantMode::kFp || r.kind != TensorKind::kWeight) {
          throw ValidationError("record '" + r.name +
                                "': rounding masks apply to fp weight records only");
        }
        r.rounding_mask_ref = item.at("rounding_mask_ref").get<std::string>();
      }
      if (m.find(r.name)) throw ValidationError("duplicate manifest record '" + r.name + "'");
      m.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void save_manifest(const std::filesystem::path& path, const QuantManifest& manifest) {
  write_text_atomic(path, manifest_to_json(manifest));
}

QuantManifest load_manifest(const std::filesystem::path& path) {
  return manifest_from_json(read_text(path));
}

void validate_masks(const QuantManifest& manifest, const TensorMap& weights,
                    const TensorMap& masks) {
  for (const auto& r : manifest.records) {
    if (!r.rounding_mask_ref) continue;
    auto w = weights.find(r.name);
    if (w == weights.end()) {
      throw ValidationError("mask record '" + r.name + "' names no weight tensor");
    }
    auto mk = masks.find(*r.rounding_mask_ref);
    if (mk == masks.end()) {
      throw ValidationError("rounding mask '" + *r.rounding_mask_ref + "' not found");
    }
    if (mk->second.shape != w->second.shape) {
      throw ValidationError("rounding mask '" + *r.rounding_mask_ref + "' has shape " +
                            shape_to_string(mk->second.shape) + ", weight has " +
                            shape_to_string(w->second.shape));
    }
    for (float v : mk->second.data) {
      if (v != 0.0f && v != 1.0f) {
        throw ValidationError("rounding mask '" + *r.rounding_mask_ref +
                              "' contains values other than 0/1");
      }
    }
  }
}

TensorMap load_manifest_masks(const std::filesystem::path& manifest_path,
                              const QuantManifest& manifest) {
  if (!manifest.mask_container) return {};
  auto path = std::filesystem::path(*manifest.mask_container);
  if (path.is_relative()) path = manifest_path.parent_path() / path;
  return to_map(read_container(path));
}

}  // namespace fpq
