#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fpq/fpcodec.hpp"
#include "fpq/tensor.hpp"

namespace fpq {

enum class TensorKind { kWeight, kActivation };
enum class QuantMode { kFp, kInt, kPassthrough };

const char* to_string(TensorKind kind);
const char* to_string(QuantMode mode);

/// Quantization decision for one named tensor.
struct QuantRecord {
  std::string name;
  TensorKind kind = TensorKind::kWeight;
  QuantMode mode = QuantMode::kPassthrough;
  FpFormat format;  // meaningful in fp mode
  int bits = 0;     // meaningful in int mode
  std::optional<std::string> rounding_mask_ref;

  bool operator==(const QuantRecord&) const = default;
};

/// Per-tensor decisions in assignment order. Serialized as JSON; biases are
/// written with 17 significant digits so they round-trip exactly.
struct QuantManifest {
  std::vector<QuantRecord> records;
  /// Container holding the tensors named by rounding_mask_ref, relative to
  /// the manifest's directory.
  std::optional<std::string> mask_container;

  const QuantRecord* find(const std::string& name) const;
  QuantRecord* find(const std::string& name);

  /// Replaces the record with the same name or appends.
  void upsert(QuantRecord record);

  bool operator==(const QuantManifest&) const = default;
};

std::string manifest_to_json(const QuantManifest& manifest);
QuantManifest manifest_from_json(const std::string& text);

void save_manifest(const std::filesystem::path& path, const QuantManifest& manifest);
QuantManifest load_manifest(const std::filesystem::path& path);

/// Every mask reference must name a tensor in masks whose shape equals the
/// referenced weight's and whose values are 0 or 1.
void validate_masks(const QuantManifest& manifest, const TensorMap& weights,
                    const TensorMap& masks);

/// Loads the mask container referenced by a manifest file, or an empty map.
TensorMap load_manifest_masks(const std::filesystem::path& manifest_path,
                              const QuantManifest& manifest);

}  // namespace fpq
