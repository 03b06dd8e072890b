#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fpq/tensor.hpp"

namespace fpq {

// FPQT container, little-endian:
//   "FPQT" | u32 version | u64 count |
//   count x (u32 name_len | name | u8 dtype | u8 rank | rank x u64 | payload)
inline constexpr char kContainerMagic[4] = {'F', 'P', 'Q', 'T'};
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

std::string encode_container(const std::vector<Tensor>& tensors);
std::vector<Tensor> decode_container(const std::string& bytes);

/// Writes to a sibling temporary file, then renames over path.
void write_container(const std::filesystem::path& path,
                     const std::vector<Tensor>& tensors);
std::vector<Tensor> read_container(const std::filesystem::path& path);

/// Atomic text write used for manifests and reports.
void write_text_atomic(const std::filesystem::path& path,
                       const std::string& text);
std::string read_text(const std::filesystem::path& path);

struct CalibKey {
  std::string tensor;
  int timestep = 0;
  int sample = 0;

  auto operator<=>(const CalibKey&) const = default;
};

/// Captured activations addressed by (tensor, timestep, sample). Stored in
/// the container under names "tensor@t<timestep>#<sample>".
class CalibSet {
 public:
  void add(const CalibKey& key, Tensor t);

  const std::map<CalibKey, Tensor>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  bool contains_tensor(const std::string& tensor) const;
  std::vector<std::string> tensor_names() const;

  /// Entries for one tensor in key order.
  std::vector<const Tensor*> samples(const std::string& tensor) const;

  std::vector<Tensor> to_tensors() const;
  static CalibSet from_tensors(std::vector<Tensor> tensors);

 private:
  std::map<CalibKey, Tensor> entries_;
};

std::string encode_calib_name(const CalibKey& key);
/// Throws a validation error on names not of the form tensor@t<k>#<j>.
CalibKey decode_calib_name(const std::string& name);

/// Evenly spread selection across the timesteps recorded for tensor.
/// Repeated visits to one timestep walk its samples round-robin, starting at
/// an offset derived from seed.
std::vector<Tensor> sample_uniform(const CalibSet& cs, const std::string& tensor,
                                   int n, std::uint64_t seed);

/// Concatenates the flattened samples of one tensor.
std::vector<float> pool_samples(const std::vector<const Tensor*>& samples);

double mse(const Tensor& a, const Tensor& b);
double mse(std::span<const float> a, std::span<const float> b);

/// 10*log10(sum ref^2 / sum (ref - test)^2); +infinity when test == ref.
double sqnr_db(const Tensor& ref, const Tensor& test);
double sqnr_db(std::span<const float> ref, std::span<const float> test);

/// Fraction of elements equal to zero (either sign).
double sparsity(std::span<const float> x);
inline double sparsity(const Tensor& t) { return sparsity(t.values()); }

}  // namespace fpq
