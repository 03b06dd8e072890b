#include "fpq/tensorstore.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "fpq/error.hpp"
#include "fpq/kernels.hpp"

namespace fpq {
namespace {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }

  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
    }
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
    }
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw ContainerError(ContainerError::Code::kTruncated,
                           "container truncated at byte " + std::to_string(pos_));
    }
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

[[noreturn]] void shape_error(const std::string& what) {
  throw ContainerError(ContainerError::Code::kShapeMismatch, what);
}

}  // namespace

std::string encode_container(const std::vector<Tensor>& tensors) {
  ByteWriter w;
  w.raw(kContainerMagic, 4);
  w.u32(kContainerVersion);
  w.u64(tensors.size());
  for (const auto& t : tensors) {
    if (t.name.size() > std::numeric_limits<std::uint32_t>::max()) {
      shape_error("tensor name too long");
    }
    if (t.shape.size() > 255) shape_error("tensor '" + t.name + "' rank exceeds 255");
    std::size_t count = 1;
    for (auto d : t.shape) {
      if (d <= 0) shape_error("tensor '" + t.name + "' has a non-positive dimension");
      count *= static_cast<std::size_t>(d);
    }
    if (count != t.data.size()) {
      shape_error("tensor '" + t.name + "' shape " + shape_to_string(t.shape) +
                  " does not match " + std::to_string(t.data.size()) + " elements");
    }
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.raw(t.name.data(), t.name.size());
    w.u8(kDtypeF32);
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(static_cast<std::uint64_t>(d));
    for (float v : t.data) w.u32(std::bit_cast<std::uint32_t>(v));
  }
  return w.take();
}

std::vector<Tensor> decode_container(const std::string& bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kContainerMagic, 4) != 0) {
    throw ContainerError(ContainerError::Code::kBadMagic,
                         "not an FPQT container (bad magic)");
  }
  r.str(4);
  const auto version = r.u32();
  if (version != kContainerVersion) {
    throw ContainerError(ContainerError::Code::kVersionMismatch,
                         "unsupported container version " + std::to_string(version));
  }
  const auto count = r.u64();
  std::vector<Tensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    Tensor t;
    t.name = r.str(r.u32());
    const auto dtype = r.u8();
    if (dtype != kDtypeF32) {
      throw ContainerError(ContainerError::Code::kBadDtype,
                           "tensor '" + t.name + "' has dtype " + std::to_string(dtype));
    }
    const auto rank = r.u8();
    std::uint64_t elems = 1;
    for (int d = 0; d < rank; ++d) {
      const auto dim = r.u64();
      if (dim == 0 || dim > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()) ||
          elems > std::numeric_limits<std::uint64_t>::max() / dim) {
        shape_error("tensor '" + t.name + "' has an invalid dimension");
      }
      elems *= dim;
      t.shape.push_back(static_cast<std::int64_t>(dim));
    }
    if (elems > r.remaining() / 4) {
      throw ContainerError(ContainerError::Code::kTruncated,
                           "payload of tensor '" + t.name + "' is truncated");
    }
    t.data.resize(elems);
    for (auto& v : t.data) v = std::bit_cast<float>(r.u32());
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) {
    shape_error(std::to_string(r.remaining()) + " trailing bytes after last tensor");
  }
  return out;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename onto '" + path.string() + "'");
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  if (is.bad()) throw IoError("read from '" + path.string() + "' failed");
  return ss.str();
}

void write_container(const std::filesystem::path& path,
                     const std::vector<Tensor>& tensors) {
  write_text_atomic(path, encode_container(tensors));
}

std::vector<Tensor> read_container(const std::filesystem::path& path) {
  return decode_container(read_text(path));
}

std::string encode_calib_name(const CalibKey& key) {
  return key.tensor + "@t" + std::to_string(key.timestep) + "#" +
         std::to_string(key.sample);
}

CalibKey decode_calib_name(const std::string& name) {
  const auto at = name.rfind("@t");
  const auto hash = name.rfind('#');
  auto bad = [&] {
    return ValidationError("'" + name + "' is not a calibration entry name (tensor@t<k>#<j>)");
  };
  if (at == std::string::npos || hash == std::string::npos || hash < at + 3 ||
      at == 0 || hash + 1 >= name.size()) {
    throw bad();
  }
  auto parse = [&](const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos ||
        s.size() > 9) {
      throw bad();
    }
    return std::stoi(s);
  };
  return {name.substr(0, at), parse(name.substr(at + 2, hash - at - 2)),
          parse(name.substr(hash + 1))};
}

void CalibSet::add(const CalibKey& key, Tensor t) {
  if (key.timestep < 0 || key.sample < 0) {
    throw ValidationError("calibration keys must be non-negative");
  }
  auto first = entries_.lower_bound(CalibKey{key.tensor, 0, 0});
  if (first != entries_.end() && first->first.tensor == key.tensor &&
      first->second.shape != t.shape) {
    throw ValidationError("calibration samples of '" + key.tensor +
                          "' disagree in shape: " + shape_to_string(first->second.shape) +
                          " vs " + shape_to_string(t.shape));
  }
  t.name = encode_calib_name(key);
  if (!entries_.emplace(key, std::move(t)).second) {
    throw ValidationError("duplicate calibration entry " + encode_calib_name(key));
  }
}

bool CalibSet::contains_tensor(const std::string& tensor) const {
  auto it = entries_.lower_bound(CalibKey{tensor, 0, 0});
  return it != entries_.end() && it->first.tensor == tensor;
}

std::vector<std::string> CalibSet::tensor_names() const {
  std::vector<std::string> names;
  for (const auto& [k, t] : entries_) {
    if (names.empty() || names.back() != k.tensor) names.push_back(k.tensor);
  }
  return names;
}

std::vector<const Tensor*> CalibSet::samples(const std::string& tensor) const {
  std::vector<const Tensor*> out;
  for (auto it = entries_.lower_bound(CalibKey{tensor, 0, 0});
       it != entries_.end() && it->first.tensor == tensor; ++it) {
    out.push_back(&it->second);
  }
  return out;
}

std::vector<Tensor> CalibSet::to_tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [k, t] : entries_) out.push_back(t);
  return out;
}

CalibSet CalibSet::from_tensors(std::vector<Tensor> tensors) {
  CalibSet cs;
  for (auto& t : tensors) {
    const auto key = decode_calib_name(t.name);
    cs.add(key, std::move(t));
  }
  return cs;
}

std::vector<Tensor> sample_uniform(const CalibSet& cs, const std::string& tensor,
                                   int n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("sample count must be at least 1");
  std::map<int, std::vector<const Tensor*>> by_step;
  for (const auto& [k, t] : cs.entries()) {
    if (k.tensor == tensor) by_step[k.timestep].push_back(&t);
  }
  if (by_step.empty()) {
    throw ValidationError("no calibration entries for '" + tensor + "'");
  }
  std::vector<int> steps;
  for (const auto& [step, list] : by_step) steps.push_back(step);
  const std::size_t num_steps = steps.size();

  // Evenly spaced positions floor(k (T - 1) / (count - 1)) over the
  // available timesteps.
  auto spread = [&](std::size_t count) {
    std::set<std::size_t> picks;
    if (count == 0) return picks;
    if (count == 1) {
      picks.insert(0);
      return picks;
    }
    for (std::size_t k = 0; k < count; ++k) {
      picks.insert(k * (num_steps - 1) / (count - 1));
    }
    return picks;
  };

  const auto total = static_cast<std::size_t>(n);
  std::vector<std::size_t> visits(num_steps, total / num_steps);
  for (auto idx : spread(total % num_steps)) ++visits[idx];

  std::mt19937_64 rng(seed);
  std::vector<Tensor> out;
  out.reserve(total);
  for (std::size_t s = 0; s < num_steps; ++s) {
    const auto& list = by_step[steps[s]];
    const std::size_t offset = rng() % list.size();
    for (std::size_t v = 0; v < visits[s]; ++v) {
      out.push_back(*list[(offset + v) % list.size()]);
    }
  }
  return out;
}

std::vector<float> pool_samples(const std::vector<const Tensor*>& samples) {
  std::vector<float> pooled;
  for (const auto* t : samples) pooled.insert(pooled.end(), t->data.begin(), t->data.end());
  return pooled;
}

double mse(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ValidationError("mse: length mismatch");
  if (a.empty()) return 0.0;
  return kernels::active().sq_err(a.data(), b.data(), a.size()) /
         static_cast<double>(a.size());
}

double mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  return mse(a.values(), b.values());
}

double sqnr_db(std::span<const float> ref, std::span<const float> test) {
  if (ref.size() != test.size()) throw ValidationError("sqnr: length mismatch");
  double signal = 0.0;
  for (float v : ref) signal += static_cast<double>(v) * v;
  if (signal == 0.0) throw ValidationError("sqnr: reference is all zero");
  const double noise = kernels::active().sq_err(ref.data(), test.data(), ref.size());
  if (noise == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal / noise);
}

double sqnr_db(const Tensor& ref, const Tensor& test) {
  require_same_shape(ref, test, "sqnr");
  return sqnr_db(ref.values(), test.values());
}

double sparsity(std::span<const float> x) {
  if (x.empty()) return 0.0;
  std::size_t zeros = 0;
  for (float v : x) zeros += (v == 0.0f);
  return static_cast<double>(zeros) / static_cast<double>(x.size());
}

}  // namespace fpq
