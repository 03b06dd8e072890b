#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fpq {

using Shape = std::vector<std::int64_t>;

/// Product of dimensions; an empty shape is a scalar with one element.
std::size_t numel(const Shape& shape);

std::string shape_to_string(const Shape& shape);

/// Named n-dimensional array of 32-bit reals in row-major order.
struct Tensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::string name, Shape shape);
  Tensor(std::string name, Shape shape, std::vector<float> data);

  std::size_t size() const noexcept { return data.size(); }
  std::int64_t dim(std::size_t axis) const { return shape.at(axis); }
  std::size_t rank() const noexcept { return shape.size(); }

  std::span<float> values() noexcept { return data; }
  std::span<const float> values() const noexcept { return data; }

  bool operator==(const Tensor&) const = default;
};

/// Tensors addressed by name (model weights, captured activations).
using TensorMap = std::map<std::string, Tensor>;

TensorMap to_map(std::vector<Tensor> tensors);

/// Throws a validation error unless shape and data length agree.
void check_consistent(const Tensor& t);

/// Throws a validation error if any element is NaN or infinite.
void check_finite(const Tensor& t);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace fpq
