#include "fpq/tensor.hpp"

#include <cmath>
#include <sstream>

#include "fpq/error.hpp"

namespace fpq {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ValidationError("negative dimension in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(std::string name, Shape shape)
    : name(std::move(name)), shape(std::move(shape)) {
  data.assign(numel(this->shape), 0.0f);
}

Tensor::Tensor(std::string name, Shape shape, std::vector<float> data)
    : name(std::move(name)), shape(std::move(shape)), data(std::move(data)) {
  check_consistent(*this);
}

TensorMap to_map(std::vector<Tensor> tensors) {
  TensorMap out;
  for (auto& t : tensors) {
    auto name = t.name;
    if (!out.emplace(name, std::move(t)).second) {
      throw ValidationError("duplicate tensor name '" + name + "'");
    }
  }
  return out;
}

void check_consistent(const Tensor& t) {
  if (numel(t.shape) != t.data.size()) {
    throw ValidationError("tensor '" + t.name + "' has shape " +
                          shape_to_string(t.shape) + " but " +
                          std::to_string(t.data.size()) + " elements");
  }
}

void check_finite(const Tensor& t) {
  for (float v : t.data) {
    if (!std::isfinite(v)) {
      throw ValidationError("tensor '" + t.name + "' contains a non-finite value");
    }
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape != b.shape || a.data.size() != b.data.size()) {
    throw ValidationError(std::string(what) + ": shape mismatch " +
                          shape_to_string(a.shape) + " vs " +
                          shape_to_string(b.shape));
  }
}

}  // namespace fpq
