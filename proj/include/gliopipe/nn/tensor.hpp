#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace gliopipe::nn {

enum class Mode { train, eval };

/// Activation layout is channel-major across the batch: (C, N, D, H, W).
/// 2D networks use D = 1.
struct Shape {
  std::size_t c = 0;
  std::size_t n = 0;
  std::size_t d = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t spatial() const { return d * h * w; }
  std::size_t numel() const { return c * n * d * h * w; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(s), data(s.numel(), fill) {}

  T* channel(std::size_t c) { return data.data() + c * shape.n * shape.spatial(); }
  const T* channel(std::size_t c) const { return data.data() + c * shape.n * shape.spatial(); }
};

template <typename T>
struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool decay = true;

  std::size_t count() const { return value.size(); }
};

/// Non-trainable state (batch-norm running statistics).
template <typename T>
struct Buffer {
  std::string name;
  std::vector<T> value;
};

struct Triple {
  std::size_t d = 1;
  std::size_t h = 1;
  std::size_t w = 1;
};

}  // namespace gliopipe::nn
