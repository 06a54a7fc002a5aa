#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rdseg {

// Extents in (batch, channels, height, width) order. Zero extents are legal
// (an empty-channel tensor concatenates as a no-op).
struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  [[nodiscard]] std::int64_t count() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }

  friend bool operator==(const Shape4&, const Shape4&) = default;

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
  }
};

/// Dense row-major rank-4 tensor. float carries training and inference;
/// the double instantiation exists for finite-difference gradient checks.
template <std::floating_point T>
struct Tensor4 {
  Shape4 shape{};
  std::vector<T> data;

  Tensor4() = default;

  explicit Tensor4(Shape4 s) : shape(s), data(checked_count(s), T{0}) {}

  Tensor4(Shape4 s, std::vector<T> values) : shape(s), data(std::move(values)) {
    if (static_cast<std::int64_t>(data.size()) != shape.count()) {
      throw std::invalid_argument("Tensor4: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape.str());
    }
  }

  static Tensor4 full(Shape4 s, T value) {
    Tensor4 t(s);
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }

  [[nodiscard]] std::int64_t size() const { return shape.count(); }
  [[nodiscard]] bool empty() const { return data.empty(); }

  [[nodiscard]] std::int64_t index(int in, int ic, int iy, int ix) const {
    return ((static_cast<std::int64_t>(in) * shape.c + ic) * shape.h + iy) * shape.w + ix;
  }

  T& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
  const T& at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

  template <std::floating_point U>
  [[nodiscard]] Tensor4<U> cast() const {
    Tensor4<U> out(shape);
    std::transform(data.begin(), data.end(), out.data.begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

 private:
  static std::size_t checked_count(Shape4 s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
      throw std::invalid_argument("Tensor4: negative extent in shape " + s.str());
    }
    return static_cast<std::size_t>(s.count());
  }
};

template <std::floating_point T>
[[nodiscard]] bool all_finite(const Tensor4<T>& t) {
  return std::all_of(t.data.begin(), t.data.end(), [](T v) { return std::isfinite(v); });
}

}  // namespace rdseg
