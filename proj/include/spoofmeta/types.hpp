#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace spoofmeta {

using cdouble = std::complex<double>;
using ComplexSignal = std::vector<cdouble>;

enum class Label : std::uint8_t { Clean = 0, Spoofed = 1 };

inline const char* to_string(Label l) { return l == Label::Clean ? "clean" : "spoofed"; }

/// Dense row-major matrix.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  bool operator==(const Matrix&) const = default;
};

using RealMatrix = Matrix<double>;
using ComplexMatrix = Matrix<cdouble>;

/// A fixed-duration window of complex baseband samples with its label and provenance.
struct IqSegment {
  ComplexSignal samples;
  double sample_rate_hz = 0.0;
  double start_time_s = 0.0;
  Label label = Label::Clean;
  std::string source_tag;
};

}  // namespace spoofmeta
