#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "spoofmeta/types.hpp"

namespace spoofmeta::features {

enum class Window { Hann, Hamming, Rect };
enum class Normalization { Raw, LogStd, FrameRatio };

Normalization parse_normalization(const std::string& s);  // raw | logstd | frameratio
const char* to_string(Normalization n);
const char* to_string(Window w);
Window parse_window(const std::string& s);  // hann | hamming | rect

inline constexpr double kLogFloor = 1e-12;

/// STFT geometry. `segment_samples` is the number of samples the STFT sees, i.e. after
/// decimation.
struct StftConfig {
  std::size_t fft_size = 256;
  std::size_t hop = 128;
  Window window = Window::Hann;
  std::size_t segment_samples = 256;

  void validate() const;
  std::size_t num_frames() const;  // floor((Q - N) / L) + 1
  std::string describe() const;
};

/// Periodic window of length N.
std::vector<double> window_coefficients(Window w, std::size_t n);

/// Windowed-frame DFT: R[m, k] = sum_n s[kL + n] w[n] exp(-j 2 pi m n / N), rows are frequency
/// bins m, columns frames k. Uses every full frame of `samples`.
ComplexMatrix stft(std::span<const cdouble> samples, const StftConfig& cfg);

/// N x K real magnitudes of one segment (N x (K-1) for FrameRatio).
struct Spectrogram {
  RealMatrix magnitudes;
  StftConfig config;
  Normalization normalization = Normalization::Raw;
};

/// Raw: |R|. LogStd: each row of log(|R| + 1e-12) standardized to zero mean and unit std
/// (rows with zero spread are only centred). FrameRatio: |R[:, k]| / |R[:, k-1]|, dropping the
/// first frame, so a channel that is static across frames divides out.
Spectrogram magnitude_spectrogram(std::span<const cdouble> samples, const StftConfig& cfg,
                                  Normalization norm);
RealMatrix normalize(const RealMatrix& raw, Normalization norm);

/// Elementwise channel/fingerprint product.
ComplexMatrix hadamard_apply(const ComplexMatrix& h, const ComplexMatrix& fx);

/// Average non-overlapping blocks of `factor` samples. factor 1 returns the input.
ComplexSignal decimate(std::span<const cdouble> samples, std::size_t factor);

/// Samples per segment, round(duration * rate).
std::size_t segment_length(double sample_rate_hz, double segment_duration_s = 0.004);
/// Number of whole segments in a capture of `total_samples`.
std::size_t segment_count(std::size_t total_samples, double sample_rate_hz,
                          double segment_duration_s = 0.004);

/// Consecutive non-overlapping segments; the trailing remainder is dropped.
std::vector<IqSegment> segment_capture(std::span<const cdouble> capture, double sample_rate_hz,
                                       double segment_duration_s = 0.004,
                                       Label label = Label::Clean,
                                       const std::string& source_tag = {});

/// Segment -> spectrogram, with optional decimation ahead of the STFT.
struct FeatureConfig {
  StftConfig stft;
  Normalization normalization = Normalization::LogStd;
  std::size_t decimation = 8;
  double segment_duration_s = 0.004;

  /// Fill stft.segment_samples for captures at `sample_rate_hz`.
  void resolve(double sample_rate_hz);
  std::size_t rows() const;
  std::size_t cols() const;
};

Spectrogram spectrogram_of(const IqSegment& segment, const FeatureConfig& cfg);

}  // namespace spoofmeta::features
