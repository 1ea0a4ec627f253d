#include "spoofmeta/features.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <numbers>

#include "spoofmeta/error.hpp"

namespace spoofmeta::features {

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

/// One in-place forward FFT of size n. FFTW's planner is not thread-safe; execution is.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    buf_ = fftw_alloc_complex(n);
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_1d(static_cast<int>(n), buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
  }
  ~FftPlan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(buf_);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  cdouble* data() { return reinterpret_cast<cdouble*>(buf_); }
  void execute() { fftw_execute(plan_); }

 private:
  std::size_t n_;
  fftw_complex* buf_;
  fftw_plan plan_;
};

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

}  // namespace

Normalization parse_normalization(const std::string& s) {
  if (s == "raw") return Normalization::Raw;
  if (s == "logstd") return Normalization::LogStd;
  if (s == "frameratio") return Normalization::FrameRatio;
  throw ValidationError("unknown normalization '" + s + "' (raw|logstd|frameratio)");
}

Window parse_window(const std::string& s) {
  if (s == "hann") return Window::Hann;
  if (s == "hamming") return Window::Hamming;
  if (s == "rect") return Window::Rect;
  throw ValidationError("unknown window '" + s + "' (hann|hamming|rect)");
}

const char* to_string(Normalization n) {
  switch (n) {
    case Normalization::Raw: return "raw";
    case Normalization::LogStd: return "logstd";
    case Normalization::FrameRatio: return "frameratio";
  }
  return "";
}

const char* to_string(Window w) {
  switch (w) {
    case Window::Hann: return "hann";
    case Window::Hamming: return "hamming";
    case Window::Rect: return "rect";
  }
  return "";
}

void StftConfig::validate() const {
  if (!is_pow2(fft_size)) throw ValidationError("fft_size must be a power of two");
  if (hop == 0 || hop > fft_size) throw ValidationError("hop must satisfy 0 < hop <= fft_size");
  if (segment_samples < fft_size) throw ValidationError("segment_samples must be >= fft_size");
}

std::size_t StftConfig::num_frames() const { return (segment_samples - fft_size) / hop + 1; }

std::string StftConfig::describe() const {
  return "N=" + std::to_string(fft_size) + " L=" + std::to_string(hop) + " Q=" +
         std::to_string(segment_samples) + " window=" + to_string(window);
}

std::vector<double> window_coefficients(Window w, std::size_t n) {
  std::vector<double> c(n, 1.0);
  const double step = 2.0 * std::numbers::pi / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::cos(step * static_cast<double>(i));
    if (w == Window::Hann) c[i] = 0.5 - 0.5 * x;
    if (w == Window::Hamming) c[i] = 0.54 - 0.46 * x;
  }
  return c;
}

ComplexMatrix stft(std::span<const cdouble> samples, const StftConfig& cfg) {
  if (cfg.fft_size == 0 || samples.size() < cfg.fft_size) {
    throw ValidationError("stft needs at least fft_size=" + std::to_string(cfg.fft_size) +
                          " samples, got " + std::to_string(samples.size()));
  }
  StftConfig eff = cfg;
  eff.segment_samples = samples.size();
  eff.validate();
  const std::size_t n = eff.fft_size;
  const std::size_t frames = eff.num_frames();
  const std::vector<double> w = window_coefficients(eff.window, n);

  ComplexMatrix out(n, frames);
  FftPlan plan(n);
  cdouble* buf = plan.data();
  for (std::size_t k = 0; k < frames; ++k) {
    const std::size_t start = k * eff.hop;
    for (std::size_t i = 0; i < n; ++i) buf[i] = samples[start + i] * w[i];
    plan.execute();
    for (std::size_t m = 0; m < n; ++m) out(m, k) = buf[m];
  }
  return out;
}

RealMatrix normalize(const RealMatrix& raw, Normalization norm) {
  switch (norm) {
    case Normalization::Raw:
      return raw;
    case Normalization::LogStd: {
      RealMatrix out(raw.rows, raw.cols);
      for (std::size_t r = 0; r < raw.rows; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < raw.cols; ++c) {
          out(r, c) = std::log(raw(r, c) + kLogFloor);
          sum += out(r, c);
        }
        const double mean = sum / static_cast<double>(raw.cols);
        double ss = 0.0;
        for (std::size_t c = 0; c < raw.cols; ++c) {
          out(r, c) -= mean;
          ss += out(r, c) * out(r, c);
        }
        const double sd = std::sqrt(ss / static_cast<double>(raw.cols));
        if (sd > 0.0) {
          for (std::size_t c = 0; c < raw.cols; ++c) out(r, c) /= sd;
        }
      }
      return out;
    }
    case Normalization::FrameRatio: {
      if (raw.cols < 2) throw ValidationError("FrameRatio needs at least two frames");
      RealMatrix out(raw.rows, raw.cols - 1);
      for (std::size_t r = 0; r < raw.rows; ++r) {
        for (std::size_t c = 1; c < raw.cols; ++c) {
          const double den = raw(r, c - 1);
          const double num = raw(r, c);
          out(r, c - 1) = den > 0.0 ? num / den : (num > 0.0 ? num / kLogFloor : 1.0);
        }
      }
      return out;
    }
  }
  return raw;
}

Spectrogram magnitude_spectrogram(std::span<const cdouble> samples, const StftConfig& cfg,
                                  Normalization norm) {
  const ComplexMatrix r = stft(samples, cfg);
  RealMatrix mag(r.rows, r.cols);
  for (std::size_t i = 0; i < r.data.size(); ++i) mag.data[i] = std::abs(r.data[i]);
  Spectrogram s{normalize(mag, norm), cfg, norm};
  s.config.segment_samples = samples.size();
  return s;
}

ComplexMatrix hadamard_apply(const ComplexMatrix& h, const ComplexMatrix& fx) {
  if (h.rows != fx.rows || h.cols != fx.cols) {
    throw ValidationError("hadamard_apply shape mismatch: " + std::to_string(h.rows) + "x" +
                          std::to_string(h.cols) + " vs " + std::to_string(fx.rows) + "x" +
                          std::to_string(fx.cols));
  }
  ComplexMatrix out(h.rows, h.cols);
  for (std::size_t i = 0; i < h.data.size(); ++i) out.data[i] = h.data[i] * fx.data[i];
  return out;
}

ComplexSignal decimate(std::span<const cdouble> samples, std::size_t factor) {
  if (factor == 0) throw ValidationError("decimation factor must be >= 1");
  if (factor == 1) return {samples.begin(), samples.end()};
  ComplexSignal out(samples.size() / factor);
  const double inv = 1.0 / static_cast<double>(factor);
  for (std::size_t i = 0; i < out.size(); ++i) {
    cdouble acc{};
    for (std::size_t j = 0; j < factor; ++j) acc += samples[i * factor + j];
    out[i] = acc * inv;
  }
  return out;
}

std::size_t segment_length(double sample_rate_hz, double segment_duration_s) {
  if (!(sample_rate_hz > 0.0) || !(segment_duration_s > 0.0)) {
    throw ValidationError("sample rate and segment duration must be positive");
  }
  const auto n = static_cast<std::size_t>(std::llround(sample_rate_hz * segment_duration_s));
  if (n == 0) throw ValidationError("segment holds zero samples at this sample rate");
  return n;
}

std::size_t segment_count(std::size_t total_samples, double sample_rate_hz,
                          double segment_duration_s) {
  return total_samples / segment_length(sample_rate_hz, segment_duration_s);
}

std::vector<IqSegment> segment_capture(std::span<const cdouble> capture, double sample_rate_hz,
                                       double segment_duration_s, Label label,
                                       const std::string& source_tag) {
  if (capture.empty()) throw ValidationError("cannot segment an empty capture");
  const std::size_t len = segment_length(sample_rate_hz, segment_duration_s);
  const std::size_t count = capture.size() / len;
  if (count == 0) throw ValidationError("capture is shorter than one segment");
  std::vector<IqSegment> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto first = capture.begin() + static_cast<std::ptrdiff_t>(i * len);
    out.push_back({ComplexSignal(first, first + static_cast<std::ptrdiff_t>(len)), sample_rate_hz,
                   static_cast<double>(i * len) / sample_rate_hz, label, source_tag});
  }
  return out;
}

void FeatureConfig::resolve(double sample_rate_hz) {
  if (decimation == 0) throw ValidationError("decimation factor must be >= 1");
  stft.segment_samples = segment_length(sample_rate_hz, segment_duration_s) / decimation;
  stft.validate();
}

std::size_t FeatureConfig::rows() const { return stft.fft_size; }

std::size_t FeatureConfig::cols() const {
  const std::size_t k = stft.num_frames();
  return normalization == Normalization::FrameRatio ? k - 1 : k;
}

Spectrogram spectrogram_of(const IqSegment& segment, const FeatureConfig& cfg) {
  const ComplexSignal dec = decimate(segment.samples, cfg.decimation);
  StftConfig sc = cfg.stft;
  sc.segment_samples = dec.size();
  return magnitude_spectrogram(dec, sc, cfg.normalization);
}

}  // namespace spoofmeta::features
