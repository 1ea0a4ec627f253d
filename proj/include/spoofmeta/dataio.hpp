#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spoofmeta/embedder.hpp"
#include "spoofmeta/tracking.hpp"
#include "spoofmeta/types.hpp"

namespace spoofmeta::dataio {

enum class SampleType { Int16, Int8, Float32 };
enum class Interleave { IQ, QI };
enum class Endianness { Little, Big };

/// Binary layout of an interleaved IQ capture. Decoded value = stored value * scale.
struct IqFormat {
  SampleType sample_type = SampleType::Int16;
  Interleave interleave = Interleave::IQ;
  Endianness endianness = Endianness::Little;
  double sample_rate_hz = 25e6;
  double scale = 1.0 / 32768.0;

  void validate() const;
  std::size_t bytes_per_component() const;
  std::size_t bytes_per_sample() const { return 2 * bytes_per_component(); }
  std::string describe() const;
};

/// Named layouts. "texbat": int16, IQ, little-endian, 25 MHz, scale 2^-15. These are
/// starting points and must be checked against the capture's own documentation.
IqFormat iq_preset(const std::string& name);

/// Decode `bytes` (a whole number of samples) into complex samples.
ComplexSignal decode_iq(std::span<const std::uint8_t> bytes, const IqFormat& fmt);
/// Encode samples; throws ValidationError naming the sample index when a component does not fit.
std::vector<std::uint8_t> encode_iq(std::span<const cdouble> samples, const IqFormat& fmt,
                                    std::size_t first_index = 0);

/// Exactly round(duration_s * fs) samples starting round(offset_s * fs) samples into the file.
ComplexSignal read_iq_capture(const std::filesystem::path& path, const IqFormat& fmt,
                              double offset_s, double duration_s);
void write_iq_capture(const std::filesystem::path& path, std::span<const cdouble> samples,
                      const IqFormat& fmt);

/// Sequential reader for captures too large to hold in memory.
class IqFileReader {
 public:
  IqFileReader(const std::filesystem::path& path, IqFormat fmt);
  std::size_t total_samples() const { return total_; }
  std::size_t position() const { return pos_; }
  void seek(std::size_t sample);
  /// Up to n samples; fewer only at the end of the file.
  ComplexSignal read(std::size_t n);

 private:
  std::filesystem::path path_;
  IqFormat fmt_;
  std::ifstream in_;
  std::size_t total_ = 0;
  std::size_t pos_ = 0;
};

/// Sequential writer. Data goes to a temporary file that replaces `path` on close(); a
/// writer destroyed without close() leaves `path` untouched.
class IqFileWriter {
 public:
  IqFileWriter(const std::filesystem::path& path, IqFormat fmt);
  ~IqFileWriter();
  IqFileWriter(const IqFileWriter&) = delete;
  IqFileWriter& operator=(const IqFileWriter&) = delete;
  void write(std::span<const cdouble> samples);
  void close();
  std::size_t written() const { return written_; }

 private:
  std::filesystem::path path_, tmp_;
  IqFormat fmt_;
  std::ofstream out_;
  std::size_t written_ = 0;
  bool closed_ = false;
};

// --- feature cache -------------------------------------------------------------------

inline constexpr std::uint32_t kCacheVersion = 1;

/// What a cache was (or must be) built with.
struct CacheLayout {
  std::size_t spec_rows = 0;
  std::size_t spec_cols = 0;
  std::size_t post_dim = 0;
  std::string config;  // human-readable feature configuration

  bool same_dims(const CacheLayout& o) const {
    return spec_rows == o.spec_rows && spec_cols == o.spec_cols && post_dim == o.post_dim;
  }
  std::string describe() const;
};

/// "SPLC", version, count, dims, configuration text, per-item records, trailing CRC32.
std::vector<std::uint8_t> encode_features(std::span<const embedder::Example> items,
                                          const CacheLayout& layout);
std::vector<embedder::Example> decode_features(std::span<const std::uint8_t> bytes,
                                               CacheLayout* layout_out = nullptr,
                                               const std::string& what = "feature cache");

void cache_features(const std::filesystem::path& path, std::span<const embedder::Example> items,
                    const CacheLayout& layout);
/// Verifies the CRC and, when `expected` is given, that the dimensions match it.
std::vector<embedder::Example> load_features(const std::filesystem::path& path,
                                             const CacheLayout* expected = nullptr,
                                             CacheLayout* layout_out = nullptr);

/// Sidecar `<cache>.key` holding the description of the inputs a cache was built from.
bool cache_is_current(const std::filesystem::path& cache, const std::string& key);
void write_cache_key(const std::filesystem::path& cache, const std::string& key);

/// Sidecar `<capture>.json` written next to generated captures: format, label and the
/// tracking target of the scene.
struct CaptureInfo {
  IqFormat format;
  Label label = Label::Clean;
  int prn = 1;
  std::optional<tracking::TrackInit> track;
};
void write_capture_info(const std::filesystem::path& capture, const CaptureInfo& info);
std::optional<CaptureInfo> read_capture_info(const std::filesystem::path& capture);

// --- dataset registry ----------------------------------------------------------------

struct DatasetRecord {
  std::string tag;
  IqFormat format;
  std::map<Label, std::vector<std::filesystem::path>> captures;
  std::map<Label, std::vector<std::filesystem::path>> postcorr_csv;
  /// Tracking target for captures without receiver logs: PRN and the acquisition result at
  /// the start of the read window. A capture's own sidecar, when present, takes precedence.
  int prn = 1;
  std::optional<tracking::TrackInit> track;
  double offset_s = 0.0;
  double duration_s = 0.0;  // 0: whole capture
  std::filesystem::path cache;  // featurized examples
};

/// Immutable set of dataset records keyed by tag.
class DatasetRegistry {
 public:
  void add(DatasetRecord record, bool check_paths = true);
  const DatasetRecord& get(const std::string& tag) const;
  bool contains(const std::string& tag) const { return records_.count(tag) != 0; }
  std::vector<std::string> tags() const;  // sorted

 private:
  std::map<std::string, DatasetRecord> records_;
};

/// JSON registry; relative paths resolve against the registry file's directory.
DatasetRegistry load_registry(const std::filesystem::path& path, bool check_paths = true);
void save_registry(const std::filesystem::path& path, const DatasetRegistry& registry);

}  // namespace spoofmeta::dataio
