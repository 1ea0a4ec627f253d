#include "spoofmeta/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "spoofmeta/binio.hpp"
#include "spoofmeta/error.hpp"

namespace spoofmeta::dataio {

namespace fs = std::filesystem;
using embedder::Example;

namespace {

template <typename T>
T load_component(const std::uint8_t* p, Endianness e) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, p, sizeof(T));
  const bool native_little = std::endian::native == std::endian::little;
  if ((e == Endianness::Little) != native_little) std::reverse(raw, raw + sizeof(T));
  T v;
  std::memcpy(&v, raw, sizeof(T));
  return v;
}

template <typename T>
void store_component(std::uint8_t* p, T v, Endianness e) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  const bool native_little = std::endian::native == std::endian::little;
  if ((e == Endianness::Little) != native_little) std::reverse(raw, raw + sizeof(T));
  std::memcpy(p, raw, sizeof(T));
}

double read_one(const std::uint8_t* p, const IqFormat& f) {
  switch (f.sample_type) {
    case SampleType::Int16: return load_component<std::int16_t>(p, f.endianness);
    case SampleType::Int8: return static_cast<std::int8_t>(*p);
    case SampleType::Float32: return load_component<float>(p, f.endianness);
  }
  return 0.0;
}

template <typename T>
bool fits_integer(double v) {
  return v >= std::numeric_limits<T>::min() && v <= std::numeric_limits<T>::max();
}

void write_one(std::uint8_t* p, double value, const IqFormat& f, std::size_t index, const char* comp) {
  const double scaled = value / f.scale;
  auto clip = [&] {
    std::ostringstream os;
    os << "sample " << index << " (" << comp << " = " << value << ") does not fit " << f.describe();
    return ValidationError(os.str());
  };
  if (!std::isfinite(scaled)) throw clip();
  switch (f.sample_type) {
    case SampleType::Int16: {
      const double r = std::nearbyint(scaled);
      if (!fits_integer<std::int16_t>(r)) throw clip();
      store_component<std::int16_t>(p, static_cast<std::int16_t>(r), f.endianness);
      break;
    }
    case SampleType::Int8: {
      const double r = std::nearbyint(scaled);
      if (!fits_integer<std::int8_t>(r)) throw clip();
      *p = static_cast<std::uint8_t>(static_cast<std::int8_t>(r));
      break;
    }
    case SampleType::Float32:
      if (std::abs(scaled) > std::numeric_limits<float>::max()) throw clip();
      store_component<float>(p, static_cast<float>(scaled), f.endianness);
      break;
  }
}

SampleType parse_sample_type(const std::string& s) {
  if (s == "int16") return SampleType::Int16;
  if (s == "int8") return SampleType::Int8;
  if (s == "float32") return SampleType::Float32;
  throw ValidationError("unknown sample type '" + s + "' (int16, int8, float32)");
}

const char* to_string(SampleType t) {
  switch (t) {
    case SampleType::Int16: return "int16";
    case SampleType::Int8: return "int8";
    case SampleType::Float32: return "float32";
  }
  return "?";
}

}  // namespace

void IqFormat::validate() const {
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz)) {
    throw ValidationError("iq format: sample_rate_hz must be finite and > 0");
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ValidationError("iq format: scale must be finite and > 0");
}

std::size_t IqFormat::bytes_per_component() const {
  switch (sample_type) {
    case SampleType::Int16: return 2;
    case SampleType::Int8: return 1;
    case SampleType::Float32: return 4;
  }
  return 0;
}

std::string IqFormat::describe() const {
  std::ostringstream os;
  os << to_string(sample_type) << ' ' << (interleave == Interleave::IQ ? "IQ" : "QI") << ' '
     << (endianness == Endianness::Little ? "LE" : "BE") << ' ' << sample_rate_hz << " Hz scale " << scale;
  return os.str();
}

IqFormat iq_preset(const std::string& name) {
  if (name == "texbat") return {SampleType::Int16, Interleave::IQ, Endianness::Little, 25e6, 1.0 / 32768.0};
  throw ValidationError("unknown IQ format preset '" + name + "'");
}

ComplexSignal decode_iq(std::span<const std::uint8_t> bytes, const IqFormat& fmt) {
  const std::size_t bc = fmt.bytes_per_component();
  if (bytes.size() % (2 * bc) != 0) throw DataError("IQ data is not a whole number of samples");
  ComplexSignal out(bytes.size() / (2 * bc));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double a = read_one(bytes.data() + 2 * i * bc, fmt) * fmt.scale;
    const double b = read_one(bytes.data() + (2 * i + 1) * bc, fmt) * fmt.scale;
    out[i] = fmt.interleave == Interleave::IQ ? cdouble(a, b) : cdouble(b, a);
  }
  return out;
}

std::vector<std::uint8_t> encode_iq(std::span<const cdouble> samples, const IqFormat& fmt,
                                    std::size_t first_index) {
  fmt.validate();
  const std::size_t bc = fmt.bytes_per_component();
  std::vector<std::uint8_t> out(samples.size() * 2 * bc);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const bool iq = fmt.interleave == Interleave::IQ;
    write_one(out.data() + 2 * i * bc, iq ? samples[i].real() : samples[i].imag(), fmt, first_index + i,
              iq ? "I" : "Q");
    write_one(out.data() + (2 * i + 1) * bc, iq ? samples[i].imag() : samples[i].real(), fmt, first_index + i,
              iq ? "Q" : "I");
  }
  return out;
}

ComplexSignal read_iq_capture(const fs::path& path, const IqFormat& fmt, double offset_s, double duration_s) {
  fmt.validate();
  if (!(offset_s >= 0.0)) throw ValidationError("read window offset must be >= 0");
  const auto count = static_cast<std::size_t>(std::llround(duration_s * fmt.sample_rate_hz));
  if (!(duration_s > 0.0) || count == 0) throw ValidationError("read window of zero length");
  const auto first = static_cast<std::size_t>(std::llround(offset_s * fmt.sample_rate_hz));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open capture " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  const std::size_t bs = fmt.bytes_per_sample();
  if (size / bs < first + count) {
    throw DataError("capture " + path.string() + " is too short: holds " + std::to_string(size / bs) +
                    " samples, window needs " + std::to_string(first + count));
  }
  std::vector<std::uint8_t> bytes(count * bs);
  in.seekg(static_cast<std::streamoff>(first * bs));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw DataError("read failed on " + path.string());
  return decode_iq(bytes, fmt);
}

void write_iq_capture(const fs::path& path, std::span<const cdouble> samples, const IqFormat& fmt) {
  const auto bytes = encode_iq(samples, fmt);
  binio::write_file_atomic(path, bytes);
}

IqFileReader::IqFileReader(const fs::path& path, IqFormat fmt) : path_(path), fmt_(fmt) {
  fmt_.validate();
  in_.open(path, std::ios::binary);
  if (!in_) throw DataError("cannot open capture " + path.string());
  in_.seekg(0, std::ios::end);
  total_ = static_cast<std::size_t>(in_.tellg()) / fmt_.bytes_per_sample();
  in_.seekg(0);
}

void IqFileReader::seek(std::size_t sample) {
  if (sample > total_) {
    throw DataError("capture " + path_.string() + " holds " + std::to_string(total_) + " samples, cannot seek to " +
                    std::to_string(sample));
  }
  in_.clear();
  in_.seekg(static_cast<std::streamoff>(sample * fmt_.bytes_per_sample()));
  pos_ = sample;
}

ComplexSignal IqFileReader::read(std::size_t n) {
  n = std::min(n, total_ - pos_);
  std::vector<std::uint8_t> bytes(n * fmt_.bytes_per_sample());
  in_.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in_) throw DataError("read failed on " + path_.string());
  pos_ += n;
  return decode_iq(bytes, fmt_);
}

IqFileWriter::IqFileWriter(const fs::path& path, IqFormat fmt)
    : path_(path), tmp_(path.string() + ".partial"), fmt_(fmt) {
  fmt_.validate();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  out_.open(tmp_, std::ios::binary | std::ios::trunc);
  if (!out_) throw DataError("cannot create " + tmp_.string());
}

IqFileWriter::~IqFileWriter() {
  if (!closed_) {
    out_.close();
    std::error_code ec;
    fs::remove(tmp_, ec);
  }
}

void IqFileWriter::write(std::span<const cdouble> samples) {
  const auto bytes = encode_iq(samples, fmt_, written_);
  out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out_) throw DataError("write failed on " + tmp_.string());
  written_ += samples.size();
}

void IqFileWriter::close() {
  if (closed_) return;
  out_.close();
  if (!out_) throw DataError("write failed on " + tmp_.string());
  fs::rename(tmp_, path_);
  closed_ = true;
}

// --- feature cache -------------------------------------------------------------------

std::string CacheLayout::describe() const {
  std::ostringstream os;
  os << "[" << config << "; spectrogram " << spec_rows << "x" << spec_cols << ", postcorr " << post_dim << "]";
  return os.str();
}

std::vector<std::uint8_t> encode_features(std::span<const Example> items, const CacheLayout& layout) {
  binio::Writer w;
  w.str("SPLC");
  w.put<std::uint32_t>(kCacheVersion);
  w.put<std::uint64_t>(items.size());
  w.put<std::uint64_t>(layout.spec_rows);
  w.put<std::uint64_t>(layout.spec_cols);
  w.put<std::uint64_t>(layout.post_dim);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(layout.config.size()));
  w.str(layout.config);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Example& e = items[i];
    if (e.spectrogram.rows != layout.spec_rows || e.spectrogram.cols != layout.spec_cols ||
        e.postcorr.size() != layout.post_dim) {
      throw ValidationError("feature cache item " + std::to_string(i) + " does not match layout " +
                            layout.describe());
    }
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.label));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.source.size()));
    w.str(e.source);
    for (double v : e.spectrogram.data) w.put<double>(v);
    for (double v : e.postcorr) w.put<double>(v);
  }
  w.put_crc();
  return std::move(w.buffer());
}

std::vector<Example> decode_features(std::span<const std::uint8_t> bytes, CacheLayout* layout_out,
                                     const std::string& what) {
  binio::Reader r(binio::verify_crc(bytes, what), what);
  const auto magic = r.take(4);
  if (std::memcmp(magic.data(), "SPLC", 4) != 0) throw DataError(what + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCacheVersion) {
    throw DataError(what + ": version " + std::to_string(version) + ", expected " + std::to_string(kCacheVersion));
  }
  const auto count = r.get<std::uint64_t>();
  CacheLayout layout;
  layout.spec_rows = r.get<std::uint64_t>();
  layout.spec_cols = r.get<std::uint64_t>();
  layout.post_dim = r.get<std::uint64_t>();
  const auto cfg_len = r.get<std::uint32_t>();
  const auto cfg = r.take(cfg_len);
  layout.config.assign(cfg.begin(), cfg.end());
  const std::size_t spec_n = layout.spec_rows * layout.spec_cols;
  // Each record needs at least 5 + 8 * (spec_n + post_dim) bytes.
  if (count > r.remaining() / (5 + 8 * (spec_n + layout.post_dim))) throw DataError(what + ": truncated");

  std::vector<Example> out(count);
  for (Example& e : out) {
    const auto label = r.get<std::uint8_t>();
    if (label > 1) throw DataError(what + ": bad label");
    e.label = static_cast<Label>(label);
    const auto src = r.take(r.get<std::uint32_t>());
    e.source.assign(src.begin(), src.end());
    e.spectrogram = RealMatrix(layout.spec_rows, layout.spec_cols);
    for (double& v : e.spectrogram.data) v = r.get<double>();
    e.postcorr.resize(layout.post_dim);
    for (double& v : e.postcorr) v = r.get<double>();
  }
  if (r.remaining() != 0) throw DataError(what + ": trailing bytes");
  if (layout_out) *layout_out = layout;
  return out;
}

void cache_features(const fs::path& path, std::span<const Example> items, const CacheLayout& layout) {
  binio::write_file_atomic(path, encode_features(items, layout), true);
}

std::vector<Example> load_features(const fs::path& path, const CacheLayout* expected, CacheLayout* layout_out) {
  const auto bytes = binio::read_file(path);
  CacheLayout stored;
  auto items = decode_features(bytes, &stored, "feature cache " + path.string());
  if (expected && !stored.same_dims(*expected)) {
    throw ValidationError("feature cache " + path.string() + " dimension mismatch: built with " + stored.describe() +
                          ", current configuration is " + expected->describe());
  }
  if (layout_out) *layout_out = stored;
  return items;
}

bool cache_is_current(const fs::path& cache, const std::string& key) {
  std::error_code ec;
  if (!fs::exists(cache, ec)) return false;
  std::ifstream in(cache.string() + ".key");
  if (!in) return false;
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str() == key;
}

void write_cache_key(const fs::path& cache, const std::string& key) {
  binio::write_file_atomic(cache.string() + ".key",
                           {reinterpret_cast<const std::uint8_t*>(key.data()), key.size()}, true);
}

// --- registry ------------------------------------------------------------------------

void DatasetRegistry::add(DatasetRecord record, bool check_paths) {
  if (record.tag.empty()) throw ValidationError("dataset record without a tag");
  if (records_.count(record.tag)) throw ValidationError("duplicate dataset tag '" + record.tag + "'");
  record.format.validate();
  if (check_paths) {
    for (const auto* group : {&record.captures, &record.postcorr_csv}) {
      for (const auto& [label, paths] : *group) {
        for (const auto& p : paths) {
          if (!fs::exists(p)) {
            throw DataError("dataset " + record.tag + ": " + to_string(label) + " file " + p.string() +
                            " does not exist");
          }
        }
      }
    }
  }
  const std::string tag = record.tag;
  records_.emplace(tag, std::move(record));
}

const DatasetRecord& DatasetRegistry::get(const std::string& tag) const {
  auto it = records_.find(tag);
  if (it == records_.end()) throw ValidationError("unknown dataset tag '" + tag + "'");
  return it->second;
}

std::vector<std::string> DatasetRegistry::tags() const {
  std::vector<std::string> out;
  for (const auto& [t, _] : records_) out.push_back(t);
  return out;
}

namespace {

IqFormat format_from_json(const nlohmann::json& j) {
  if (j.is_string()) return iq_preset(j.get<std::string>());
  IqFormat f = j.contains("preset") ? iq_preset(j.at("preset").get<std::string>()) : IqFormat{};
  if (j.contains("sample_type")) f.sample_type = parse_sample_type(j.at("sample_type").get<std::string>());
  if (j.contains("interleave")) {
    const auto s = j.at("interleave").get<std::string>();
    if (s != "iq" && s != "qi") throw ValidationError("interleave must be iq or qi");
    f.interleave = s == "iq" ? Interleave::IQ : Interleave::QI;
  }
  if (j.contains("endianness")) {
    const auto s = j.at("endianness").get<std::string>();
    if (s != "little" && s != "big") throw ValidationError("endianness must be little or big");
    f.endianness = s == "little" ? Endianness::Little : Endianness::Big;
  }
  if (j.contains("sample_rate_hz")) f.sample_rate_hz = j.at("sample_rate_hz").get<double>();
  if (j.contains("scale")) f.scale = j.at("scale").get<double>();
  return f;
}

nlohmann::json format_to_json(const IqFormat& f) {
  return {{"sample_type", to_string(f.sample_type)},
          {"interleave", f.interleave == Interleave::IQ ? "iq" : "qi"},
          {"endianness", f.endianness == Endianness::Little ? "little" : "big"},
          {"sample_rate_hz", f.sample_rate_hz},
          {"scale", f.scale}};
}

std::vector<fs::path> paths_from(const nlohmann::json& j, const fs::path& base) {
  std::vector<fs::path> out;
  auto one = [&](const nlohmann::json& v) {
    fs::path p = v.get<std::string>();
    out.push_back(p.is_absolute() ? p : base / p);
  };
  if (j.is_array()) {
    for (const auto& v : j) one(v);
  } else {
    one(j);
  }
  return out;
}

}  // namespace

void write_capture_info(const fs::path& capture, const CaptureInfo& info) {
  nlohmann::json j{{"format", format_to_json(info.format)}, {"label", to_string(info.label)}, {"prn", info.prn}};
  if (info.track) j["track"] = {{"code_phase", info.track->code_phase}, {"doppler_hz", info.track->doppler_hz}};
  const std::string text = j.dump(2) + "\n";
  binio::write_file_atomic(capture.string() + ".json",
                           {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::optional<CaptureInfo> read_capture_info(const fs::path& capture) {
  std::ifstream in(capture.string() + ".json");
  if (!in) return std::nullopt;
  try {
    const auto j = nlohmann::json::parse(in);
    CaptureInfo info;
    info.format = format_from_json(j.at("format"));
    const auto label = j.at("label").get<std::string>();
    if (label != "clean" && label != "spoofed") throw ValidationError("bad label '" + label + "'");
    info.label = label == "clean" ? Label::Clean : Label::Spoofed;
    info.prn = j.value("prn", 1);
    if (j.contains("track")) {
      info.track = tracking::TrackInit{j.at("track").at("code_phase").get<double>(),
                                       j.at("track").at("doppler_hz").get<double>()};
    }
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("capture sidecar " + capture.string() + ".json: " + e.what());
  }
}

DatasetRegistry load_registry(const fs::path& path, bool check_paths) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open registry " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("registry " + path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  DatasetRegistry reg;
  try {
    for (const auto& d : doc.at("datasets")) {
      DatasetRecord r;
      r.tag = d.at("tag").get<std::string>();
      r.format = d.contains("format") ? format_from_json(d.at("format")) : iq_preset("texbat");
      if (d.contains("clean")) r.captures[Label::Clean] = paths_from(d.at("clean"), base);
      if (d.contains("spoofed")) r.captures[Label::Spoofed] = paths_from(d.at("spoofed"), base);
      if (d.contains("postcorr")) {
        const auto& pc = d.at("postcorr");
        if (pc.contains("clean")) r.postcorr_csv[Label::Clean] = paths_from(pc.at("clean"), base);
        if (pc.contains("spoofed")) r.postcorr_csv[Label::Spoofed] = paths_from(pc.at("spoofed"), base);
      }
      r.prn = d.value("prn", 1);
      if (d.contains("track")) {
        const auto& t = d.at("track");
        r.track = tracking::TrackInit{t.at("code_phase").get<double>(), t.at("doppler_hz").get<double>()};
      }
      r.offset_s = d.value("offset_s", 0.0);
      r.duration_s = d.value("duration_s", 0.0);
      r.cache = d.contains("cache") ? paths_from(d.at("cache"), base).front() : base / (r.tag + ".splc");
      reg.add(std::move(r), check_paths);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("registry " + path.string() + ": " + e.what());
  }
  return reg;
}

void save_registry(const fs::path& path, const DatasetRegistry& registry) {
  nlohmann::json list = nlohmann::json::array();
  for (const std::string& tag : registry.tags()) {
    const DatasetRecord& r = registry.get(tag);
    nlohmann::json d{{"tag", r.tag}, {"format", format_to_json(r.format)}, {"prn", r.prn},
                     {"offset_s", r.offset_s}, {"duration_s", r.duration_s}, {"cache", r.cache.string()}};
    auto strs = [](const std::vector<fs::path>& ps) {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& p : ps) a.push_back(p.string());
      return a;
    };
    if (r.track) d["track"] = {{"code_phase", r.track->code_phase}, {"doppler_hz", r.track->doppler_hz}};
    for (const auto& [label, ps] : r.captures) d[to_string(label)] = strs(ps);
    for (const auto& [label, ps] : r.postcorr_csv) d["postcorr"][to_string(label)] = strs(ps);
    list.push_back(std::move(d));
  }
  const std::string text = nlohmann::json{{"datasets", list}}.dump(2) + "\n";
  binio::write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace spoofmeta::dataio
