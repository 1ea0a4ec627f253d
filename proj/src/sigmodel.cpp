#include "spoofmeta/sigmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <sstream>

#include "spoofmeta/error.hpp"
#include "spoofmeta/rng.hpp"

namespace spoofmeta::sigmodel {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ValidationError(field + " " + what);
}

bool finite(cdouble z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); }

std::int64_t delay_samples(double delay_s, double fs) {
  return static_cast<std::int64_t>(std::llround(delay_s * fs));
}

}  // namespace

void ChannelSpec::validate(const std::string& where) const {
  require(!paths.empty(), where + ".paths", "must contain at least one path");
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const std::string f = where + ".paths[" + std::to_string(i) + "]";
    require(std::isfinite(paths[i].gain), f + ".gain", "must be finite");
    require(std::isfinite(paths[i].delay_s) && paths[i].delay_s >= 0.0, f + ".delay_s",
            "must be finite and non-negative");
    if (i > 0) {
      require(paths[i].delay_s > paths[i - 1].delay_s, f + ".delay_s",
              "must be strictly greater than the previous path delay");
    }
  }
}

bool FingerprintSpec::is_identity() const {
  return iq_gain_imbalance == 1.0 && iq_phase_imbalance == 0.0 && dc_offset == cdouble{} &&
         carrier_freq_offset == 0.0 && phase_noise_std == 0.0 && cubic_nonlinearity == 0.0;
}

void FingerprintSpec::validate(const std::string& where) const {
  require(std::isfinite(iq_gain_imbalance) && iq_gain_imbalance > 0.0,
          where + ".iq_gain_imbalance", "must be finite and > 0");
  require(std::isfinite(iq_phase_imbalance), where + ".iq_phase_imbalance", "must be finite");
  require(finite(dc_offset), where + ".dc_offset", "must be finite");
  require(std::isfinite(carrier_freq_offset), where + ".carrier_freq_offset", "must be finite");
  require(std::isfinite(phase_noise_std) && phase_noise_std >= 0.0, where + ".phase_noise_std",
          "must be finite and >= 0");
  require(std::isfinite(cubic_nonlinearity), where + ".cubic_nonlinearity", "must be finite");
}

void TransmitterSpec::validate(const std::string& where) const {
  require(prn_id >= 1 && prn_id <= 37, where + ".prn", "must be in 1..37");
  require(std::isfinite(carrier_to_noise_density_dbhz), where + ".cn0_dbhz", "must be finite");
  fingerprint.validate(where + ".fingerprint");
  channel.validate(where);
}

void SceneSpec::validate() const {
  require(std::isfinite(sample_rate_hz) && sample_rate_hz > 0.0, "sample_rate_hz", "must be > 0");
  require(std::isfinite(duration_s) && duration_s > 0.0, "duration_s", "must be > 0");
  require(std::isfinite(noise_std) && noise_std >= 0.0, "noise_std", "must be >= 0");
  for (std::size_t i = 0; i < genuine.size(); ++i) {
    genuine[i].validate("genuine[" + std::to_string(i) + "]");
  }
  for (std::size_t i = 0; i < spoofers.size(); ++i) {
    spoofers[i].validate("spoofers[" + std::to_string(i) + "]");
  }
  require(num_samples() > 0, "duration_s", "yields zero samples at this sample rate");
}

std::size_t SceneSpec::num_samples() const {
  return static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
}

double gain_for_cn0(double cn0_dbhz, double noise_std, double sample_rate_hz) {
  const double n0 = noise_std * noise_std / sample_rate_hz;
  return std::sqrt(std::pow(10.0, cn0_dbhz / 10.0) * n0);
}

ComplexSignal bpsk_waveform(const tracking::PrnCode& code, double sample_rate_hz,
                            std::int64_t first_index, std::size_t count) {
  ComplexSignal out(count);
  const double chips_per_sample = tracking::kChipRateHz / sample_rate_hz;
  for (std::size_t i = 0; i < count; ++i) {
    const double idx = static_cast<double>(first_index + static_cast<std::int64_t>(i));
    out[i] = code.at(idx * chips_per_sample);
  }
  return out;
}

FingerprintProcessor::FingerprintProcessor(FingerprintSpec spec, double sample_rate_hz,
                                           std::uint64_t seed)
    : spec_(spec),
      fs_(sample_rate_hz),
      rng_(seed),
      step_(0.0, spec.phase_noise_std > 0.0 ? spec.phase_noise_std : 1.0) {}

void FingerprintProcessor::apply(std::span<const cdouble> in, std::int64_t first_index,
                                 std::span<cdouble> out) {
  const bool cubic = spec_.cubic_nonlinearity != 0.0;
  const bool iq = spec_.iq_gain_imbalance != 1.0 || spec_.iq_phase_imbalance != 0.0;
  const bool dc = spec_.dc_offset != cdouble{};
  const bool cfo = spec_.carrier_freq_offset != 0.0;
  const bool pn = spec_.phase_noise_std != 0.0;
  const double cos_phi = std::cos(spec_.iq_phase_imbalance);
  const double sin_phi = std::sin(spec_.iq_phase_imbalance);

  for (std::size_t i = 0; i < in.size(); ++i) {
    cdouble x = in[i];
    if (cubic) x += spec_.cubic_nonlinearity * x * std::norm(x);
    if (iq) {
      const double re = x.real(), im = x.imag();
      x = {re, spec_.iq_gain_imbalance * (im * cos_phi - re * sin_phi)};
    }
    if (dc) x += spec_.dc_offset;
    if (cfo) {
      const double n = static_cast<double>(first_index + static_cast<std::int64_t>(i));
      x *= std::polar(1.0, kTwoPi * spec_.carrier_freq_offset * n / fs_);
    }
    if (pn) {
      phase_noise_ += step_(rng_);
      x *= std::polar(1.0, phase_noise_);
    }
    out[i] = x;
  }
}

ComplexSignal apply_fingerprint(std::span<const cdouble> samples, const FingerprintSpec& fp,
                                std::uint64_t seed, double sample_rate_hz) {
  fp.validate("fingerprint");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!finite(samples[i])) {
      throw ValidationError("input sample " + std::to_string(i) + " is not finite");
    }
  }
  ComplexSignal out(samples.size());
  if (fp.is_identity()) {
    std::copy(samples.begin(), samples.end(), out.begin());
    return out;
  }
  FingerprintProcessor proc(fp, sample_rate_hz, seed);
  proc.apply(samples, 0, out);
  return out;
}

std::uint64_t transmitter_seed(std::uint64_t scene_seed, Role role, std::size_t index) {
  return mix_seed(scene_seed, role == Role::Genuine ? 0x67656eULL : 0x73706fULL, index);
}

struct SceneSynthesizer::Emitter {
  tracking::PrnCode code;
  FingerprintProcessor fingerprint;
  std::vector<std::pair<double, std::int64_t>> taps;  // gain, delay in samples
  std::int64_t max_delay = 0;
  ComplexSignal history;  // fingerprinted samples at indices [next - max_delay, next)
};

SceneSynthesizer::SceneSynthesizer(SceneSpec scene)
    : scene_(std::move(scene)),
      noise_rng_(mix_seed(scene_.rng_seed, kNoiseStream, 0)),
      noise_(0.0, scene_.noise_std > 0.0 ? scene_.noise_std / std::numbers::sqrt2 : 1.0) {
  scene_.validate();
  auto build = [&](const std::vector<TransmitterSpec>& list, std::vector<Emitter>& dst) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      const TransmitterSpec& t = list[i];
      Emitter e{tracking::gold_code(t.prn_id),
                FingerprintProcessor(t.fingerprint, scene_.sample_rate_hz,
                                     transmitter_seed(scene_.rng_seed, t.role, i)),
                {},
                0,
                {}};
      for (const Path& p : t.channel.paths) {
        e.taps.emplace_back(p.gain, delay_samples(p.delay_s, scene_.sample_rate_hz));
      }
      e.max_delay = e.taps.back().second;
      ComplexSignal raw =
          bpsk_waveform(e.code, scene_.sample_rate_hz, -e.max_delay,
                        static_cast<std::size_t>(e.max_delay));
      e.history.resize(raw.size());
      e.fingerprint.apply(raw, -e.max_delay, e.history);
      dst.push_back(std::move(e));
    }
  };
  build(scene_.genuine, genuine_);
  build(scene_.spoofers, spoofers_);
}

SceneSynthesizer::~SceneSynthesizer() = default;
SceneSynthesizer::SceneSynthesizer(SceneSynthesizer&&) noexcept = default;
SceneSynthesizer& SceneSynthesizer::operator=(SceneSynthesizer&&) noexcept = default;

ComplexSignal SceneSynthesizer::sum(std::vector<Emitter>& emitters, std::size_t n) {
  ComplexSignal acc(n);
  const auto first = static_cast<std::int64_t>(produced_);
  for (Emitter& e : emitters) {
    const auto hist = static_cast<std::size_t>(e.max_delay);
    ComplexSignal buf(hist + n);
    std::copy(e.history.begin(), e.history.end(), buf.begin());
    const ComplexSignal raw = bpsk_waveform(e.code, scene_.sample_rate_hz, first, n);
    e.fingerprint.apply(raw, first, std::span(buf).subspan(hist));
    for (const auto& [gain, delay] : e.taps) {
      const std::size_t offset = hist - static_cast<std::size_t>(delay);
      for (std::size_t i = 0; i < n; ++i) acc[i] += gain * buf[offset + i];
    }
    std::copy(buf.end() - static_cast<std::ptrdiff_t>(hist), buf.end(), e.history.begin());
  }
  return acc;
}

ComplexSignal SceneSynthesizer::next(std::size_t n) {
  ComplexSignal out = sum(genuine_, n);
  if (!spoofers_.empty()) {
    const ComplexSignal spoof = sum(spoofers_, n);
    for (std::size_t i = 0; i < n; ++i) out[i] += spoof[i];
  }
  if (scene_.noise_std > 0.0) {
    for (cdouble& x : out) {
      const double re = noise_(noise_rng_);
      const double im = noise_(noise_rng_);
      x += cdouble(re, im);
    }
  }
  produced_ += n;
  return out;
}

ComplexSignal synthesize_clean(const SceneSpec& scene) {
  if (!scene.spoofers.empty()) {
    throw ValidationError("spoofers must be empty for a clean scene");
  }
  SceneSynthesizer synth(scene);
  return synth.next(scene.num_samples());
}

Capture synthesize_scene(const SceneSpec& scene) {
  SceneSynthesizer synth(scene);
  return {synth.next(scene.num_samples()), scene.sample_rate_hz,
          scene.spoofers.empty() ? Label::Clean : Label::Spoofed};
}

// --- JSON scene files -------------------------------------------------------------------

namespace {

using nlohmann::json;

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(where + "." + key + " has the wrong type");
  }
}

TransmitterSpec parse_transmitter(const json& j, Role role, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
  TransmitterSpec t;
  t.role = role;
  t.prn_id = get_or<int>(j, "prn", 1, where);
  t.carrier_to_noise_density_dbhz = get_or<double>(j, "cn0_dbhz", 45.0, where);
  if (j.contains("fingerprint")) {
    const json& f = j.at("fingerprint");
    const std::string fw = where + ".fingerprint";
    FingerprintSpec& fp = t.fingerprint;
    fp.iq_gain_imbalance = get_or<double>(f, "iq_gain_imbalance", 1.0, fw);
    fp.iq_phase_imbalance = get_or<double>(f, "iq_phase_imbalance", 0.0, fw);
    const auto dc = get_or<std::vector<double>>(f, "dc_offset", {0.0, 0.0}, fw);
    if (dc.size() != 2) throw ValidationError(fw + ".dc_offset must be [re, im]");
    fp.dc_offset = {dc[0], dc[1]};
    fp.carrier_freq_offset = get_or<double>(f, "carrier_freq_offset", 0.0, fw);
    fp.phase_noise_std = get_or<double>(f, "phase_noise_std", 0.0, fw);
    fp.cubic_nonlinearity = get_or<double>(f, "cubic_nonlinearity", 0.0, fw);
  }
  if (j.contains("paths")) {
    t.channel.paths.clear();
    const json& paths = j.at("paths");
    if (!paths.is_array()) throw ValidationError(where + ".paths must be an array");
    for (std::size_t i = 0; i < paths.size(); ++i) {
      const std::string pw = where + ".paths[" + std::to_string(i) + "]";
      t.channel.paths.push_back(
          {get_or<double>(paths[i], "gain", 1.0, pw), get_or<double>(paths[i], "delay_s", 0.0, pw)});
    }
  }
  return t;
}

json transmitter_json(const TransmitterSpec& t) {
  const FingerprintSpec& fp = t.fingerprint;
  json paths = json::array();
  for (const Path& p : t.channel.paths) paths.push_back({{"gain", p.gain}, {"delay_s", p.delay_s}});
  return {{"prn", t.prn_id},
          {"cn0_dbhz", t.carrier_to_noise_density_dbhz},
          {"fingerprint",
           {{"iq_gain_imbalance", fp.iq_gain_imbalance},
            {"iq_phase_imbalance", fp.iq_phase_imbalance},
            {"dc_offset", {fp.dc_offset.real(), fp.dc_offset.imag()}},
            {"carrier_freq_offset", fp.carrier_freq_offset},
            {"phase_noise_std", fp.phase_noise_std},
            {"cubic_nonlinearity", fp.cubic_nonlinearity}}},
          {"paths", paths}};
}

}  // namespace

SceneSpec parse_scene_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("scene file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("scene file must hold a JSON object");
  SceneSpec s;
  s.sample_rate_hz = get_or<double>(j, "sample_rate_hz", s.sample_rate_hz, "scene");
  s.duration_s = get_or<double>(j, "duration_s", s.duration_s, "scene");
  s.noise_std = get_or<double>(j, "noise_std", s.noise_std, "scene");
  s.rng_seed = get_or<std::uint64_t>(j, "rng_seed", s.rng_seed, "scene");
  for (const char* key : {"genuine", "spoofers"}) {
    if (!j.contains(key)) continue;
    const json& list = j.at(key);
    if (!list.is_array()) throw ValidationError(std::string(key) + " must be an array");
    const Role role = std::string(key) == "genuine" ? Role::Genuine : Role::Spoofer;
    for (std::size_t i = 0; i < list.size(); ++i) {
      (role == Role::Genuine ? s.genuine : s.spoofers)
          .push_back(parse_transmitter(list[i], role,
                                       std::string(key) + "[" + std::to_string(i) + "]"));
    }
  }
  s.validate();
  return s;
}

SceneSpec load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scene file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene_json(ss.str());
}

std::string scene_to_json(const SceneSpec& scene) {
  json g = json::array(), s = json::array();
  for (const auto& t : scene.genuine) g.push_back(transmitter_json(t));
  for (const auto& t : scene.spoofers) s.push_back(transmitter_json(t));
  json j{{"sample_rate_hz", scene.sample_rate_hz},
         {"duration_s", scene.duration_s},
         {"noise_std", scene.noise_std},
         {"rng_seed", scene.rng_seed},
         {"genuine", g},
         {"spoofers", s}};
  return j.dump(2);
}

}  // namespace spoofmeta::sigmodel
