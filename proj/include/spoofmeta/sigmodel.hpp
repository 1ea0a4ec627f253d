#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spoofmeta/tracking.hpp"
#include "spoofmeta/types.hpp"

namespace spoofmeta::sigmodel {

struct Path {
  double gain = 1.0;     // amplitude
  double delay_s = 0.0;  // quantized to the nearest sample at synthesis time
};

/// Multipath impulse response of one transmitter: delays non-negative and strictly increasing.
struct ChannelSpec {
  std::vector<Path> paths{Path{}};
  void validate(const std::string& where) const;
};

/// Transmitter hardware impairments, applied in this order: cubic nonlinearity, IQ imbalance,
/// DC offset, carrier frequency offset, phase noise. The default value is the identity.
struct FingerprintSpec {
  double iq_gain_imbalance = 1.0;
  double iq_phase_imbalance = 0.0;  // rad
  cdouble dc_offset{0.0, 0.0};
  double carrier_freq_offset = 0.0;  // Hz
  double phase_noise_std = 0.0;      // rad per sample step
  double cubic_nonlinearity = 0.0;   // y = x + c * x * |x|^2

  bool is_identity() const;
  void validate(const std::string& where) const;
};

enum class Role { Genuine, Spoofer };

struct TransmitterSpec {
  int prn_id = 1;
  FingerprintSpec fingerprint;
  ChannelSpec channel;
  /// Informational; the synthesized amplitude comes from the path gains.
  /// See `gain_for_cn0` for converting a C/N0 target into a gain.
  double carrier_to_noise_density_dbhz = 45.0;
  Role role = Role::Genuine;

  void validate(const std::string& where) const;
};

struct SceneSpec {
  std::vector<TransmitterSpec> genuine;
  std::vector<TransmitterSpec> spoofers;
  double noise_std = 0.0;
  double sample_rate_hz = 4.092e6;
  double duration_s = 0.004;
  std::uint64_t rng_seed = 0;

  /// Throws ValidationError naming the offending field.
  void validate() const;
  std::size_t num_samples() const;
};

/// Path amplitude giving the requested C/N0 against complex noise of total std `noise_std`.
double gain_for_cn0(double cn0_dbhz, double noise_std, double sample_rate_hz);

/// BPSK +/-1 chips of `code` at 1.023 Mcps, sampled at `sample_rate_hz`. Sample i covers
/// absolute index first_index + i, with chip 0 starting at index 0; no navigation data.
ComplexSignal bpsk_waveform(const tracking::PrnCode& code, double sample_rate_hz,
                            std::int64_t first_index, std::size_t count);

/// Stateful impairment chain for one transmitter. The carrier rotation depends on the
/// absolute sample index and the phase-noise walk on the call sequence, so successive calls
/// over consecutive blocks reproduce a single call over the whole range.
class FingerprintProcessor {
 public:
  FingerprintProcessor(FingerprintSpec spec, double sample_rate_hz, std::uint64_t seed);
  void apply(std::span<const cdouble> in, std::int64_t first_index, std::span<cdouble> out);

 private:
  FingerprintSpec spec_;
  double fs_;
  std::mt19937_64 rng_;
  // Kept across calls: the distribution caches half of each generated pair.
  std::normal_distribution<double> step_;
  double phase_noise_ = 0.0;
};

/// Apply `fp` to a whole sequence whose first sample has absolute index 0.
ComplexSignal apply_fingerprint(std::span<const cdouble> samples, const FingerprintSpec& fp,
                                std::uint64_t seed, double sample_rate_hz);

/// Seed of a transmitter's impairment stream. It depends on the transmitter's role and its
/// index within its list, so moving spoofers into the genuine list of another scene keeps
/// their streams.
std::uint64_t transmitter_seed(std::uint64_t scene_seed, Role role, std::size_t index);

/// Incremental scene synthesis; `next(n)` returns the following n samples of the scene.
class SceneSynthesizer {
 public:
  explicit SceneSynthesizer(SceneSpec scene);
  ~SceneSynthesizer();
  SceneSynthesizer(SceneSynthesizer&&) noexcept;
  SceneSynthesizer& operator=(SceneSynthesizer&&) noexcept;

  ComplexSignal next(std::size_t n);
  std::size_t produced() const { return produced_; }
  const SceneSpec& scene() const { return scene_; }

 private:
  struct Emitter;
  ComplexSignal sum(std::vector<Emitter>& emitters, std::size_t n);

  SceneSpec scene_;
  std::vector<Emitter> genuine_;
  std::vector<Emitter> spoofers_;
  std::mt19937_64 noise_rng_;
  std::normal_distribution<double> noise_;
  std::size_t produced_ = 0;
};

/// Genuine-only scene: sum over transmitters and paths of gain * f(s)(t - delay) plus noise.
ComplexSignal synthesize_clean(const SceneSpec& scene);

struct Capture {
  ComplexSignal samples;
  double sample_rate_hz = 0.0;
  Label label = Label::Clean;
};

/// Genuine plus spoofer contributions plus noise. Label is Spoofed iff there are spoofers.
Capture synthesize_scene(const SceneSpec& scene);

/// Read a scene from its JSON description (schema documented in the README).
SceneSpec load_scene(const std::filesystem::path& path);
SceneSpec parse_scene_json(const std::string& text);
std::string scene_to_json(const SceneSpec& scene);

}  // namespace spoofmeta::sigmodel
