#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spoofmeta/types.hpp"

namespace spoofmeta::tracking {

inline constexpr int kCodeLength = 1023;
inline constexpr double kChipRateHz = 1.023e6;
inline constexpr double kCodePeriodS = 1e-3;

/// One period of a GPS C/A spreading code as +/-1 chips (bit 0 -> +1, bit 1 -> -1).
struct PrnCode {
  int prn_id = 0;
  std::array<std::int8_t, kCodeLength> chips{};

  /// Chip at an arbitrary (possibly negative or fractional) code phase.
  double at(double phase_chips) const;
};

/// G1/G2 Gold-code generator with the standard phase-selector taps. PRN 34 and 37 share taps.
PrnCode gold_code(int prn_id);

/// Post-correlation observables, one entry per code period.
struct PostCorrFeatures {
  std::vector<double> code_phase;  // chips, code index at the epoch's first sample
  std::vector<double> dll_discr;   // normalized early-minus-late power
  std::vector<double> doppler_hz;  // carrier NCO frequency
  std::vector<double> fll_lock;    // in [-1, 1]
  std::vector<double> pll_lock;    // in [-1, 1]

  std::size_t epochs() const { return code_phase.size(); }
  void validate() const;
  bool operator==(const PostCorrFeatures&) const = default;
};

/// Names of the five observables, as used in CSV headers and the `--postcorr` flag.
enum class PostCorrField { CodePhase, DllDiscr, Doppler, FllLock, PllLock };
inline constexpr std::array<PostCorrField, 5> kAllPostCorrFields{
    PostCorrField::CodePhase, PostCorrField::DllDiscr, PostCorrField::Doppler,
    PostCorrField::FllLock, PostCorrField::PllLock};
const char* csv_name(PostCorrField f);  // codePhase, dllDiscr, doppler, fllLock, pllLock
const char* flag_name(PostCorrField f);  // codephase, dlldiscr, doppler, flllock, plllock
std::vector<PostCorrField> parse_postcorr_subset(const std::string& csv_list);
const std::vector<double>& field(const PostCorrFeatures& f, PostCorrField which);

/// Flatten a segment's epochs for the selected fields, followed by the per-field mean and
/// standard deviation. Code phase is expressed as a fraction of the code period and Doppler
/// in kHz so every input stays O(1).
std::vector<double> postcorr_vector(const PostCorrFeatures& f,
                                    std::span<const PostCorrField> subset);
std::size_t postcorr_vector_size(std::size_t epochs, std::size_t fields);

/// Normalized early-minus-late power, (E - L) / (E + L).
///
/// Code phase is the code index at the segment's first sample, so a positive result means
/// the true code phase is ahead of (leads) `code_phase_hat`. Correlation uses every whole
/// code period in the segment. Throws LossOfLockError when E + L == 0.
double early_late_discriminator(const IqSegment& segment, const PrnCode& code,
                                double code_phase_hat, double doppler_hat,
                                double spacing = 0.5);

struct TrackerConfig {
  double dll_spacing_chips = 0.5;
  double dll_bandwidth_hz = 2.0;
  double pll_bandwidth_hz = 15.0;
  double fll_bandwidth_hz = 10.0;
  /// Lock is lost when |P|^2 / sum|s|^2 stays below this for 3 epochs. For a noiseless
  /// aligned replica the ratio equals the epoch length; for noise alone its mean is 1.
  double lock_power_threshold = 3.0;
  /// Smoothing factor of the exponential average applied to the lock detectors.
  double lock_smoothing = 0.3;
};

struct TrackInit {
  double code_phase = 0.0;  // chips at the first sample handed to the tracker
  double doppler_hz = 0.0;
};

/// Code/carrier tracking channel: early-late DLL, Costas PLL with FLL assist and the two lock
/// detectors. State carries across calls to `process`, so a capture may be fed segment by
/// segment.
///
///  pll_lock = EMA of (I^2 - Q^2) / (I^2 + Q^2) of the prompt, i.e. cos(2 * phase error).
///  fll_lock = EMA of (dot^2 - cross^2) / (dot^2 + cross^2) of the two half-epoch prompts,
///             i.e. cos(2 * phase rotation across half an epoch).
class Tracker {
 public:
  Tracker(PrnCode code, double sample_rate_hz, TrackInit init, TrackerConfig cfg = {});

  /// Track whole code periods of `samples`; a trailing partial period is ignored.
  PostCorrFeatures process(std::span<const cdouble> samples);

  double code_phase() const { return code_phase_; }
  double doppler_hz() const { return carrier_freq_hz_; }

 private:
  PrnCode code_;
  double fs_;
  TrackerConfig cfg_;
  double code_phase_;
  double carrier_freq_hz_;
  double carrier_phase_ = 0.0;  // cycles
  double pll_integrator_hz_;
  double code_rate_integrator_ = 0.0;
  double pll_lock_ema_ = 1.0;
  double fll_lock_ema_ = 1.0;
  bool first_epoch_ = true;
  int weak_epochs_ = 0;
  long long epoch_index_ = 0;
};

/// Track one segment from the given initial estimates.
PostCorrFeatures track_segment(const IqSegment& segment, const PrnCode& code, TrackInit init,
                               TrackerConfig cfg = {});

/// Post-correlation features of one segment window of a receiver log.
struct WindowedPostCorr {
  std::size_t segment_index = 0;
  PostCorrFeatures features;
};

/// Binds the required observables (and the timestamp) to CSV header names.
struct ColumnMap {
  std::string time = "time";
  std::map<PostCorrField, std::string> columns{
      {PostCorrField::CodePhase, "codePhase"}, {PostCorrField::DllDiscr, "dllDiscr"},
      {PostCorrField::Doppler, "doppler"},     {PostCorrField::FllLock, "fllLock"},
      {PostCorrField::PllLock, "pllLock"}};

  /// Apply a `name=header` binding as given to `--col`.
  void bind(const std::string& assignment);
};

/// Read a receiver log CSV and bucket its rows into consecutive windows of
/// `segment_duration_s` starting at `origin_s`, matching the capture segmentation.
std::vector<WindowedPostCorr> ingest_postcorr_csv(const std::filesystem::path& path,
                                                  const ColumnMap& columns = {},
                                                  double segment_duration_s = 0.004,
                                                  double origin_s = 0.0);

/// Write windows in the layout `ingest_postcorr_csv` reads with the default column map.
/// Epoch e of window i is stamped origin + i * segment_duration + e * epoch_duration.
void export_postcorr_csv(const std::filesystem::path& path,
                         std::span<const WindowedPostCorr> windows,
                         double segment_duration_s = 0.004, double origin_s = 0.0,
                         double epoch_duration_s = kCodePeriodS);

}  // namespace spoofmeta::tracking
