#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spoofmeta/embedder.hpp"
#include "spoofmeta/features.hpp"
#include "spoofmeta/metalearn.hpp"
#include "spoofmeta/sigmodel.hpp"
#include "spoofmeta/tracking.hpp"

namespace spoofmeta::pipeline {

/// Everything needed to turn IQ segments into encoder examples.
struct FeaturizeConfig {
  features::FeatureConfig spectrogram;
  tracking::TrackerConfig tracker;
  std::vector<tracking::PostCorrField> fields{tracking::kAllPostCorrFields.begin(),
                                              tracking::kAllPostCorrFields.end()};

  std::size_t epochs_per_segment() const;
  std::size_t post_dim() const;
  /// One-line description, used for cache layouts and keys.
  std::string describe() const;
};

/// Spectrogram of `segment` plus the flattened post-correlation vector of `post`.
embedder::Example make_example(const IqSegment& segment, const tracking::PostCorrFeatures& post,
                               const FeaturizeConfig& cfg);

/// Tracking target for captures whose post-correlation features are computed here.
struct TrackTarget {
  int prn = 1;
  tracking::TrackInit init;
};

/// Incremental featurization of one capture. Feed consecutive blocks (any length); every
/// completed segment yields one example. Post-correlation features come either from a
/// tracking channel that runs continuously across segments or from receiver-log windows
/// matched by segment index.
class StreamFeaturizer {
 public:
  StreamFeaturizer(double sample_rate_hz, Label label, FeaturizeConfig cfg, const TrackTarget& target,
                   std::string source);
  StreamFeaturizer(double sample_rate_hz, Label label, FeaturizeConfig cfg,
                   std::vector<tracking::WindowedPostCorr> windows, std::string source);

  std::vector<embedder::Example> feed(std::span<const cdouble> block);
  std::size_t segments_done() const { return index_; }
  std::size_t segment_samples() const { return seg_len_; }

 private:
  embedder::Example finish(IqSegment segment);

  double fs_;
  Label label_;
  FeaturizeConfig cfg_;
  std::string source_;
  std::size_t seg_len_;
  std::optional<tracking::Tracker> tracker_;
  std::map<std::size_t, tracking::PostCorrFeatures> windows_;
  ComplexSignal pending_;
  std::size_t index_ = 0;
};

/// Segment a capture and featurize every segment. A single tracking channel runs across
/// the whole capture so the loops stay continuous between segments.
std::vector<embedder::Example> featurize_capture(std::span<const cdouble> capture, double sample_rate_hz,
                                                 Label label, const FeaturizeConfig& cfg,
                                                 const TrackTarget& target, const std::string& source);

/// Same, with post-correlation features taken from receiver-log windows (matched by segment
/// index; a segment without a complete window is an error).
std::vector<embedder::Example> featurize_capture(std::span<const cdouble> capture, double sample_rate_hz,
                                                 Label label, const FeaturizeConfig& cfg,
                                                 std::span<const tracking::WindowedPostCorr> windows,
                                                 const std::string& source);

/// Keep only `subset` of a vector built with every post-correlation field.
std::vector<double> select_postcorr(std::span<const double> all_fields, std::size_t epochs,
                                    std::span<const tracking::PostCorrField> subset);

/// Code phase and Doppler of the first path of a scene's first genuine transmitter, the
/// usual acquisition result handed to the tracker.
TrackTarget target_of(const sigmodel::SceneSpec& scene);

// --- synthetic benchmark -------------------------------------------------------------

/// One spoofer hardware family: the fingerprint shared by every spoofed capture of a dataset.
struct Family {
  std::string tag;
  sigmodel::FingerprintSpec spoofer;
};

/// ds2, ds3, ds4, ds7 and ds8, each with a distinct spoofer fingerprint.
std::vector<Family> default_families();

/// Per-example scene randomization. Clean scenes hold the target satellite plus
/// `extra_satellites` others; spoofed scenes add a same-PRN replica offset in code phase and
/// carrying the family fingerprint.
struct BenchmarkConfig {
  double sample_rate_hz = 4.092e6;
  std::size_t examples_per_class = 40;
  std::size_t extra_satellites = 2;
  double noise_std_min = 2.0, noise_std_max = 4.0;
  double doppler_max_hz = 3000.0;
  double spoofer_gain_min = 1.3, spoofer_gain_max = 2.0;
  double spoofer_offset_min_chips = 0.2, spoofer_offset_max_chips = 0.6;
  double spoofer_doppler_offset_max_hz = 20.0;
  double init_code_error_chips = 0.0;
  double init_doppler_error_hz = 20.0;
  std::uint64_t seed = 1;
  FeaturizeConfig features = default_features();

  static FeaturizeConfig default_features();
};

/// Scene of example `index` of a family; deterministic in (cfg.seed, family tag, label, index).
sigmodel::SceneSpec benchmark_scene(const BenchmarkConfig& cfg, const Family& family, Label label,
                                    std::size_t index);
/// Tracker initialization used for a benchmark scene (truth plus a seeded acquisition error).
TrackTarget benchmark_target(const BenchmarkConfig& cfg, const sigmodel::SceneSpec& scene);

/// `examples_per_class` clean and spoofed examples of one family.
std::vector<embedder::Example> build_family(const BenchmarkConfig& cfg, const Family& family);

/// Every family featurized and registered under its tag.
metalearn::FeatureRegistry build_benchmark(const BenchmarkConfig& cfg, std::span<const Family> families);

}  // namespace spoofmeta::pipeline
