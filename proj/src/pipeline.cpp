#include "spoofmeta/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "spoofmeta/error.hpp"
#include "spoofmeta/rng.hpp"

namespace spoofmeta::pipeline {

using embedder::Example;

std::size_t FeaturizeConfig::epochs_per_segment() const {
  return static_cast<std::size_t>(std::floor(spectrogram.segment_duration_s / tracking::kCodePeriodS + 1e-9));
}

std::size_t FeaturizeConfig::post_dim() const {
  return tracking::postcorr_vector_size(epochs_per_segment(), fields.size());
}

std::string FeaturizeConfig::describe() const {
  std::ostringstream os;
  os << spectrogram.stft.describe() << " norm=" << features::to_string(spectrogram.normalization)
     << " decim=" << spectrogram.decimation << " seg=" << spectrogram.segment_duration_s << "s postcorr=";
  for (std::size_t i = 0; i < fields.size(); ++i) os << (i ? "," : "") << tracking::flag_name(fields[i]);
  return os.str();
}

Example make_example(const IqSegment& segment, const tracking::PostCorrFeatures& post, const FeaturizeConfig& cfg) {
  Example e;
  e.spectrogram = features::spectrogram_of(segment, cfg.spectrogram).magnitudes;
  e.postcorr = tracking::postcorr_vector(post, cfg.fields);
  e.label = segment.label;
  e.source = segment.source_tag;
  return e;
}

StreamFeaturizer::StreamFeaturizer(double sample_rate_hz, Label label, FeaturizeConfig cfg,
                                   const TrackTarget& target, std::string source)
    : fs_(sample_rate_hz), label_(label), cfg_(std::move(cfg)), source_(std::move(source)) {
  cfg_.spectrogram.resolve(fs_);
  seg_len_ = features::segment_length(fs_, cfg_.spectrogram.segment_duration_s);
  tracker_.emplace(tracking::gold_code(target.prn), fs_, target.init, cfg_.tracker);
}

StreamFeaturizer::StreamFeaturizer(double sample_rate_hz, Label label, FeaturizeConfig cfg,
                                   std::vector<tracking::WindowedPostCorr> windows, std::string source)
    : fs_(sample_rate_hz), label_(label), cfg_(std::move(cfg)), source_(std::move(source)) {
  cfg_.spectrogram.resolve(fs_);
  seg_len_ = features::segment_length(fs_, cfg_.spectrogram.segment_duration_s);
  for (auto& w : windows) windows_[w.segment_index] = std::move(w.features);
}

Example StreamFeaturizer::finish(IqSegment segment) {
  if (tracker_) return make_example(segment, tracker_->process(segment.samples), cfg_);
  auto it = windows_.find(index_);
  const std::size_t epochs = cfg_.epochs_per_segment();
  if (it == windows_.end() || it->second.epochs() != epochs) {
    throw DataError(source_ + ": no complete post-correlation window for segment " + std::to_string(index_) +
                    " (expected " + std::to_string(epochs) + " epochs)");
  }
  return make_example(segment, it->second, cfg_);
}

std::vector<Example> StreamFeaturizer::feed(std::span<const cdouble> block) {
  std::vector<Example> out;
  std::size_t pos = 0;
  while (pos < block.size()) {
    const std::size_t take = std::min(seg_len_ - pending_.size(), block.size() - pos);
    pending_.insert(pending_.end(), block.begin() + static_cast<std::ptrdiff_t>(pos),
                    block.begin() + static_cast<std::ptrdiff_t>(pos + take));
    pos += take;
    if (pending_.size() == seg_len_) {
      IqSegment seg{std::move(pending_), fs_, static_cast<double>(index_ * seg_len_) / fs_, label_, source_};
      pending_.clear();
      out.push_back(finish(std::move(seg)));
      ++index_;
    }
  }
  return out;
}

std::vector<Example> featurize_capture(std::span<const cdouble> capture, double sample_rate_hz, Label label,
                                       const FeaturizeConfig& cfg, const TrackTarget& target,
                                       const std::string& source) {
  if (capture.empty()) throw ValidationError(source + ": empty capture");
  StreamFeaturizer f(sample_rate_hz, label, cfg, target, source);
  auto out = f.feed(capture);
  if (out.empty()) throw ValidationError(source + ": capture shorter than one segment");
  return out;
}

std::vector<Example> featurize_capture(std::span<const cdouble> capture, double sample_rate_hz, Label label,
                                       const FeaturizeConfig& cfg,
                                       std::span<const tracking::WindowedPostCorr> windows,
                                       const std::string& source) {
  if (capture.empty()) throw ValidationError(source + ": empty capture");
  StreamFeaturizer f(sample_rate_hz, label, cfg, {windows.begin(), windows.end()}, source);
  auto out = f.feed(capture);
  if (out.empty()) throw ValidationError(source + ": capture shorter than one segment");
  return out;
}

std::vector<double> select_postcorr(std::span<const double> all_fields, std::size_t epochs,
                                    std::span<const tracking::PostCorrField> subset) {
  const std::size_t n = tracking::kAllPostCorrFields.size();
  if (all_fields.size() != tracking::postcorr_vector_size(epochs, n)) {
    throw ValidationError("post-correlation vector of length " + std::to_string(all_fields.size()) +
                          " does not hold all fields for " + std::to_string(epochs) + " epochs");
  }
  std::vector<double> out;
  for (auto f : subset) {
    const auto i = static_cast<std::size_t>(f);
    out.insert(out.end(), all_fields.begin() + static_cast<std::ptrdiff_t>(i * epochs),
               all_fields.begin() + static_cast<std::ptrdiff_t>((i + 1) * epochs));
  }
  for (auto f : subset) {
    const auto i = static_cast<std::size_t>(f);
    out.push_back(all_fields[n * epochs + 2 * i]);
    out.push_back(all_fields[n * epochs + 2 * i + 1]);
  }
  return out;
}

TrackTarget target_of(const sigmodel::SceneSpec& scene) {
  if (scene.genuine.empty()) throw ValidationError("scene has no genuine transmitter to track");
  const auto& tx = scene.genuine.front();
  const double delay_samples = std::round(tx.channel.paths.front().delay_s * scene.sample_rate_hz);
  double phase = std::fmod(-delay_samples * tracking::kChipRateHz / scene.sample_rate_hz, tracking::kCodeLength);
  if (phase < 0.0) phase += tracking::kCodeLength;
  return {tx.prn_id, {phase, tx.fingerprint.carrier_freq_offset}};
}

// --- synthetic benchmark -------------------------------------------------------------

std::vector<Family> default_families() {
  std::vector<Family> f(5);
  f[0].tag = "ds2";
  f[0].spoofer.iq_gain_imbalance = 1.25;
  f[0].spoofer.iq_phase_imbalance = 0.15;
  f[1].tag = "ds3";
  f[1].spoofer.dc_offset = {0.4, -0.3};
  f[2].tag = "ds4";
  f[2].spoofer.cubic_nonlinearity = -0.08;
  f[2].spoofer.phase_noise_std = 0.01;
  f[3].tag = "ds7";
  f[3].spoofer.carrier_freq_offset = 150.0;
  f[3].spoofer.iq_gain_imbalance = 0.85;
  f[4].tag = "ds8";
  f[4].spoofer.dc_offset = {-0.25, 0.25};
  f[4].spoofer.iq_phase_imbalance = -0.2;
  f[4].spoofer.phase_noise_std = 0.005;
  return f;
}

FeaturizeConfig BenchmarkConfig::default_features() {
  FeaturizeConfig c;
  c.spectrogram.stft.fft_size = 32;
  c.spectrogram.stft.hop = 32;
  c.spectrogram.stft.window = features::Window::Hann;
  c.spectrogram.decimation = 16;
  c.spectrogram.normalization = features::Normalization::LogStd;
  return c;
}

namespace {

std::uint64_t tag_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

sigmodel::SceneSpec benchmark_scene(const BenchmarkConfig& cfg, const Family& family, Label label,
                                    std::size_t index) {
  std::mt19937_64 rng(mix_seed(mix_seed(cfg.seed, tag_hash(family.tag), static_cast<std::uint64_t>(label)),
                               0x7363656e65ULL, index));
  const double fs = cfg.sample_rate_hz;
  const double spc = fs / tracking::kChipRateHz;
  const auto period = static_cast<int>(std::llround(fs * tracking::kCodePeriodS));

  sigmodel::SceneSpec scene;
  scene.sample_rate_hz = fs;
  scene.duration_s = cfg.features.spectrogram.segment_duration_s;
  scene.noise_std = uniform(rng, cfg.noise_std_min, cfg.noise_std_max);
  scene.rng_seed = rng();

  std::vector<int> prns;
  auto fresh_prn = [&] {
    for (;;) {
      const int p = std::uniform_int_distribution<int>(1, 32)(rng);
      if (std::find(prns.begin(), prns.end(), p) == prns.end()) {
        prns.push_back(p);
        return p;
      }
    }
  };
  auto satellite = [&](double gain) {
    sigmodel::TransmitterSpec tx;
    tx.prn_id = fresh_prn();
    tx.fingerprint.carrier_freq_offset = uniform(rng, -cfg.doppler_max_hz, cfg.doppler_max_hz);
    const int delay = std::uniform_int_distribution<int>(0, period - 1)(rng);
    tx.channel.paths = {{gain, delay / fs}};
    if (rng() % 2) {
      const int echo = std::uniform_int_distribution<int>(8, 40)(rng);
      tx.channel.paths.push_back({gain * uniform(rng, 0.1, 0.3), (delay + echo) / fs});
    }
    return tx;
  };
  scene.genuine.push_back(satellite(1.0));
  for (std::size_t i = 0; i < cfg.extra_satellites; ++i) scene.genuine.push_back(satellite(uniform(rng, 0.5, 1.0)));

  if (label == Label::Spoofed) {
    const auto& target = scene.genuine.front();
    sigmodel::TransmitterSpec sp;
    sp.role = sigmodel::Role::Spoofer;
    sp.prn_id = target.prn_id;
    sp.fingerprint = family.spoofer;
    sp.fingerprint.carrier_freq_offset += target.fingerprint.carrier_freq_offset +
                                          uniform(rng, -cfg.spoofer_doppler_offset_max_hz,
                                                  cfg.spoofer_doppler_offset_max_hz);
    const double offset = uniform(rng, cfg.spoofer_offset_min_chips, cfg.spoofer_offset_max_chips);
    const double base = std::round(target.channel.paths.front().delay_s * fs);
    const double lag = std::max(1.0, std::round(offset * spc));
    sp.channel.paths = {{uniform(rng, cfg.spoofer_gain_min, cfg.spoofer_gain_max), (base + lag) / fs}};
    scene.spoofers.push_back(sp);
  }
  return scene;
}

TrackTarget benchmark_target(const BenchmarkConfig& cfg, const sigmodel::SceneSpec& scene) {
  TrackTarget t = target_of(scene);
  std::mt19937_64 rng(mix_seed(scene.rng_seed, 0x61637121ULL, 0));
  t.init.code_phase += uniform(rng, -cfg.init_code_error_chips, cfg.init_code_error_chips);
  t.init.doppler_hz += uniform(rng, -cfg.init_doppler_error_hz, cfg.init_doppler_error_hz);
  return t;
}

std::vector<Example> build_family(const BenchmarkConfig& cfg, const Family& family) {
  FeaturizeConfig fc = cfg.features;
  fc.spectrogram.resolve(cfg.sample_rate_hz);
  std::vector<Example> out;
  out.reserve(2 * cfg.examples_per_class);
  for (Label label : {Label::Clean, Label::Spoofed}) {
    for (std::size_t i = 0; i < cfg.examples_per_class; ++i) {
      const sigmodel::SceneSpec scene = benchmark_scene(cfg, family, label, i);
      const sigmodel::Capture cap = sigmodel::synthesize_scene(scene);
      auto ex = featurize_capture(cap.samples, cap.sample_rate_hz, label, fc, benchmark_target(cfg, scene),
                                  family.tag);
      out.push_back(std::move(ex.front()));
    }
  }
  return out;
}

metalearn::FeatureRegistry build_benchmark(const BenchmarkConfig& cfg, std::span<const Family> families) {
  metalearn::FeatureRegistry reg;
  for (const Family& f : families) reg.add(f.tag, build_family(cfg, f));
  return reg;
}

}  // namespace spoofmeta::pipeline
