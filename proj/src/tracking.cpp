#include "spoofmeta/tracking.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "spoofmeta/error.hpp"

namespace spoofmeta::tracking {

namespace {

// G2 phase-selector taps (1-based register stages) for PRN 1..37.
constexpr std::array<std::array<int, 2>, 37> kG2Taps{{
    {2, 6}, {3, 7}, {4, 8}, {5, 9}, {1, 9}, {2, 10}, {1, 8}, {2, 9}, {3, 10}, {2, 3},
    {3, 4}, {5, 6}, {6, 7}, {7, 8}, {8, 9}, {9, 10}, {1, 4}, {2, 5}, {3, 6}, {4, 7},
    {5, 8}, {6, 9}, {1, 3}, {4, 6}, {5, 7}, {6, 8}, {7, 9}, {8, 10}, {1, 6}, {2, 7},
    {3, 8}, {4, 9}, {5, 10}, {4, 10}, {1, 7}, {2, 8}, {4, 10},
}};

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_code_phase(double p) {
  double r = std::fmod(p, static_cast<double>(kCodeLength));
  return r < 0.0 ? r + kCodeLength : r;
}

std::size_t samples_per_period(double fs) {
  return static_cast<std::size_t>(std::llround(fs * kCodePeriodS));
}

struct Correlators {
  cdouble early, prompt, late;
  cdouble prompt_first_half, prompt_second_half;
  double signal_energy = 0.0;
};

/// Replica value for a sample covering code phases [phase, phase + width): the chip average
/// over that interval. Point-sampling the replica makes early/late power jump whenever the
/// estimate crosses the sample grid; the interval average keeps it continuous in code phase
/// and equals the point sample whenever the interval holds a single chip.
double replica(const PrnCode& code, double phase, double width) {
  const double first = std::floor(phase);
  const double end = phase + width;
  if (width >= 1.0 || end <= first + 1.0) return code.at(phase);
  const double w0 = (first + 1.0 - phase) / width;
  return w0 * code.at(first) + (1.0 - w0) * code.at(first + 1.0);
}

/// Correlate `n` samples against code replicas at `phase0 +/- spacing/2` after carrier wipe-off
/// at `carrier_hz` starting from `carrier_phase_cycles`.
Correlators correlate(std::span<const cdouble> s, const PrnCode& code, double phase0,
                      double chips_per_sample, double carrier_hz, double carrier_phase_cycles,
                      double fs, double spacing) {
  Correlators c{};
  const std::size_t half = s.size() / 2;
  for (std::size_t n = 0; n < s.size(); ++n) {
    const double cyc = carrier_phase_cycles + carrier_hz * static_cast<double>(n) / fs;
    const cdouble wiped = s[n] * std::polar(1.0, -kTwoPi * cyc);
    const double chip = phase0 + static_cast<double>(n) * chips_per_sample;
    const cdouble p = wiped * replica(code, chip, chips_per_sample);
    c.prompt += p;
    (n < half ? c.prompt_first_half : c.prompt_second_half) += p;
    c.early += wiped * replica(code, chip + spacing / 2.0, chips_per_sample);
    c.late += wiped * replica(code, chip - spacing / 2.0, chips_per_sample);
    c.signal_energy += std::norm(s[n]);
  }
  return c;
}

double ema(double prev, double meas, double a) { return (1.0 - a) * prev + a * meas; }

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

double PrnCode::at(double phase_chips) const {
  long long idx = static_cast<long long>(std::floor(phase_chips)) % kCodeLength;
  if (idx < 0) idx += kCodeLength;
  return chips[static_cast<std::size_t>(idx)];
}

PrnCode gold_code(int prn_id) {
  if (prn_id < 1 || prn_id > 37) {
    throw ValidationError("prn_id must be in 1..37, got " + std::to_string(prn_id));
  }
  std::array<int, 10> g1{}, g2{};
  g1.fill(1);
  g2.fill(1);
  const auto [t1, t2] = kG2Taps[static_cast<std::size_t>(prn_id - 1)];
  PrnCode code;
  code.prn_id = prn_id;
  for (int i = 0; i < kCodeLength; ++i) {
    const int bit = g1[9] ^ g2[t1 - 1] ^ g2[t2 - 1];
    code.chips[static_cast<std::size_t>(i)] = static_cast<std::int8_t>(1 - 2 * bit);
    const int fb1 = g1[2] ^ g1[9];
    const int fb2 = g2[1] ^ g2[2] ^ g2[5] ^ g2[7] ^ g2[8] ^ g2[9];
    std::rotate(g1.rbegin(), g1.rbegin() + 1, g1.rend());
    std::rotate(g2.rbegin(), g2.rbegin() + 1, g2.rend());
    g1[0] = fb1;
    g2[0] = fb2;
  }
  return code;
}

void PostCorrFeatures::validate() const {
  const std::size_t n = code_phase.size();
  if (n == 0) throw ValidationError("post-correlation features have no epochs");
  if (dll_discr.size() != n || doppler_hz.size() != n || fll_lock.size() != n ||
      pll_lock.size() != n) {
    throw ValidationError("post-correlation feature sequences differ in length");
  }
  for (PostCorrField f : kAllPostCorrFields) {
    for (double v : field(*this, f)) {
      if (!std::isfinite(v)) throw ValidationError(std::string(csv_name(f)) + " is not finite");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(fll_lock[i]) > 1.0 || std::abs(pll_lock[i]) > 1.0) {
      throw ValidationError("lock metric outside [-1, 1] at epoch " + std::to_string(i));
    }
  }
}

const char* csv_name(PostCorrField f) {
  switch (f) {
    case PostCorrField::CodePhase: return "codePhase";
    case PostCorrField::DllDiscr: return "dllDiscr";
    case PostCorrField::Doppler: return "doppler";
    case PostCorrField::FllLock: return "fllLock";
    case PostCorrField::PllLock: return "pllLock";
  }
  return "";
}

const char* flag_name(PostCorrField f) {
  switch (f) {
    case PostCorrField::CodePhase: return "codephase";
    case PostCorrField::DllDiscr: return "dlldiscr";
    case PostCorrField::Doppler: return "doppler";
    case PostCorrField::FllLock: return "flllock";
    case PostCorrField::PllLock: return "plllock";
  }
  return "";
}

std::vector<PostCorrField> parse_postcorr_subset(const std::string& csv_list) {
  std::vector<PostCorrField> out;
  for (const std::string& name : split_csv(csv_list)) {
    if (name == "all") return {kAllPostCorrFields.begin(), kAllPostCorrFields.end()};
    auto it = std::find_if(kAllPostCorrFields.begin(), kAllPostCorrFields.end(),
                           [&](PostCorrField f) { return name == flag_name(f); });
    if (it == kAllPostCorrFields.end()) {
      throw ValidationError("unknown post-correlation feature '" + name + "'");
    }
    if (std::find(out.begin(), out.end(), *it) == out.end()) out.push_back(*it);
  }
  if (out.empty()) throw ValidationError("empty post-correlation feature subset");
  std::sort(out.begin(), out.end());
  return out;
}

const std::vector<double>& field(const PostCorrFeatures& f, PostCorrField which) {
  switch (which) {
    case PostCorrField::CodePhase: return f.code_phase;
    case PostCorrField::DllDiscr: return f.dll_discr;
    case PostCorrField::Doppler: return f.doppler_hz;
    case PostCorrField::FllLock: return f.fll_lock;
    case PostCorrField::PllLock: return f.pll_lock;
  }
  return f.code_phase;
}

std::size_t postcorr_vector_size(std::size_t epochs, std::size_t fields) {
  return fields * (epochs + 2);
}

std::vector<double> postcorr_vector(const PostCorrFeatures& f,
                                    std::span<const PostCorrField> subset) {
  std::vector<double> out;
  out.reserve(postcorr_vector_size(f.epochs(), subset.size()));
  auto scale = [](PostCorrField which) {
    switch (which) {
      case PostCorrField::CodePhase: return 1.0 / kCodeLength;
      case PostCorrField::Doppler: return 1e-3;
      default: return 1.0;
    }
  };
  std::vector<double> summary;
  for (PostCorrField which : subset) {
    const auto& v = field(f, which);
    const double k = scale(which);
    double sum = 0.0;
    for (double x : v) {
      out.push_back(x * k);
      sum += x * k;
    }
    const double mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x * k - mean) * (x * k - mean);
    summary.push_back(mean);
    summary.push_back(std::sqrt(ss / static_cast<double>(v.size())));
  }
  out.insert(out.end(), summary.begin(), summary.end());
  return out;
}

double early_late_discriminator(const IqSegment& segment, const PrnCode& code,
                                double code_phase_hat, double doppler_hat, double spacing) {
  const std::size_t period = samples_per_period(segment.sample_rate_hz);
  if (period == 0 || segment.samples.size() < period) {
    throw ValidationError("segment shorter than one code period");
  }
  const std::size_t n = (segment.samples.size() / period) * period;
  const Correlators c = correlate(std::span(segment.samples).first(n), code, code_phase_hat,
                                  kChipRateHz / segment.sample_rate_hz, doppler_hat, 0.0,
                                  segment.sample_rate_hz, spacing);
  const double e = std::norm(c.early);
  const double l = std::norm(c.late);
  if (e + l == 0.0) throw LossOfLockError("early and late correlators are both zero");
  return (e - l) / (e + l);
}

Tracker::Tracker(PrnCode code, double sample_rate_hz, TrackInit init, TrackerConfig cfg)
    : code_(code),
      fs_(sample_rate_hz),
      cfg_(cfg),
      code_phase_(init.code_phase),
      carrier_freq_hz_(init.doppler_hz),
      pll_integrator_hz_(init.doppler_hz) {
  if (!(fs_ > 0.0)) throw ValidationError("sample_rate_hz must be positive");
  if (samples_per_period(fs_) < 2) throw ValidationError("sample rate too low for tracking");
}

PostCorrFeatures Tracker::process(std::span<const cdouble> samples) {
  const std::size_t period = samples_per_period(fs_);
  const double t_epoch = static_cast<double>(period) / fs_;
  const double pll_w0 = cfg_.pll_bandwidth_hz / 0.53;
  const double fll_w0 = cfg_.fll_bandwidth_hz / 0.25;
  const double dll_w0 = 4.0 * cfg_.dll_bandwidth_hz;
  const double d = cfg_.dll_spacing_chips;

  PostCorrFeatures out;
  for (std::size_t start = 0; start + period <= samples.size(); start += period) {
    const double chips_per_sample = (kChipRateHz + code_rate_integrator_) / fs_;
    Correlators c = correlate(samples.subspan(start, period), code_, code_phase_,
                              chips_per_sample, carrier_freq_hz_, carrier_phase_, fs_, d);
    if (first_epoch_ && std::abs(c.prompt) > 0.0) {
      // Carrier phase pull-in from the first prompt.
      const double phi =
          c.prompt.real() != 0.0 ? std::atan(c.prompt.imag() / c.prompt.real()) : 0.0;
      carrier_phase_ += phi / kTwoPi;
      const cdouble rot = std::polar(1.0, -phi);
      c.prompt *= rot;
      c.early *= rot;
      c.late *= rot;
      c.prompt_first_half *= rot;
      c.prompt_second_half *= rot;
    }

    const double power_ratio =
        c.signal_energy > 0.0 ? std::norm(c.prompt) / c.signal_energy : 0.0;
    weak_epochs_ = power_ratio < cfg_.lock_power_threshold ? weak_epochs_ + 1 : 0;
    if (weak_epochs_ >= 3) {
      throw LossOfLockError("prompt power below threshold for 3 epochs (epoch " +
                            std::to_string(epoch_index_) + ")");
    }

    const double e = std::norm(c.early), l = std::norm(c.late);
    const double dll = e + l > 0.0 ? (e - l) / (e + l) : 0.0;

    const double i = c.prompt.real(), q = c.prompt.imag();
    const double pll_meas = i * i + q * q > 0.0 ? (i * i - q * q) / (i * i + q * q) : 0.0;
    const cdouble rot = c.prompt_second_half * std::conj(c.prompt_first_half);
    const double dot = rot.real(), cross = rot.imag();
    const double fll_meas =
        dot * dot + cross * cross > 0.0 ? (dot * dot - cross * cross) / (dot * dot + cross * cross)
                                        : 0.0;
    if (first_epoch_) {
      pll_lock_ema_ = pll_meas;
      fll_lock_ema_ = fll_meas;
    } else {
      pll_lock_ema_ = ema(pll_lock_ema_, pll_meas, cfg_.lock_smoothing);
      fll_lock_ema_ = ema(fll_lock_ema_, fll_meas, cfg_.lock_smoothing);
    }

    out.code_phase.push_back(wrap_code_phase(code_phase_));
    out.dll_discr.push_back(dll);
    out.doppler_hz.push_back(carrier_freq_hz_);
    out.fll_lock.push_back(std::clamp(fll_lock_ema_, -1.0, 1.0));
    out.pll_lock.push_back(std::clamp(pll_lock_ema_, -1.0, 1.0));

    // Advance NCOs over the epoch just correlated, then close the loops.
    carrier_phase_ += carrier_freq_hz_ * t_epoch;
    carrier_phase_ -= std::floor(carrier_phase_);
    code_phase_ = wrap_code_phase(code_phase_ + chips_per_sample * static_cast<double>(period));

    const double phase_err = i != 0.0 ? std::atan(q / i) : 0.0;  // Costas, rad
    const double freq_err_hz = (dot != 0.0 || cross != 0.0)
                                   ? std::atan2(cross, dot) / (kTwoPi * t_epoch / 2.0)
                                   : 0.0;
    pll_integrator_hz_ += t_epoch * (pll_w0 * pll_w0 * phase_err / kTwoPi + fll_w0 * freq_err_hz);
    carrier_freq_hz_ = pll_integrator_hz_ + std::numbers::sqrt2 * pll_w0 * phase_err / kTwoPi;

    const double code_err_chips = dll * (1.0 - d / 2.0) / 2.0;
    code_rate_integrator_ = dll_w0 * code_err_chips;

    first_epoch_ = false;
    ++epoch_index_;
  }
  return out;
}

PostCorrFeatures track_segment(const IqSegment& segment, const PrnCode& code, TrackInit init,
                               TrackerConfig cfg) {
  Tracker tracker(code, segment.sample_rate_hz, init, cfg);
  PostCorrFeatures f = tracker.process(segment.samples);
  if (f.epochs() == 0) throw ValidationError("segment shorter than one code period");
  return f;
}

void ColumnMap::bind(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ValidationError("column binding must be name=header, got '" + assignment + "'");
  }
  const std::string name = trim(assignment.substr(0, eq));
  const std::string header = trim(assignment.substr(eq + 1));
  if (name == "time") {
    time = header;
    return;
  }
  for (PostCorrField f : kAllPostCorrFields) {
    if (name == csv_name(f) || name == flag_name(f)) {
      columns[f] = header;
      return;
    }
  }
  throw ValidationError("unknown column name '" + name + "'");
}

std::vector<WindowedPostCorr> ingest_postcorr_csv(const std::filesystem::path& path,
                                                  const ColumnMap& columns,
                                                  double segment_duration_s, double origin_s) {
  if (!(segment_duration_s > 0.0)) throw ValidationError("segment duration must be positive");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open post-correlation CSV " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("post-correlation CSV has no header: " + path.string());
  const std::vector<std::string> header = split_csv(line);
  auto find_col = [&](const std::string& name, const std::string& bound) {
    auto it = std::find(header.begin(), header.end(), bound);
    if (it == header.end()) {
      throw DataError("post-correlation CSV lacks column '" + bound + "' required for " + name);
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t time_col = find_col("time", columns.time);
  std::array<std::size_t, 5> cols{};
  for (std::size_t k = 0; k < kAllPostCorrFields.size(); ++k) {
    const PostCorrField f = kAllPostCorrFields[k];
    auto it = columns.columns.find(f);
    if (it == columns.columns.end()) {
      throw ValidationError(std::string("no column bound for ") + csv_name(f));
    }
    cols[k] = find_col(csv_name(f), it->second);
  }

  std::vector<WindowedPostCorr> out;
  double last_t = -std::numeric_limits<double>::infinity();
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split_csv(line);
    auto number = [&](std::size_t col, const std::string& name) {
      if (col >= cells.size() || cells[col].empty()) {
        throw DataError("row " + std::to_string(row) + ": missing value for " + name);
      }
      double v = 0.0;
      const std::string& s = cells[col];
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
        throw DataError("row " + std::to_string(row) + ": cannot parse " + name + " '" + s + "'");
      }
      return v;
    };
    const double t = number(time_col, "time");
    if (!(t > last_t)) {
      throw DataError("row " + std::to_string(row) + ": timestamps are not increasing");
    }
    if (t < origin_s) throw DataError("row " + std::to_string(row) + ": timestamp before origin");
    last_t = t;
    const auto window =
        static_cast<std::size_t>(std::floor((t - origin_s) / segment_duration_s + 1e-9));
    if (out.empty() || out.back().segment_index != window) {
      out.push_back({window, {}});
    }
    PostCorrFeatures& f = out.back().features;
    f.code_phase.push_back(number(cols[0], "codePhase"));
    f.dll_discr.push_back(number(cols[1], "dllDiscr"));
    f.doppler_hz.push_back(number(cols[2], "doppler"));
    f.fll_lock.push_back(number(cols[3], "fllLock"));
    f.pll_lock.push_back(number(cols[4], "pllLock"));
  }
  for (const auto& w : out) w.features.validate();
  return out;
}

void export_postcorr_csv(const std::filesystem::path& path,
                         std::span<const WindowedPostCorr> windows, double segment_duration_s,
                         double origin_s, double epoch_duration_s) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "time";
  for (PostCorrField f : kAllPostCorrFields) out << ',' << csv_name(f);
  out << '\n';
  char buf[32];
  auto put = [&](double v) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.write(buf, ptr - buf);
  };
  for (const auto& w : windows) {
    for (std::size_t e = 0; e < w.features.epochs(); ++e) {
      put(origin_s + static_cast<double>(w.segment_index) * segment_duration_s +
          static_cast<double>(e) * epoch_duration_s);
      for (PostCorrField f : kAllPostCorrFields) {
        out << ',';
        put(field(w.features, f)[e]);
      }
      out << '\n';
    }
  }
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace spoofmeta::tracking
