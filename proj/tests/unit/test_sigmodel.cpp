#include <doctest.h>

#include <cmath>
#include <numbers>

#include "../support/oracles.hpp"
#include "spoofmeta/error.hpp"
#include "spoofmeta/features.hpp"
#include "spoofmeta/sigmodel.hpp"

using namespace spoofmeta;
using namespace spoofmeta::sigmodel;

namespace {

SceneSpec one_satellite(double fs, double duration) {
  SceneSpec s;
  s.sample_rate_hz = fs;
  s.duration_s = duration;
  TransmitterSpec t;
  t.prn_id = 4;
  s.genuine = {t};
  return s;
}

/// Index of the largest |X[k]| of a length-n DFT of x.
std::size_t peak_bin(const ComplexSignal& x) {
  const std::vector<double> rect(x.size(), 1.0);
  const auto r = oracle::brute_stft(x, rect, x.size(), x.size());
  std::size_t best = 0;
  for (std::size_t m = 1; m < x.size(); ++m) {
    if (std::abs(r[m][0]) > std::abs(r[best][0])) best = m;
  }
  return best;
}

}  // namespace

TEST_CASE("bpsk waveform samples the code at the chip rate") {
  const auto code = tracking::gold_code(1);
  const auto w = bpsk_waveform(code, 2.046e6, 0, 8);
  for (int i = 0; i < 8; ++i) CHECK(w[i].real() == code.chips[i / 2]);
  const auto shifted = bpsk_waveform(code, 2.046e6, -2, 2);
  CHECK(shifted[0].real() == code.chips[1022]);
}

TEST_CASE("multipath channel equals a direct tapped-delay convolution") {
  SceneSpec s = one_satellite(2.046e6, 0.002);
  s.genuine[0].channel.paths = {{1.0, 0.0}, {-0.4, 3.0 / 2.046e6}, {0.25, 10.0 / 2.046e6}};
  const auto y = synthesize_clean(s);
  const auto code = tracking::gold_code(4);
  const auto x = bpsk_waveform(code, s.sample_rate_hz, -10, y.size() + 10);
  for (std::size_t n = 0; n < y.size(); ++n) {
    const cdouble want = 1.0 * x[n + 10] - 0.4 * x[n + 7] + 0.25 * x[n];
    REQUIRE(std::abs(y[n] - want) < 1e-12);
  }
}

TEST_CASE("carrier offset lands in the expected DFT bin") {
  const double fs = 1.024e6;
  const std::size_t n = 1024;
  ComplexSignal ones(n, cdouble(1.0, 0.0));
  FingerprintSpec fp;
  fp.carrier_freq_offset = 37.0 * fs / static_cast<double>(n);
  const auto y = apply_fingerprint(ones, fp, 0, fs);
  CHECK(peak_bin(y) == 37);
}

TEST_CASE("IQ imbalance creates the predicted mirror image") {
  const std::size_t n = 256;
  ComplexSignal tone(n);
  for (std::size_t i = 0; i < n; ++i) tone[i] = std::polar(1.0, 2.0 * std::numbers::pi * 20.0 * i / n);
  FingerprintSpec fp;
  fp.iq_gain_imbalance = 1.3;
  fp.iq_phase_imbalance = 0.2;
  const auto y = apply_fingerprint(tone, fp, 0, 1.0);
  const auto r = oracle::brute_stft(y, std::vector<double>(n, 1.0), n, n);
  // Q' = g (Q cos phi - I sin phi): y = K1 x + K2 conj(x) with
  // K1 = (1 + g e^{-j phi}) / 2, K2 = (1 - g e^{j phi}) / 2.
  const cdouble j(0.0, 1.0);
  const cdouble k1 = (1.0 + 1.3 * std::exp(-j * 0.2)) / 2.0;
  const cdouble k2 = (1.0 - 1.3 * std::exp(j * 0.2)) / 2.0;
  CHECK(std::abs(r[20][0] / static_cast<double>(n) - k1) < 1e-9);
  CHECK(std::abs(r[n - 20][0] / static_cast<double>(n) - k2) < 1e-9);
}

TEST_CASE("cubic, DC and phase-noise impairments follow their formulas") {
  const ComplexSignal x{{0.5, -0.25}, {1.0, 0.0}, {0.0, 0.0}};
  FingerprintSpec fp;
  fp.cubic_nonlinearity = -0.1;
  fp.dc_offset = {0.2, -0.3};
  const auto y = apply_fingerprint(x, fp, 0, 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const cdouble want = x[i] - 0.1 * x[i] * std::norm(x[i]) + cdouble(0.2, -0.3);
    CHECK(std::abs(y[i] - want) < 1e-15);
  }
  FingerprintSpec pn;
  pn.phase_noise_std = 0.01;
  const auto z = apply_fingerprint(ComplexSignal(1000, {1.0, 0.0}), pn, 7, 1.0);
  for (const auto& v : z) CHECK(std::abs(std::abs(v) - 1.0) < 1e-12);
  CHECK(std::abs(std::arg(z.back())) > 0.0);
  CHECK(apply_fingerprint(x, FingerprintSpec{}, 0, 1.0) == x);
}

TEST_CASE("block synthesis reproduces a single call") {
  SceneSpec s = one_satellite(2.046e6, 0.003);
  s.noise_std = 0.5;
  s.genuine[0].fingerprint.phase_noise_std = 0.01;
  s.genuine[0].fingerprint.carrier_freq_offset = 300.0;
  s.genuine[0].channel.paths = {{1.0, 0.0}, {0.3, 5e-6}};
  TransmitterSpec sp = s.genuine[0];
  sp.role = Role::Spoofer;
  sp.fingerprint.dc_offset = {0.1, 0.1};
  s.spoofers = {sp};
  const auto whole = synthesize_scene(s);
  CHECK(whole.label == Label::Spoofed);
  SceneSynthesizer synth(s);
  ComplexSignal joined;
  for (std::size_t n : {1u, 999u, 2000u, 3138u}) {
    const auto part = synth.next(n);
    joined.insert(joined.end(), part.begin(), part.end());
  }
  CHECK(joined == whole.samples);
}

TEST_CASE("noise has the requested total variance") {
  SceneSpec s = one_satellite(1e6, 0.2);
  s.genuine.clear();
  s.noise_std = 2.0;
  const auto y = synthesize_clean(s);
  double p = 0.0;
  for (const auto& v : y) p += std::norm(v);
  CHECK(p / static_cast<double>(y.size()) == doctest::Approx(4.0).epsilon(0.02));
}

TEST_CASE("C/N0 conversion") {
  // 45 dB-Hz against unit noise at 1 MHz: A^2 = 10^4.5 / 1e6.
  CHECK(gain_for_cn0(45.0, 1.0, 1e6) == doctest::Approx(std::sqrt(std::pow(10.0, 4.5) / 1e6)));
}

TEST_CASE("scene validation names the field") {
  SceneSpec s = one_satellite(1e6, 0.001);
  s.genuine[0].channel.paths = {{1.0, 2e-6}, {0.5, 1e-6}};
  try {
    s.validate();
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("genuine[0].paths[1].delay_s") != std::string::npos);
  }
  SceneSpec bad = one_satellite(1e6, 0.001);
  bad.genuine[0].prn_id = 40;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = one_satellite(1e6, 0.001);
  bad.genuine[0].fingerprint.iq_gain_imbalance = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK_THROWS_AS(parse_scene_json("{\"duration_s\": \"long\"}"), ValidationError);
  SceneSpec clean_with_spoofer = one_satellite(1e6, 0.001);
  clean_with_spoofer.spoofers = clean_with_spoofer.genuine;
  CHECK_THROWS_AS(synthesize_clean(clean_with_spoofer), ValidationError);
}

TEST_CASE("scene JSON round trip") {
  SceneSpec s = one_satellite(4.092e6, 0.01);
  s.rng_seed = 99;
  s.genuine[0].fingerprint.dc_offset = {0.1, -0.2};
  s.genuine[0].channel.paths = {{1.0, 0.0}, {0.2, 1e-6}};
  TransmitterSpec sp = s.genuine[0];
  sp.role = Role::Spoofer;
  sp.fingerprint.carrier_freq_offset = 12.5;
  s.spoofers = {sp};
  const SceneSpec back = parse_scene_json(scene_to_json(s));
  CHECK(synthesize_scene(back).samples == synthesize_scene(s).samples);
  CHECK(back.spoofers.at(0).role == Role::Spoofer);
}

TEST_CASE("spoofer streams do not depend on the genuine list") {
  // A spoofer keeps its impairment stream when genuine transmitters are added.
  SceneSpec a = one_satellite(1e6, 0.002);
  TransmitterSpec sp;
  sp.prn_id = 9;
  sp.role = Role::Spoofer;
  sp.fingerprint.phase_noise_std = 0.05;
  a.genuine.clear();
  a.spoofers = {sp};
  SceneSpec b = a;
  TransmitterSpec extra;
  extra.prn_id = 2;
  extra.channel.paths = {{0.0, 0.0}};
  b.genuine = {extra};
  CHECK(synthesize_scene(a).samples == synthesize_scene(b).samples);
}
