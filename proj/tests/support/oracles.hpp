#pragma once
// Reference implementations the library is checked against. Each one is written from the
// textbook definition with no shared code path, trading speed for obviousness.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "spoofmeta/metalearn.hpp"
#include "spoofmeta/tensor.hpp"

namespace oracle {

using cd = std::complex<double>;

// --- GPS C/A code by G2 delay --------------------------------------------------------

/// G2 output delays in chips for PRN 1..37 (the phase-selector taps are equivalent).
inline constexpr std::array<int, 37> kG2Delay{
    5,   6,   7,   8,   17,  18,  139, 140, 141, 251, 252, 254, 255, 256, 257, 258, 469, 470, 471,
    472, 473, 474, 509, 512, 513, 514, 515, 516, 859, 860, 861, 862, 863, 950, 947, 948, 950};

/// First ten chips of each PRN as the octal number the interface documents list
/// (chip value 1 = logic one, first chip is the most significant bit).
inline constexpr std::array<int, 37> kFirstTenOctal{
    01440, 01620, 01710, 01744, 01133, 01455, 01131, 01454, 01626, 01504, 01642, 01750, 01764,
    01772, 01775, 01776, 01156, 01467, 01633, 01715, 01746, 01763, 01063, 01706, 01743, 01761,
    01770, 01774, 01127, 01453, 01625, 01712, 01745, 01713, 01134, 01456, 01713};

/// Maximal-length sequence of a 10-stage register with taps given as 1-based stages.
inline std::vector<int> msequence(std::initializer_list<int> taps) {
  std::vector<int> reg(10, 1), out(1023);
  for (int i = 0; i < 1023; ++i) {
    out[i] = reg[9];
    int fb = 0;
    for (int t : taps) fb ^= reg[t - 1];
    for (int k = 9; k > 0; --k) reg[k] = reg[k - 1];
    reg[0] = fb;
  }
  return out;
}

/// Logic-level chips (0/1) of a PRN: G1 xor G2 delayed.
inline std::vector<int> ca_bits(int prn) {
  const auto g1 = msequence({3, 10});
  const auto g2 = msequence({2, 3, 6, 8, 9, 10});
  const int d = kG2Delay[prn - 1];
  std::vector<int> out(1023);
  for (int i = 0; i < 1023; ++i) out[i] = g1[i] ^ g2[(i - d + 1023) % 1023];
  return out;
}

// --- spectral ------------------------------------------------------------------------

/// Direct evaluation of R[m, k] = sum_n s[kL + n] w[n] exp(-j 2 pi m n / N).
inline std::vector<std::vector<cd>> brute_stft(std::span<const cd> s, std::span<const double> w,
                                               std::size_t n, std::size_t hop) {
  const std::size_t frames = (s.size() - n) / hop + 1;
  std::vector<std::vector<cd>> r(n, std::vector<cd>(frames));
  for (std::size_t k = 0; k < frames; ++k) {
    for (std::size_t m = 0; m < n; ++m) {
      cd acc{};
      for (std::size_t i = 0; i < n; ++i) {
        const double ang = -2.0 * std::numbers::pi * static_cast<double>((m * i) % n) /
                           static_cast<double>(n);
        acc += s[k * hop + i] * w[i] * cd(std::cos(ang), std::sin(ang));
      }
      r[m][k] = acc;
    }
  }
  return r;
}

// --- finite differences --------------------------------------------------------------

/// Central differences of a scalar function of a flat vector.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_rel_err(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double den = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / den);
  }
  return worst;
}

// --- Algorithm 1 on a ten-parameter model --------------------------------------------
//
// Toy model: two outputs f = W x + b with W 2x4 and b 2, target one-hot(label), loss the
// mean of 0.5 * |f - y|^2 over the evaluation set. Features come from Example::postcorr.
// Parameter order in the flat vector is b[0..1] then W row-major, matching the ParamSet's
// sorted names "fusion.b" < "fusion.w".

inline constexpr std::size_t kToyParams = 10;
using Flat = std::array<double, kToyParams>;

inline double toy_loss(const Flat& th, std::span<const spoofmeta::embedder::Example> eval,
                       Flat* grad) {
  if (grad) grad->fill(0.0);
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(eval.size());
  for (const auto& e : eval) {
    const auto& x = e.postcorr;
    for (std::size_t o = 0; o < 2; ++o) {
      double f = th[o];
      for (std::size_t j = 0; j < 4; ++j) f += th[2 + o * 4 + j] * x[j];
      const double y = static_cast<std::size_t>(e.label) == o ? 1.0 : 0.0;
      const double r = f - y;
      total += 0.5 * r * r;
      if (grad) {
        (*grad)[o] += r * inv;
        for (std::size_t j = 0; j < 4; ++j) (*grad)[2 + o * 4 + j] += r * x[j] * inv;
      }
    }
  }
  return total * inv;
}

inline Flat flatten(const spoofmeta::tensor::ParamSet& p) {
  Flat f{};
  const auto& b = p.at("fusion.b");
  const auto& w = p.at("fusion.w");
  for (std::size_t i = 0; i < 2; ++i) f[i] = b[i];
  for (std::size_t i = 0; i < 8; ++i) f[2 + i] = w[i];
  return f;
}

inline spoofmeta::tensor::ParamSet unflatten(const Flat& f) {
  spoofmeta::tensor::ParamSet p;
  p["fusion.b"] = spoofmeta::tensor::Tensor({2}, std::vector<double>(f.begin(), f.begin() + 2));
  p["fusion.w"] = spoofmeta::tensor::Tensor({2, 4}, std::vector<double>(f.begin() + 2, f.end()));
  return p;
}

/// The toy model behind the library's Objective interface.
class ToyObjective : public spoofmeta::metalearn::Objective {
 public:
  double loss(const spoofmeta::tensor::ParamSet& theta,
              std::span<const spoofmeta::embedder::Example>,
              std::span<const spoofmeta::embedder::Example> eval,
              spoofmeta::tensor::ParamSet* grads) const override {
    Flat g{};
    const double l = toy_loss(flatten(theta), eval, grads ? &g : nullptr);
    if (grads) *grads = unflatten(g);
    return l;
  }
};

inline double soft(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

/// State of the literal transcription after one meta-step.
struct AlgoState {
  Flat theta{};
  Flat z{}, u{};
  Flat m{}, v{};
  long step = 0;
};

/// Only W (indices 2..9) is regularized; z and u entries 0..1 stay unused.
inline bool regularized(std::size_t i) { return i >= 2; }

/// One pass of the loop body:
///   for each task: phi = theta; repeat K: phi -= alpha * grad L_support(phi)
///                  g += grad L_query(phi)                 (first order)
///   theta <- Adam(theta, g, beta)
///   z <- soft(theta + u, lambda / rho); u <- u + theta - z; theta <- z - u
inline double literal_step(AlgoState& s,
                           std::span<const spoofmeta::metalearn::Episode> tasks_in_id_order,
                           const spoofmeta::metalearn::MetaConfig& cfg) {
  Flat g{};
  double loss_sum = 0.0;
  for (const auto& task : tasks_in_id_order) {
    Flat phi = s.theta;
    for (std::size_t k = 0; k < cfg.inner_steps; ++k) {
      Flat gs{};
      toy_loss(phi, task.support, &gs);
      for (std::size_t i = 0; i < kToyParams; ++i) phi[i] = phi[i] - cfg.inner_lr * gs[i];
    }
    Flat gq{};
    loss_sum += toy_loss(phi, task.query, &gq);
    for (std::size_t i = 0; i < kToyParams; ++i) g[i] += gq[i];
  }

  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++s.step;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < kToyParams; ++i) {
    s.m[i] = b1 * s.m[i] + (1.0 - b1) * g[i];
    s.v[i] = b2 * s.v[i] + (1.0 - b2) * g[i] * g[i];
    s.theta[i] = s.theta[i] - cfg.outer_lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps);
  }

  const double t = cfg.lambda / cfg.rho;
  for (std::size_t i = 0; i < kToyParams; ++i) {
    if (!regularized(i)) continue;
    s.z[i] = soft(s.theta[i] + s.u[i], t);
    s.u[i] = s.u[i] + (s.theta[i] - s.z[i]);
    s.theta[i] = s.z[i] - s.u[i];
  }
  return loss_sum / static_cast<double>(tasks_in_id_order.size());
}

/// Toy dataset: label-dependent mean plus deterministic noise in four features.
inline std::vector<spoofmeta::embedder::Example> toy_examples(std::uint64_t seed, double shift,
                                                              std::size_t per_class) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.5);
  std::vector<spoofmeta::embedder::Example> out;
  for (int label = 0; label < 2; ++label) {
    for (std::size_t i = 0; i < per_class; ++i) {
      spoofmeta::embedder::Example e;
      e.label = static_cast<spoofmeta::Label>(label);
      for (int j = 0; j < 4; ++j) e.postcorr.push_back((label ? shift : -shift) * (j + 1) * 0.25 + n(rng));
      out.push_back(std::move(e));
    }
  }
  return out;
}

/// Four datasets of the toy problem under the tags the standard combos use.
inline spoofmeta::metalearn::FeatureRegistry toy_registry() {
  spoofmeta::metalearn::FeatureRegistry r;
  r.add("ds2", toy_examples(2, 1.0, 20));
  r.add("ds3", toy_examples(3, 0.8, 20));
  r.add("ds4", toy_examples(4, 1.2, 20));
  r.add("ds7", toy_examples(7, 0.9, 20));
  return r;
}

inline spoofmeta::tensor::ParamSet toy_theta() {
  Flat f{};
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = 0.05 * std::sin(1.0 + static_cast<double>(i));
  return unflatten(f);
}

inline spoofmeta::metalearn::MetaConfig toy_config() {
  spoofmeta::metalearn::MetaConfig c;
  c.inner_lr = 0.1;
  c.outer_lr = 0.05;
  c.epochs = 1;
  c.query_size = 10;
  c.inner_steps = 3;
  c.shots_per_class = 2;
  c.tasks_per_batch = 3;
  c.steps_per_epoch = 4;
  c.lambda = 0.02;
  c.seed = 11;
  c.export_z = false;
  return c;
}

}  // namespace oracle
