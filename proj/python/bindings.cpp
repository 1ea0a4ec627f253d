// Python bindings: arrays in, arrays out. Everything heavier goes through the CLI.

#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "spoofmeta/dataio.hpp"
#include "spoofmeta/embedder.hpp"
#include "spoofmeta/error.hpp"
#include "spoofmeta/features.hpp"
#include "spoofmeta/metalearn.hpp"
#include "spoofmeta/sigmodel.hpp"
#include "spoofmeta/tensor.hpp"
#include "spoofmeta/tracking.hpp"

namespace py = pybind11;
using namespace spoofmeta;

namespace {

using CArray = py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>;
using RArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

ComplexSignal to_signal(const CArray& a) {
  if (a.ndim() != 1) throw ValidationError("expected a 1-D complex array");
  return ComplexSignal(a.data(), a.data() + a.size());
}

template <typename T>
py::array_t<T> to_array(const std::vector<T>& v) {
  py::array_t<T> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

template <typename T>
py::array_t<T> to_array(const Matrix<T>& m) {
  py::array_t<T> out({static_cast<py::ssize_t>(m.rows), static_cast<py::ssize_t>(m.cols)});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

py::dict features_dict(const tracking::PostCorrFeatures& f) {
  py::dict d;
  for (auto field : tracking::kAllPostCorrFields) d[tracking::csv_name(field)] = to_array(tracking::field(f, field));
  return d;
}

IqSegment segment_of(const CArray& samples, double fs) { return {to_signal(samples), fs, 0.0, Label::Clean, ""}; }

py::dict load_features(const std::string& path) {
  dataio::CacheLayout layout;
  const auto items = dataio::load_features(path, nullptr, &layout);
  const auto n = static_cast<py::ssize_t>(items.size());
  py::array_t<double> spec({n, static_cast<py::ssize_t>(layout.spec_rows), static_cast<py::ssize_t>(layout.spec_cols)});
  py::array_t<double> post({n, static_cast<py::ssize_t>(layout.post_dim)});
  py::array_t<std::uint8_t> labels(n);
  py::list sources;
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::copy(items[i].spectrogram.data.begin(), items[i].spectrogram.data.end(),
              spec.mutable_data() + i * layout.spec_rows * layout.spec_cols);
    std::copy(items[i].postcorr.begin(), items[i].postcorr.end(), post.mutable_data() + i * layout.post_dim);
    labels.mutable_data()[i] = static_cast<std::uint8_t>(items[i].label);
    sources.append(items[i].source);
  }
  py::dict d;
  d["spectrograms"] = spec;
  d["postcorr"] = post;
  d["labels"] = labels;
  d["sources"] = sources;
  d["config"] = layout.config;
  return d;
}

std::vector<embedder::Example> examples_of(const RArray& spectrograms, const RArray& postcorr) {
  if (spectrograms.ndim() != 3 || postcorr.ndim() != 2 || spectrograms.shape(0) != postcorr.shape(0)) {
    throw ValidationError("expected spectrograms (n, rows, cols) and postcorr (n, dim)");
  }
  const auto n = static_cast<std::size_t>(spectrograms.shape(0));
  const auto rows = static_cast<std::size_t>(spectrograms.shape(1)), cols = static_cast<std::size_t>(spectrograms.shape(2));
  const auto dim = static_cast<std::size_t>(postcorr.shape(1));
  std::vector<embedder::Example> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].spectrogram = RealMatrix(rows, cols);
    std::copy_n(spectrograms.data() + i * rows * cols, rows * cols, out[i].spectrogram.data.begin());
    out[i].postcorr.assign(postcorr.data() + i * dim, postcorr.data() + (i + 1) * dim);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_spoofmeta, m) {
  m.doc() = "GNSS spoofing detection: signal model, features, tracking and the meta-learned encoder";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<LossOfLockError>(m, "LossOfLockError", base.ptr());

  m.def("gold_code", [](int prn) {
    const auto code = tracking::gold_code(prn);
    return to_array(std::vector<std::int8_t>(code.chips.begin(), code.chips.end()));
  }, py::arg("prn"), "C/A code chips of a PRN as +1/-1.");

  m.def("window", [](const std::string& name, std::size_t n) {
    return to_array(features::window_coefficients(features::parse_window(name), n));
  }, py::arg("name"), py::arg("n"));

  m.def("stft", [](const CArray& x, std::size_t fft_size, std::size_t hop, const std::string& window) {
    const auto s = to_signal(x);
    return to_array(features::stft(s, {fft_size, hop, features::parse_window(window), s.size()}));
  }, py::arg("samples"), py::arg("fft_size"), py::arg("hop"), py::arg("window") = "hann",
     "Complex STFT, rows are frequency bins and columns frames.");

  m.def("spectrogram", [](const CArray& x, double fs, std::size_t fft_size, std::size_t hop,
                          const std::string& window, std::size_t decimation, const std::string& norm) {
    features::FeatureConfig cfg;
    cfg.stft.fft_size = fft_size;
    cfg.stft.hop = hop;
    cfg.stft.window = features::parse_window(window);
    cfg.decimation = decimation;
    cfg.normalization = features::parse_normalization(norm);
    cfg.segment_duration_s = static_cast<double>(x.size()) / fs;
    cfg.resolve(fs);
    return to_array(features::spectrogram_of(segment_of(x, fs), cfg).magnitudes);
  }, py::arg("samples"), py::arg("sample_rate_hz"), py::arg("fft_size") = 256, py::arg("hop") = 128,
     py::arg("window") = "hann", py::arg("decimation") = 1, py::arg("normalization") = "logstd",
     "Magnitude spectrogram of one segment, as the encoder sees it.");

  m.def("segment_count", &features::segment_count, py::arg("total_samples"), py::arg("sample_rate_hz"),
        py::arg("segment_duration_s") = 0.004);

  m.def("soft_threshold", [](const RArray& x, double t) {
    py::array_t<double> out(x.request().shape);
    for (py::ssize_t i = 0; i < x.size(); ++i) out.mutable_data()[i] = metalearn::soft_threshold(x.data()[i], t);
    return out;
  }, py::arg("x"), py::arg("t"), "sign(x) * max(|x| - t, 0), elementwise.");

  m.def("synthesize", [](const std::string& scene_json) {
    const auto cap = sigmodel::synthesize_scene(sigmodel::parse_scene_json(scene_json));
    return py::make_tuple(to_array(cap.samples), to_string(cap.label));
  }, py::arg("scene_json"), "Synthesize a scene; returns (samples, label).");

  m.def("early_late_discriminator", [](const CArray& x, double fs, int prn, double code_phase, double doppler_hz,
                                       double spacing) {
    return tracking::early_late_discriminator(segment_of(x, fs), tracking::gold_code(prn), code_phase, doppler_hz,
                                              spacing);
  }, py::arg("samples"), py::arg("sample_rate_hz"), py::arg("prn"), py::arg("code_phase"),
     py::arg("doppler_hz") = 0.0, py::arg("spacing") = 0.5);

  m.def("track", [](const CArray& x, double fs, int prn, double code_phase, double doppler_hz) {
    tracking::Tracker tr(tracking::gold_code(prn), fs, {code_phase, doppler_hz});
    return features_dict(tr.process(to_signal(x)));
  }, py::arg("samples"), py::arg("sample_rate_hz"), py::arg("prn"), py::arg("code_phase"),
     py::arg("doppler_hz") = 0.0, "Run a tracking channel; returns per-epoch observables.");

  m.def("read_iq", [](const std::string& path, const std::string& preset, std::optional<double> fs,
                      double offset_s, double duration_s) {
    auto fmt = dataio::iq_preset(preset);
    if (fs) fmt.sample_rate_hz = *fs;
    return to_array(dataio::read_iq_capture(path, fmt, offset_s, duration_s));
  }, py::arg("path"), py::arg("preset") = "texbat", py::arg("sample_rate_hz") = py::none(),
     py::arg("offset_s") = 0.0, py::arg("duration_s"));

  m.def("load_features", &load_features, py::arg("path"),
        "Read a feature cache; returns spectrograms, postcorr, labels (0 clean, 1 spoofed) and sources.");

  m.def("load_checkpoint", [](const std::string& path) {
    py::dict d;
    for (const auto& [name, t] : tensor::load_checkpoint(path)) {
      std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
      py::array_t<double> a(shape);
      std::copy(t.vec().begin(), t.vec().end(), a.mutable_data());
      d[py::str(name)] = a;
    }
    return d;
  }, py::arg("path"));

  m.def("embed", [](const std::string& model, const RArray& spectrograms, const RArray& postcorr,
                    const std::string& mode) {
    const auto examples = examples_of(spectrograms, postcorr);
    const auto params = tensor::load_checkpoint(model);
    const auto cfg = embedder::infer_config(params, static_cast<std::size_t>(spectrograms.shape(1)),
                                            static_cast<std::size_t>(spectrograms.shape(2)));
    return to_array(embedder::embed_all(params, cfg, examples, embedder::parse_feature_mode(mode)));
  }, py::arg("model"), py::arg("spectrograms"), py::arg("postcorr"), py::arg("mode") = "prepost",
     "Embed examples with a trained model.spl; returns (n, embedding_dim).");
}
