// spoofmeta command-line driver: generate, benchmark, track, featurize, train, crosstest, rerun.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "spoofmeta/binio.hpp"
#include "spoofmeta/dataio.hpp"
#include "spoofmeta/error.hpp"
#include "spoofmeta/pipeline.hpp"

#ifndef SPOOFMETA_VERSION
#define SPOOFMETA_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace spoofmeta;

namespace {

void log(const std::string& msg) { std::cerr << "[spoofmeta] " << msg << "\n"; }

int exit_code(const spoofmeta::Error& e) {
  switch (e.kind()) {
    case ErrorKind::Validation: return 2;
    case ErrorKind::Data: return 3;
    case ErrorKind::LossOfLock: return 3;
    case ErrorKind::Numeric: return 4;
  }
  return 1;
}

void write_text(const fs::path& path, const std::string& text) {
  binio::write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Collects what a command did and writes manifest.json into its run directory on every exit path.
class Manifest {
 public:
  Manifest(std::string command, std::vector<std::string> argv)
      : start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["argv"] = std::move(argv);
    doc_["code_version"] = SPOOFMETA_VERSION;
    doc_["config"] = json::object();
    doc_["datasets"] = json::array();
    doc_["outputs"] = json::array();
  }
  void set_dir(fs::path dir) { dir_ = std::move(dir); }
  json& config() { return doc_["config"]; }
  void seed(std::uint64_t s) { doc_["seed"] = s; }
  void dataset(const std::string& tag) { doc_["datasets"].push_back(tag); }
  void output(const fs::path& p) { doc_["outputs"].push_back(p.string()); }
  void note(const std::string& key, json value) { doc_[key] = std::move(value); }

  void finish(int code, const std::string& error = {}) {
    if (dir_.empty()) return;
    doc_["exit_code"] = code;
    doc_["status"] = code == 0 ? "ok" : "failed";
    if (!error.empty()) doc_["error"] = error;
    doc_["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    try {
      fs::create_directories(dir_);
      write_text(dir_ / "manifest.json", doc_.dump(2) + "\n");
    } catch (const std::exception& e) {
      log(std::string("could not write manifest: ") + e.what());
    }
  }

 private:
  json doc_;
  fs::path dir_;
  std::chrono::steady_clock::time_point start_;
};

// --- shared option groups ------------------------------------------------------------

struct FeatureFlags {
  std::string norm = "logstd";
  std::size_t fft_size = 256;
  std::size_t hop = 128;
  std::string window = "hann";
  std::size_t decimation = 8;
  double segment_s = 0.004;

  void add(CLI::App* app) {
    app->add_option("--norm", norm, "Spectrogram normalization")
        ->check(CLI::IsMember({"raw", "logstd", "frameratio"}));
    app->add_option("--fft-size", fft_size, "STFT length N (power of two)");
    app->add_option("--hop", hop, "STFT hop L");
    app->add_option("--window", window, "STFT window")->check(CLI::IsMember({"hann", "hamming", "rect"}));
    app->add_option("--decimation", decimation, "Boxcar decimation ahead of the STFT (1 = off)");
    app->add_option("--segment", segment_s, "Segment duration in seconds");
  }

  pipeline::FeaturizeConfig build() const {
    pipeline::FeaturizeConfig c;
    c.spectrogram.stft.fft_size = fft_size;
    c.spectrogram.stft.hop = hop;
    c.spectrogram.stft.window = features::parse_window(window);
    c.spectrogram.normalization = features::parse_normalization(norm);
    c.spectrogram.decimation = decimation;
    c.spectrogram.segment_duration_s = segment_s;
    return c;
  }
};

dataio::IqFormat format_by_name(const std::string& name, double sample_rate_hz, double scale) {
  dataio::IqFormat f;
  if (name == "texbat") {
    f = dataio::iq_preset("texbat");
  } else if (name == "int16") {
    f.sample_type = dataio::SampleType::Int16;
    f.scale = 1.0 / 32768.0;
  } else if (name == "int8") {
    f.sample_type = dataio::SampleType::Int8;
    f.scale = 1.0 / 128.0;
  } else if (name == "float32") {
    f.sample_type = dataio::SampleType::Float32;
    f.scale = 1.0;
  } else {
    throw ValidationError("unknown capture format '" + name + "'");
  }
  if (sample_rate_hz > 0.0) f.sample_rate_hz = sample_rate_hz;
  if (scale > 0.0) f.scale = scale;
  return f;
}

std::vector<tracking::PostCorrField> postcorr_subset(const std::string& s) {
  return tracking::parse_postcorr_subset(s);
}

/// Post-correlation vectors in caches always hold every field; training picks a subset.
std::size_t epochs_of(const dataio::CacheLayout& layout) {
  const std::size_t n = tracking::kAllPostCorrFields.size();
  if (layout.post_dim % n != 0 || layout.post_dim / n < 3) {
    throw DataError("feature cache post-correlation width " + std::to_string(layout.post_dim) +
                    " is not a whole number of epochs for all fields");
  }
  return layout.post_dim / n - 2;
}

struct LoadedSet {
  std::vector<embedder::Example> examples;
  dataio::CacheLayout layout;
};

LoadedSet load_tag(const dataio::DatasetRegistry& reg, const std::string& tag, const dataio::CacheLayout* expected) {
  const auto& rec = reg.get(tag);
  if (!fs::exists(rec.cache)) {
    throw DataError("dataset " + tag + " has no feature cache at " + rec.cache.string() + "; run featurize first");
  }
  LoadedSet s;
  s.examples = dataio::load_features(rec.cache, expected, &s.layout);
  return s;
}

void apply_subset(std::vector<embedder::Example>& ex, std::size_t epochs,
                  const std::vector<tracking::PostCorrField>& subset) {
  for (auto& e : ex) e.postcorr = pipeline::select_postcorr(e.postcorr, epochs, subset);
}

void export_embeddings(const fs::path& path, const tensor::ParamSet& theta, const embedder::EncoderConfig& ec,
                       std::span<const embedder::Example> examples, embedder::FeatureMode mode) {
  const RealMatrix emb = embedder::embed_all(theta, ec, examples, mode);
  std::ostringstream os;
  os << "source,label";
  for (std::size_t j = 0; j < emb.cols; ++j) os << ",e" << j;
  os << "\n";
  for (std::size_t i = 0; i < emb.rows; ++i) {
    os << examples[i].source << ',' << to_string(examples[i].label);
    for (std::size_t j = 0; j < emb.cols; ++j) os << ',' << num(emb(i, j));
    os << "\n";
  }
  write_text(path, os.str());
}

std::string file_stamp(const fs::path& p) {
  std::error_code ec;
  const auto size = fs::file_size(p, ec);
  const auto mtime = fs::last_write_time(p, ec).time_since_epoch().count();
  return p.string() + ":" + std::to_string(size) + ":" + std::to_string(mtime);
}

// --- commands ------------------------------------------------------------------------

struct GenerateArgs {
  std::string scene, out, format = "float32";
  double scale = 0.0, duration = 0.0;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_generate(const GenerateArgs& a, Manifest& m) {
  sigmodel::SceneSpec scene = sigmodel::load_scene(a.scene);
  if (a.duration > 0.0) scene.duration_s = a.duration;
  if (a.seed_set) scene.rng_seed = a.seed;
  scene.validate();
  const dataio::IqFormat fmt = format_by_name(a.format, scene.sample_rate_hz, a.scale);
  m.seed(scene.rng_seed);
  m.config() = json::parse(sigmodel::scene_to_json(scene));
  m.config()["format"] = fmt.describe();

  const std::size_t total = scene.num_samples();
  sigmodel::SceneSynthesizer synth(scene);
  dataio::IqFileWriter writer(a.out, fmt);
  const std::size_t chunk = 1 << 18;
  for (std::size_t done = 0; done < total;) {
    const std::size_t n = std::min(chunk, total - done);
    writer.write(synth.next(n));
    done += n;
  }
  writer.close();

  dataio::CaptureInfo info;
  info.format = fmt;
  info.label = scene.spoofers.empty() ? Label::Clean : Label::Spoofed;
  if (!scene.genuine.empty()) {
    const auto t = pipeline::target_of(scene);
    info.prn = t.prn;
    info.track = t.init;
  }
  dataio::write_capture_info(a.out, info);
  m.output(a.out);
  m.output(a.out + ".json");
  const std::size_t segs = features::segment_count(total, scene.sample_rate_hz);
  m.note("samples", total);
  m.note("segments", segs);
  log("wrote " + std::to_string(total) + " samples (" + std::to_string(segs) + " segments of 4 ms, " +
      to_string(info.label) + ") to " + a.out);
  return 0;
}

struct BenchmarkArgs {
  std::string out_dir = "benchmark";
  std::uint64_t seed = 1;
  std::size_t examples = 100;
  std::string families = "ds2,ds3,ds4,ds7,ds8";
};

int cmd_benchmark(const BenchmarkArgs& a, Manifest& m) {
  pipeline::BenchmarkConfig bc;
  bc.seed = a.seed;
  bc.examples_per_class = a.examples;
  std::vector<pipeline::Family> chosen;
  std::istringstream is(a.families);
  std::string tag;
  const auto all = pipeline::default_families();
  while (std::getline(is, tag, ',')) {
    auto it = std::find_if(all.begin(), all.end(), [&](const auto& f) { return f.tag == tag; });
    if (it == all.end()) throw ValidationError("unknown benchmark family '" + tag + "'");
    chosen.push_back(*it);
  }
  m.seed(a.seed);
  m.config() = {{"examples_per_class", a.examples}, {"families", a.families},
                {"features", bc.features.describe()}};
  fs::create_directories(a.out_dir);
  pipeline::FeaturizeConfig fc = bc.features;
  fc.spectrogram.resolve(bc.sample_rate_hz);
  const dataio::CacheLayout layout{fc.spectrogram.rows(), fc.spectrogram.cols(), fc.post_dim(), fc.describe()};
  dataio::DatasetRegistry reg;
  for (const auto& fam : chosen) {
    const auto ex = pipeline::build_family(bc, fam);
    dataio::DatasetRecord rec;
    rec.tag = fam.tag;
    rec.cache = fs::absolute(fs::path(a.out_dir) / (fam.tag + ".splc"));
    dataio::cache_features(rec.cache, ex, layout);
    m.output(rec.cache);
    m.dataset(fam.tag);
    log(fam.tag + ": " + std::to_string(ex.size()) + " examples -> " + rec.cache.string());
    reg.add(std::move(rec));
  }
  const fs::path reg_path = fs::path(a.out_dir) / "registry.json";
  dataio::save_registry(reg_path, reg);
  m.output(reg_path);
  return 0;
}

struct TrackArgs {
  std::string registry, tag;
  std::uint64_t seed = 0;
};

int cmd_track(const TrackArgs& a, Manifest& m) {
  const auto reg = dataio::load_registry(a.registry);
  const auto& rec = reg.get(a.tag);
  m.dataset(a.tag);
  const double seg = 0.004;
  for (const auto& [label, paths] : rec.captures) {
    for (const auto& path : paths) {
      const auto info = dataio::read_capture_info(path);
      const dataio::IqFormat fmt = info ? info->format : rec.format;
      const auto init = info && info->track ? info->track : rec.track;
      if (!init) throw ValidationError("no tracking target for " + path.string() + " (set \"track\" in the registry)");
      dataio::IqFileReader reader(path, fmt);
      tracking::Tracker trk(tracking::gold_code(info ? info->prn : rec.prn), fmt.sample_rate_hz, *init);
      const std::size_t seg_len = features::segment_length(fmt.sample_rate_hz, seg);
      std::vector<tracking::WindowedPostCorr> windows;
      while (reader.total_samples() - reader.position() >= seg_len) {
        const auto block = reader.read(seg_len);
        windows.push_back({windows.size(), trk.process(block)});
      }
      const fs::path out = path.string() + ".postcorr.csv";
      tracking::export_postcorr_csv(out, windows, seg);
      m.output(out);
      log(path.string() + ": " + std::to_string(windows.size()) + " windows -> " + out.string());
    }
  }
  return 0;
}

struct FeaturizeArgs {
  std::string registry, tag;
  std::vector<std::string> cols;
  FeatureFlags feat;
  bool force = false;
};

int cmd_featurize(const FeaturizeArgs& a, Manifest& m) {
  const auto reg = dataio::load_registry(a.registry);
  const auto& rec = reg.get(a.tag);
  m.dataset(a.tag);
  pipeline::FeaturizeConfig fc = a.feat.build();
  tracking::ColumnMap colmap;
  for (const auto& c : a.cols) colmap.bind(c);

  std::ostringstream key;
  key << fc.describe() << "\nformat " << rec.format.describe() << "\nwindow " << rec.offset_s << " " << rec.duration_s
      << "\n";
  for (const auto& [label, paths] : rec.captures) {
    for (const auto& p : paths) key << to_string(label) << " " << file_stamp(p) << "\n";
  }
  for (const auto& [label, paths] : rec.postcorr_csv) {
    for (const auto& p : paths) key << "csv " << to_string(label) << " " << file_stamp(p) << "\n";
  }
  for (const auto& c : a.cols) key << "col " << c << "\n";
  m.config() = {{"features", fc.describe()}, {"cache", rec.cache.string()}};

  if (!a.force && dataio::cache_is_current(rec.cache, key.str())) {
    log("cache hit for " + a.tag + ": " + rec.cache.string() + " is current, nothing to do");
    m.note("cache_hit", true);
    return 0;
  }
  m.note("cache_hit", false);
  if (rec.captures.empty()) throw DataError("dataset " + a.tag + " lists no captures");

  std::vector<embedder::Example> all;
  std::optional<dataio::CacheLayout> layout;
  for (const auto& [label, paths] : rec.captures) {
    for (std::size_t i = 0; i < paths.size(); ++i) {
      const fs::path& path = paths[i];
      const auto info = dataio::read_capture_info(path);
      const dataio::IqFormat fmt = info ? info->format : rec.format;
      pipeline::FeaturizeConfig cfg = fc;
      cfg.spectrogram.resolve(fmt.sample_rate_hz);
      const dataio::CacheLayout here{cfg.spectrogram.rows(), cfg.spectrogram.cols(), cfg.post_dim(), cfg.describe()};
      if (layout && !layout->same_dims(here)) {
        throw ValidationError("captures of " + a.tag + " give different feature sizes: " + layout->describe() +
                              " vs " + here.describe());
      }
      layout = here;

      dataio::IqFileReader reader(path, fmt);
      const auto first = static_cast<std::size_t>(std::llround(rec.offset_s * fmt.sample_rate_hz));
      reader.seek(first);
      std::size_t remaining = reader.total_samples() - first;
      if (rec.duration_s > 0.0) {
        const auto want = static_cast<std::size_t>(std::llround(rec.duration_s * fmt.sample_rate_hz));
        if (want > remaining) {
          throw DataError("capture " + path.string() + " is shorter than the requested " + num(rec.duration_s) + " s");
        }
        remaining = want;
      }
      const std::string source = a.tag;
      std::optional<pipeline::StreamFeaturizer> sf;
      const auto csvs = rec.postcorr_csv.find(label);
      if (csvs != rec.postcorr_csv.end() && i < csvs->second.size()) {
        auto windows = tracking::ingest_postcorr_csv(csvs->second[i], colmap, cfg.spectrogram.segment_duration_s,
                                                     rec.offset_s);
        sf.emplace(fmt.sample_rate_hz, label, cfg, std::move(windows), source);
      } else {
        auto init = info && info->track ? info->track : rec.track;
        if (!init) {
          throw ValidationError("no post-correlation source for " + path.string() +
                                ": list a receiver-log CSV under \"postcorr\" or a \"track\" target");
        }
        // Advance the acquisition result to the start of the read window.
        init->code_phase += static_cast<double>(first) * tracking::kChipRateHz / fmt.sample_rate_hz;
        init->code_phase = std::fmod(init->code_phase, tracking::kCodeLength);
        sf.emplace(fmt.sample_rate_hz, label, cfg, pipeline::TrackTarget{info ? info->prn : rec.prn, *init}, source);
      }
      const std::size_t block = sf->segment_samples() * 64;
      std::size_t count = 0;
      while (remaining > 0) {
        const auto samples = reader.read(std::min(block, remaining));
        remaining -= samples.size();
        for (auto& e : sf->feed(samples)) {
          all.push_back(std::move(e));
          ++count;
        }
      }
      if (count == 0) throw ValidationError("capture " + path.string() + " is shorter than one segment");
      log(a.tag + " " + to_string(label) + ": " + path.string() + " -> " + std::to_string(count) + " segments");
      m.note(std::string("segments_") + to_string(label), count);
    }
  }
  dataio::cache_features(rec.cache, all, *layout);
  dataio::write_cache_key(rec.cache, key.str());
  m.output(rec.cache);
  m.note("count", all.size());
  log("cached " + std::to_string(all.size()) + " examples in " + rec.cache.string());
  return 0;
}

struct TrainArgs {
  std::string registry, run_dir = "run-train", config, feature_mode = "prepost", postcorr = "all";
  std::string export_embeddings;
  std::vector<std::string> combos, sets;
  std::uint64_t seed = 0;
  std::size_t shots = 0, threads = 0, epochs = 0;
  bool seed_set = false;
};

metalearn::MetaConfig resolve_meta(const std::string& config, const std::vector<std::string>& sets,
                                   std::optional<std::uint64_t> seed, std::size_t shots, std::size_t threads,
                                   std::size_t epochs) {
  metalearn::MetaConfig cfg;
  if (!config.empty()) cfg = metalearn::load_meta_config(config, cfg);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (seed) cfg.seed = *seed;
  if (shots) cfg.shots_per_class = shots;
  if (threads) cfg.threads = threads;
  if (epochs) cfg.epochs = epochs;
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& a, Manifest& m) {
  const auto cfg = resolve_meta(a.config, a.sets, a.seed_set ? std::optional(a.seed) : std::nullopt, a.shots,
                                a.threads, a.epochs);
  const auto mode = embedder::parse_feature_mode(a.feature_mode);
  const auto subset = postcorr_subset(a.postcorr);
  const fs::path run(a.run_dir);
  fs::create_directories(run / "checkpoints");
  m.seed(cfg.seed);
  for (const auto& [k, v] : cfg.to_map()) m.config()[k] = v;
  m.config()["feature_mode"] = a.feature_mode;
  m.config()["postcorr"] = a.postcorr;
  m.config()["combos"] = a.combos;

  const auto reg = dataio::load_registry(a.registry);
  std::vector<metalearn::Combo> combos;
  for (const auto& c : a.combos) combos.push_back(metalearn::resolve_combo(c));
  if (combos.empty()) throw ValidationError("train needs at least one --combo");

  metalearn::FeatureRegistry features;
  std::optional<dataio::CacheLayout> layout;
  for (const auto& combo : combos) {
    for (const auto& tag : combo.tags) {
      if (features.contains(tag)) continue;
      auto set = load_tag(reg, tag, layout ? &*layout : nullptr);
      if (!layout) layout = set.layout;
      apply_subset(set.examples, epochs_of(set.layout), subset);
      features.add(tag, std::move(set.examples));
      m.dataset(tag);
    }
  }
  embedder::EncoderConfig ec;
  ec.spec_rows = layout->spec_rows;
  ec.spec_cols = layout->spec_cols;
  ec.post_dim = pipeline::select_postcorr(std::vector<double>(layout->post_dim), epochs_of(*layout), subset).size();
  const auto theta0 = embedder::init_params(ec, cfg.seed);
  const metalearn::ProtoObjective objective(ec, mode);

  metalearn::TrainOptions opts;
  opts.checkpoint_dir = run / "checkpoints";
  opts.on_epoch = [&](std::size_t e, double loss) {
    log("epoch " + std::to_string(e) + "/" + std::to_string(cfg.epochs) + " mean meta loss " + num(loss));
  };
  const auto result = metalearn::meta_train(cfg, features, combos, objective, theta0, opts);

  std::ostringstream hist;
  hist << "epoch,mean_meta_loss\n";
  for (std::size_t e = 0; e < result.loss_history.size(); ++e) hist << e + 1 << ',' << num(result.loss_history[e]) << "\n";
  write_text(run / "loss_history.csv", hist.str());
  tensor::save_checkpoint(run / "model.spl", result.theta);
  const json model{{"feature_mode", embedder::to_string(mode)},
                   {"postcorr", a.postcorr},
                   {"epochs_per_segment", epochs_of(*layout)},
                   {"spec_rows", ec.spec_rows},
                   {"spec_cols", ec.spec_cols},
                   {"features", layout->config},
                   {"inner_lr", cfg.inner_lr},
                   {"inner_steps", cfg.inner_steps},
                   {"fusion_zero_fraction", metalearn::zero_fraction(result.theta, metalearn::regularized_names(result.theta, cfg))}};
  write_text(run / "model.json", model.dump(2) + "\n");
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%03zu.spl", e);
    m.output(run / "checkpoints" / name);
  }
  m.output(run / "loss_history.csv");
  m.output(run / "model.spl");
  m.output(run / "model.json");
  m.note("final_loss", result.loss_history.back());
  if (!a.export_embeddings.empty()) {
    std::vector<embedder::Example> all;
    for (const auto& tag : features.tags()) {
      const auto& ex = features.get(tag);
      all.insert(all.end(), ex.begin(), ex.end());
    }
    export_embeddings(a.export_embeddings, result.theta, ec, all, mode);
    m.output(a.export_embeddings);
  }
  log("final mean meta loss " + num(result.loss_history.back()) + "; model in " + (run / "model.spl").string());
  return 0;
}

struct CrosstestArgs {
  std::string model, registry, target, run_dir = "run-crosstest", classifier = "proto", export_embeddings;
  std::size_t shots = 5, query = 0, k = 5;
  std::uint64_t seed = 0;
};

int cmd_crosstest(const CrosstestArgs& a, Manifest& m) {
  const fs::path model_path(a.model);
  const fs::path sidecar = model_path.parent_path() / "model.json";
  std::ifstream in(sidecar);
  if (!in) throw DataError("model description " + sidecar.string() + " not found");
  const json model = json::parse(in);
  const auto theta = tensor::load_checkpoint(model_path);
  const auto mode = embedder::parse_feature_mode(model.at("feature_mode").get<std::string>());
  const auto subset = postcorr_subset(model.at("postcorr").get<std::string>());
  m.seed(a.seed);
  m.dataset(a.target);
  m.config() = {{"model", a.model}, {"target", a.target}, {"shots", a.shots}, {"query", a.query},
                {"classifier", a.classifier}, {"k", a.k}};

  const auto reg = dataio::load_registry(a.registry);
  auto set = load_tag(reg, a.target, nullptr);
  if (set.layout.spec_rows != model.at("spec_rows").get<std::size_t>() ||
      set.layout.spec_cols != model.at("spec_cols").get<std::size_t>()) {
    throw ValidationError("target features " + set.layout.describe() + " do not match the model's [" +
                          model.at("features").get<std::string>() + "]");
  }
  apply_subset(set.examples, epochs_of(set.layout), subset);
  const auto ec = embedder::infer_config(theta, set.layout.spec_rows, set.layout.spec_cols);
  const metalearn::ProtoObjective objective(ec, mode);
  auto [support, query] = metalearn::split_support_query(set.examples, a.shots, a.query, a.seed);
  metalearn::EvalOptions opts;
  opts.classifier = a.classifier == "knn" ? metalearn::Classifier::Knn : metalearn::Classifier::NearestPrototype;
  opts.k = a.k;
  const auto r = metalearn::adapt_and_evaluate(theta, objective, support, query, model.at("inner_lr").get<double>(),
                                               model.at("inner_steps").get<std::size_t>(), opts);

  const fs::path run(a.run_dir);
  fs::create_directories(run);
  const auto& c = r.confusion;
  std::ostringstream cm;
  cm << "actual,predicted_spoofed,predicted_clean\n"
     << "spoofed," << c.tp << ',' << c.fn << "\n"
     << "clean," << c.fp << ',' << c.tn << "\n";
  write_text(run / "confusion.csv", cm.str());
  std::ostringstream mt;
  mt << "metric,value\n"
     << "accuracy," << num(c.accuracy()) << "\nprecision," << num(c.precision()) << "\nrecall," << num(c.recall())
     << "\nf1," << num(c.f1()) << "\nquery_loss," << num(r.query_loss) << "\nquery_count," << c.total() << "\n";
  write_text(run / "metrics.csv", mt.str());
  m.output(run / "confusion.csv");
  m.output(run / "metrics.csv");
  m.note("accuracy", c.accuracy());
  if (!a.export_embeddings.empty()) {
    std::vector<embedder::Example> all = support;
    all.insert(all.end(), query.begin(), query.end());
    export_embeddings(a.export_embeddings, r.adapted, ec, all, mode);
    m.output(a.export_embeddings);
  }
  log(a.target + ": accuracy " + num(c.accuracy()) + " over " + std::to_string(c.total()) + " queries (TP " +
      std::to_string(c.tp) + " FN " + std::to_string(c.fn) + " FP " + std::to_string(c.fp) + " TN " +
      std::to_string(c.tn) + ")");
  return 0;
}

int run(std::vector<std::string> args);

int cmd_rerun(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path);
  const json doc = json::parse(in);
  auto argv = doc.at("argv").get<std::vector<std::string>>();
  if (argv.size() > 1 && argv[1] == "rerun") throw ValidationError("manifest records a rerun");
  log("re-running: " + doc.at("command").get<std::string>());
  return run(std::move(argv));
}

int run(std::vector<std::string> args) {
  CLI::App app{"GNSS spoofing detection by meta-learning over RF-fingerprint features"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SPOOFMETA_VERSION);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Synthesize a scene into an IQ capture file");
  g->add_option("--config,--scene", gen.scene, "Scene JSON")->required();
  g->add_option("--out", gen.out, "Capture file")->required();
  g->add_option("--format", gen.format, "float32 | int16 | int8 | texbat");
  g->add_option("--scale", gen.scale, "Override the format scale");
  g->add_option("--duration", gen.duration, "Override the scene duration (s)");
  auto* gseed = g->add_option("--seed", gen.seed, "Override the scene rng_seed");
  std::string gen_run = "run-generate";
  g->add_option("--run-dir", gen_run, "Directory for manifest.json");

  BenchmarkArgs bench;
  auto* b = app.add_subcommand("benchmark", "Featurize the synthetic fingerprint-family benchmark");
  b->add_option("--out-dir", bench.out_dir, "Output directory (caches + registry.json)");
  b->add_option("--seed", bench.seed, "Scene seed");
  b->add_option("--examples", bench.examples, "Examples per class and family");
  b->add_option("--families", bench.families, "Comma-separated family tags");

  TrackArgs trk;
  auto* t = app.add_subcommand("track", "Run the tracking loops over a dataset's captures and write receiver-log CSVs");
  t->add_option("--registry", trk.registry, "Registry JSON")->required();
  t->add_option("--tag", trk.tag, "Dataset tag")->required();
  std::string trk_run = "run-track";
  t->add_option("--run-dir", trk_run, "Directory for manifest.json");

  FeaturizeArgs fz;
  auto* f = app.add_subcommand("featurize", "Segment and featurize a dataset into its feature cache");
  f->add_option("--registry", fz.registry, "Registry JSON")->required();
  f->add_option("--tag", fz.tag, "Dataset tag")->required();
  f->add_option("--col", fz.cols, "Bind a receiver-log column: name=header");
  f->add_flag("--force", fz.force, "Recompute even if the cache is current");
  fz.feat.add(f);
  std::string fz_run = "run-featurize";
  f->add_option("--run-dir", fz_run, "Directory for manifest.json");

  TrainArgs tr;
  auto* r = app.add_subcommand("train", "Meta-train the encoder on dataset combos");
  r->add_option("--registry", tr.registry, "Registry JSON")->required();
  r->add_option("--combo", tr.combos, "C1..C4, a dataset tag, or tag+tag (repeatable)")->required();
  r->add_option("--run-dir", tr.run_dir, "Run directory");
  r->add_option("--config", tr.config, "key=value training config");
  r->add_option("--set", tr.sets, "Override one config key: key=value");
  auto* rseed = r->add_option("--seed", tr.seed, "Seed");
  r->add_option("--shots", tr.shots, "Support examples per class");
  r->add_option("--threads", tr.threads, "Worker threads (1 = bit-exact)");
  r->add_option("--epochs", tr.epochs, "Epochs");
  r->add_option("--feature-mode", tr.feature_mode, "pre | prepost")->check(CLI::IsMember({"pre", "prepost"}));
  r->add_option("--postcorr", tr.postcorr, "codephase,dlldiscr,doppler,flllock,plllock or all");
  r->add_option("--export-embeddings", tr.export_embeddings, "CSV of training-set embeddings");

  CrosstestArgs ct;
  auto* c = app.add_subcommand("crosstest", "Adapt a trained model to an unseen dataset and score it");
  c->add_option("--model,--checkpoint", ct.model, "model.spl written by train")->required();
  c->add_option("--registry", ct.registry, "Registry JSON")->required();
  c->add_option("--target", ct.target, "Dataset tag")->required();
  c->add_option("--shots", ct.shots, "Support examples per class");
  c->add_option("--query", ct.query, "Query size (0 = all remaining)");
  c->add_option("--classifier", ct.classifier, "proto | knn")->check(CLI::IsMember({"proto", "knn"}));
  c->add_option("--k", ct.k, "Neighbours for knn");
  c->add_option("--seed", ct.seed, "Support/query split seed");
  c->add_option("--run-dir", ct.run_dir, "Run directory");
  c->add_option("--export-embeddings", ct.export_embeddings, "CSV of adapted embeddings");

  std::string manifest_path;
  auto* rr = app.add_subcommand("rerun", "Re-run the command recorded in a manifest");
  rr->add_option("manifest", manifest_path, "manifest.json")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  Manifest manifest(args.size() > 1 ? args[1] : "", args);
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto guarded = [&](const std::string& dir, auto&& body) {
    manifest.set_dir(dir);
    try {
      const int code = body();
      manifest.finish(code);
      return code;
    } catch (const spoofmeta::Error& e) {
      log(std::string("error: ") + e.what());
      const int code = exit_code(e);
      manifest.finish(code, e.what());
      return code;
    } catch (const std::exception& e) {
      log(std::string("error: ") + e.what());
      manifest.finish(1, e.what());
      return 1;
    }
  };

  if (*g) {
    gen.seed_set = gseed->count() > 0;
    return guarded(gen_run, [&] { return cmd_generate(gen, manifest); });
  }
  if (*b) return guarded(bench.out_dir, [&] { return cmd_benchmark(bench, manifest); });
  if (*t) return guarded(trk_run, [&] { return cmd_track(trk, manifest); });
  if (*f) return guarded(fz_run, [&] { return cmd_featurize(fz, manifest); });
  if (*r) {
    tr.seed_set = rseed->count() > 0;
    return guarded(tr.run_dir, [&] { return cmd_train(tr, manifest); });
  }
  if (*c) return guarded(ct.run_dir, [&] { return cmd_crosstest(ct, manifest); });
  try {
    return cmd_rerun(manifest_path);
  } catch (const spoofmeta::Error& e) {
    log(std::string("error: ") + e.what());
    return exit_code(e);
  }
}

}  // namespace

int main(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc)); }
