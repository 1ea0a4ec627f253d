#include "spoofmeta/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "spoofmeta/error.hpp"

namespace spoofmeta::embedder {

using tensor::ParamSet;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

FeatureMode parse_feature_mode(const std::string& s) {
  if (s == "pre") return FeatureMode::Pre;
  if (s == "prepost") return FeatureMode::PrePost;
  throw ValidationError("unknown feature mode '" + s + "' (pre|prepost)");
}

const char* to_string(FeatureMode m) { return m == FeatureMode::Pre ? "pre" : "prepost"; }

void EncoderConfig::validate() const {
  if (spec_rows == 0 || spec_cols == 0) throw ValidationError("encoder: spectrogram dims unset");
  if (post_dim == 0) throw ValidationError("encoder: post_dim must be >= 1");
  if (kernel == 0 || conv1_filters == 0 || conv2_filters == 0 || spec_dense == 0 ||
      post_hidden == 0 || post_out == 0 || embedding_dim == 0) {
    throw ValidationError("encoder: layer sizes must be positive");
  }
  const std::size_t k = kernel - 1;
  if (spec_rows < k + 2 || spec_cols < k + 2 || (spec_rows - k) / 2 < k + 2 ||
      (spec_cols - k) / 2 < k + 2) {
    throw ValidationError("encoder: spectrogram " + std::to_string(spec_rows) + "x" +
                          std::to_string(spec_cols) + " too small for two conv/pool stages");
  }
}

std::size_t EncoderConfig::flat_dim() const {
  const std::size_t k = kernel - 1;
  const std::size_t h = ((spec_rows - k) / 2 - k) / 2;
  const std::size_t w = ((spec_cols - k) / 2 - k) / 2;
  return conv2_filters * h * w;
}

EncoderConfig infer_config(const ParamSet& p, std::size_t spec_rows, std::size_t spec_cols) {
  auto get = [&](const char* name) -> const Tensor& {
    auto it = p.find(name);
    if (it == p.end()) throw DataError(std::string("parameter set lacks ") + name);
    return it->second;
  };
  EncoderConfig c;
  c.spec_rows = spec_rows;
  c.spec_cols = spec_cols;
  c.conv1_filters = get("spec.conv1.w").dim(0);
  c.kernel = get("spec.conv1.w").dim(2);
  c.conv2_filters = get("spec.conv2.w").dim(0);
  c.spec_dense = get("spec.fc.w").dim(1);
  c.post_dim = get("post.fc1.w").dim(0);
  c.post_hidden = get("post.fc1.w").dim(1);
  c.post_out = get("post.fc2.w").dim(1);
  c.embedding_dim = get("fusion.w").dim(1);
  c.validate();
  if (get("spec.fc.w").dim(0) != c.flat_dim()) {
    throw DataError("parameters do not fit a " + std::to_string(spec_rows) + "x" +
                    std::to_string(spec_cols) + " spectrogram");
  }
  return c;
}

ParamSet init_params(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamSet p;
  auto normal = [&](const std::string& name, tensor::Shape shape, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = d(rng);
    p.emplace(name, std::move(t));
  };
  auto he = [&](const std::string& name, tensor::Shape shape, std::size_t fan_in) {
    normal(name, std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)));
  };
  auto zeros = [&](const std::string& name, std::size_t n) { p.emplace(name, Tensor({n}, 0.0)); };
  const std::size_t k = cfg.kernel;
  he("spec.conv1.w", {cfg.conv1_filters, 1, k, k}, k * k);
  zeros("spec.conv1.b", cfg.conv1_filters);
  he("spec.conv2.w", {cfg.conv2_filters, cfg.conv1_filters, k, k}, cfg.conv1_filters * k * k);
  zeros("spec.conv2.b", cfg.conv2_filters);
  he("spec.fc.w", {cfg.flat_dim(), cfg.spec_dense}, cfg.flat_dim());
  zeros("spec.fc.b", cfg.spec_dense);
  he("post.fc1.w", {cfg.post_dim, cfg.post_hidden}, cfg.post_dim);
  zeros("post.fc1.b", cfg.post_hidden);
  he("post.fc2.w", {cfg.post_hidden, cfg.post_out}, cfg.post_hidden);
  zeros("post.fc2.b", cfg.post_out);
  he("post.absent_token", {1, cfg.post_out}, cfg.post_out);
  // Scaled so squared distances between fresh embeddings are O(1) rather than O(D); larger
  // logits saturate the softmax and make the first SGD steps diverge.
  const std::size_t fused = cfg.spec_dense + cfg.post_out;
  normal("fusion.w", {fused, cfg.embedding_dim},
         std::sqrt(1.0 / static_cast<double>(fused * cfg.embedding_dim)));
  zeros("fusion.b", cfg.embedding_dim);
  return p;
}

Var encode(const VarMap& p, const EncoderConfig& cfg, std::span<const Example> batch,
           FeatureMode mode) {
  if (batch.empty()) throw ValidationError("encode: empty batch");
  Tape& tape = *p.at("fusion.w").tape;
  const std::size_t n = batch.size();

  Tensor spec({n, 1, cfg.spec_rows, cfg.spec_cols});
  const std::size_t plane = cfg.spec_rows * cfg.spec_cols;
  for (std::size_t i = 0; i < n; ++i) {
    const RealMatrix& s = batch[i].spectrogram;
    if (s.rows != cfg.spec_rows || s.cols != cfg.spec_cols) {
      throw ValidationError("encode: spectrogram " + std::to_string(s.rows) + "x" +
                            std::to_string(s.cols) + " but encoder expects " +
                            std::to_string(cfg.spec_rows) + "x" + std::to_string(cfg.spec_cols));
    }
    std::copy(s.data.begin(), s.data.end(), spec.data().begin() + i * plane);
  }
  Var h = tensor::conv2d(tape.constant(std::move(spec)), p.at("spec.conv1.w"), p.at("spec.conv1.b"));
  h = tensor::maxpool2(tensor::relu(h));
  h = tensor::conv2d(h, p.at("spec.conv2.w"), p.at("spec.conv2.b"));
  h = tensor::maxpool2(tensor::relu(h));
  h = tensor::reshape(h, {n, cfg.flat_dim()});
  const Var spec_feat = tensor::dense(h, p.at("spec.fc.w"), p.at("spec.fc.b"));

  Var post_feat;
  if (mode == FeatureMode::PrePost) {
    Tensor post({n, cfg.post_dim});
    for (std::size_t i = 0; i < n; ++i) {
      if (batch[i].postcorr.size() != cfg.post_dim) {
        throw ValidationError("encode: post-correlation vector has " +
                              std::to_string(batch[i].postcorr.size()) + " entries, expected " +
                              std::to_string(cfg.post_dim));
      }
      std::copy(batch[i].postcorr.begin(), batch[i].postcorr.end(), post.data().begin() + i * cfg.post_dim);
    }
    Var q = tensor::dense(tape.constant(std::move(post)), p.at("post.fc1.w"), p.at("post.fc1.b"));
    post_feat = tensor::dense(tensor::relu(q), p.at("post.fc2.w"), p.at("post.fc2.b"));
  } else {
    post_feat = tensor::repeat_rows(p.at("post.absent_token"), n);
  }
  return tensor::dense(tensor::concat(spec_feat, post_feat), p.at("fusion.w"), p.at("fusion.b"));
}

RealMatrix embed_all(const ParamSet& params, const EncoderConfig& cfg, std::span<const Example> batch,
                     FeatureMode mode) {
  Tape tape;
  const VarMap vars = tensor::bind(tape, params);
  const Tensor& e = encode(vars, cfg, batch, mode).value();
  RealMatrix out(e.dim(0), e.dim(1));
  std::copy(e.data().begin(), e.data().end(), out.data.begin());
  return out;
}

std::vector<double> embed(const ParamSet& params, const EncoderConfig& cfg, const Example& example,
                          FeatureMode mode) {
  return embed_all(params, cfg, std::span(&example, 1), mode).data;
}

PrototypeSet prototypes(const RealMatrix& embeddings, std::span<const Label> labels) {
  if (labels.size() != embeddings.rows) throw ValidationError("prototypes: label count mismatch");
  PrototypeSet out{std::vector<double>(embeddings.cols, 0.0), std::vector<double>(embeddings.cols, 0.0)};
  std::size_t counts[2] = {0, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& target = labels[i] == Label::Clean ? out.clean : out.spoofed;
    ++counts[static_cast<int>(labels[i])];
    for (std::size_t j = 0; j < embeddings.cols; ++j) target[j] += embeddings(i, j);
  }
  for (Label l : {Label::Clean, Label::Spoofed}) {
    const std::size_t c = counts[static_cast<int>(l)];
    if (c == 0) throw ValidationError(std::string("prototypes: no support examples for class ") + to_string(l));
    auto& target = l == Label::Clean ? out.clean : out.spoofed;
    for (double& v : target) v /= static_cast<double>(c);
  }
  return out;
}

Var proto_loss(const VarMap& p, const EncoderConfig& cfg, std::span<const Example> support,
               std::span<const Example> eval, FeatureMode mode) {
  Tape& tape = *p.at("fusion.w").tape;
  std::size_t counts[2] = {0, 0};
  for (const Example& e : support) ++counts[static_cast<int>(e.label)];
  if (counts[0] == 0 || counts[1] == 0) {
    throw ValidationError(std::string("proto_loss: support lacks class ") +
                          (counts[0] == 0 ? "clean" : "spoofed"));
  }
  if (eval.empty()) throw ValidationError("proto_loss: no evaluation examples");

  const Var support_emb = encode(p, cfg, support, mode);
  Tensor avg({2, support.size()}, 0.0);
  for (std::size_t i = 0; i < support.size(); ++i) {
    const auto c = static_cast<std::size_t>(support[i].label);
    avg[c * support.size() + i] = 1.0 / static_cast<double>(counts[c]);
  }
  const Var protos = tensor::matmul(tape.constant(std::move(avg)), support_emb);

  const bool same = eval.data() == support.data() && eval.size() == support.size();
  const Var eval_emb = same ? support_emb : encode(p, cfg, eval, mode);
  std::vector<int> labels(eval.size());
  for (std::size_t i = 0; i < eval.size(); ++i) labels[i] = static_cast<int>(eval[i].label);
  const Var logits = tensor::scale(tensor::sq_euclidean_rows(eval_emb, protos), -1.0);
  return tensor::softmax_cross_entropy(logits, labels);
}

double proto_loss_value(const ParamSet& params, const EncoderConfig& cfg,
                        std::span<const Example> support, std::span<const Example> eval,
                        FeatureMode mode, ParamSet* grads) {
  Tape tape;
  const VarMap vars = tensor::bind(tape, params);
  const Var loss = proto_loss(vars, cfg, support, eval, mode);
  if (grads) {
    tape.backward(loss);
    *grads = tensor::gradients(tape, vars);
  }
  return loss.value().item();
}

double sq_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("distance between vectors of different length");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

Label classify(std::span<const double> query, const PrototypeSet& protos) {
  return sq_distance(query, protos.clean) <= sq_distance(query, protos.spoofed) ? Label::Clean
                                                                                : Label::Spoofed;
}

Label classify_knn(std::span<const double> query, const RealMatrix& refs, std::span<const Label> labels,
                   std::size_t k) {
  if (refs.rows == 0) throw ValidationError("classify_knn: empty reference set");
  if (labels.size() != refs.rows) throw ValidationError("classify_knn: label count mismatch");
  if (k == 0 || k > refs.rows) {
    throw ValidationError("classify_knn: k=" + std::to_string(k) + " but only " +
                          std::to_string(refs.rows) + " references");
  }
  std::vector<std::pair<double, std::size_t>> d(refs.rows);
  for (std::size_t i = 0; i < refs.rows; ++i) {
    d[i] = {sq_distance(query, std::span(refs.data).subspan(i * refs.cols, refs.cols)), i};
  }
  std::stable_sort(d.begin(), d.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::size_t votes[2] = {0, 0};
  double dist[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < k; ++i) {
    const auto c = static_cast<int>(labels[d[i].second]);
    ++votes[c];
    dist[c] += d[i].first;
  }
  if (votes[0] != votes[1]) return votes[0] > votes[1] ? Label::Clean : Label::Spoofed;
  return dist[0] <= dist[1] ? Label::Clean : Label::Spoofed;
}

}  // namespace spoofmeta::embedder
