#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spoofmeta/tensor.hpp"
#include "spoofmeta/types.hpp"

namespace spoofmeta::embedder {

/// One featurized segment: spectrogram, flattened post-correlation vector and label.
struct Example {
  RealMatrix spectrogram;
  std::vector<double> postcorr;
  Label label = Label::Clean;
  std::string source;
};

/// Pre: spectrogram only, the post-correlation branch is replaced by a learned token.
/// PrePost: both branches.
enum class FeatureMode { Pre, PrePost };
FeatureMode parse_feature_mode(const std::string& s);  // pre | prepost
const char* to_string(FeatureMode m);

/// Spectrogram branch: conv(3x3) -> relu -> maxpool2 -> conv(3x3) -> relu -> maxpool2 -> dense.
/// Post-correlation branch: dense -> relu -> dense. Fusion: concat -> dense -> embedding.
struct EncoderConfig {
  std::size_t spec_rows = 0;
  std::size_t spec_cols = 0;
  std::size_t post_dim = 0;
  std::size_t conv1_filters = 8;
  std::size_t conv2_filters = 16;
  std::size_t kernel = 3;
  std::size_t spec_dense = 32;
  std::size_t post_hidden = 32;
  std::size_t post_out = 32;
  std::size_t embedding_dim = 64;

  void validate() const;
  /// Length of the flattened second pooling output.
  std::size_t flat_dim() const;
};

/// Recover the configuration of a parameter set (e.g. a loaded checkpoint).
EncoderConfig infer_config(const tensor::ParamSet& params, std::size_t spec_rows,
                           std::size_t spec_cols);

/// He-normal weights, zero biases; deterministic in `seed`.
tensor::ParamSet init_params(const EncoderConfig& cfg, std::uint64_t seed);

/// Names of the fully connected fusion weights, the default ADMM-regularized subset.
inline const std::vector<std::string> kFusionWeights{"fusion.w"};

using VarMap = std::map<std::string, tensor::Var>;

/// Embed a batch on `tape` -> (n, D).
tensor::Var encode(const VarMap& params, const EncoderConfig& cfg,
                   std::span<const Example> batch, FeatureMode mode);

/// Forward pass only; row i of the result embeds batch[i].
RealMatrix embed_all(const tensor::ParamSet& params, const EncoderConfig& cfg,
                     std::span<const Example> batch, FeatureMode mode);
std::vector<double> embed(const tensor::ParamSet& params, const EncoderConfig& cfg,
                          const Example& example, FeatureMode mode);

/// Class means in the embedding space, indexed by Label.
struct PrototypeSet {
  std::vector<double> clean;
  std::vector<double> spoofed;
  const std::vector<double>& of(Label l) const { return l == Label::Clean ? clean : spoofed; }
};

PrototypeSet prototypes(const RealMatrix& embeddings, std::span<const Label> labels);

/// Softmax cross-entropy over negative squared distances to the support prototypes, averaged
/// over `eval`. Recorded on the params' tape.
tensor::Var proto_loss(const VarMap& params, const EncoderConfig& cfg,
                       std::span<const Example> support, std::span<const Example> eval,
                       FeatureMode mode);

/// Loss value, and gradients when `grads` is non-null.
double proto_loss_value(const tensor::ParamSet& params, const EncoderConfig& cfg,
                        std::span<const Example> support, std::span<const Example> eval,
                        FeatureMode mode, tensor::ParamSet* grads = nullptr);

double sq_distance(std::span<const double> a, std::span<const double> b);

/// Nearest prototype; equal distances resolve to Clean.
Label classify(std::span<const double> query, const PrototypeSet& protos);

/// Majority vote of the k nearest references. A vote tie goes to the class with the smaller
/// summed distance among those neighbours, then to Clean. Equal distances keep reference order.
Label classify_knn(std::span<const double> query, const RealMatrix& references,
                   std::span<const Label> labels, std::size_t k);

}  // namespace spoofmeta::embedder
