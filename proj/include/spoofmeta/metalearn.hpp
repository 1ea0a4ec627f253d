#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "spoofmeta/embedder.hpp"
#include "spoofmeta/tensor.hpp"

namespace spoofmeta::metalearn {

using embedder::Example;
using tensor::ParamSet;

// --- configuration -------------------------------------------------------------------

/// Which iterate the z-update thresholds: theta + u (scaled-form ADMM, default) or z + u.
enum class ZUpdate { FromTheta, FromZ };

struct MetaConfig {
  double inner_lr = 0.01;   // alpha
  double outer_lr = 0.001;  // beta
  std::size_t epochs = 8;
  std::size_t query_size = 50;
  std::size_t inner_steps = 5;
  std::size_t shots_per_class = 5;
  std::size_t tasks_per_batch = 4;
  /// Meta-steps (batch -> outer update -> ADMM) per epoch.
  std::size_t steps_per_epoch = 1;
  double lambda = 1e-4;
  double rho = 1.0;
  std::uint64_t seed = 0;

  ZUpdate z_update = ZUpdate::FromTheta;
  /// Finish each ADMM round with theta <- z - u. When false theta keeps its value.
  bool theta_from_z = true;
  /// Regularize every parameter instead of only the fusion weights.
  bool regularize_all = false;
  /// Replace the regularized weights of the returned model by z after the last epoch.
  bool export_z = true;
  std::size_t threads = 1;

  void validate() const;
  /// Apply one `key=value` assignment; keys are the member names above.
  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_map() const;
};

/// key=value lines, '#' starts a comment.
MetaConfig load_meta_config(const std::filesystem::path& path, MetaConfig base = {});

// --- datasets and episodes -----------------------------------------------------------

/// Featurized datasets by tag. Immutable once training starts.
class FeatureRegistry {
 public:
  void add(const std::string& tag, std::vector<Example> examples);
  bool contains(const std::string& tag) const { return data_.count(tag) != 0; }
  const std::vector<Example>& get(const std::string& tag) const;
  std::vector<std::string> tags() const;

 private:
  std::map<std::string, std::vector<Example>> data_;
};

/// A named set of dataset tags whose examples are pooled into each task.
struct Combo {
  std::string name;
  std::vector<std::string> tags;
};

/// C1 = ds2+ds3, C2 = ds4+ds7, C3 = ds7+ds8, C4 = ds3+ds8; otherwise `tag[+tag...]`.
Combo resolve_combo(const std::string& name);

struct Episode {
  std::uint64_t task_id = 0;
  std::vector<Example> support;
  std::vector<Example> query;
  std::set<std::string> source_datasets;
};

/// `shots_per_class` support examples per class and `query_size` query examples drawn
/// uniformly without replacement from the rest of the pooled combo. Deterministic in
/// (cfg.seed, task_id).
Episode sample_episode(const FeatureRegistry& registry, const Combo& combo, const MetaConfig& cfg,
                       std::uint64_t task_id);

// --- objective -----------------------------------------------------------------------

/// Differentiable task loss: parameters are evaluated on `eval` given the labelled `support`.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual double loss(const ParamSet& theta, std::span<const Example> support,
                      std::span<const Example> eval, ParamSet* grads) const = 0;
};

/// Prototypical loss of the dual-branch encoder.
class ProtoObjective : public Objective {
 public:
  ProtoObjective(embedder::EncoderConfig cfg, embedder::FeatureMode mode) : cfg_(cfg), mode_(mode) {}
  double loss(const ParamSet& theta, std::span<const Example> support, std::span<const Example> eval,
              ParamSet* grads) const override;
  const embedder::EncoderConfig& config() const { return cfg_; }
  embedder::FeatureMode mode() const { return mode_; }

 private:
  embedder::EncoderConfig cfg_;
  embedder::FeatureMode mode_;
};

// --- algorithm pieces ----------------------------------------------------------------

/// `steps` SGD steps at rate `lr` on the support loss. `theta` is not modified.
ParamSet inner_adapt(const ParamSet& theta, std::span<const Example> support,
                     const Objective& objective, double lr, std::size_t steps);

/// sign(x) * max(|x| - t, 0)
double soft_threshold(double x, double t);
tensor::Tensor soft_threshold(const tensor::Tensor& x, double t);

struct AdmmState {
  ParamSet z;  // regularized subset only
  ParamSet u;  // scaled dual, same layout as z
  double rho = 1.0;
  double lambda = 0.0;
};

/// z = theta restricted to `names`, u = 0.
AdmmState init_admm(const ParamSet& theta, const std::vector<std::string>& names, double rho,
                    double lambda);

struct AdmmResult {
  ParamSet theta;
  AdmmState state;
};

/// One regularization round on the subset held by `state`:
///   z <- soft(theta + u, lambda / rho)   (z + u with ZUpdate::FromZ)
///   u <- u + (theta - z)
///   theta <- z - u                       (skipped when theta_from_z is false)
AdmmResult admm_update(const ParamSet& theta, const AdmmState& state,
                       ZUpdate z_update = ZUpdate::FromTheta, bool theta_from_z = true);

struct MetaStepResult {
  ParamSet theta;
  ParamSet meta_grad;  // sum of query gradients at the adapted parameters
  double mean_query_loss = 0.0;
};

/// First-order meta-update: adapt each episode, take the query-loss gradient at the adapted
/// parameters, sum over episodes in task_id order, then one Adam step at cfg.outer_lr.
MetaStepResult meta_step(const ParamSet& theta, std::span<const Episode> batch,
                         const Objective& objective, const MetaConfig& cfg,
                         tensor::AdamState& adam);

/// Per-meta-step snapshot, for tracing and tests.
struct StepTrace {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::vector<std::uint64_t> task_ids;
  ParamSet theta_after_adam;
  AdmmState admm;
  ParamSet theta_after_admm;
  double mean_query_loss = 0.0;
};

struct TrainOptions {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::function<void(const StepTrace&)> on_step;
  std::function<void(std::size_t epoch, double loss)> on_epoch;
};

struct TrainResult {
  ParamSet theta;
  AdmmState admm;
  std::vector<double> loss_history;  // mean query loss per epoch
};

/// Names of the regularized parameters under `cfg`.
std::vector<std::string> regularized_names(const ParamSet& theta, const MetaConfig& cfg);

/// Task id of episode `b` in meta-step `step` of epoch `epoch`.
std::uint64_t task_id_of(const MetaConfig& cfg, std::size_t epoch, std::size_t step, std::size_t b);
/// Combo drawn for a task.
const Combo& combo_for_task(std::span<const Combo> combos, const MetaConfig& cfg, std::uint64_t task_id);

/// Full training loop: per epoch and step, sample a batch, meta_step, admm_update.
TrainResult meta_train(const MetaConfig& cfg, const FeatureRegistry& registry,
                       std::span<const Combo> combos, const Objective& objective,
                       const ParamSet& theta0, const TrainOptions& options = {});

/// Fraction of exactly-zero entries over the named tensors.
double zero_fraction(const ParamSet& theta, const std::vector<std::string>& names);

// --- evaluation ----------------------------------------------------------------------

/// Spoofed is the positive class.
struct Confusion {
  std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
  std::size_t total() const { return tp + fn + fp + tn; }
  double accuracy() const;
  double precision() const;
  double recall() const;
  double f1() const;
  void add(Label truth, Label predicted);
};

enum class Classifier { NearestPrototype, Knn };

struct EvalOptions {
  Classifier classifier = Classifier::NearestPrototype;
  std::size_t k = 5;
};

struct EvalResult {
  Confusion confusion;
  double query_loss = 0.0;
  ParamSet adapted;
};

/// Adapt on `support`, then classify every query example against the adapted support.
EvalResult adapt_and_evaluate(const ParamSet& theta, const ProtoObjective& objective,
                              std::span<const Example> support, std::span<const Example> query,
                              double inner_lr, std::size_t inner_steps, const EvalOptions& opts = {});

/// Draw `shots` per class as support from `examples`; the query is `query_size` of the rest
/// (all of the rest when 0). Deterministic in `seed`.
std::pair<std::vector<Example>, std::vector<Example>> split_support_query(
    std::span<const Example> examples, std::size_t shots, std::size_t query_size, std::uint64_t seed);

}  // namespace spoofmeta::metalearn
