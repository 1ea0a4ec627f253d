#include "spoofmeta/metalearn.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <future>
#include <numeric>
#include <random>
#include <sstream>

#include "spoofmeta/error.hpp"
#include "spoofmeta/rng.hpp"

namespace spoofmeta::metalearn {

using tensor::Tensor;

namespace {

constexpr std::uint64_t kEpisodeStream = 0x657069736f6465ULL;
constexpr std::uint64_t kComboStream = 0x636f6d626fULL;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T v{};
  is >> v;
  if (!is || !is.eof()) throw ValidationError("config key '" + key + "': cannot parse '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ValidationError("config key '" + key + "': expected true or false, got '" + value + "'");
}

void add_into(ParamSet& acc, const ParamSet& g) {
  for (auto& [name, t] : acc) {
    const Tensor& gt = g.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += gt[i];
  }
}

}  // namespace

// --- configuration -------------------------------------------------------------------

void MetaConfig::validate() const {
  if (!(inner_lr > 0.0) || !(outer_lr > 0.0)) throw ValidationError("learning rates must be positive");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (inner_steps < 1) throw ValidationError("inner_steps must be >= 1");
  if (shots_per_class < 1) throw ValidationError("shots_per_class must be >= 1");
  if (query_size < 1) throw ValidationError("query_size must be >= 1");
  if (tasks_per_batch < 1) throw ValidationError("tasks_per_batch must be >= 1");
  if (steps_per_epoch < 1) throw ValidationError("steps_per_epoch must be >= 1");
  if (!(rho > 0.0)) throw ValidationError("rho must be > 0");
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
  if (threads < 1) throw ValidationError("threads must be >= 1");
}

void MetaConfig::set(const std::string& key_in, const std::string& value_in) {
  const std::string key = trim(key_in), value = trim(value_in);
  if (key == "inner_lr") inner_lr = parse_number<double>(key, value);
  else if (key == "outer_lr") outer_lr = parse_number<double>(key, value);
  else if (key == "epochs") epochs = parse_number<std::size_t>(key, value);
  else if (key == "query_size") query_size = parse_number<std::size_t>(key, value);
  else if (key == "inner_steps") inner_steps = parse_number<std::size_t>(key, value);
  else if (key == "shots_per_class") shots_per_class = parse_number<std::size_t>(key, value);
  else if (key == "tasks_per_batch") tasks_per_batch = parse_number<std::size_t>(key, value);
  else if (key == "steps_per_epoch") steps_per_epoch = parse_number<std::size_t>(key, value);
  else if (key == "lambda") lambda = parse_number<double>(key, value);
  else if (key == "rho") rho = parse_number<double>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "z_update") {
    if (value == "theta") z_update = ZUpdate::FromTheta;
    else if (value == "z") z_update = ZUpdate::FromZ;
    else throw ValidationError("config key 'z_update': expected theta or z, got '" + value + "'");
  } else if (key == "theta_from_z") theta_from_z = parse_bool(key, value);
  else if (key == "regularize_all") regularize_all = parse_bool(key, value);
  else if (key == "export_z") export_z = parse_bool(key, value);
  else if (key == "threads") threads = parse_number<std::size_t>(key, value);
  else throw ValidationError("unknown config key '" + key + "'");
}

std::map<std::string, std::string> MetaConfig::to_map() const {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return {{"inner_lr", num(inner_lr)},
          {"outer_lr", num(outer_lr)},
          {"epochs", std::to_string(epochs)},
          {"query_size", std::to_string(query_size)},
          {"inner_steps", std::to_string(inner_steps)},
          {"shots_per_class", std::to_string(shots_per_class)},
          {"tasks_per_batch", std::to_string(tasks_per_batch)},
          {"steps_per_epoch", std::to_string(steps_per_epoch)},
          {"lambda", num(lambda)},
          {"rho", num(rho)},
          {"seed", std::to_string(seed)},
          {"z_update", z_update == ZUpdate::FromTheta ? "theta" : "z"},
          {"theta_from_z", theta_from_z ? "true" : "false"},
          {"regularize_all", regularize_all ? "true" : "false"},
          {"export_z", export_z ? "true" : "false"},
          {"threads", std::to_string(threads)}};
}

MetaConfig load_meta_config(const std::filesystem::path& path, MetaConfig base) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    base.set(line.substr(0, eq), line.substr(eq + 1));
  }
  base.validate();
  return base;
}

// --- datasets and episodes -----------------------------------------------------------

void FeatureRegistry::add(const std::string& tag, std::vector<Example> examples) {
  if (!data_.emplace(tag, std::move(examples)).second) {
    throw ValidationError("dataset tag '" + tag + "' registered twice");
  }
}

const std::vector<Example>& FeatureRegistry::get(const std::string& tag) const {
  auto it = data_.find(tag);
  if (it == data_.end()) throw ValidationError("unknown dataset tag '" + tag + "'");
  return it->second;
}

std::vector<std::string> FeatureRegistry::tags() const {
  std::vector<std::string> out;
  for (const auto& [tag, _] : data_) out.push_back(tag);
  return out;
}

Combo resolve_combo(const std::string& name) {
  static const std::map<std::string, std::vector<std::string>> presets{
      {"C1", {"ds2", "ds3"}}, {"C2", {"ds4", "ds7"}}, {"C3", {"ds7", "ds8"}}, {"C4", {"ds3", "ds8"}}};
  if (auto it = presets.find(name); it != presets.end()) return {name, it->second};
  Combo c{name, {}};
  std::istringstream is(name);
  std::string tag;
  while (std::getline(is, tag, '+')) {
    tag = trim(tag);
    if (tag.empty()) throw ValidationError("malformed combo '" + name + "'");
    c.tags.push_back(tag);
  }
  // A lone "C<digits>" is a mistyped preset rather than a dataset tag.
  const bool preset_like = name.size() > 1 && name[0] == 'C' &&
                           std::all_of(name.begin() + 1, name.end(), [](unsigned char ch) { return std::isdigit(ch); });
  if (c.tags.empty() || (c.tags.size() == 1 && preset_like)) {
    throw ValidationError("unknown combo '" + name + "' (C1..C4, a dataset tag, or tag+tag)");
  }
  std::sort(c.tags.begin(), c.tags.end());
  c.tags.erase(std::unique(c.tags.begin(), c.tags.end()), c.tags.end());
  return c;
}

Episode sample_episode(const FeatureRegistry& registry, const Combo& combo, const MetaConfig& cfg,
                       std::uint64_t task_id) {
  std::vector<std::string> tags = combo.tags;
  std::sort(tags.begin(), tags.end());
  std::vector<const Example*> by_class[2];
  for (const std::string& tag : tags) {
    for (const Example& e : registry.get(tag)) by_class[static_cast<int>(e.label)].push_back(&e);
  }
  for (Label l : {Label::Clean, Label::Spoofed}) {
    const auto have = by_class[static_cast<int>(l)].size();
    if (have < cfg.shots_per_class) {
      throw DataError("combo " + combo.name + ": class " + to_string(l) + " has " + std::to_string(have) +
                      " examples, " + std::to_string(cfg.shots_per_class) + " shots requested");
    }
  }
  const std::size_t rest_count = by_class[0].size() + by_class[1].size() - 2 * cfg.shots_per_class;
  if (rest_count < cfg.query_size) {
    throw DataError("combo " + combo.name + ": " + std::to_string(rest_count) +
                    " examples left for a query of " + std::to_string(cfg.query_size));
  }

  std::mt19937_64 rng(mix_seed(cfg.seed, kEpisodeStream, task_id));
  for (int attempt = 0; attempt < 10; ++attempt) {
    Episode ep;
    ep.task_id = task_id;
    ep.source_datasets = {tags.begin(), tags.end()};
    std::vector<const Example*> rest;
    for (auto& pool : by_class) {
      std::vector<const Example*> shuffled = pool;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      for (std::size_t i = 0; i < shuffled.size(); ++i) {
        if (i < cfg.shots_per_class) ep.support.push_back(*shuffled[i]);
        else rest.push_back(shuffled[i]);
      }
    }
    std::shuffle(rest.begin(), rest.end(), rng);
    bool seen[2] = {false, false};
    for (std::size_t i = 0; i < cfg.query_size; ++i) {
      ep.query.push_back(*rest[i]);
      seen[static_cast<int>(rest[i]->label)] = true;
    }
    const bool rest_has_both = std::any_of(rest.begin(), rest.end(), [](auto* e) { return e->label == Label::Clean; }) &&
                               std::any_of(rest.begin(), rest.end(), [](auto* e) { return e->label == Label::Spoofed; });
    if ((seen[0] && seen[1]) || !rest_has_both || cfg.query_size < 2) return ep;
  }
  throw DataError("combo " + combo.name + ": query kept missing a class after 10 draws");
}

// --- objective and algorithm pieces --------------------------------------------------

double ProtoObjective::loss(const ParamSet& theta, std::span<const Example> support,
                            std::span<const Example> eval, ParamSet* grads) const {
  return embedder::proto_loss_value(theta, cfg_, support, eval, mode_, grads);
}

ParamSet inner_adapt(const ParamSet& theta, std::span<const Example> support, const Objective& objective,
                     double lr, std::size_t steps) {
  ParamSet current = theta;
  for (std::size_t k = 0; k < steps; ++k) {
    ParamSet g;
    double l = 0.0;
    try {
      l = objective.loss(current, support, support, &g);
    } catch (const NumericError& e) {
      throw NumericError("inner_adapt step " + std::to_string(k) + ": " + e.what());
    }
    if (!std::isfinite(l) || !tensor::all_finite(g)) {
      throw NumericError("inner_adapt step " + std::to_string(k) + ": non-finite loss or gradient");
    }
    current = tensor::sgd_step(current, g, lr);
  }
  return current;
}

double soft_threshold(double x, double t) {
  if (!(t >= 0.0)) throw ValidationError("soft_threshold needs t >= 0");
  const double mag = std::abs(x) - t;
  if (mag <= 0.0) return 0.0;
  return x > 0.0 ? mag : -mag;
}

Tensor soft_threshold(const Tensor& x, double t) {
  Tensor out = x;
  for (double& v : out.data()) v = soft_threshold(v, t);
  return out;
}

AdmmState init_admm(const ParamSet& theta, const std::vector<std::string>& names, double rho, double lambda) {
  if (!(rho > 0.0)) throw ValidationError("rho must be > 0");
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
  AdmmState s;
  s.rho = rho;
  s.lambda = lambda;
  for (const std::string& n : names) {
    auto it = theta.find(n);
    if (it == theta.end()) throw ValidationError("regularized parameter '" + n + "' not in model");
    s.z.emplace(n, it->second);
    s.u.emplace(n, Tensor(it->second.shape(), 0.0));
  }
  return s;
}

AdmmResult admm_update(const ParamSet& theta, const AdmmState& state, ZUpdate z_update, bool theta_from_z) {
  tensor::check_same_layout(state.z, state.u, "admm_update z/u");
  AdmmResult r{theta, state};
  const double t = state.lambda / state.rho;
  for (auto& [name, z] : r.state.z) {
    auto it = r.theta.find(name);
    if (it == r.theta.end() || it->second.shape() != z.shape()) {
      throw ValidationError("admm_update: shape mismatch for " + name);
    }
    Tensor& th = it->second;
    Tensor& u = r.state.u.at(name);
    const Tensor base = z_update == ZUpdate::FromTheta ? th : z;
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = soft_threshold(base[i] + u[i], t);
    for (std::size_t i = 0; i < z.size(); ++i) u[i] = u[i] + (th[i] - z[i]);
    if (theta_from_z) {
      for (std::size_t i = 0; i < z.size(); ++i) th[i] = z[i] - u[i];
    }
  }
  return r;
}

MetaStepResult meta_step(const ParamSet& theta, std::span<const Episode> batch, const Objective& objective,
                         const MetaConfig& cfg, tensor::AdamState& adam) {
  if (batch.empty()) throw ValidationError("meta_step: empty batch");
  struct PerTask {
    double loss = 0.0;
    ParamSet grad;
  };
  std::vector<PerTask> results(batch.size());
  auto run = [&](std::size_t i) {
    const Episode& ep = batch[i];
    try {
      const ParamSet adapted = inner_adapt(theta, ep.support, objective, cfg.inner_lr, cfg.inner_steps);
      results[i].loss = objective.loss(adapted, ep.support, ep.query, &results[i].grad);
    } catch (const NumericError& e) {
      throw NumericError("episode " + std::to_string(ep.task_id) + ": " + e.what());
    }
    if (!std::isfinite(results[i].loss)) {
      throw NumericError("episode " + std::to_string(ep.task_id) + ": non-finite query loss");
    }
  };
  if (cfg.threads <= 1 || batch.size() == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) run(i);
  } else {
    std::vector<std::future<void>> jobs;
    const std::size_t workers = std::min(cfg.threads, batch.size());
    for (std::size_t w = 0; w < workers; ++w) {
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < batch.size(); i += workers) run(i);
      }));
    }
    for (auto& j : jobs) j.get();
  }

  // Summation order is fixed by task id so any permutation of the batch gives the same bits.
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return batch[a].task_id < batch[b].task_id; });
  MetaStepResult out;
  out.meta_grad = tensor::zeros_like(theta);
  double loss_sum = 0.0;
  for (std::size_t i : order) {
    add_into(out.meta_grad, results[i].grad);
    loss_sum += results[i].loss;
  }
  out.mean_query_loss = loss_sum / static_cast<double>(batch.size());
  out.theta = tensor::adam_step(adam, theta, out.meta_grad, cfg.outer_lr);
  return out;
}

std::vector<std::string> regularized_names(const ParamSet& theta, const MetaConfig& cfg) {
  std::vector<std::string> names;
  if (cfg.regularize_all) {
    for (const auto& [n, _] : theta) names.push_back(n);
  } else {
    for (const std::string& n : embedder::kFusionWeights) {
      if (theta.count(n)) names.push_back(n);
    }
  }
  if (names.empty()) throw ValidationError("model has no fusion weights to regularize");
  return names;
}

std::uint64_t task_id_of(const MetaConfig& cfg, std::size_t epoch, std::size_t step, std::size_t b) {
  return (static_cast<std::uint64_t>(epoch) * cfg.steps_per_epoch + step) * cfg.tasks_per_batch + b;
}

const Combo& combo_for_task(std::span<const Combo> combos, const MetaConfig& cfg, std::uint64_t task_id) {
  if (combos.empty()) throw ValidationError("no training combos");
  std::mt19937_64 rng(mix_seed(cfg.seed, kComboStream, task_id));
  return combos[static_cast<std::size_t>(rng() % combos.size())];
}

TrainResult meta_train(const MetaConfig& cfg, const FeatureRegistry& registry, std::span<const Combo> combos,
                       const Objective& objective, const ParamSet& theta0, const TrainOptions& options) {
  cfg.validate();
  if (combos.empty()) throw ValidationError("meta_train: no combos");
  const std::vector<std::string> names = regularized_names(theta0, cfg);
  TrainResult r{theta0, init_admm(theta0, names, cfg.rho, cfg.lambda), {}};
  tensor::AdamState adam;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step) {
      std::vector<Episode> batch;
      std::vector<std::uint64_t> ids;
      for (std::size_t b = 0; b < cfg.tasks_per_batch; ++b) {
        const std::uint64_t id = task_id_of(cfg, epoch, step, b);
        batch.push_back(sample_episode(registry, combo_for_task(combos, cfg, id), cfg, id));
        ids.push_back(id);
      }
      MetaStepResult ms = meta_step(r.theta, batch, objective, cfg, adam);
      AdmmResult ar = admm_update(ms.theta, r.admm, cfg.z_update, cfg.theta_from_z);
      if (options.on_step) {
        options.on_step({epoch, step, ids, ms.theta, ar.state, ar.theta, ms.mean_query_loss});
      }
      r.theta = std::move(ar.theta);
      r.admm = std::move(ar.state);
      epoch_loss += ms.mean_query_loss;
    }
    r.loss_history.push_back(epoch_loss / static_cast<double>(cfg.steps_per_epoch));
    if (!options.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03zu.spl", epoch + 1);
      tensor::save_checkpoint(options.checkpoint_dir / name, r.theta);
    }
    if (options.on_epoch) options.on_epoch(epoch + 1, r.loss_history.back());
  }
  if (cfg.export_z) {
    for (const auto& [name, z] : r.admm.z) r.theta.at(name) = z;
  }
  return r;
}

double zero_fraction(const ParamSet& theta, const std::vector<std::string>& names) {
  std::size_t zeros = 0, total = 0;
  for (const std::string& n : names) {
    for (double v : theta.at(n).data()) {
      zeros += v == 0.0 ? 1 : 0;
      ++total;
    }
  }
  return total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
}

// --- evaluation ----------------------------------------------------------------------

double Confusion::accuracy() const {
  return total() ? static_cast<double>(tp + tn) / static_cast<double>(total()) : 0.0;
}
double Confusion::precision() const {
  return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
}
double Confusion::recall() const {
  return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
}
double Confusion::f1() const {
  const double p = precision(), r = recall();
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}
void Confusion::add(Label truth, Label predicted) {
  if (truth == Label::Spoofed) (predicted == Label::Spoofed ? tp : fn)++;
  else (predicted == Label::Spoofed ? fp : tn)++;
}

EvalResult adapt_and_evaluate(const ParamSet& theta, const ProtoObjective& objective,
                              std::span<const Example> support, std::span<const Example> query,
                              double inner_lr, std::size_t inner_steps, const EvalOptions& opts) {
  if (query.empty()) throw ValidationError("adapt_and_evaluate: empty query set");
  EvalResult r;
  r.adapted = inner_adapt(theta, support, objective, inner_lr, inner_steps);
  r.query_loss = objective.loss(r.adapted, support, query, nullptr);
  const RealMatrix s_emb = embedder::embed_all(r.adapted, objective.config(), support, objective.mode());
  const RealMatrix q_emb = embedder::embed_all(r.adapted, objective.config(), query, objective.mode());
  std::vector<Label> s_labels;
  for (const Example& e : support) s_labels.push_back(e.label);
  const embedder::PrototypeSet protos = embedder::prototypes(s_emb, s_labels);
  for (std::size_t i = 0; i < query.size(); ++i) {
    const std::span<const double> q(q_emb.data.data() + i * q_emb.cols, q_emb.cols);
    const Label pred = opts.classifier == Classifier::NearestPrototype
                           ? embedder::classify(q, protos)
                           : embedder::classify_knn(q, s_emb, s_labels, opts.k);
    r.confusion.add(query[i].label, pred);
  }
  return r;
}

std::pair<std::vector<Example>, std::vector<Example>> split_support_query(std::span<const Example> examples,
                                                                          std::size_t shots, std::size_t query_size,
                                                                          std::uint64_t seed) {
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < examples.size(); ++i) by_class[static_cast<int>(examples[i].label)].push_back(i);
  for (Label l : {Label::Clean, Label::Spoofed}) {
    if (by_class[static_cast<int>(l)].size() < shots) {
      throw DataError(std::string("insufficient support: class ") + to_string(l) + " has " +
                      std::to_string(by_class[static_cast<int>(l)].size()) + " examples, " +
                      std::to_string(shots) + " shots requested");
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<Example> support, query;
  std::vector<std::size_t> rest;
  for (auto& pool : by_class) {
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (i < shots) support.push_back(examples[pool[i]]);
      else rest.push_back(pool[i]);
    }
  }
  std::shuffle(rest.begin(), rest.end(), rng);
  const std::size_t n = query_size == 0 ? rest.size() : query_size;
  if (n > rest.size() || n == 0) {
    throw DataError("insufficient query examples: " + std::to_string(rest.size()) + " available, " +
                    std::to_string(n) + " requested");
  }
  for (std::size_t i = 0; i < n; ++i) query.push_back(examples[rest[i]]);
  return {std::move(support), std::move(query)};
}

}  // namespace spoofmeta::metalearn
