#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "../support/oracles.hpp"
#include "spoofmeta/error.hpp"
#include "spoofmeta/metalearn.hpp"

using namespace spoofmeta;
using namespace spoofmeta::metalearn;

using oracle::toy_config;
using oracle::toy_registry;
using oracle::toy_theta;

TEST_CASE("soft threshold matches the analytic formula") {
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) {
      const double x = -3.0 + 6.0 * i / 9.0, t = 2.0 * j / 9.0;
      const double want = (x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0)) * std::max(std::abs(x) - t, 0.0);
      CHECK(soft_threshold(x, t) == want);
    }
  }
  CHECK(soft_threshold(0.5, 0.5) == 0.0);
  CHECK_FALSE(std::signbit(soft_threshold(-0.5, 0.5)));
  CHECK_THROWS_AS(soft_threshold(1.0, -0.1), ValidationError);
}

TEST_CASE("ADMM on a one-dimensional lasso converges to the prox") {
  // minimize 0.5 (x - a)^2 + lambda |x| with the x-step solved exactly.
  const double a = 2.0, lambda = 0.5, rho = 1.0;
  ParamSet theta{{"fusion.w", tensor::Tensor({1}, std::vector<double>{0.0})}};
  AdmmState s = init_admm(theta, {"fusion.w"}, rho, lambda);
  for (int k = 0; k < 200; ++k) {
    const double z = s.z.at("fusion.w")[0], u = s.u.at("fusion.w")[0];
    theta.at("fusion.w")[0] = (a + rho * (z - u)) / (1.0 + rho);
    s = admm_update(theta, s, ZUpdate::FromTheta, false).state;
  }
  CHECK(std::abs(s.z.at("fusion.w")[0] - 1.5) < 1e-4);
}

TEST_CASE("admm_update with lambda 0 and theta kept is the identity on theta") {
  const ParamSet theta = toy_theta();
  const AdmmState s = init_admm(theta, {"fusion.w"}, 1.0, 0.0);
  const auto r = admm_update(theta, s, ZUpdate::FromTheta, false);
  CHECK(r.theta == theta);
  CHECK(r.state.z.at("fusion.w") == theta.at("fusion.w"));
  CHECK(tensor::l2_norm(r.state.u) == 0.0);
  CHECK_THROWS_AS(init_admm(theta, {"nope"}, 1.0, 0.0), ValidationError);
  CHECK_THROWS_AS(init_admm(theta, {"fusion.w"}, 0.0, 0.0), ValidationError);
}

TEST_CASE("meta_train matches the literal Algorithm 1 transcription bit for bit") {
  const auto reg = toy_registry();
  const std::vector<Combo> combos{resolve_combo("C1"), resolve_combo("C2")};
  const MetaConfig cfg = toy_config();
  const oracle::ToyObjective obj;
  std::vector<StepTrace> traces;
  TrainOptions opt;
  opt.on_step = [&](const StepTrace& t) { traces.push_back(t); };
  const TrainResult r = meta_train(cfg, reg, combos, obj, toy_theta(), opt);

  oracle::AlgoState s;
  s.theta = oracle::flatten(toy_theta());
  for (std::size_t i = 2; i < oracle::kToyParams; ++i) s.z[i] = s.theta[i];
  REQUIRE(traces.size() == cfg.steps_per_epoch);
  double loss_sum = 0.0;
  for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step) {
    std::vector<Episode> tasks;
    for (std::size_t b = 0; b < cfg.tasks_per_batch; ++b) {
      const auto id = task_id_of(cfg, 0, step, b);
      tasks.push_back(sample_episode(reg, combo_for_task(combos, cfg, id), cfg, id));
    }
    loss_sum += oracle::literal_step(s, tasks, cfg);
    CHECK(oracle::flatten(traces[step].theta_after_admm) == s.theta);
    const auto& z = traces[step].admm.z.at("fusion.w");
    const auto& u = traces[step].admm.u.at("fusion.w");
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(z[i] == s.z[2 + i]);
      CHECK(u[i] == s.u[2 + i]);
    }
  }
  CHECK(oracle::flatten(r.theta) == s.theta);
  CHECK(r.loss_history.at(0) == loss_sum / static_cast<double>(cfg.steps_per_epoch));
}

TEST_CASE("threaded meta_step gives the same bits") {
  const auto reg = toy_registry();
  const std::vector<Combo> combos{resolve_combo("C1"), resolve_combo("C2")};
  MetaConfig cfg = toy_config();
  const oracle::ToyObjective obj;
  const auto serial = meta_train(cfg, reg, combos, obj, toy_theta());
  cfg.threads = 3;
  const auto threaded = meta_train(cfg, reg, combos, obj, toy_theta());
  CHECK(serial.theta == threaded.theta);
  CHECK(serial.loss_history == threaded.loss_history);
}

TEST_CASE("meta_step sums in task order regardless of batch order") {
  const auto reg = toy_registry();
  MetaConfig cfg = toy_config();
  const oracle::ToyObjective obj;
  std::vector<Episode> batch;
  for (std::uint64_t id : {5u, 1u, 9u}) batch.push_back(sample_episode(reg, resolve_combo("C1"), cfg, id));
  std::vector<Episode> reversed(batch.rbegin(), batch.rend());
  tensor::AdamState a1, a2;
  const auto x = meta_step(toy_theta(), batch, obj, cfg, a1);
  const auto y = meta_step(toy_theta(), reversed, obj, cfg, a2);
  CHECK(x.theta == y.theta);
  CHECK(x.meta_grad == y.meta_grad);
}

TEST_CASE("episodes are deterministic, disjoint and class-complete") {
  const auto reg = toy_registry();
  const MetaConfig cfg = toy_config();
  const Combo c = resolve_combo("ds3+ds2");
  CHECK(c.tags == std::vector<std::string>{"ds2", "ds3"});
  const Episode a = sample_episode(reg, c, cfg, 42);
  const Episode b = sample_episode(reg, c, cfg, 42);
  REQUIRE(a.support.size() == 4);
  REQUIRE(a.query.size() == cfg.query_size);
  for (std::size_t i = 0; i < a.query.size(); ++i) CHECK(a.query[i].postcorr == b.query[i].postcorr);
  int clean = 0;
  for (const auto& e : a.support) clean += e.label == Label::Clean;
  CHECK(clean == 2);
  for (const auto& s : a.support) {
    for (const auto& q : a.query) CHECK(s.postcorr != q.postcorr);
  }
  CHECK(a.source_datasets == std::set<std::string>{"ds2", "ds3"});
  const Episode other = sample_episode(reg, c, cfg, 43);
  CHECK(other.query[0].postcorr != a.query[0].postcorr);
}

TEST_CASE("episode sampling reports impossible requests") {
  FeatureRegistry reg;
  auto few = oracle::toy_examples(1, 1.0, 3);
  reg.add("a", few);
  reg.add("b", few);
  MetaConfig cfg = toy_config();
  cfg.shots_per_class = 4;
  CHECK_THROWS_AS(sample_episode(reg, resolve_combo("a+b"), cfg, 0), DataError);
  cfg.shots_per_class = 2;
  cfg.query_size = 100;
  CHECK_THROWS_AS(sample_episode(reg, resolve_combo("a+b"), cfg, 0), DataError);
  CHECK_THROWS_AS(sample_episode(reg, resolve_combo("a+zz"), cfg, 0), ValidationError);
  CHECK_THROWS_AS(resolve_combo("C9"), ValidationError);
  CHECK(resolve_combo("ds2").tags == std::vector<std::string>{"ds2"});
  CHECK_THROWS_AS(reg.add("a", few), ValidationError);
}

TEST_CASE("configuration keys") {
  MetaConfig c;
  CHECK(c.inner_lr == 0.01);
  CHECK(c.outer_lr == 0.001);
  CHECK(c.epochs == 8);
  CHECK(c.query_size == 50);
  CHECK(c.inner_steps == 5);
  CHECK(c.shots_per_class == 5);
  CHECK(c.tasks_per_batch == 4);
  CHECK(c.lambda == 1e-4);
  CHECK(c.rho == 1.0);
  c.set("lambda", "10");
  c.set("z_update", "z");
  c.set("theta_from_z", "false");
  CHECK(c.lambda == 10.0);
  CHECK(c.z_update == ZUpdate::FromZ);
  CHECK_FALSE(c.theta_from_z);
  CHECK_THROWS_AS(c.set("learning_rate", "1"), ValidationError);
  CHECK_THROWS_AS(c.set("epochs", "many"), ValidationError);
  c.rho = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);

  const auto path = std::filesystem::temp_directory_path() / "spoofmeta_meta.conf";
  {
    std::ofstream out(path);
    out << "# comment\nepochs = 3\n\ninner_lr=0.5  # trailing\n";
  }
  const MetaConfig loaded = load_meta_config(path);
  CHECK(loaded.epochs == 3);
  CHECK(loaded.inner_lr == 0.5);
  MetaConfig round;
  for (const auto& [k, v] : loaded.to_map()) round.set(k, v);
  CHECK(round.to_map() == loaded.to_map());
  std::filesystem::remove(path);
}

TEST_CASE("lambda drives fusion weights to exact zeros") {
  const auto reg = toy_registry();
  const std::vector<Combo> combos{resolve_combo("C1")};
  MetaConfig cfg = toy_config();
  cfg.epochs = 2;
  cfg.export_z = true;
  const oracle::ToyObjective obj;
  cfg.lambda = 10.0;
  CHECK(zero_fraction(meta_train(cfg, reg, combos, obj, toy_theta()).theta, {"fusion.w"}) == 1.0);
  cfg.lambda = 0.0;
  CHECK(zero_fraction(meta_train(cfg, reg, combos, obj, toy_theta()).theta, {"fusion.w"}) == 0.0);
}

TEST_CASE("confusion metrics") {
  Confusion c{48, 2, 1, 49};
  CHECK(c.accuracy() == doctest::Approx(0.97));
  CHECK(c.precision() == doctest::Approx(48.0 / 49.0));
  CHECK(c.recall() == doctest::Approx(0.96));
  CHECK(c.f1() == doctest::Approx(2 * (48.0 / 49.0) * 0.96 / (48.0 / 49.0 + 0.96)));
  Confusion empty;
  CHECK(empty.accuracy() == 0.0);
  CHECK(empty.f1() == 0.0);
  empty.add(Label::Spoofed, Label::Clean);
  CHECK(empty.fn == 1);
}

TEST_CASE("support/query split") {
  const auto data = oracle::toy_examples(5, 1.0, 10);
  const auto [s, q] = split_support_query(data, 3, 0, 1);
  CHECK(s.size() == 6);
  CHECK(q.size() == 14);
  const auto [s2, q2] = split_support_query(data, 3, 5, 1);
  CHECK(q2.size() == 5);
  CHECK(s2[0].postcorr == s[0].postcorr);
  CHECK_THROWS_AS(split_support_query(data, 11, 0, 1), DataError);
}
