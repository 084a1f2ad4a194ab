#include <doctest.h>

#include <cmath>

#include "test_helpers.hpp"
#include "tidsit/checkpoint.hpp"
#include "tidsit/errors.hpp"
#include "tidsit/io_util.hpp"
#include "tidsit/evaluation.hpp"
#include "tidsit/training.hpp"

using namespace tidsit;
using tidsit::test::TempDir;

namespace {

TrainConfig small_config() {
  TrainConfig config;
  config.model.pad_len = 16;
  config.model.hidden = 8;
  config.model.encoder_heads = 2;
  config.model.ffn_dim = 16;
  config.model.history_window = 4;
  config.model.dropout = 0.0;
  config.batch_size = 8;
  config.epochs = 3;
  config.val_fraction = 0.0;
  config.seed = 7;
  return config;
}

}  // namespace

TEST_SUITE_BEGIN("training");

TEST_CASE("mse_loss hand values and contract") {
  Tape tape;
  auto scalars = [&](std::vector<double> vs) {
    std::vector<Tape::NodeId> ids;
    for (double v : vs) ids.push_back(tape.input(Tensor::scalar(v)));
    return ids;
  };
  CHECK(tape.value(mse_loss(tape, scalars({0.3, 0.6}), {0.3, 0.6})).item() ==
        0.0);
  CHECK(tape.value(mse_loss(tape, scalars({1, 1}), {0, 0})).item() == 1.0);
  CHECK(tape.value(mse_loss(tape, scalars({0.9}), {0.7})).item() ==
        doctest::Approx(0.04).epsilon(1e-12));
  CHECK_THROWS_AS(mse_loss(tape, {}, {}), NumericError);
  CHECK(mse({0.9}, {0.7}) == doctest::Approx(0.04).epsilon(1e-12));
}

TEST_CASE("optimizer_step: zero gradients, first-step size, determinism") {
  ModelConfig cfg;
  cfg.pad_len = 2;
  cfg.hidden = 2;
  cfg.ffn_dim = 2;
  cfg.encoder_heads = 1;
  cfg.history_window = 1;
  cfg.dropout = 0.0;

  SUBCASE("zero gradient leaves parameters unchanged") {
    ModelParams params = init_params(cfg, {}, 1);
    ModelParams before = params;
    ParamMap zero;
    for (const auto& [path, t] : params.tensors) {
      zero.emplace(path, Tensor(t.rows(), t.cols(), 0.0));
    }
    AdamState state;
    optimizer_step(params, zero, state, 1e-3, 0.9, 0.999, 1e-8);
    for (const std::string& path : params.paths()) {
      CHECK(params.at(path).data() == before.at(path).data());
    }
  }

  SUBCASE("first step on a unit gradient moves by about lr") {
    ModelParams params;
    params.config = cfg;
    params.tensors.emplace("w", Tensor::scalar(0.0));
    ParamMap g;
    g.emplace("w", Tensor::scalar(1.0));
    AdamState state;
    const double lr = 1e-3;
    optimizer_step(params, g, state, lr, 0.9, 0.999, 1e-8);
    // bias correction makes m_hat = v_hat = 1, so the step is lr/(1+eps)
    CHECK(std::abs(std::abs(params.at("w").item()) - lr) < 1e-9);
  }

  SUBCASE("missing or misshapen gradients violate the contract") {
    ModelParams params;
    params.config = cfg;
    params.tensors.emplace("w", Tensor(2, 2, 0.0));
    AdamState state;
    ParamMap none;
    CHECK_THROWS_AS(optimizer_step(params, none, state, 1e-3, 0.9, 0.999,
                                   1e-8),
                    NumericError);
    ParamMap wrong;
    wrong.emplace("w", Tensor(2, 3, 0.0));
    CHECK_THROWS_AS(optimizer_step(params, wrong, state, 1e-3, 0.9, 0.999,
                                   1e-8),
                    NumericError);
  }

  SUBCASE("identical runs produce bitwise-identical parameters") {
    auto run = [&]() {
      ModelParams params = init_params(cfg, {}, 3);
      AdamState state;
      RngStream stream = RngStream::derive(4, "adam-det");
      for (int step = 0; step < 5; ++step) {
        ParamMap g;
        for (const auto& [path, t] : params.tensors) {
          Tensor gt(t.rows(), t.cols());
          for (double& v : gt.data()) v = stream.next_uniform(-1.0, 1.0);
          g.emplace(path, std::move(gt));
        }
        optimizer_step(params, g, state, 1e-3, 0.9, 0.999, 1e-8);
      }
      return params;
    };
    ModelParams a = run();
    ModelParams b = run();
    for (const std::string& path : a.paths()) {
      CHECK(a.at(path).data() == b.at(path).data());
    }
  }
}

TEST_CASE("split_train_val holds out the last cycles per battery") {
  CycleSet set = generate_synthetic(10, 4, 8, 1);
  auto [train, val] = split_train_val(set, 0.2);
  CHECK(train.cycles.size() == 8);
  CHECK(val.cycles.size() == 2);
  CHECK(val.cycles[0].cycle_index == 8);
  CHECK(val.cycles[1].cycle_index == 9);

  auto [all, none] = split_train_val(set, 0.0);
  CHECK(all.cycles.size() == 10);
  CHECK(none.cycles.empty());
}

TEST_CASE("lr=0 leaves parameters at their initialization") {
  TrainConfig config = small_config();
  config.learning_rate = 0.0;
  config.epochs = 2;
  CycleSet set = generate_synthetic(8, 4, 12, 3);
  TrainResult result = train(set, CycleSet{}, config);
  ModelParams init = init_params(config.model, config.switches, config.seed);
  for (const std::string& path : init.paths()) {
    CHECK(result.params.at(path).data() == init.at(path).data());
  }
}

TEST_CASE("training is deterministic given config and seed") {
  TrainConfig config = small_config();
  config.model.dropout = 0.1;  // exercise the seeded dropout path
  CycleSet set = generate_synthetic(12, 4, 12, 5);
  TrainResult a = train(set, CycleSet{}, config);
  TrainResult b = train(set, CycleSet{}, config);
  REQUIRE(a.log.entries.size() == b.log.entries.size());
  for (std::size_t e = 0; e < a.log.entries.size(); ++e) {
    CHECK(a.log.entries[e].train_loss == b.log.entries[e].train_loss);
  }
  for (const std::string& path : a.params.paths()) {
    CHECK(a.params.at(path).data() == b.params.at(path).data());
  }
}

TEST_CASE("loss decreases over training on synthetic data") {
  TrainConfig config = small_config();
  config.epochs = 8;
  CycleSet set = generate_synthetic(24, 4, 12, 9);
  TrainResult result = train(set, CycleSet{}, config);
  CHECK(result.log.entries.front().train_loss >
        result.log.entries.back().train_loss);
}

TEST_CASE("four-cycle overfit reaches a small training loss") {
  TrainConfig config = small_config();
  config.batch_size = 4;
  config.epochs = 200;  // 200 steps; the acceptance suite runs the full 500
  CycleSet set = generate_synthetic(4, 4, 12, 11);
  TrainResult result = train(set, CycleSet{}, config);
  CHECK(result.log.entries.back().train_loss < 1e-3);
}

TEST_CASE("validation selects the best epoch") {
  TrainConfig config = small_config();
  config.epochs = 6;
  config.val_fraction = 0.25;
  CycleSet set = generate_synthetic(16, 4, 12, 13);
  TrainResult result = run_training_pipeline(set, config);
  CHECK(std::isfinite(result.best_val_rmse));
  double best_logged = std::numeric_limits<double>::infinity();
  for (const TrainLogEntry& e : result.log.entries) {
    best_logged = std::min(best_logged, e.val_rmse);
  }
  CHECK(result.best_val_rmse == best_logged);
}

TEST_CASE("checkpoints round-trip bitwise") {
  TempDir dir("ckpt");
  TrainConfig config = small_config();
  config.epochs = 2;
  CycleSet set = generate_synthetic(8, 4, 12, 21);
  TrainResult result = train(set, CycleSet{}, config,
                             dir.path("model.ckpt"));

  Checkpoint loaded = load_checkpoint(dir.path("model.ckpt"));
  CHECK(serialize_config(loaded.config) == serialize_config(config));
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    CHECK(loaded.stats.min[f] == result.stats.min[f]);
    CHECK(loaded.stats.max[f] == result.stats.max[f]);
  }
  for (const std::string& path : result.params.paths()) {
    CHECK(loaded.params.at(path).data() == result.params.at(path).data());
  }

  // identical predictions after reload
  auto padded = build_padded_set(set, result.stats, config.model.pad_len,
                                 config.model.history_window);
  for (const PaddedCycle& p : padded) {
    CHECK(predict_soh(loaded.params, p) == predict_soh(result.params, p));
  }

  SUBCASE("corrupt checkpoints are rejected") {
    atomic_write_file(dir.path("bad.ckpt"), "not a checkpoint");
    CHECK_THROWS_AS(load_checkpoint(dir.path("bad.ckpt")), IoError);
  }
}

TEST_CASE("config serialization round-trips and hashes stably") {
  TrainConfig config = small_config();
  config.switches.use_history = false;
  config.eval_history = HistoryMode::autoregressive;
  TrainConfig parsed = parse_config(serialize_config(config));
  CHECK(serialize_config(parsed) == serialize_config(config));
  CHECK(config_hash(parsed) == config_hash(config));

  TrainConfig other = small_config();
  CHECK(config_hash(other) != config_hash(config));

  CHECK_THROWS_AS(parse_config("nonsense_key=1"), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs=abc"), ConfigError);
  CHECK_THROWS_AS(parse_config("no equals sign"), ConfigError);
}

TEST_CASE("training rejects empty sets and bad configs") {
  TrainConfig config = small_config();
  CHECK_THROWS_AS(train(CycleSet{}, CycleSet{}, config), DataError);
  config.batch_size = 0;
  CHECK_THROWS_AS(train(generate_synthetic(4, 4, 8, 1), CycleSet{}, config),
                  ConfigError);
}

TEST_CASE("gradient clipping caps the global norm and stays deterministic") {
  TrainConfig config = small_config();
  config.grad_clip_norm = 1e-3;  // low enough to bind on early steps
  config.epochs = 2;
  CycleSet set = generate_synthetic(8, 4, 12, 19);
  TrainResult clipped_a = train(set, CycleSet{}, config);
  TrainResult clipped_b = train(set, CycleSet{}, config);
  for (const std::string& path : clipped_a.params.paths()) {
    CHECK(clipped_a.params.at(path).data() ==
          clipped_b.params.at(path).data());
  }
  config.grad_clip_norm = 0.0;
  TrainResult unclipped = train(set, CycleSet{}, config);
  bool differs = false;
  for (const std::string& path : unclipped.params.paths()) {
    if (unclipped.params.at(path).data() !=
        clipped_a.params.at(path).data()) {
      differs = true;
    }
  }
  CHECK(differs);
}

TEST_CASE("non-finite loss aborts naming the epoch and batch") {
  TrainConfig config = small_config();
  config.learning_rate = 1e200;  // one Adam step overflows the next forward
  config.epochs = 3;
  CycleSet set = generate_synthetic(8, 4, 12, 17);
  CHECK_THROWS_WITH_AS(train(set, CycleSet{}, config),
                       doctest::Contains("epoch"), NumericError);
}

TEST_CASE("model gradients match finite differences on a tiny config") {
  TrainConfig config;
  config.model.pad_len = 8;
  config.model.hidden = 4;
  config.model.encoder_heads = 2;
  config.model.ffn_dim = 8;
  config.model.history_window = 2;
  config.model.dropout = 0.0;
  config.seed = 3;
  GradientCheckResult result = model_gradient_check(config, 2, 1e-6);
  CHECK(result.max_rel_error < 1e-4);
  CHECK(result.n_parameters > 10);
}

TEST_SUITE_END();
