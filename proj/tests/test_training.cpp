#include <cstring>

#include "doctest.h"
#include "ftl/checkpoint.hpp"
#include "ftl/training.hpp"
#include "support.hpp"

using namespace ftl;

namespace {

struct Setup {
  test::Fixture fx{test::small_spec(2, 4, 8)};
  TrainConfig cfg = test::tiny_train_config();
  ModelConfig model_cfg = model_config_for(fx.manifest(), cfg);
  std::vector<Triplet> triplets = build_triplet_set(fx.manifest(), {"synthA", "synthB"});

  TripletBatch batch(std::size_t begin, std::size_t count) {
    return make_triplet_batch({triplets.begin() + static_cast<std::ptrdiff_t>(begin),
                               triplets.begin() + static_cast<std::ptrdiff_t>(begin + count)},
                              fx.store, model_cfg);
  }
};

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("defaults follow the reference hyperparameters") {
    const auto f = TrainConfig::defaults(FinetuneMode::full);
    CHECK(f.learning_rate == 1e-4);
    CHECK(f.batch_size == 4);
    CHECK(f.margin == 1.0);
    CHECK(f.lambda == 1.0);
    CHECK(f.beta == 1.0);
    CHECK(f.epochs == 30);
    CHECK(f.alpha == 1.0);
    CHECK(f.optimizer == Optimizer::adam);
    const auto b = TrainConfig::defaults(FinetuneMode::bitfit);
    CHECK(b.learning_rate == 2e-5);
    CHECK(b.batch_size == 8);
    CHECK(b.margin == 1.0);
    CHECK(b.lambda == 1.0);
    CHECK(b.beta == 0.5);
    CHECK(b.epochs == 7);
  }

  TEST_CASE("variants round trip") {
    for (Variant v : all_variants()) {
      TrainConfig c;
      apply_variant(c, v);
      CHECK(variant_of(c) == v);
      CHECK(parse_variant(to_string(v)) == v);
    }
    CHECK(to_string(Variant::tl_adv) == "TL+Adv");
    CHECK(to_string(Variant::baseline) == "B");
    CHECK_THROWS_AS(parse_variant("TL+X"), ValidationError);
  }

  TEST_CASE("config validation") {
    auto c = test::tiny_train_config();
    c.learning_rate = 0;
    CHECK_THROWS_AS(validate(c), ValidationError);
    c = test::tiny_train_config();
    c.batch_size = 0;
    CHECK_THROWS_AS(validate(c), ValidationError);
    c = test::tiny_train_config();
    c.epochs = 0;
    CHECK_THROWS_AS(validate(c), ValidationError);
    c = test::tiny_train_config();
    c.lambda = -1;
    CHECK_THROWS_AS(validate(c), ValidationError);
    c = test::tiny_train_config();
    c.included_categories = {"real"};
    CHECK_THROWS_AS(validate(c), ValidationError);
  }

  TEST_CASE("triplet batch layout") {
    Setup s;
    const auto b = s.batch(0, 3);
    CHECK(b.images.batch == 9);
    CHECK(b.triplets == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(b.labels[i] == s.triplets[i].labels[0]);
      CHECK(b.labels[3 + i] == s.triplets[i].labels[1]);
      CHECK(b.labels[6 + i] == s.triplets[i].labels[2]);
      CHECK(b.targets[6 + i] == s.model_cfg.category_index(s.triplets[i].negative.forgery_category));
    }
    auto bad = s.triplets;
    bad[0].positive = bad[0].anchor;
    CHECK_THROWS_AS(make_triplet_batch({bad[0]}, s.fx.store, s.model_cfg), ValidationError);
  }

  TEST_CASE("zero loss weights with a detached detector leave the backbone alone") {
    Setup s;
    s.cfg.alpha = 0.0;
    s.cfg.beta = 0.0;
    auto state = init_train_state(s.model_cfg, s.cfg);
    const auto before = state.model.parameters();
    const auto g = compute_gradients(state.model, s.batch(0, 4), s.cfg);
    for (std::size_t i = 0; i < g.grads.size(); ++i) {
      if (before[i].role == ParamRole::backbone) {
        for (double v : g.grads[i]) CHECK(v == 0.0);
      }
    }
    train_step({s.triplets.begin(), s.triplets.begin() + 4}, state, s.cfg, s.fx.store);
    for (std::size_t i = 0; i < before.size(); ++i) {
      const bool moved = before[i].value != state.model.parameters()[i].value;
      CHECK(moved == (before[i].role == ParamRole::detector));
    }
  }

  TEST_CASE("lambda zero gives the triplet-only backbone gradient") {
    Setup s;
    s.cfg.lambda = 0.0;
    auto triplet_only = s.cfg;
    triplet_only.use_discriminator = false;
    const Model m(s.model_cfg, 5);
    const auto b = s.batch(4, 6);
    CHECK(test::backbone_grads_equal(m, compute_gradients(m, b, s.cfg).grads,
                                     compute_gradients(m, b, triplet_only, false).grads));
  }

  TEST_CASE("detached detector contributes nothing to the backbone") {
    Setup s;
    const Model m(s.model_cfg, 6);
    const auto b = s.batch(0, 8);
    CHECK(test::backbone_grads_equal(m, compute_gradients(m, b, s.cfg, true).grads,
                                     compute_gradients(m, b, s.cfg, false).grads));
    // attached, the detector does reach the backbone
    auto attached = s.cfg;
    attached.detector_gate = GradientGate::pass;
    CHECK_FALSE(test::backbone_grads_equal(m, compute_gradients(m, b, attached, true).grads,
                                           compute_gradients(m, b, attached, false).grads));
  }

  TEST_CASE("reversal flips the discriminator component") {
    Setup s;
    const Model m(s.model_cfg, 7);
    const auto b = s.batch(2, 5);
    auto at = [&](GradientGate gate, double lambda) {
      auto c = s.cfg;
      c.discriminator_gate = gate;
      c.lambda = lambda;
      return compute_gradients(m, b, c).grads;
    };
    const auto base = at(GradientGate::reverse, 0.0);
    const auto plain = at(GradientGate::pass, 1.0);
    for (double lambda : {0.3, 1.0, 2.5}) {
      const auto rev = at(GradientGate::reverse, lambda);
      for (std::size_t i = 0; i < rev.size(); ++i) {
        if (m.parameters()[i].role != ParamRole::backbone) continue;
        std::vector<double> g_disc(rev[i].size());
        for (std::size_t k = 0; k < g_disc.size(); ++k) g_disc[k] = plain[i][k] - base[i][k];
        const double scale = test::inf_norm(g_disc);
        for (std::size_t k = 0; k < g_disc.size(); ++k) {
          CHECK(std::abs((rev[i][k] - base[i][k]) + lambda * g_disc[k]) <= 1e-6 * scale);
        }
      }
    }
  }

  TEST_CASE("loss composition identity at every step") {
    Setup s;
    s.cfg.alpha = 0.7;
    s.cfg.beta = 0.3;
    const auto r = train(s.fx.manifest(), s.fx.store, s.cfg);
    REQUIRE_FALSE(r.log.empty());
    for (const auto& row : r.log) {
      const auto& l = row.losses;
      CHECK(l.total == l.bce + l.alpha * l.triplet + l.beta * l.forgery);
      CHECK(l.alpha == 0.7);
      CHECK(l.beta == 0.3);
    }
  }

  TEST_CASE("one step from a fixed seed is deterministic") {
    Setup s;
    auto a = init_train_state(s.model_cfg, s.cfg), b = init_train_state(s.model_cfg, s.cfg);
    const std::vector<Triplet> batch(s.triplets.begin(), s.triplets.begin() + 4);
    const auto la = train_step(batch, a, s.cfg, s.fx.store);
    const auto lb = train_step(batch, b, s.cfg, s.fx.store);
    CHECK(la == lb);
    CHECK(a.model.parameters() == b.model.parameters());
    CHECK(a.adam == b.adam);
    CHECK(encode_checkpoint(a) == encode_checkpoint(b));
  }

  TEST_CASE("eight triplets in batches of four take two steps") {
    test::Fixture fx(test::small_spec(1, 4, 8));
    auto cfg = test::tiny_train_config();
    cfg.included_categories = {"synthA"};
    const auto r = train(fx.manifest(), fx.store, cfg);
    REQUIRE(r.log.size() == 2);
    CHECK(r.log[0].step == 1);
    CHECK(r.log[1].step == 2);
    CHECK(r.state.epoch == 1);
    // a partial last batch is kept
    cfg.batch_size = 3;
    CHECK(train(fx.manifest(), fx.store, cfg).log.size() == 3);
  }

  TEST_CASE("included categories keep the other family out of training") {
    test::Fixture fx(test::small_spec(2, 4, 8));
    auto cfg = test::tiny_train_config();
    cfg.included_categories = {"synthA"};
    const auto t = build_triplet_set(fx.manifest(), cfg.included_categories);
    for (const auto& x : t) {
      CHECK(x.anchor.forgery_category != "synthB");
      CHECK(x.negative.forgery_category != "synthB");
    }
    // 16 triplets, batch 4
    CHECK(train(fx.manifest(), fx.store, cfg).log.size() == 4);
  }

  TEST_CASE("bitfit leaves backbone weights untouched") {
    Setup s;
    s.cfg.finetune_mode = FinetuneMode::bitfit;
    auto state = init_train_state(s.model_cfg, s.cfg);
    const auto before = state.model.parameters();
    for (int step = 0; step < 10; ++step) {
      const std::size_t at = static_cast<std::size_t>(step) * 3 % (s.triplets.size() - 3);
      train_step({s.triplets.begin() + static_cast<std::ptrdiff_t>(at), s.triplets.begin() + static_cast<std::ptrdiff_t>(at + 3)},
                 state, s.cfg, s.fx.store);
    }
    for (std::size_t i = 0; i < before.size(); ++i) {
      const auto& p = state.model.parameters()[i];
      CAPTURE(p.name);
      if (p.role == ParamRole::backbone && !p.is_bias) {
        CHECK(std::memcmp(p.value.data(), before[i].value.data(), p.value.size() * sizeof(double)) == 0);
      } else {
        CHECK(p.value != before[i].value);
      }
    }
  }

  TEST_CASE("same seed twice gives identical logs") {
    Setup s;
    const auto a = train(s.fx.manifest(), s.fx.store, s.cfg);
    const auto b = train(s.fx.manifest(), s.fx.store, s.cfg);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].losses == b.log[i].losses);
    auto other = s.cfg;
    other.seed = 99;
    CHECK_FALSE(train(s.fx.manifest(), s.fx.store, other).log[0].losses == a.log[0].losses);
  }

  TEST_CASE("resuming at an epoch boundary equals the uninterrupted run") {
    Setup s;
    s.cfg.epochs = 3;
    test::TempDir full_dir, part_dir;
    const auto full = train(s.fx.manifest(), s.fx.store, s.cfg, std::nullopt, full_dir.path());
    auto first = s.cfg;
    first.epochs = 1;
    train(s.fx.manifest(), s.fx.store, first, std::nullopt, part_dir.path());
    auto resumed_from = load_checkpoint(part_dir / "checkpoint_epoch1.ckpt");
    const auto rest = train(s.fx.manifest(), s.fx.store, s.cfg, std::move(resumed_from), part_dir.path());
    CHECK(rest.state.model.parameters() == full.state.model.parameters());
    CHECK(rest.state.step == full.state.step);
    CHECK(test::read_file(part_dir / "checkpoint.ckpt") == test::read_file(full_dir / "checkpoint.ckpt"));
    CHECK(test::read_file(part_dir / "loss_log.csv") == test::read_file(full_dir / "loss_log.csv"));
    CHECK(std::filesystem::exists(full_dir / "checkpoint_epoch3.ckpt"));
  }

  TEST_CASE("loss log format") {
    Setup s;
    test::TempDir dir;
    const auto r = train(s.fx.manifest(), s.fx.store, s.cfg, std::nullopt, dir.path());
    const auto lines = test::read_lines(dir / "loss_log.csv");
    REQUIRE(lines.size() == r.log.size() + 1);
    CHECK(lines[0] == "epoch,step,bce,triplet,forgery,total");
    CHECK(lines[1].rfind("1,1,", 0) == 0);
  }

  TEST_CASE("non-finite loss names the term") {
    Setup s;
    auto state = init_train_state(s.model_cfg, s.cfg);
    test::param(state.model, "backbone.proj.bias").value[0] = std::numeric_limits<double>::infinity();
    try {
      train_step({s.triplets.begin(), s.triplets.begin() + 2}, state, s.cfg, s.fx.store);
      FAIL("expected a runtime failure");
    } catch (const RuntimeFailure& e) {
      CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
      CHECK(std::string(e.what()).find("loss") != std::string::npos);
    }
  }

  TEST_CASE("training needs triplets and loadable images") {
    test::Fixture fx(test::small_spec(1, 4, 8));
    auto cfg = test::tiny_train_config();
    Manifest reals = select_records(fx.manifest(), {}, {"none"}, "reals");
    CHECK_THROWS_AS(train(reals, fx.store, cfg), ValidationError);
    ImageStore empty("/nonexistent");
    CHECK_THROWS_AS(train(fx.manifest(), empty, cfg), RuntimeFailure);
  }

  TEST_CASE("adam matches the reference update") {
    Setup s;
    auto state = init_train_state(s.model_cfg, s.cfg);
    const auto before = state.model.parameters();
    Gradients g = state.model.zero_gradients();
    for (auto& t : g)
      for (std::size_t k = 0; k < t.size(); ++k) t[k] = 0.01 * static_cast<double>(k % 7) - 0.02;
    adam_update(state.model, state.adam, g, 1e-3);
    // first step: m_hat = g, v_hat = g^2
    const auto& p = state.model.parameters()[0];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double gk = g[0][k];
      const double expected = before[0].value[k] - 1e-3 * gk / (std::abs(gk) + 1e-8);
      CHECK(p.value[k] == doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK(state.adam.t == 1);
  }
}
