#include <doctest.h>

#include <random>

#include "sic/trainer.hpp"
#include "support/grad_check.hpp"

using namespace sic;

namespace {

Vec vec(std::initializer_list<Scalar> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (Scalar x : v) out[i++] = x;
  return out;
}

// Two linearly separable classes: bright top half vs bright bottom half.
Dataset make_toy_dataset(int per_class, std::mt19937& rng) {
  Dataset ds;
  ds.mode = LabelMode::SingleLabel;
  ds.num_classes = 2;
  std::uniform_real_distribution<Scalar> bright(0.7f, 1.0f);
  std::uniform_real_distribution<Scalar> dim(0.0f, 0.2f);
  int id = 0;
  for (int cls = 0; cls < 2; ++cls) {
    for (int i = 0; i < per_class; ++i) {
      Vec rgb(Eigen::Index(3) * 8 * 8);
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < 8; ++y) {
          for (int x = 0; x < 8; ++x) {
            const bool hot = (cls == 0) ? (y < 4) : (y >= 4);
            rgb[(c * 8 + y) * 8 + x] = hot ? bright(rng) : dim(rng);
          }
        }
      }
      Sample s;
      s.image6 = encode_image(make_tensor({3, 8, 8}, rgb));
      s.labels = cls == 0 ? vec({1, 0}) : vec({0, 1});
      s.id = id++;
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

BCosNetwork make_toy_net(std::mt19937& rng) {
  BCosNetwork net(6, 8, 8);
  ConvSpec spec{6, 8, 3, 2, 1};
  std::normal_distribution<Scalar> dist(0.0f, 0.15f);
  Vec kv(Eigen::Index(8) * 6 * 3 * 3);
  for (Eigen::Index i = 0; i < kv.size(); ++i) kv[i] = dist(rng);
  net.add(BCosConvLayer(spec, make_tensor({8, 6, 3, 3}, kv), 2.0f));
  net.add(GlobalAvgPoolLayer{});
  Vec wv(Eigen::Index(16) * 8);
  for (Eigen::Index i = 0; i < wv.size(); ++i) wv[i] = dist(rng);
  net.add(BCosLinearLayer(make_tensor({16, 8}, wv), 2.0f));
  return net;
}

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.learning_rate = 0.01f;
  cfg.epochs = 30;
  cfg.batch_size = 4;
  cfg.warmup_epochs = 2;
  cfg.temperature = 10.0f;
  cfg.n_support = 2;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("bce closed forms") {
  CHECK(bce_loss(vec({0, 0}), vec({1, 1})) == doctest::Approx(0.6931472f));
  CHECK(bce_loss(vec({20}), vec({1})) < 1e-8f);
  CHECK(bce_loss(vec({-20}), vec({0})) < 1e-8f);
  CHECK_THROWS_AS(bce_loss(vec({0}), vec({0.5f})), validation_error);
}

TEST_CASE("bce gradient vs finite differences") {
  std::mt19937 rng(3);
  Tensor logits = sic::testing::random_tensor({5}, rng);
  Tensor targets = Tensor::from({5}, {1, 0, 0, 1, 1});
  auto fn = [targets](const std::vector<Tensor>& v) { return bce_with_logits(v[0], targets); };
  CHECK(sic::testing::fd_check(fn, {logits}).max_rel_err < 1e-3);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;
  cfg.learning_rate = 1.0f;
  cfg.epochs = 100;
  cfg.warmup_epochs = 2;
  const std::int64_t total = 10000;

  CHECK(lr_at(0, total, cfg) == doctest::Approx(0.1f));
  CHECK(lr_at(100, total, cfg) == doctest::Approx(0.1f + 0.9f * 0.5f));  // mid-warmup
  CHECK(lr_at(5500, total, cfg) == doctest::Approx(1.0f));    // 55%: hold
  CHECK(lr_at(6000, total, cfg) == doctest::Approx(0.5f));    // 60%: first halving
  CHECK(lr_at(9500, total, cfg) == doctest::Approx(0.0625f)); // 95%: four halvings

  SUBCASE("non-increasing after warmup") {
    Scalar prev = std::numeric_limits<Scalar>::max();
    for (std::int64_t it = 200; it < total; it += 50) {
      const Scalar lr = lr_at(it, total, cfg);
      CHECK(lr <= prev + 1e-9f);
      prev = lr;
    }
  }
  SUBCASE("bounds") {
    CHECK_THROWS_AS(lr_at(-1, total, cfg), contract_error);
    CHECK_THROWS_AS(lr_at(total, total, cfg), contract_error);
  }
}

TEST_CASE("adam_step") {
  TrainConfig cfg;
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<Tensor> params{Tensor::from({3}, {1, 2, 3})};
    AdamState state;
    state.init(params);
    adam_step(params, {Vec::Zero(3)}, state, 0.1f, cfg);
    CHECK(params[0].values().isApprox(vec({1, 2, 3})));
  }
  SUBCASE("first step with unit gradient moves by about -lr") {
    std::vector<Tensor> params{Tensor::from({1}, {0})};
    AdamState state;
    state.init(params);
    adam_step(params, {Vec::Ones(1)}, state, 0.1f, cfg);
    CHECK(params[0].values()[0] == doctest::Approx(-0.1f).epsilon(1e-4));
  }
  SUBCASE("constant gradient step magnitude approaches lr * sgn(g)") {
    std::vector<Tensor> params{Tensor::from({1}, {0})};
    AdamState state;
    state.init(params);
    Vec g = Vec::Constant(1, -2.5f);
    Scalar prev = params[0].values()[0];
    Scalar step_size = 0.0f;
    for (int i = 0; i < 3000; ++i) {
      adam_step(params, {g}, state, 0.01f, cfg);
      step_size = params[0].values()[0] - prev;
      prev = params[0].values()[0];
    }
    CHECK(step_size == doctest::Approx(0.01f).epsilon(1e-2));  // +lr for negative gradient
  }
  SUBCASE("non-finite gradient aborts") {
    std::vector<Tensor> params{Tensor::from({1}, {0})};
    AdamState state;
    state.init(params);
    Vec g = Vec::Constant(1, std::numeric_limits<Scalar>::quiet_NaN());
    CHECK_THROWS_AS(adam_step(params, {g}, state, 0.1f, cfg), numeric_error);
  }
}

TEST_CASE("training on a separable toy set") {
  std::mt19937 rng(1);
  Dataset ds = make_toy_dataset(10, rng);
  TrainConfig cfg = toy_config();

  TrainResult result = train(ds, make_toy_net(rng), cfg);
  REQUIRE(result.history.size() == size_t(cfg.epochs));

  SUBCASE("reaches full training accuracy within 30 epochs") {
    double best = 0.0;
    for (const EpochStats& e : result.history) best = std::max(best, e.accuracy);
    CHECK(best == doctest::Approx(1.0));
    CHECK(evaluate(result.model, ds) == doctest::Approx(1.0));
  }
  SUBCASE("loss decreases") {
    CHECK(result.history[5].mean_loss < result.history[0].mean_loss);
  }
  SUBCASE("support authenticity: vectors bit-equal recomputed evidence") {
    for (const SupportEntry& e : result.model.supports.entries) {
      const Sample& src = ds.samples[e.source_index];
      Vec recomputed = result.model.net.forward(src.image6).values().cwiseMax(0.0f);
      CHECK(e.vector == recomputed);
      Eigen::Index truth;
      src.labels.maxCoeff(&truth);
      CHECK(e.class_id == int(truth));
    }
  }
}

TEST_CASE("training is deterministic under a fixed seed") {
  std::mt19937 rng_a(1), rng_b(1);
  Dataset ds_a = make_toy_dataset(6, rng_a);
  Dataset ds_b = make_toy_dataset(6, rng_b);
  TrainConfig cfg = toy_config();
  cfg.epochs = 4;

  TrainResult a = train(ds_a, make_toy_net(rng_a), cfg);
  TrainResult b = train(ds_b, make_toy_net(rng_b), cfg);
  for (size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].mean_loss == b.history[e].mean_loss);
    CHECK(a.history[e].accuracy == b.history[e].accuracy);
  }
  std::vector<Tensor> pa = a.model.net.parameters();
  std::vector<Tensor> pb = b.model.net.parameters();
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].values() == pb[i].values());
  }
}

TEST_CASE("per-class support minimum is enforced") {
  std::mt19937 rng(5);
  Dataset ds = make_toy_dataset(1, rng);  // one sample per class
  TrainConfig cfg = toy_config();
  cfg.n_support = 3;
  CHECK_THROWS_AS(train(ds, make_toy_net(rng), cfg), dataset_error);
}

TEST_CASE("evaluate") {
  SUBCASE("chance level for an all-bias model on balanced multi-label data") {
    // latents live on dims 0/1, supports on dims 2/3: every similarity is 0
    BCosNetwork net(6, 1, 1);
    net.add(GlobalAvgPoolLayer{});
    Vec w = Vec::Zero(4 * 6);
    for (int j = 0; j < 4; ++j) w[j * 6 + j] = 1.0f;
    net.add(BCosLinearLayer(make_tensor({4, 6}, w), 2.0f));

    SicModel model;
    model.net = net;
    model.head = HeadConfig{30.0f, 0.0f, 1, 2, 2.0f};
    model.supports.num_classes = 2;
    model.supports.n_support = 1;
    model.supports.entries = {
        {vec({0, 0, 1, 0}), 0, 0},
        {vec({0, 0, 0, 1}), 1, 1},
    };

    Dataset ds;
    ds.mode = LabelMode::MultiLabel;
    ds.num_classes = 2;
    Sample s0, s1;
    s0.image6 = Tensor::from({6, 1, 1}, {1, 0.5f, 0, 0, 0, 0});
    s0.labels = vec({1, 0});
    s0.id = 0;
    s1.image6 = Tensor::from({6, 1, 1}, {0.5f, 1, 0, 0, 0, 0});
    s1.labels = vec({0, 1});
    s1.id = 1;
    ds.samples = {s0, s1};

    CHECK(evaluate(model, ds) == doctest::Approx(0.5));
  }
  SUBCASE("empty dataset is a contract error") {
    SicModel model;
    Dataset ds;
    ds.num_classes = 2;
    CHECK_THROWS_AS(evaluate(model, ds), contract_error);
  }
}
