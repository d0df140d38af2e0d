#include <doctest.h>

#include <cmath>
#include <limits>

#include "mdnet/checkpoint.hpp"
#include "mdnet/toy_data.hpp"
#include "mdnet/training.hpp"
#include "support/fixtures.hpp"
#include "support/grad_check.hpp"

using namespace mdnet;
using namespace mdnet::train;
using testing::check_gradients;
using testing::dot_const;
using testing::random_tensor;

namespace {

using MA = MotionAttribute;

// Probabilities [1,3,h,w] from per-cell triples.
Tensor probs_from(std::size_t h, std::size_t w, const std::vector<std::array<double, 3>>& cells,
                  bool rg = false) {
  std::vector<double> v(3 * h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t c = 0; c < 3; ++c) v[c * h * w + i] = cells[i][c];
  }
  return Tensor({1, 3, h, w}, v, rg);
}

Tensor random_probs(Rng& rng, std::size_t n, std::size_t h, std::size_t w) {
  std::vector<double> v(n * 3 * h * w);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < h * w; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) s += (v[(b * 3 + c) * h * w + i] = 0.05 + rng.uniform());
      for (std::size_t c = 0; c < 3; ++c) v[(b * 3 + c) * h * w + i] /= s;
    }
  }
  return Tensor({n, 3, h, w}, v, true);
}

std::vector<data::Sample> tiny_toy(std::size_t count = 2) {
  data::ToyOptions opt;
  opt.count = count;
  opt.size = 32;
  return data::toy_samples(data::make_toy_dataset(opt));
}

}  // namespace

TEST_SUITE("class weights") {
  TEST_CASE("documented examples") {
    auto eq = class_weights(std::array<double, 3>{10, 10, 10});
    for (double w : eq.w) CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    auto a = class_weights(std::array<std::uint64_t, 3>{1, 1, 2});
    CHECK(a.w[0] == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(a.w[1] == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(a.w[2] == doctest::Approx(0.2).epsilon(1e-15));
    auto t = class_weights(std::array<double, 3>{2.7, 35.8, 61.5});
    CHECK(std::abs(t.w[0] - 0.8934) < 1e-4);
    CHECK(std::abs(t.w[1] - 0.0674) < 1e-4);
    CHECK(std::abs(t.w[2] - 0.0392) < 1e-4);
  }

  TEST_CASE("zero count asks to merge or drop the class") {
    try {
      class_weights(std::array<std::uint64_t, 3>{5, 0, 3});
      FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("moving") != std::string::npos);
      CHECK(msg.find("merge") != std::string::npos);
    }
  }

  TEST_CASE("positive, sums to one, scale invariant") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
      std::array<std::uint64_t, 3> c{1 + rng.below(1000), 1 + rng.below(1000), 1 + rng.below(1000)};
      const std::uint64_t k = 1 + rng.below(50);
      auto w = class_weights(c);
      auto ws = class_weights(std::array<std::uint64_t, 3>{c[0] * k, c[1] * k, c[2] * k});
      double s = 0.0;
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(w.w[j] > 0.0);
        CHECK(std::abs(w.w[j] - ws.w[j]) < 1e-15);
        s += w.w[j];
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_SUITE("motion loss") {
  TEST_CASE("perfect prediction is zero") {
    auto truth = testing::grid_from_letters({"SM", "U."});
    auto p = probs_from(2, 2, {{0, 0, 1}, {0, 1, 0}, {1, 0, 0}, {0.2, 0.3, 0.5}});
    std::vector<MotionLabelGrid> t{truth};
    CHECK(motion_loss(p, t, ClassWeights::uniform()).item() == 0.0);
  }

  TEST_CASE("uniform probabilities give log 3 for any targets") {
    Rng rng(2);
    std::vector<MotionLabelGrid> t{testing::random_grid(rng, 4, 5, true)};
    t[0](0, 0) = MA::Static;
    auto p = Tensor::filled({1, 3, 4, 5}, 1.0 / 3.0);
    CHECK(motion_loss(p, t, ClassWeights::uniform()).item() == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  }

  TEST_CASE("weights of one third give one third of the unweighted loss") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      auto p = random_probs(rng, 2, 3, 4);
      std::vector<MotionLabelGrid> t{testing::random_grid(rng, 3, 4, false),
                                     testing::random_grid(rng, 3, 4, true)};
      const double full = motion_loss(p, t, ClassWeights::uniform()).item();
      const double third = motion_loss(p, t, ClassWeights::uniform(1.0 / 3.0)).item();
      CHECK(std::abs(third - full / 3.0) < 1e-12);
      CHECK(full >= 0.0);
    }
  }

  TEST_CASE("ignore cells do not count and all-ignore is an error") {
    auto p = probs_from(1, 2, {{0.5, 0.25, 0.25}, {0.1, 0.1, 0.8}});
    std::vector<MotionLabelGrid> t{testing::grid_from_letters({"U."})};
    CHECK(motion_loss(p, t, ClassWeights::uniform()).item() == doctest::Approx(std::log(2.0)));
    std::vector<MotionLabelGrid> none{testing::grid_from_letters({".."})};
    CHECK_THROWS_AS(motion_loss(p, none, ClassWeights::uniform()), TrainingError);
    std::vector<MotionLabelGrid> wrong{testing::grid_from_letters({"UUU"})};
    CHECK_THROWS_AS(motion_loss(p, wrong, ClassWeights::uniform()), nn::ShapeError);
  }

  TEST_CASE("gradient check with class weights") {
    Rng rng(4);
    auto p = random_probs(rng, 2, 3, 3);
    std::vector<MotionLabelGrid> t{testing::random_grid(rng, 3, 3, true), testing::random_grid(rng, 3, 3, true)};
    t[0](0, 0) = MA::Moving;
    const auto w = class_weights(std::array<double, 3>{2.7, 35.8, 61.5});
    auto r = check_gradients([&] { return motion_loss(p, t, w); }, {{"probs", p, {}}}, 1e-6);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_SUITE("distillation loss") {
  TEST_CASE("closed forms") {
    auto zeros = Tensor::zeros({1, 128, 1, 1});
    auto target = Tensor::filled({1, 128, 1, 1}, 1.0 / std::sqrt(128.0));
    CHECK(std::abs(distill_loss(zeros, target).item() - 1.0 / 128.0) < 1e-12);
    CHECK(distill_loss(target, target).item() == 0.0);
    CHECK_THROWS_AS(distill_loss(zeros, Tensor::zeros({1, 128, 1, 2})), nn::ShapeError);
  }

  TEST_CASE("symmetric and non-negative; zero only on equality") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      auto a = random_tensor(rng, {2, 8, 2, 3}, false);
      auto b = random_tensor(rng, {2, 8, 2, 3}, false);
      const double ab = distill_loss(a, b).item();
      CHECK(ab == distill_loss(b, a).item());
      CHECK(ab > 0.0);
    }
  }

  TEST_CASE("gradient check for both inputs") {
    Rng rng(6);
    auto a = random_tensor(rng, {2, 4, 2, 2});
    auto b = random_tensor(rng, {2, 4, 2, 2});
    auto r = check_gradients([&] { return distill_loss(a, b); }, {{"student", a, {}}, {"target", b, {}}});
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_SUITE("total loss and schedule") {
  TEST_CASE("weighted combination") {
    TrainConfig cfg;
    CHECK(total_loss(0.5, 0.25, cfg) == 0.75);
    cfg.lambda_m = 0.0;
    cfg.lambda_d = 2.0;
    CHECK(total_loss(0.5, 0.25, cfg) == 0.5);
    CHECK(total_loss(Tensor::scalar(0.5), Tensor::scalar(0.25), cfg).item() == 0.5);
  }

  TEST_CASE("backbone gradient of the total equals the sum of branch gradients") {
    auto p = model::MdNetParams::initialize(7);
    Rng rng(7);
    auto img = random_tensor(rng, {2, 1, 16, 16}, false);
    for (auto& v : img.mutable_values()) v = std::abs(v) * 0.3;
    std::vector<MotionLabelGrid> t{testing::random_grid(rng, 2, 2, false), testing::random_grid(rng, 2, 2, false)};
    auto target = random_tensor(rng, {2, 128, 2, 2}, false, 0.1);
    TrainConfig cfg;
    cfg.lambda_m = 0.7;
    cfg.lambda_d = 1.3;

    auto grads = [&](double lm, double ld) {
      for (auto& q : p.trainable_parameters()) q.zero_grad();
      // Eval mode keeps batch statistics out of the comparison.
      auto out = model::forward(img, p, model::Mode::Eval);
      TrainConfig c = cfg;
      c.lambda_m = lm;
      c.lambda_d = ld;
      total_loss(motion_loss(out.motion_probs, t, ClassWeights::uniform()),
                 distill_loss(out.descriptors, target), c)
          .backward();
      std::vector<double> g;
      for (const auto& q : p.backbone_parameters()) {
        if (q.has_grad()) {
          g.insert(g.end(), q.grad().begin(), q.grad().end());
        } else {
          g.insert(g.end(), q.numel(), 0.0);
        }
      }
      return g;
    };
    const auto both = grads(0.7, 1.3);
    const auto gm = grads(0.7, 0.0);
    const auto gd = grads(0.0, 1.3);
    double err = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < both.size(); ++i) {
      err = std::max(err, std::abs(both[i] - (gm[i] + gd[i])));
      scale = std::max(scale, std::abs(both[i]));
    }
    CHECK(scale > 0.0);
    CHECK(err <= 1e-12 * std::max(1.0, scale));
  }

  TEST_CASE("schedule values and monotonicity") {
    TrainConfig cfg;
    CHECK(std::abs(lr_at_epoch(0, cfg) - 0.01) <= 1e-15);
    CHECK(std::abs(lr_at_epoch(50, cfg) - 0.001) <= 1e-15);
    CHECK(std::abs(lr_at_epoch(100, cfg) - 0.0001) <= 1e-15);
    for (std::size_t e = 0; e < cfg.epochs; ++e) CHECK(lr_at_epoch(e + 1, cfg) < lr_at_epoch(e, cfg));
    CHECK_THROWS_AS(lr_at_epoch(101, cfg), TrainingError);
    cfg.epochs = 0;
    CHECK_THROWS_AS(lr_at_epoch(0, cfg), TrainingError);
  }

  TEST_CASE("loss report lines") {
    LossRecord r{3, 17, 0.001, 0.75, 0.5, 0.25};
    CHECK(format_loss_record(r) == "3 17 0.001 0.75 0.5 0.25");
    std::vector<LossRecord> rs{r, r};
    CHECK(format_loss_report(rs) == "3 17 0.001 0.75 0.5 0.25\n3 17 0.001 0.75 0.5 0.25\n");
  }
}

TEST_SUITE("training loop") {
  TEST_CASE("same seed gives bitwise identical checkpoints and history") {
    auto samples = tiny_toy(3);
    auto teacher = model::TeacherParams::initialize(1);
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.epochs = 4;
    cfg.max_steps = 5;
    auto a = train::train(samples, teacher, cfg);
    auto b = train::train(samples, teacher, cfg);
    CHECK(a.history.size() == 5);
    CHECK(model::encode_checkpoint(a.params.named_tensors()) ==
          model::encode_checkpoint(b.params.named_tensors()));
    CHECK(format_loss_report(a.history) == format_loss_report(b.history));
    cfg.seed = 1;
    auto c = train::train(samples, teacher, cfg);
    CHECK(model::encode_checkpoint(a.params.named_tensors()) !=
          model::encode_checkpoint(c.params.named_tensors()));
  }

  TEST_CASE("history follows the per-epoch schedule") {
    auto samples = tiny_toy(3);
    TrainConfig cfg;
    cfg.batch_size = 2;  // two steps per epoch
    cfg.epochs = 3;
    std::size_t callbacks = 0;
    auto r = train::train(samples, model::TeacherParams::initialize(1), cfg, [&](const LossRecord&) { ++callbacks; });
    REQUIRE(r.history.size() == 6);
    CHECK(callbacks == 6);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(r.history[i].step == i);
      CHECK(r.history[i].epoch == i / 2);
      CHECK(r.history[i].lr == lr_at_epoch(i / 2, cfg));
      CHECK(r.history[i].total == total_loss(r.history[i].motion, r.history[i].distill, cfg));
    }
  }

  TEST_CASE("without distillation the descriptor head is untouched") {
    auto samples = tiny_toy();
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.epochs = 3;
    cfg.lambda_d = 0.0;
    cfg.weight_decay = 0.0;
    auto r = train::train(samples, model::TeacherParams::initialize(1), cfg);
    auto init = model::MdNetParams::initialize(cfg.seed);
    const auto before = init.desc_head_parameters();
    const auto after = r.params.desc_head_parameters();
    bool desc_same = true;
    for (std::size_t i = 0; i < before.size(); ++i) {
      desc_same = desc_same && std::equal(before[i].values().begin(), before[i].values().end(),
                                          after[i].values().begin());
    }
    CHECK(desc_same);
    bool motion_changed = false;
    const auto mb = init.motion_head_parameters(), ma = r.params.motion_head_parameters();
    for (std::size_t i = 0; i < mb.size(); ++i) {
      motion_changed = motion_changed || !std::equal(mb[i].values().begin(), mb[i].values().end(),
                                                     ma[i].values().begin());
    }
    CHECK(motion_changed);
  }

  TEST_CASE("a non-finite loss aborts with epoch and step") {
    // An absurd learning rate overflows the parameters within a few steps.
    auto samples = tiny_toy();
    TrainConfig cfg;
    cfg.batch_size = 1;
    cfg.epochs = 4;
    cfg.l0 = 1e250;
    cfg.b = 0.999;
    try {
      train::train(samples, model::TeacherParams::initialize(1), cfg);
      FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("epoch") != std::string::npos);
      CHECK(msg.find("step") != std::string::npos);
    }
  }

  TEST_CASE("bad configuration is rejected") {
    auto samples = tiny_toy();
    auto teacher = model::TeacherParams::initialize(1);
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(train::train(samples, teacher, cfg), TrainingError);
    CHECK_THROWS_AS(train::train({}, teacher, TrainConfig{}), TrainingError);
  }
}
