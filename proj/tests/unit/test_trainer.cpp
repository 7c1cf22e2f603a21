#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "csegnet/io.hpp"
#include "csegnet/phantom.hpp"
#include "csegnet/trainer.hpp"
#include "helpers.hpp"
#include "../oracles/oracles.hpp"

using namespace csegnet;
using testutil::Rng;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.stages = 2;
  c.base_channels = 2;
  c.input_height = c.input_width = 16;
  return c;
}

Checkpoint random_checkpoint(std::uint64_t seed, bool with_adam) {
  Checkpoint ck;
  ck.config = tiny_config();
  ck.params = build(ck.config, seed);
  Rng rng(seed);
  for (auto& [name, t] : ck.params)
    if (!is_buffer_name(name)) t = testutil::random_tensor(t.shape(), rng);
  ck.val_dice = 0.123456789 + static_cast<double>(seed) * 1e-3;
  ck.epoch = static_cast<int>(seed) + 1;
  if (with_adam) {
    AdamState st;
    st.step = 17;
    for (const auto& [name, t] : ck.params) {
      st.m.emplace(name, testutil::random_tensor(t.shape(), rng));
      st.v.emplace(name, testutil::random_tensor(t.shape(), rng, 0, 1));
    }
    ck.adam = st;
  }
  return ck;
}

ErrorKind decode_error(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Internal;
}

}  // namespace

TEST_SUITE("adam") {
  TEST_CASE("first step with unit gradient moves by -lr/(1+eps)") {
    BasicParamSet<double> p{{"w", Tensor64({3}, 0.5)}};
    BasicParamSet<double> g{{"w", Tensor64({3}, 1.0)}};
    BasicAdamState<double> st;
    adam_step(p, g, st);
    CHECK(st.step == 1);
    for (auto v : p.at("w").data()) CHECK(v == doctest::Approx(0.5 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-14));
  }

  TEST_CASE("zero gradient leaves params unchanged but counts the step") {
    BasicParamSet<double> p{{"w", Tensor64({2}, 0.25)}};
    BasicParamSet<double> g{{"w", Tensor64({2}, 0.0)}};
    BasicAdamState<double> st;
    adam_step(p, g, st);
    adam_step(p, g, st);
    CHECK(st.step == 2);
    CHECK(p.at("w")[0] == 0.25);
  }

  TEST_CASE("ten steps on w^2 match the scalar reference") {
    BasicParamSet<double> p{{"w", Tensor64({1}, 1.0)}};
    BasicAdamState<double> st;
    const auto ref = oracle::adam_on_square(1.0, 10);
    double prev = 1.0;
    for (int t = 0; t < 10; ++t) {
      BasicParamSet<double> g{{"w", Tensor64({1}, 2.0 * p.at("w")[0])}};
      adam_step(p, g, st);
      const double w = p.at("w")[0];
      CHECK(std::abs(w - ref[t]) < 1e-10);
      CHECK(std::abs(w) < std::abs(prev));
      prev = w;
      for (auto v : st.v.at("w").data()) CHECK(v >= 0.0);
    }
  }

  TEST_CASE("non-finite gradients are rejected without touching state") {
    BasicParamSet<float> p{{"a", Tensor({2}, 1.0f)}, {"b", Tensor({2}, 1.0f)}};
    BasicParamSet<float> g{{"a", Tensor({2}, 1.0f)}, {"b", Tensor({2}, 1.0f)}};
    g.at("b")[1] = std::numeric_limits<float>::infinity();
    AdamState st;
    try {
      adam_step(p, g, st);
      FAIL("expected NonFiniteGradient");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NonFiniteGradient);
    }
    CHECK(st.step == 0);
    CHECK(p.at("a")[0] == 1.0f);
    CHECK(st.m.empty());
  }
}

TEST_SUITE("registry") {
  TEST_CASE("keeps exactly the best five in any offer order") {
    Rng rng(12);
    std::vector<double> scores{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    for (int perm = 0; perm < 30; ++perm) {
      std::shuffle(scores.begin(), scores.end(), rng);
      TopKRegistry reg(5);
      for (std::size_t i = 0; i < scores.size(); ++i) {
        reg.offer({scores[i], static_cast<int>(i) + 1, {}, nullptr});
        CHECK(reg.size() <= 5);
      }
      REQUIRE(reg.size() == 5);
      std::vector<double> kept;
      for (const auto& e : reg.entries()) kept.push_back(e.score);
      CHECK(kept == std::vector<double>{0.9, 0.8, 0.7, 0.6, 0.5});
    }
  }

  TEST_CASE("ties prefer the earlier epoch; evictions are reported") {
    TopKRegistry reg(2);
    std::optional<RegistryEntry> dropped;
    CHECK(reg.offer({0.5, 1, "a", nullptr}, &dropped));
    CHECK(reg.offer({0.5, 2, "b", nullptr}, &dropped));
    CHECK_FALSE(dropped.has_value());
    CHECK_FALSE(reg.would_accept(0.5, 3));
    CHECK_FALSE(reg.offer({0.5, 3, "c", nullptr}, &dropped));
    REQUIRE(dropped.has_value());
    CHECK(dropped->path == "c");
    CHECK(reg.offer({0.6, 4, "d", nullptr}, &dropped));
    CHECK(dropped->path == "b");
    CHECK(reg.entries()[0].epoch == 4);
    CHECK(reg.entries()[1].epoch == 1);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip is bit-exact with and without optimizer state") {
    for (bool adam : {false, true}) {
      const auto ck = random_checkpoint(3, adam);
      const auto bytes = encode_checkpoint(ck);
      const auto back = decode_checkpoint(bytes);
      CHECK(back.config == ck.config);
      CHECK(back.val_dice == ck.val_dice);
      CHECK(back.epoch == ck.epoch);
      REQUIRE(back.params.size() == ck.params.size());
      for (const auto& [name, t] : ck.params) CHECK(bit_equal(t, back.params.at(name)));
      CHECK(back.adam.has_value() == adam);
      if (adam) {
        CHECK(back.adam->step == 17);
        for (const auto& [name, t] : ck.adam->m) CHECK(bit_equal(t, back.adam->m.at(name)));
      }
      CHECK(encode_checkpoint(back) == bytes);
    }
  }

  TEST_CASE("file round trip preserves registry order") {
    testutil::TempDir dir("ckpt");
    TopKRegistry reg(3), reloaded(3);
    for (std::uint64_t s = 0; s < 5; ++s) {
      auto ck = random_checkpoint(s, false);
      ck.val_dice = std::vector<double>{0.3, 0.9, 0.1, 0.7, 0.5}[s];
      const auto path = dir.path / ("c" + std::to_string(s) + ".cseg");
      save_checkpoint(ck, path);
      reg.offer({ck.val_dice, ck.epoch, path, nullptr});
    }
    for (const auto& e : reg.entries()) {
      const auto ck = load_checkpoint(e.path);
      reloaded.offer({ck.val_dice, ck.epoch, e.path, nullptr});
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(reg.entries()[i].path == reloaded.entries()[i].path);
  }

  TEST_CASE("malformed input is rejected with typed errors") {
    const auto bytes = encode_checkpoint(random_checkpoint(1, false));
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{11}, bytes.size() / 2, bytes.size() - 1})
      CHECK(decode_error(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<long>(cut))) ==
            ErrorKind::CorruptEntry);
    auto magic = bytes;
    magic[0] = 'X';
    CHECK(decode_error(magic) == ErrorKind::BadMagic);
    auto version = bytes;
    version[4] = static_cast<std::uint8_t>(kCheckpointVersion + 1);
    CHECK(decode_error(version) == ErrorKind::VersionUnsupported);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK(decode_error(trailing) == ErrorKind::CorruptEntry);
  }

  TEST_CASE("a parameter set that does not match the config is rejected") {
    auto ck = random_checkpoint(2, false);
    ck.params.erase("head.main.bias");
    CHECK(decode_error(encode_checkpoint(ck)) == ErrorKind::ConfigMismatch);
  }
}

TEST_SUITE("ensemble") {
  TEST_CASE("probability mean, identical members and tie-breaking") {
    Rng rng(77);
    const auto x = testutil::random_tensor({2, 1, 16, 16}, rng);
    std::vector<Checkpoint> cks;
    for (std::uint64_t s = 0; s < 3; ++s) cks.push_back(random_checkpoint(s + 10, false));
    const auto p = ensemble_probabilities({&cks[0], &cks[1], &cks[2]}, x);
    std::vector<Tensor> singles;
    for (const auto& c : cks) singles.push_back(predict_probabilities(c.config, c.params, x));
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const double mean = (double(singles[0][i]) + singles[1][i] + singles[2][i]) / 3.0;
      CHECK(std::abs(p[i] - mean) < 1e-6);
    }
    const auto one = ensemble_predict({&cks[0]}, x);
    CHECK(ensemble_predict({&cks[0], &cks[0], &cks[0], &cks[0], &cks[0]}, x) == one);
    CHECK(one == argmax_labels(singles[0]));
    for (auto l : one) CHECK(l < 4);

    Tensor tie({1, 4, 1, 2}, 0.25f);
    tie.at(0, 2, 0, 1) = 0.4f;
    tie.at(0, 3, 0, 1) = 0.4f;
    CHECK(argmax_labels(tie) == std::vector<std::uint8_t>{0, 2});
  }

  TEST_CASE("members with different configs are refused") {
    auto a = random_checkpoint(1, false);
    auto b = a;
    b.config.aux_inference = true;
    Tensor x({1, 1, 16, 16}, 0.0f);
    try {
      ensemble_probabilities({&a, &b}, x);
      FAIL("expected ConfigMismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ConfigMismatch);
    }
  }
}

TEST_SUITE("train") {
  namespace {
  std::vector<Case> tiny_dataset(int patients) {
    PhantomConfig pc;
    pc.size = 32;
    pc.depth = 2;
    // 32 px needs fatter structures to keep the myocardium and ES cavity >= 2 px
    pc.lvm_thickness_min = 0.07;
    pc.lvm_thickness_max = 0.09;
    pc.lvc_radius_min = 0.16;
    pc.lvc_radius_max = 0.18;
    pc.rvc_radius_min = 0.08;
    pc.rvc_radius_max = 0.12;
    pc.center_jitter = 0.04;
    pc.apex_shrink = 0.1;
    pc.seed = 5;
    std::vector<Case> cases;
    for (const auto& p : generate_phantom(pc, patients)) {
      cases.push_back(p.ed);
      cases.push_back(p.es);
    }
    return cases;
  }

  RunConfig tiny_run(int epochs) {
    RunConfig cfg;
    cfg.model = tiny_config();
    cfg.model.input_height = cfg.model.input_width = 32;
    cfg.train.epochs = epochs;
    cfg.train.batch_size = 4;
    cfg.train.top_k = 2;
    return cfg;
  }
  }  // namespace

  TEST_CASE("zero epochs leave an empty registry and log") {
    const auto r = train(tiny_run(0), tiny_dataset(3));
    CHECK(r.registry.size() == 0);
    CHECK(r.log.empty());
  }

  TEST_CASE("identical seeds give identical logs; checkpoints on disk follow the registry") {
    const auto data = tiny_dataset(4);
    testutil::TempDir d1("train1"), d2("train2");
    const auto a = train(tiny_run(3), data, d1.path);
    const auto b = train(tiny_run(3), data, d2.path);
    CHECK(read_text_file(d1.path / "training_log.csv") == read_text_file(d2.path / "training_log.csv"));
    CHECK(format_training_log(a.log) == format_training_log(b.log));
    CHECK(a.log.size() == 3);
    CHECK(a.registry.size() == 2);
    int files = 0;
    for (const auto& e : std::filesystem::directory_iterator(d1.path)) files += e.path().extension() == ".cseg";
    CHECK(files == 2);
    for (const auto& e : a.registry.entries()) CHECK(std::filesystem::exists(e.path));
    const auto header = format_training_log({});
    CHECK(header == "epoch,train_loss,val_dice_rvc,val_dice_lvm,val_dice_lvc,val_dice_mean\n");

    auto other = tiny_run(3);
    other.train.seed = 1;
    CHECK(format_training_log(train(other, data).log) != format_training_log(a.log));
  }

  TEST_CASE("patient split keeps ED and ES together") {
    const auto data = tiny_dataset(5);
    const auto r = train(tiny_run(1), data);
    for (const auto& id : r.split.val) CHECK(std::find(r.split.train.begin(), r.split.train.end(), id) == r.split.train.end());
    CHECK(r.split.train.size() + r.split.val.size() == 5);
    CHECK(r.split.train.size() == 4);
  }
}
