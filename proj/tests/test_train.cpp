#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "sdt/train.hpp"
#include "support.hpp"

using namespace sdt;
using testutil::error_kind;

namespace {

TrainConfig tiny_train(Variant v, int epochs = 2, std::uint64_t seed = 1) {
  TrainConfig c;
  c.variant = v;
  c.batch_size = 4;
  c.epochs = epochs;
  c.lr = 1e-3;
  c.lr_drops = {};
  c.seed = seed;
  c.generator = testutil::tiny_generator(template_mode_for(v));
  return c;
}

Dataset tiny_data(int clips = 8, std::uint64_t seed = 5) {
  SynthConfig sc;
  sc.n_clips = clips;
  sc.seed = seed;
  return testutil::synth_memory(sc, tiny_train(Variant::plain).effective_mel());
}

std::vector<double> flat(const std::vector<Param*>& ps) {
  std::vector<double> v;
  for (Param* p : ps) v.insert(v.end(), p->value.storage().begin(), p->value.storage().end());
  return v;
}

}  // namespace

TEST_CASE("regression loss examples") {
  Tensor p({1, 2, 1}), g({1, 2, 1});
  CHECK(regression_loss(p, g) == 0.0);
  p[0] = 1.0;
  p[1] = 2.0;
  CHECK(regression_loss(p, g) == doctest::Approx(3.0).epsilon(1e-12));
  // mean over frames and batch
  Tensor a({2, 2, 2}), b({2, 2, 2});
  a[0] = 4.0;
  CHECK(regression_loss(a, b) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(error_kind([&] { regression_loss(a, p); }) == testutil::kUsage);
}

TEST_CASE("regression loss is convex and its gradient matches finite differences") {
  sdt::Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = testutil::random_tensor({2, 6, 5}, rng);
    const Tensor y = testutil::random_tensor({2, 6, 5}, rng);
    const Tensor gt = testutil::random_tensor({2, 6, 5}, rng);
    Tensor mid(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) mid[i] = 0.5 * (x[i] + y[i]);
    CHECK(regression_loss(mid, gt) <= 0.5 * (regression_loss(x, gt) + regression_loss(y, gt)) + 1e-12);
  }
  Tensor x = testutil::random_tensor({2, 4, 3}, rng);
  const Tensor gt = testutil::random_tensor({2, 4, 3}, rng);
  Tensor g;
  regression_loss(x, gt, &g);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double fd = testutil::central_diff([&] { return regression_loss(x, gt); }, x[i], 1e-6);
    CHECK(std::abs(g[i] - fd) < 1e-8);
  }
}

TEST_CASE("total loss components") {
  sdt::Rng rng(2);
  Generator gen(testutil::tiny_generator(TemplateMode::clip));
  gen.init(rng);
  auto bank = TemplateBank::init({"a", "b", "c"}, 4, TemplateMode::clip);
  for (auto& v : bank.table().value.storage()) v = rng.normal();
  const std::vector<int> idx{0, 2, 1};
  const Tensor mel = testutil::random_tensor({3, 8, 64}, rng);
  const Tensor gt = testutil::random_tensor({3, 28, 16}, rng, 0.3);
  const LossParts p = total_loss(gen, mel, gt, 1.0, 0.7, &bank, idx, nullptr, false);
  CHECK(p.total == doctest::Approx(p.reg + 0.7 * p.kl).epsilon(1e-12));
  CHECK(p.kl == doctest::Approx(kl_regularizer(bank.vectors(idx))).epsilon(1e-12));
  const LossParts q = total_loss(gen, mel, gt, 1.0, 0.0, &bank, idx, nullptr, false);
  CHECK(q.total == q.reg);
  // plain: no KL term at all
  Generator plain(testutil::tiny_generator(TemplateMode::none));
  plain.init(rng);
  const LossParts r = total_loss(plain, mel, gt, 2.0, 1.0, nullptr, idx, nullptr, false);
  CHECK(r.kl == 0.0);
  CHECK(r.total == doctest::Approx(2.0 * r.reg).epsilon(1e-12));
}

TEST_CASE("total loss template gradient matches finite differences") {
  sdt::Rng rng(3);
  Generator gen(testutil::tiny_generator(TemplateMode::clip));
  gen.init(rng);
  auto bank = TemplateBank::init({"a", "b", "c", "d"}, 4, TemplateMode::clip);
  for (auto& v : bank.table().value.storage()) v = rng.normal();
  const std::vector<int> idx{3, 1, 0};
  const Tensor mel = testutil::random_tensor({3, 8, 64}, rng);
  const Tensor gt = testutil::random_tensor({3, 28, 16}, rng, 0.3);
  const double lr = 0.8, lk = 1.3;
  for (Param* p : gen.parameters()) p->zero_grad();
  bank.table().zero_grad();
  total_loss(gen, mel, gt, lr, lk, &bank, idx, nullptr, true);
  const Tensor g = bank.table().grad;
  for (int row : idx) {
    for (int k = 0; k < 4; ++k) {
      double& t = bank.table().value[static_cast<std::size_t>(row) * 4 + k];
      const double fd = testutil::central_diff(
          [&] { return total_loss(gen, mel, gt, lr, lk, &bank, idx, nullptr, false).total; }, t, 1e-5);
      CHECK(testutil::rel_err(g[static_cast<std::size_t>(row) * 4 + k], fd, 1e-4) < 1e-3);
    }
  }
  // row 2 is not in the batch
  for (int k = 0; k < 4; ++k) CHECK(g[8 + k] == 0.0);
}

TEST_CASE("learning rate schedule") {
  TrainConfig c;
  CHECK(learning_rate_at(c, 1) == doctest::Approx(1e-4));
  CHECK(learning_rate_at(c, 90) == doctest::Approx(1e-4));
  CHECK(learning_rate_at(c, 91) == doctest::Approx(1e-5));
  CHECK(learning_rate_at(c, 98) == doctest::Approx(1e-5));
  CHECK(learning_rate_at(c, 99) == doctest::Approx(1e-6).epsilon(1e-9));
  CHECK(learning_rate_at(c, 100) == doctest::Approx(1e-6).epsilon(1e-9));
}

TEST_CASE("gradient clipping") {
  Param a("a", Tensor({2})), b("b", Tensor({1}));
  a.grad[0] = 3.0;
  b.grad[0] = 4.0;
  const double n = clip_grad_norm({&a, &b}, 1.0);
  CHECK(n == doctest::Approx(5.0));
  CHECK(a.grad[0] == doctest::Approx(0.6));
  CHECK(b.grad[0] == doctest::Approx(0.8));
  CHECK(clip_grad_norm({&a, &b}, 10.0) == doctest::Approx(1.0));
  CHECK(a.grad[0] == doctest::Approx(0.6));
}

TEST_CASE("two epochs on eight clips: log, checkpoint, reload") {
  const Dataset data = tiny_data();
  testutil::TempDir dir("train_two");
  TrainConfig c = tiny_train(Variant::bp_clip);
  c.out = (dir / "m.ckpt").string();
  c.log = (dir / "log.jsonl").string();
  TrainResult r = train(c, data);
  CHECK(r.log.size() == 2);
  std::ifstream in(c.log);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch") == lines + 1);
    CHECK(j.contains("L_reg"));
    CHECK(j.contains("L_KL"));
    CHECK(j.contains("lr"));
    ++lines;
  }
  CHECK(lines == 2);
  GestureModel back = GestureModel::from_checkpoint(load_checkpoint(c.out));
  CHECK(back.eval_regression_loss(data) == r.model.eval_regression_loss(data));
  REQUIRE(back.bank.has_value());
  CHECK(back.bank->table().value.storage() == r.model.bank->table().value.storage());
}

TEST_CASE("training is deterministic per seed") {
  const Dataset data = tiny_data();
  TrainResult a = train(tiny_train(Variant::bp_clip, 2, 7), data);
  TrainResult b = train(tiny_train(Variant::bp_clip, 2, 7), data);
  TrainResult c = train(tiny_train(Variant::bp_clip, 2, 8), data);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].reg == b.log[i].reg);
  CHECK(flat(a.model.generator.parameters()) == flat(b.model.generator.parameters()));
  CHECK(flat(a.model.generator.parameters()) != flat(c.model.generator.parameters()));
}

TEST_CASE("one step moves every parameter group") {
  const Dataset data = tiny_data(4);
  TrainConfig c = tiny_train(Variant::bp_clip, 1);
  GestureModel before = GestureModel::create(c);
  TrainResult r = train(c, data);
  CHECK(r.optimizer.steps() == 1);
  std::set<std::string> moved;
  auto pb = before.generator.parameters(), pa = r.model.generator.parameters();
  REQUIRE(pb.size() == pa.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->value.storage() != pb[i]->value.storage()) moved.insert(pa[i]->name.substr(0, pa[i]->name.find('.')));
  }
  CHECK(moved.count("audio") == 1);
  CHECK(moved.count("unet") == 1);
  bool bank_moved = false;
  for (double v : r.model.bank->table().value.storage()) bank_moved |= v != 0.0;
  CHECK(bank_moved);
}

TEST_CASE("learned templates are not all alike") {
  const Dataset data = tiny_data();
  TrainResult r = train(tiny_train(Variant::bp_clip, 4), data);
  const auto& b = *r.model.bank;
  double spread = 0.0;
  for (int i = 1; i < b.size(); ++i) {
    const auto e0 = b.entry(0), ei = b.entry(i);
    for (std::size_t k = 0; k < e0.size(); ++k) spread = std::max(spread, std::abs(e0[k] - ei[k]));
  }
  CHECK(spread > 1e-4);
}

TEST_CASE("non-finite loss aborts with the last good checkpoint") {
  Dataset data = tiny_data(4);
  data.clips[2].gesture.coords[5] = std::numeric_limits<double>::quiet_NaN();
  testutil::TempDir dir("train_nan");
  TrainConfig c = tiny_train(Variant::plain, 2);
  c.out = (dir / "m.ckpt").string();
  CHECK(error_kind([&] { train(c, data); }) == testutil::kNumeric);
  CHECK(std::filesystem::exists(c.out));
  CHECK(load_checkpoint(c.out).meta.value("epoch", -1) == 0);
}

TEST_CASE("variant preconditions") {
  const Dataset data = tiny_data(4);
  CHECK(error_kind([&] { train(tiny_train(Variant::vae_template), data); }) == testutil::kUsage);
  GestureVae vae(testutil::tiny_vae(64));
  sdt::Rng rng(1);
  vae.init(rng);
  CHECK(error_kind([&] { train(tiny_train(Variant::vae_template), data, &vae); }) == testutil::kUsage);
  vae.freeze();
  TrainResult r = train(tiny_train(Variant::vae_template, 1), data, &vae);
  REQUIRE(r.model.bank.has_value());
  CHECK(r.model.bank->frozen());
  const auto t = vae.extract_template(data.clips[1].gesture);
  const auto e = r.model.bank->entry(data.clips[1].clip_id);
  REQUIRE(e.size() == t.size());
  for (std::size_t k = 0; k < t.size(); ++k) CHECK(e[k] == doctest::Approx(t[k]).epsilon(1e-12));
  TrainConfig one = tiny_train(Variant::bp_clip);
  one.batch_size = 1;
  CHECK(error_kind([&] { train(one, data); }) == testutil::kUsage);
  Dataset other = data;
  other.layout = layout_by_name("upper_body_v1");
  CHECK(error_kind([&] { train(tiny_train(Variant::plain), other); }) == testutil::kData);
}

TEST_CASE("inference") {
  const Dataset data = tiny_data();
  TrainResult r = train(tiny_train(Variant::bp_clip, 3), data);
  SynthConfig sc;
  sc.seed = 5;
  const AudioClip audio = synth_clip(sc, 2).audio;
  GestureModel& m = r.model;
  const auto a = m.infer(audio, TemplateSpec::parse("sample:3"));
  const auto b = m.infer(audio, TemplateSpec::parse("sample:3"));
  CHECK(a.gesture.coords == b.gesture.coords);
  CHECK(a.gesture.frames == 64);
  const auto x = m.infer(audio, TemplateSpec::parse("id:" + data.clips[0].clip_id));
  const auto y = m.infer(audio, TemplateSpec::parse("id:" + data.clips[1].clip_id));
  CHECK(x.gesture.coords != y.gesture.coords);
  const auto z = m.infer(audio, TemplateSpec::parse("zero"));
  const Tensor zf = m.template_features(TemplateSpec::parse("zero"), 1, 64);
  for (double v : zf.storage()) CHECK(v == 0.0);
  CHECK(z.gesture.coords != x.gesture.coords);
  CHECK(error_kind([&] { m.infer(audio, TemplateSpec::parse("id:nope")); }) == testutil::kUsage);
  // round trip through a checkpoint is bit-identical
  testutil::TempDir dir("train_infer");
  save_checkpoint(m.to_checkpoint(), dir / "m.ckpt");
  GestureModel back = GestureModel::from_checkpoint(load_checkpoint(dir / "m.ckpt"));
  CHECK(back.infer(audio, TemplateSpec::parse("sample:3")).gesture.coords == a.gesture.coords);
  // plain ignores templates with a warning
  TrainResult p = train(tiny_train(Variant::plain, 1), data);
  const auto w = p.model.infer(audio, TemplateSpec::parse("sample:1"));
  CHECK_FALSE(w.warning.empty());
  CHECK(p.model.infer(audio, TemplateSpec::parse("zero")).warning.empty());
}

TEST_CASE("template spec parsing") {
  CHECK(TemplateSpec::parse("zero").kind == TemplateSpec::Kind::zero);
  const auto s = TemplateSpec::parse("sample:42");
  CHECK(s.kind == TemplateSpec::Kind::sample);
  CHECK(s.seed == 42);
  CHECK(TemplateSpec::parse("id:clip_7").value == "clip_7");
  CHECK(TemplateSpec::parse("file:t.json").kind == TemplateSpec::Kind::file);
  for (const char* bad : {"sample:x", "sample:", "random", "id"}) {
    CAPTURE(bad);
    CHECK(error_kind([&] { TemplateSpec::parse(bad); }) == testutil::kUsage);
  }
}

TEST_CASE("Adam state survives save and load") {
  sdt::Rng rng(4);
  Param a("w", testutil::random_tensor({3, 2}, rng));
  Param a2 = a;
  Adam opt, opt2;
  for (int s = 0; s < 3; ++s) {
    a.grad = testutil::random_tensor({3, 2}, rng);
    opt.step({&a}, 0.01);
  }
  CheckpointData ck;
  opt.save(ck);
  opt2.load(ck);
  CHECK(opt2.steps() == 3);
  a2.value = a.value;
  const Tensor g = testutil::random_tensor({3, 2}, rng);
  a.grad = g;
  a2.grad = g;
  opt.step({&a}, 0.01);
  opt2.step({&a2}, 0.01);
  CHECK(a.value.storage() == a2.value.storage());
}

TEST_CASE("Adam first step moves each weight by about lr") {
  Param p("p", Tensor({4}));
  p.grad[0] = 5.0;
  p.grad[1] = -0.01;
  p.grad[2] = 1e3;
  Adam opt;
  opt.step({&p}, 0.1);
  CHECK(p.value[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p.value[1] == doctest::Approx(0.1).epsilon(1e-4));
  CHECK(p.value[2] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p.value[3] == 0.0);
}

TEST_CASE("config JSON and overrides") {
  TrainConfig c = tiny_train(Variant::bp_frame);
  c.lr_drops = {{3, 0.5}};
  const auto j = c.to_json();
  const TrainConfig back = TrainConfig::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(back.variant == Variant::bp_frame);
  auto k = j;
  apply_override(k, "generator.base_channels=8");
  apply_override(k, "variant=plain");
  apply_override(k, "lr=0.5");
  const TrainConfig o = TrainConfig::from_json(k);
  CHECK(o.generator.base_channels == 8);
  CHECK(o.variant == Variant::plain);
  CHECK(o.lr == 0.5);
  auto bad = j;
  apply_override(bad, "generator.colour=3");
  CHECK(error_kind([&] { TrainConfig::from_json(bad); }) == testutil::kUsage);
  CHECK(error_kind([&] { apply_override(bad, "novalue"); }) == testutil::kUsage);
  CHECK(error_kind([] { parse_config_text("{", "x"); }) == testutil::kUsage);
  auto neg = j;
  apply_override(neg, "lambda_kl=-1");
  CHECK(error_kind([&] { TrainConfig::from_json(neg).validate(); }) == testutil::kUsage);
  CHECK(error_kind([] { parse_variant("gan"); }) == testutil::kUsage);
}

TEST_CASE("dataset loads from a synthetic manifest") {
  testutil::TempDir dir("train_load");
  SynthConfig sc;
  sc.n_clips = 10;
  synth_dataset(sc, dir.path);
  const MelConfig mel = tiny_train(Variant::plain).effective_mel();
  const Dataset all = load_dataset(dir / "manifest.jsonl", mel);
  const Dataset tr = load_dataset(dir / "manifest.jsonl", mel, "train");
  CHECK(all.clips.size() == 10);
  CHECK(tr.clips.size() == 8);
  CHECK(all.clips[0].mel.shape() == std::vector<int>{8, 64 * mel.frames_per_pose_frame});
  const std::vector<int> idx{0, 1};
  CHECK(gather_mel(all, idx).shape() == std::vector<int>{2, 8, 64 * mel.frames_per_pose_frame});
  CHECK(gather_gestures(all, idx).shape() == std::vector<int>{2, 28, 64});
  CHECK(error_kind([&] { load_dataset(dir / "manifest.jsonl", mel, "nope"); }) == testutil::kData);
}
