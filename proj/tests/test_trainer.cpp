#include <doctest.h>

#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "picpoint/geometry.hpp"
#include "picpoint/optim.hpp"
#include "picpoint/tensor_archive.hpp"
#include "picpoint/trainer.hpp"

using namespace picpoint;
namespace fs = std::filesystem;

namespace {

const fs::path& tiny_data() { return testutil::synthetic_data(20, 4, 256); }

double mean_total(const std::vector<StepMetrics>& m, std::size_t from, std::size_t count) {
  double s = 0;
  for (std::size_t k = from; k < from + count; ++k) s += m[k].total;
  return s / static_cast<double>(count);
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("config JSON round trip and validation") {
  TrainConfig c;
  c.epochs = 7;
  c.use_pose = false;
  c.backbone2d = "tiny-cnn";
  c.seed = 42;
  TrainConfig back = config_from_json(to_json(c));
  CHECK(config_differences(c, back).empty());
  CHECK(config_hash(c) == config_hash(back));
  TrainConfig other = c;
  other.tau = 0.1;
  CHECK(config_differences(c, other) == std::vector<std::string>{"tau"});
  CHECK(config_hash(c) != config_hash(other));

  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"epoch", 3}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"epochs", "x"}}), ConfigError);
  TrainConfig bad;
  bad.use_local_loss = bad.use_global_loss = false;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.lr_point_branch = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(1e-3, 0, 960) == 1e-3);
  CHECK(cosine_lr(1e-3, 959, 960) <= 1e-5);
  CHECK(cosine_lr(5e-5, 959, 960) <= 5e-7);
  CHECK(cosine_lr(1e-3, 480, 961) == doctest::Approx(5e-4));
  for (long s = 1; s < 960; ++s) CHECK(cosine_lr(1.0, s, 960) <= cosine_lr(1.0, s - 1, 960));

  testutil::TempDir out("sched");
  TrainConfig c = testutil::small_config(tiny_data(), out.path());
  c.epochs = 2;  // 10 steps
  auto m = pretrain(c);
  REQUIRE(m.size() == 10);
  CHECK(m.front().lr_point == c.lr_point_branch);
  CHECK(m.front().lr_image == c.lr_image_branch);
  CHECK(m.back().lr_point <= 0.01 * c.lr_point_branch);
  CHECK(m.back().lr_image <= 0.01 * c.lr_image_branch);
}

TEST_CASE("parameter groups partition the trainable parameters") {
  testutil::TempDir out("groups");
  Trainer t(testutil::small_config(tiny_data(), out.path()));
  auto groups = t.optimizer_groups();
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].first == "point");
  CHECK(groups[1].first == "image");
  std::multiset<std::string> names;
  for (const auto& [g, params] : groups)
    for (const auto& p : params) names.insert(p);
  std::set<std::string> unique(names.begin(), names.end());
  CHECK(unique.size() == names.size());
  for (const auto& p : groups[0].second)
    CHECK((p.rfind("backbone3d.", 0) == 0 || p.rfind("head.global3d", 0) == 0 || p.rfind("head.local3d", 0) == 0 ||
           p.rfind("head.pose", 0) == 0));
  for (const auto& p : groups[1].second)
    CHECK((p.rfind("head.global2d", 0) == 0 || p.rfind("head.local2d", 0) == 0));

  Rng rng(0);
  TrainConfig c = t.config();
  Model<float> model(c, t.image_backbone().channels(), rng);
  CHECK(model.all().size() == names.size());
  for (auto* p : model.all()) CHECK(names.count(p->name) == 1);

  // No optimizer slot aliases 2D backbone storage.
  std::set<const void*> frozen;
  for (const auto& l : t.image_backbone().layers()) frozen.insert(l.weight.data()), frozen.insert(l.bias.data());
  for (const void* p : t.optimizer_storage()) CHECK(frozen.count(p) == 0);
}

TEST_CASE("2D backbone stays frozen through training") {
  testutil::TempDir out("frozen");
  TrainConfig c = testutil::small_config(tiny_data(), out.path());
  c.max_steps = 6;
  Trainer t(c);
  const std::uint32_t before = t.image_backbone_checksum();
  CHECK(before == ImageBackbone::tiny_cnn().checksum());
  t.run();
  CHECK(t.image_backbone_checksum() == before);
  CHECK(ImageBackbone::tiny_cnn().checksum() == before);
}

TEST_CASE("step-0 local loss sits near the uniform value") {
  testutil::TempDir out("step0");
  TrainConfig c;
  c.data = testutil::synthetic_data(40, 2, 512).string();
  c.out = out.path().string();
  c.deterministic = true;
  Trainer t(c);
  StepMetrics m = t.step();
  REQUIRE(m.lcl.has_value());
  const double uniform = std::log(32.0 * 49.0);
  CHECK(*m.lcl >= 0.8 * uniform);
  CHECK(*m.lcl <= 1.2 * uniform);
  REQUIRE(m.glb.has_value());
  CHECK(std::abs(*m.glb - std::log(32.0)) <= 0.2 * std::log(32.0));
}

TEST_CASE("loss toggles") {
  testutil::TempDir out("toggle");
  TrainConfig c = testutil::small_config(tiny_data(), out.path());
  c.use_local_loss = false;
  Trainer t(c);
  StepMetrics m = t.step();
  CHECK_FALSE(m.lcl.has_value());
  REQUIRE(m.glb.has_value());
  CHECK(m.total == *m.glb);
  CHECK(t.grad_norm2("head.local3d") == 0.0);
  CHECK(t.grad_norm2("head.local2d") == 0.0);
  CHECK(t.grad_norm2("head.global3d") > 0.0);
  auto line = nlohmann::json::parse(metrics_line(m));
  CHECK_FALSE(line.contains("lcl"));

  TrainConfig g = testutil::small_config(tiny_data(), out.path());
  g.use_global_loss = false;
  Trainer tg(g);
  StepMetrics mg = tg.step();
  CHECK_FALSE(mg.glb.has_value());
  CHECK(mg.total == *mg.lcl);
  CHECK(tg.grad_norm2("head.global3d") == 0.0);
  CHECK(tg.grad_norm2("head.global2d") == 0.0);
  CHECK(tg.grad_norm2("head.local3d") > 0.0);

  TrainConfig np = testutil::small_config(tiny_data(), out.path());
  np.use_pose = false;
  Trainer tp(np);
  tp.step();
  CHECK(tp.grad_norm2("head.pose") == 0.0);
  Trainer tfull(testutil::small_config(tiny_data(), out.path()));
  tfull.step();
  CHECK(tfull.grad_norm2("head.pose") > 0.0);
}

TEST_CASE("resume reproduces the uninterrupted run at fp64") {
  testutil::TempDir a("resume_a"), b("resume_b");
  TrainConfig c = testutil::small_config(tiny_data(), a.path());
  c.precision = "fp64";
  c.max_steps = 20;
  Trainer full(c);
  auto straight = full.run();
  REQUIRE(straight.size() == 20);
  const auto straight_batch = full.last_batch_objects();

  TrainConfig half = c;
  half.out = b.path().string();
  half.max_steps = 10;
  Trainer first(half);
  first.run();
  TrainConfig rest = half;
  rest.max_steps = 20;
  Trainer second = Trainer::resume(b / "checkpoint.pcta", rest);
  CHECK(second.steps_done() == 10);
  auto resumed = second.run();
  REQUIRE(resumed.size() == 10);
  for (std::size_t k = 0; k < 10; ++k) {
    CHECK(resumed[k].step == straight[10 + k].step);
    CHECK(resumed[k].total == straight[10 + k].total);
  }
  CHECK(second.last_batch_objects() == straight_batch);
  CHECK(testutil::slurp(a / "metrics.jsonl") == testutil::slurp(b / "metrics.jsonl"));
}

TEST_CASE("resume rejects mismatched configs and corrupt files") {
  testutil::TempDir out("resume_bad");
  TrainConfig c = testutil::small_config(tiny_data(), out.path());
  c.max_steps = 2;
  Trainer(c).run();
  const fs::path ckpt = out / "checkpoint.pcta";

  TrainConfig other = c;
  other.tau = 0.2;
  other.L = 8;
  try {
    Trainer::resume(ckpt, other);
    FAIL("expected a config mismatch");
  } catch (const ConfigError& e) {
    std::string what = e.what();
    CHECK(what.find("tau") != std::string::npos);
    CHECK(what.find("L") != std::string::npos);
  }

  std::string bytes = testutil::slurp(ckpt);
  bytes[bytes.size() / 2] ^= 0x5a;
  testutil::spit(out / "corrupt.pcta", bytes);
  CHECK_THROWS_AS(Trainer::resume(out / "corrupt.pcta"), ArchiveError);
  testutil::spit(out / "short.pcta", bytes.substr(0, 100));
  CHECK_THROWS_AS(Trainer::resume(out / "short.pcta"), ArchiveError);
  // The original checkpoint is untouched and still loads.
  CHECK(Trainer::resume(ckpt).steps_done() == 2);
}

TEST_CASE("export keeps only the backbone") {
  testutil::TempDir out("export");
  TrainConfig c = testutil::small_config(tiny_data(), out.path());
  c.max_steps = 3;
  Trainer(c).run();
  const fs::path ckpt = out / "checkpoint.pcta", exported = out / "backbone.pcta";
  export_backbone(ckpt, exported);
  CHECK(fs::file_size(exported) < fs::file_size(ckpt));
  TensorArchive e = TensorArchive::read(exported);
  CHECK_FALSE(e.tensors.empty());
  for (const auto& [name, t] : e.tensors) CHECK(name.rfind(kHeadPrefix, 0) != 0);

  Dgcnn<float> from_ckpt = load_backbone<float>(ckpt);
  Dgcnn<float> from_export = load_backbone<float>(exported);
  Dataset d = Dataset::load(tiny_data());
  auto input = backbone_input<float>(d.cloud(3), false);
  std::vector<int> centers{0, 7, 100};
  auto fa = from_ckpt.forward(input, centers), fb = from_export.forward(input, centers);
  CHECK(fa.global == fb.global);
  CHECK(fa.per_center == fb.per_center);
  CHECK_THROWS_AS(export_backbone(exported, out / "again.pcta"), ArchiveError);
}

TEST_CASE("deterministic runs produce identical logs") {
  testutil::TempDir a("det1"), b("det2");
  TrainConfig c = testutil::small_config(tiny_data(), a.path());
  c.max_steps = 6;
  pretrain(c);
  c.out = b.path().string();
  pretrain(c);
  CHECK(testutil::slurp(a / "metrics.jsonl") == testutil::slurp(b / "metrics.jsonl"));
  auto line = nlohmann::json::parse(testutil::slurp(a / "metrics.jsonl").substr(0, testutil::slurp(a / "metrics.jsonl").find('\n')));
  for (const char* key : {"step", "lcl", "glb", "total", "lr_point", "lr_image"}) CHECK(line.contains(key));
}

TEST_CASE("normals widen the backbone input") {
  testutil::TempDir out("normals");
  TrainConfig c = testutil::small_config(tiny_data(), out.path());
  c.use_normals = true;
  c.max_steps = 2;
  Trainer t(c);
  t.run();
  bool normals = false;
  Dgcnn<float> net = load_backbone<float>(out / "checkpoint.pcta", &normals);
  CHECK(normals);
  CHECK(net.config().in_channels == 6);
}

TEST_CASE("tensor archive round trip and integrity") {
  testutil::TempDir dir("archive");
  TensorArchive a;
  a.metadata["kind"] = "test";
  a.metadata["value"] = 3;
  nn::Matrix<float> mf = nn::Matrix<float>::Random(3, 5);
  nn::Matrix<double> md = nn::Matrix<double>::Random(4, 2);
  a.tensors["f"] = Tensor::from_matrix(mf);
  a.tensors["d"] = Tensor::from_matrix(md);
  a.write(dir / "a.pcta");
  TensorArchive b = TensorArchive::read(dir / "a.pcta");
  CHECK(b.metadata == a.metadata);
  CHECK(b.at("f").to_matrix<float>() == mf);
  CHECK(b.at("d").to_matrix<double>() == md);
  CHECK(b.at("d").is_f64());
  CHECK(b.at("f").shape == std::vector<std::uint64_t>{3, 5});
  CHECK(a.serialize() == b.serialize());
  CHECK_THROWS_AS(b.at("missing"), ArchiveError);

  std::string bytes = a.serialize();
  for (std::size_t pos : {bytes.size() - 3, bytes.size() / 2, std::size_t{20}}) {
    std::string bad = bytes;
    bad[pos] ^= 1;
    CHECK_THROWS_AS(TensorArchive::deserialize(bad), ArchiveError);
  }
  CHECK_THROWS_AS(TensorArchive::deserialize(bytes.substr(0, bytes.size() - 1)), ArchiveError);
  CHECK_THROWS_AS(TensorArchive::read(dir / "none.pcta"), ArchiveError);
  const char text[] = "123456789";
  CHECK(crc32_of(text, 9) == 0xCBF43926u);
}

}

TEST_SUITE("trainer_progress") {

TEST_CASE("fifty steps reduce the loss on three seeds") {
  const fs::path& data = testutil::synthetic_data(100, 20, 1024, 2);
  for (std::uint64_t seed : {0, 1, 2}) {
    testutil::TempDir out("progress");
    TrainConfig c;
    c.data = data.string();
    c.out = out.path().string();
    c.seed = seed;
    c.deterministic = true;
    c.max_steps = 50;
    auto m = pretrain(c);
    REQUIRE(m.size() == 50);
    CAPTURE(seed);
    CHECK(mean_total(m, 40, 10) < mean_total(m, 0, 10));
  }
}

}
