#include <doctest.h>

#include <fstream>
#include <random>

#include "mixdiff/errors.hpp"
#include "mixdiff/io.hpp"
#include "mixdiff/render.hpp"
#include "mixdiff/rng.hpp"

using namespace mixdiff;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("mixdiff_io_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

const LabelVocab kVocab({"table", "chair", "empty"});

SceneLayout sample_scene_layout() {
  SceneLayout s;
  s.room_type = "toy_dining";
  s.floor = FloorPlan(Polygon{{-2, -1.5}, {2, -1.5}, {2, 1.5}, {0, 1.5}, {0, 0.5}, {-2, 0.5}});
  s.objects = {ObjectInstance::make(0, Vec3(1, -0.5, 0.375), Vec3(0.7, 0.45, 0.375), 0.1),
               ObjectInstance::make(1, Vec3(1, 0.3, 0.45), Vec3(0.22, 0.22, 0.45), -1.4)};
  return s;
}

}  // namespace

TEST_CASE("scene round trip") {
  TempDir dir;
  const SceneLayout s = sample_scene_layout();
  save_scene(dir.path / "a.json", s, kVocab, "abc");
  const auto back = load_scene_file(dir.path / "a.json", kVocab);
  REQUIRE(back.size() == 1);
  CHECK(back[0].floor == s.floor);
  CHECK(back[0].room_type == s.room_type);
  REQUIRE(back[0].objects.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[0].objects[i].label == s.objects[i].label);
    CHECK(back[0].objects[i].pos == s.objects[i].pos);
    CHECK(back[0].objects[i].size == s.objects[i].size);
    CHECK((back[0].objects[i].angle - s.objects[i].angle).norm() < 1e-15);
  }
  // empty slots are not written
  SceneLayout padded = pad_scene(s, 8, 2);
  CHECK(scene_to_json(padded, kVocab).at("objects").size() == 2);
  // saving twice gives identical bytes
  save_scene(dir.path / "b.json", s, kVocab, "abc");
  std::ifstream fa(dir.path / "a.json"), fb(dir.path / "b.json");
  const std::string ta((std::istreambuf_iterator<char>(fa)), {}), tb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(ta == tb);
}

TEST_CASE("unknown label names the file and line") {
  TempDir dir;
  const fs::path p = dir.path / "bad.json";
  write(p, R"({
  "floor": {"polygon": [[0, 0], [4, 0], [4, 4], [0, 4]]},
  "objects": [
    {"label": "spaceship", "pos": [1, 1, 0.5], "size": [0.5, 0.5, 0.5], "yaw_rad": 0}
  ]
}
)");
  try {
    load_scene_file(p, kVocab);
    FAIL("expected UnknownLabel");
  } catch (const UnknownLabel& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bad.json") != std::string::npos);
    CHECK(msg.find(":4") != std::string::npos);
    CHECK(msg.find("spaceship") != std::string::npos);
  }
}

TEST_CASE("malformed scenes") {
  TempDir dir;
  const fs::path p = dir.path / "bow.json";
  write(p, R"({"floor": {"polygon": [[0, 0], [4, 4], [4, 0], [0, 4]]}, "objects": []})");
  CHECK_THROWS_AS(load_scene_file(p, kVocab), InvalidFloor);
  write(p, R"({"floor": {"polygon": [[0, 0], [4, 0], [4, 4]]}, "objects": [{"label": "chair", "pos": [1, 1, 0.5], "size": [-1, 0.5, 0.5], "yaw_rad": 0}]})");
  CHECK_THROWS_AS(load_scene_file(p, kVocab), InvalidObject);
  write(p, R"({"floor": {"polygon": [[0, 0], [4, 0], [4, 4]]}, "objects": [{"label": "chair", "pos": [1, 1], "size": [1, 0.5, 0.5], "yaw_rad": 0}]})");
  CHECK_THROWS_AS(load_scene_file(p, kVocab), ParseError);
  write(p, "{ not json");
  CHECK_THROWS_AS(load_scene_file(p, kVocab), ParseError);
  CHECK_THROWS_AS(load_scene_file(dir.path / "missing.json", kVocab), IoError);
}

TEST_CASE("NDJSON files and directories") {
  TempDir dir;
  const SceneLayout s = sample_scene_layout();
  const std::string line = scene_to_json(s, kVocab).dump();
  write(dir.path / "many.ndjson", line + "\n\n" + line + "\n");
  CHECK(load_scene_file(dir.path / "many.ndjson", kVocab).size() == 2);
  write(dir.path / "many2.json", line + "\n" + line + "\n" + line + "\n");
  CHECK(load_scene_file(dir.path / "many2.json", kVocab).size() == 3);
  write(dir.path / "manifest.json", "{}");
  write(dir.path / "notes.txt", "ignored");
  CHECK(load_scenes(dir.path, kVocab).size() == 5);
  std::string bad = line;
  bad.replace(bad.find("chair"), 5, "sofa!");
  write(dir.path / "bad.ndjson", line + "\n" + bad + "\n");
  try {
    load_scene_file(dir.path / "bad.ndjson", kVocab);
    FAIL("expected UnknownLabel");
  } catch (const UnknownLabel& e) {
    CHECK(std::string(e.what()).find("bad.ndjson:2") != std::string::npos);
  }
}

TEST_CASE("constraint files") {
  const Json j = Json::parse(R"([{"slot": 0, "label": "table", "pos": [1, 2, 0.3], "size": [0.5, 0.4, 0.3], "yaw_rad": 1.5707963267948966},
                                 {"slot": 2, "label": "chair"}])");
  const MaskSpec m = constraints_from_json(j, kVocab);
  REQUIRE(m.slots.size() == 3);
  CHECK(*m.slots[0].label == 0);
  CHECK(m.slots[0].geom(0) == 1.0);
  CHECK(std::abs(m.slots[0].geom(6)) < 1e-15);
  CHECK(m.slots[0].geom(7) == doctest::Approx(1.0));
  CHECK(std::all_of(m.slots[0].geom_known.begin(), m.slots[0].geom_known.end(), [](bool b) { return b; }));
  CHECK_FALSE(m.slots[1].constrained());
  CHECK(*m.slots[2].label == 1);
  CHECK_FALSE(m.slots[2].geom_known[0]);
  CHECK_THROWS_AS(constraints_from_json(Json::parse(R"([{"slot": 0}, {"slot": 0}])"), kVocab), ParseError);
  CHECK_THROWS_AS(constraints_from_json(Json::parse(R"([{"slot": 0, "colour": "red"}])"), kVocab), ParseError);
  CHECK_THROWS_AS(constraints_from_json(Json::parse(R"([{"slot": 0, "label": "spaceship"}])"), kVocab), UnknownLabel);
  CHECK_THROWS_AS(constraints_from_json(Json::parse(R"({"slot": 0})"), kVocab), ParseError);
}

TEST_CASE("dataset round trip") {
  TempDir dir;
  const ToyDataset ds = generate(ToyRoomSpec::named("toy_bedroom"), 20, 3);
  const Manifest m = save_dataset(dir.path / "data", ds, 3, 0.8, "h");
  CHECK(m.train.size() == 16);
  CHECK(m.test.size() == 4);
  const Dataset back = load_dataset(dir.path / "data");
  CHECK(back.manifest.vocab == ds.vocab);
  CHECK(back.manifest.n_slots == ds.n_slots);
  CHECK(back.manifest.stats == m.stats);
  CHECK(back.manifest.train == m.train);
  CHECK(back.train.size() == 16);
  const Split sp = split_indices(20, 3, 0.8);
  for (std::size_t i = 0; i < sp.train.size(); ++i) {
    CHECK(back.train[i].objects.size() == static_cast<std::size_t>(ds.n_slots));
    CHECK(back.train[i].floor == ds.scenes[sp.train[i]].floor);
    for (std::size_t k = 0; k < back.train[i].objects.size(); ++k) {
      CHECK(back.train[i].objects[k].label == ds.scenes[sp.train[i]].objects[k].label);
      CHECK((back.train[i].objects[k].pos - ds.scenes[sp.train[i]].objects[k].pos).norm() == 0.0);
    }
  }
  CHECK_THROWS(load_dataset(dir.path / "nothing"));
}

TEST_CASE("run config") {
  RunConfig c;
  const Json j = run_config_to_json(c);
  const RunConfig back = run_config_from_json(j);
  CHECK(run_config_to_json(back) == j);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(config_hash(c).size() == 16);
  RunConfig d = run_config_from_json(Json::parse(R"({"lr": 0.001, "d_model": 32, "geo_hidden": [16]})"));
  CHECK(d.lr == 0.001);
  CHECK(d.model.d_model == 32);
  CHECK(d.model.geo_hidden == std::vector<int>{16});
  CHECK(d.batch_size == c.batch_size);
  CHECK(config_hash(d) != config_hash(c));
  CHECK_THROWS_AS(run_config_from_json(Json::parse(R"({"learning_rat": 0.1})")), ParseError);
  CHECK_THROWS_AS(run_config_from_json(Json::parse(R"({"lr": "fast"})")), ParseError);
  RunConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("checkpoint round trip and validation") {
  TempDir dir;
  Checkpoint ck;
  ck.config.model.n_blocks = 1;
  ck.vocab = kVocab;
  ck.n_slots = 4;
  ck.stats.scale(0) = 2.5;
  ck.label_dist = Eigen::Vector2d(0.2, 0.8);
  ck.net = Denoiser(ck.config.model, 3, 4, 7);
  ck.adam = Adam(ck.config.adam(), ck.net.params());
  ad::Gradients g = ck.net.params().zeros_like();
  Rng rng(1);
  for (auto& m : g) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  }
  ck.adam.step(ck.net.params(), g);
  const fs::path p = dir.path / "ck.json";
  save_checkpoint(p, ck);
  const Checkpoint back = load_checkpoint(p);
  CHECK(back.vocab == ck.vocab);
  CHECK(back.n_slots == 4);
  CHECK(back.stats == ck.stats);
  CHECK(back.adam.steps() == 1);
  CHECK(run_config_to_json(back.config) == run_config_to_json(ck.config));
  for (std::size_t i = 0; i < ck.net.params().count(); ++i) {
    CHECK(back.net.params().value(i) == ck.net.params().value(i));
    CHECK(back.adam.first_moments()[i] == ck.adam.first_moments()[i]);
    CHECK(back.adam.second_moments()[i] == ck.adam.second_moments()[i]);
  }

  Json j = read_json_file(p);
  j["params"]["head_label.w"]["shape"] = {3, 3};
  write(dir.path / "bad.json", j.dump());
  CHECK_THROWS_AS(load_checkpoint(dir.path / "bad.json"), ParseError);
  j = read_json_file(p);
  j["params"].erase("sem_embed");
  write(dir.path / "bad.json", j.dump());
  CHECK_THROWS_AS(load_checkpoint(dir.path / "bad.json"), ParseError);
  j = read_json_file(p);
  j["format"] = "something-else";
  write(dir.path / "bad.json", j.dump());
  CHECK_THROWS_AS(load_checkpoint(dir.path / "bad.json"), ParseError);
}

TEST_CASE("svg rendering") {
  CHECK(label_hue(0, 3) == 0.0);
  CHECK(label_hue(1, 3) == 120.0);
  CHECK(label_hue(2, 3) == 240.0);
  CHECK_THROWS_AS(label_hue(3, 3), InvalidInput);
  const SceneLayout s = sample_scene_layout();
  const std::string a = render_svg(s, kVocab), b = render_svg(s, kVocab);
  CHECK(a == b);
  CHECK(a.find("hsl(0.000,70%,55%)") != std::string::npos);
  CHECK(a.find("hsl(180.000,70%,55%)") != std::string::npos);
  CHECK(a.find(">chair<") != std::string::npos);
  SceneLayout bare = s;
  bare.objects.clear();
  const std::string e = render_svg(bare, kVocab);
  CHECK(e.find("class=\"floor\"") != std::string::npos);
  CHECK(e.find("class=\"object\"") == std::string::npos);
}
