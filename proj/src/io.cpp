#include "mixdiff/io.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mixdiff/errors.hpp"

namespace mixdiff {

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

Json parse_text(const std::string& text, const std::string& where, int line0 = 1) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const int line = line0 - 1 + line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ParseError(where + ":" + std::to_string(line) + ": " + e.what());
  }
}

Vec3 vec3_field(const Json& j, const char* key) {
  const Json& a = j.at(key);
  if (!a.is_array() || a.size() != 3) throw ParseError(std::string("\"") + key + "\" must be an array of 3 numbers");
  return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
}

Json vec_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vec_from(const Json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

Json matrix_json(const RowMatrix& m) {
  Json data = Json::array();
  for (Eigen::Index i = 0; i < m.size(); ++i) data.push_back(m.data()[i]);
  return Json{{"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}};
}

RowMatrix matrix_from(const Json& j, const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  const auto r = j.at("shape").at(0).get<Eigen::Index>();
  const auto c = j.at("shape").at(1).get<Eigen::Index>();
  const Json& data = j.at("data");
  if (r != rows || c != cols || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw ParseError("tensor \"" + name + "\" has shape " + std::to_string(r) + "x" + std::to_string(c) +
                     ", model expects " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = data[static_cast<std::size_t>(i)].get<double>();
  return m;
}

// Re-raise a library error with a location prefix, keeping its type.
[[noreturn]] void rethrow_with(const std::string& where) {
  try {
    throw;
  } catch (const UnknownLabel& e) {
    throw UnknownLabel(where + ": " + e.what());
  } catch (const InvalidFloor& e) {
    throw InvalidFloor(where + ": " + e.what());
  } catch (const InvalidObject& e) {
    throw InvalidObject(where + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(where + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": " + e.what());
  }
}

}  // namespace

Json scene_to_json(const SceneLayout& scene, const LabelVocab& vocab) {
  Json poly = Json::array();
  for (const auto& p : scene.floor.polygon()) poly.push_back({p.x(), p.y()});
  Json objs = Json::array();
  for (const auto& o : scene.objects) {
    if (o.label == vocab.empty_index()) continue;
    objs.push_back({{"label", vocab.name(o.label)},
                    {"pos", {o.pos.x(), o.pos.y(), o.pos.z()}},
                    {"size", {o.size.x(), o.size.y(), o.size.z()}},
                    {"yaw_rad", o.yaw()}});
  }
  return Json{{"room_type", scene.room_type}, {"floor", {{"polygon", poly}}}, {"objects", objs}};
}

SceneLayout scene_from_json(const Json& j, const LabelVocab& vocab) {
  if (!j.is_object()) throw ParseError("scene must be a JSON object");
  SceneLayout s;
  s.room_type = j.value("room_type", std::string());
  Polygon poly;
  for (const auto& p : j.at("floor").at("polygon")) {
    if (!p.is_array() || p.size() != 2) throw ParseError("polygon vertices must be [x, y] pairs");
    poly.emplace_back(p[0].get<double>(), p[1].get<double>());
  }
  s.floor = FloorPlan(std::move(poly));
  for (const auto& jo : j.at("objects")) {
    const int label = vocab.index_of(jo.at("label").get<std::string>());
    ObjectInstance o;
    if (label == vocab.empty_index()) {
      o = ObjectInstance::empty(label);
    } else {
      o = ObjectInstance::make(label, vec3_field(jo, "pos"), vec3_field(jo, "size"), jo.at("yaw_rad").get<double>());
    }
    validate_object(o, vocab);
    s.objects.push_back(o);
  }
  return s;
}

void save_scene(const fs::path& path, const SceneLayout& scene, const LabelVocab& vocab,
                const std::string& config_hash) {
  Json j = scene_to_json(scene, vocab);
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  write_text_file(path, j.dump(2) + "\n");
}

std::vector<SceneLayout> load_scene_file(const fs::path& path, const LabelVocab& vocab) {
  const std::string text = read_text(path);
  const std::string where = path.string();
  std::vector<SceneLayout> out;
  auto locate = [&](int line0, const std::string& chunk, const std::exception& e) {
    // Point label errors at the line naming the label.
    int line = line0;
    const std::string msg = e.what();
    const auto q0 = msg.find('"');
    const auto q1 = q0 == std::string::npos ? q0 : msg.find('"', q0 + 1);
    if (dynamic_cast<const UnknownLabel*>(&e) && q1 != std::string::npos) {
      const auto pos = chunk.find(msg.substr(q0, q1 - q0 + 1));
      if (pos != std::string::npos) line = line0 - 1 + line_of_offset(chunk, pos);
    }
    return where + ":" + std::to_string(line);
  };
  bool ndjson = path.extension() == ".ndjson";
  if (!ndjson && !Json::accept(text)) {
    // Several documents, one per line, also count as NDJSON.
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos) {
      const auto eol = text.find('\n', first);
      ndjson = eol != std::string::npos && Json::accept(text.substr(first, eol - first));
    }
  }
  if (!ndjson) {
    const Json j = parse_text(text, where);
    try {
      out.push_back(scene_from_json(j, vocab));
    } catch (const std::exception& e) {
      const std::string loc = locate(1, text, e);
      rethrow_with(loc);
    }
    return out;
  }
  std::istringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const Json j = parse_text(line, where, lineno);
    try {
      out.push_back(scene_from_json(j, vocab));
    } catch (const std::exception& e) {
      const std::string loc = locate(lineno, line, e);
      rethrow_with(loc);
    }
  }
  return out;
}

std::vector<SceneLayout> load_scenes(const fs::path& path, const LabelVocab& vocab) {
  if (!fs::exists(path)) throw IoError(path.string() + " does not exist");
  if (!fs::is_directory(path)) return load_scene_file(path, vocab);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".json" || ext == ".ndjson") && e.path().filename() != "manifest.json") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<SceneLayout> out;
  for (const auto& f : files) {
    auto s = load_scene_file(f, vocab);
    out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  return out;
}

MaskSpec constraints_from_json(const Json& j, const LabelVocab& vocab) {
  if (!j.is_array()) throw ParseError("constraint file must hold a JSON array");
  MaskSpec m;
  std::vector<bool> seen;
  for (const auto& c : j) {
    const int slot = c.at("slot").get<int>();
    if (slot < 0) throw ParseError("negative slot index");
    if (static_cast<std::size_t>(slot) >= m.slots.size()) {
      m.slots.resize(static_cast<std::size_t>(slot) + 1);
      seen.resize(m.slots.size(), false);
    }
    if (seen[static_cast<std::size_t>(slot)]) throw ParseError("slot " + std::to_string(slot) + " listed twice");
    seen[static_cast<std::size_t>(slot)] = true;
    SlotMask& s = m.slots[static_cast<std::size_t>(slot)];
    for (const auto& [key, val] : c.items()) {
      if (key != "slot" && key != "label" && key != "pos" && key != "size" && key != "yaw_rad") {
        throw ParseError("unknown constraint field \"" + key + "\"");
      }
    }
    if (c.contains("label")) s.label = vocab.index_of(c["label"].get<std::string>());
    if (c.contains("pos")) {
      s.geom.segment<3>(0) = vec3_field(c, "pos");
      for (int k = 0; k < 3; ++k) s.geom_known[static_cast<std::size_t>(k)] = true;
    }
    if (c.contains("size")) {
      s.geom.segment<3>(3) = vec3_field(c, "size");
      for (int k = 3; k < 6; ++k) s.geom_known[static_cast<std::size_t>(k)] = true;
    }
    if (c.contains("yaw_rad")) {
      const double yaw = c["yaw_rad"].get<double>();
      s.geom(6) = std::cos(yaw);
      s.geom(7) = std::sin(yaw);
      s.geom_known[6] = s.geom_known[7] = true;
    }
  }
  return m;
}

MaskSpec load_constraints(const fs::path& path, const LabelVocab& vocab) {
  const Json j = read_json_file(path);
  try {
    return constraints_from_json(j, vocab);
  } catch (const std::exception&) {
    rethrow_with(path.string());
  }
}

Json manifest_to_json(const Manifest& m) {
  return Json{{"format", "mixdiff-dataset"},
              {"version", 1},
              {"room_type", m.spec.name()},
              {"spec",
               {{"min_side", m.spec.min_side},
                {"max_side", m.spec.max_side},
                {"l_shape_prob", m.spec.l_shape_prob},
                {"wardrobe_prob", m.spec.wardrobe_prob},
                {"rotate_aug", m.spec.rotate_aug}}},
              {"vocab", m.vocab.names()},
              {"n_slots", m.n_slots},
              {"stats", {{"offset", vec_json(m.stats.offset)}, {"scale", vec_json(m.stats.scale)}}},
              {"label_distribution", vec_json(m.label_dist)},
              {"seed", m.seed},
              {"count", m.count},
              {"skipped", m.skipped},
              {"split", {{"ratio", m.split_ratio}, {"train", m.train}, {"test", m.test}}},
              {"config_hash", m.config_hash}};
}

Manifest manifest_from_json(const Json& j) {
  Manifest m;
  m.spec = ToyRoomSpec::named(j.at("room_type").get<std::string>());
  const Json& sp = j.at("spec");
  m.spec.min_side = sp.at("min_side").get<double>();
  m.spec.max_side = sp.at("max_side").get<double>();
  m.spec.l_shape_prob = sp.at("l_shape_prob").get<double>();
  m.spec.wardrobe_prob = sp.at("wardrobe_prob").get<double>();
  m.spec.rotate_aug = sp.at("rotate_aug").get<bool>();
  m.vocab = LabelVocab(j.at("vocab").get<std::vector<std::string>>());
  m.n_slots = j.at("n_slots").get<int>();
  const Eigen::VectorXd off = vec_from(j.at("stats").at("offset"));
  const Eigen::VectorXd sc = vec_from(j.at("stats").at("scale"));
  if (off.size() != kGeomDim || sc.size() != kGeomDim) throw ParseError("stats must have 8 entries");
  m.stats.offset = off;
  m.stats.scale = sc;
  m.stats.validate();
  m.label_dist = vec_from(j.at("label_distribution"));
  m.seed = j.at("seed").get<std::uint64_t>();
  m.count = j.at("count").get<int>();
  m.skipped = j.value("skipped", 0);
  m.split_ratio = j.at("split").at("ratio").get<double>();
  m.train = j.at("split").at("train").get<std::vector<std::string>>();
  m.test = j.at("split").at("test").get<std::vector<std::string>>();
  m.config_hash = j.value("config_hash", std::string());
  return m;
}

Manifest save_dataset(const fs::path& dir, const ToyDataset& ds, std::uint64_t seed, double split_ratio,
                      const std::string& config_hash) {
  const Split split = split_indices(ds.scenes.size(), seed, split_ratio);
  Manifest m;
  m.spec = ds.spec;
  m.vocab = ds.vocab;
  m.n_slots = ds.n_slots;
  m.label_dist = ds.label_dist;
  m.seed = seed;
  m.count = static_cast<int>(ds.scenes.size()) + ds.skipped;
  m.skipped = ds.skipped;
  m.split_ratio = split_ratio;
  m.config_hash = config_hash;
  std::vector<SceneLayout> train;
  for (std::size_t i : split.train) train.push_back(ds.scenes[i]);
  m.stats = compute_norm_stats(train.empty() ? ds.scenes : train, ds.vocab);

  std::error_code ec;
  fs::create_directories(dir / "scenes", ec);
  if (ec) throw IoError("cannot create " + (dir / "scenes").string() + ": " + ec.message());
  auto name = [](std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%05zu.json", i);
    return std::string(buf);
  };
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) save_scene(dir / "scenes" / name(i), ds.scenes[i], ds.vocab);
  for (std::size_t i : split.train) m.train.push_back(name(i));
  for (std::size_t i : split.test) m.test.push_back(name(i));
  write_text_file(dir / "manifest.json", manifest_to_json(m).dump(2) + "\n");
  return m;
}

Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  const fs::path mpath = dir / "manifest.json";
  try {
    d.manifest = manifest_from_json(read_json_file(mpath));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(mpath.string() + ": " + e.what());
  }
  const Manifest& m = d.manifest;
  auto load_list = [&](const std::vector<std::string>& names, std::vector<SceneLayout>& out) {
    for (const auto& n : names) {
      for (auto& s : load_scene_file(dir / "scenes" / n, m.vocab)) {
        out.push_back(pad_scene(s, m.n_slots, m.vocab.empty_index()));
      }
    }
  };
  load_list(m.train, d.train);
  load_list(m.test, d.test);
  return d;
}

MixedSchedule RunConfig::schedule(int num_classes) const {
  MixedSchedule s;
  s.continuous = ContinuousSchedule::linear(diffusion_steps, beta_start, beta_end);
  MaskReplaceParams p;
  p.keep_start = keep_start;
  p.keep_end = keep_end;
  p.mask_start = mask_start;
  p.mask_end = mask_end;
  s.discrete = DiscreteSchedule::mask_replace(diffusion_steps, num_classes, p);
  s.variance = parse_variance_choice(variance);
  s.validate();
  return s;
}

AdamConfig RunConfig::adam() const {
  AdamConfig a;
  a.lr = lr;
  a.beta1 = adam_beta1;
  a.beta2 = adam_beta2;
  a.eps = adam_eps;
  a.decay_factor = lr_decay;
  a.decay_interval = lr_decay_interval;
  return a;
}

void RunConfig::validate() const {
  if (count < 1) throw InvalidInput("count must be at least 1");
  if (!(split_ratio > 0.0 && split_ratio <= 1.0)) throw InvalidInput("split_ratio must lie in (0, 1]");
  if (diffusion_steps < 1) throw InvalidInput("diffusion_steps must be positive");
  if (batch_size < 1) throw InvalidInput("batch_size must be positive");
  if (max_steps < 0) throw InvalidInput("max_steps must be non-negative");
  if (!(lr >= 0.0)) throw InvalidInput("lr must be non-negative");
  if (!(lambda >= 0.0)) throw InvalidInput("lambda must be non-negative");
  if (threads < 1) throw InvalidInput("threads must be positive");
  if (num_samples < 1) throw InvalidInput("num_samples must be positive");
  (void)parse_variance_choice(variance);
  (void)ToyRoomSpec::named(room_type);
  model.validate();
}

#define MIXDIFF_CONFIG_FIELDS(X)  \
  X(room_type)                    \
  X(count)                        \
  X(split_ratio)                  \
  X(rotate_aug)                   \
  X(data_dir)                     \
  X(diffusion_steps)              \
  X(beta_start)                   \
  X(beta_end)                     \
  X(variance)                     \
  X(keep_start)                   \
  X(keep_end)                     \
  X(mask_start)                   \
  X(mask_end)                     \
  X(batch_size)                   \
  X(max_steps)                    \
  X(lr)                           \
  X(adam_beta1)                   \
  X(adam_beta2)                   \
  X(adam_eps)                     \
  X(lr_decay)                     \
  X(lr_decay_interval)            \
  X(lambda)                       \
  X(checkpoint_every)             \
  X(log_every)                    \
  X(num_samples)                  \
  X(seed)                         \
  X(threads)

#define MIXDIFF_MODEL_FIELDS(X) \
  X(n_blocks)                   \
  X(d_model)                    \
  X(n_heads)                    \
  X(d_ff)                       \
  X(d_floor_feat)               \
  X(d_index_embed)              \
  X(dropout)                    \
  X(geo_hidden)                 \
  X(pointnet_hidden)

Json run_config_to_json(const RunConfig& c) {
  Json j;
#define X(f) j[#f] = c.f;
  MIXDIFF_CONFIG_FIELDS(X)
#undef X
#define X(f) j[#f] = c.model.f;
  MIXDIFF_MODEL_FIELDS(X)
#undef X
  return j;
}

RunConfig run_config_from_json(const Json& j, const RunConfig& base) {
  if (!j.is_object()) throw ParseError("config must be a JSON object");
  RunConfig c = base;
  for (const auto& [key, val] : j.items()) {
    bool known = false;
    try {
#define X(f)                         \
  if (key == #f) {                   \
    val.get_to(c.f);                 \
    known = true;                    \
  }
      MIXDIFF_CONFIG_FIELDS(X)
#undef X
#define X(f)                         \
  if (key == #f) {                   \
    val.get_to(c.model.f);           \
    known = true;                    \
  }
      MIXDIFF_MODEL_FIELDS(X)
#undef X
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("config key \"" + key + "\": " + e.what());
    }
    if (!known) throw ParseError("unknown config key \"" + key + "\"");
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  try {
    return run_config_from_json(read_json_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string config_hash(const RunConfig& c) {
  const std::string s = run_config_to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  const ad::ParamStore& ps = ck.net.params();
  Json params = Json::object();
  Json m = Json::object();
  Json v = Json::object();
  const bool has_moments = ck.adam.first_moments().size() == ps.count();
  for (std::size_t i = 0; i < ps.count(); ++i) {
    params[ps.name(i)] = matrix_json(ps.value(i));
    if (has_moments) {
      m[ps.name(i)] = matrix_json(ck.adam.first_moments()[i]);
      v[ps.name(i)] = matrix_json(ck.adam.second_moments()[i]);
    }
  }
  Json j{{"format", "mixdiff-checkpoint"},
         {"version", 1},
         {"config", run_config_to_json(ck.config)},
         {"config_hash", config_hash(ck.config)},
         {"vocab", ck.vocab.names()},
         {"n_slots", ck.n_slots},
         {"stats", {{"offset", vec_json(ck.stats.offset)}, {"scale", vec_json(ck.stats.scale)}}},
         {"label_distribution", vec_json(ck.label_dist)},
         {"step", ck.adam.steps()},
         {"params", std::move(params)},
         {"adam_m", std::move(m)},
         {"adam_v", std::move(v)}};
  const fs::path tmp = path.string() + ".tmp";
  write_text_file(tmp, j.dump() + "\n");
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot write " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  const Json j = read_json_file(path);
  try {
    if (j.value("format", std::string()) != "mixdiff-checkpoint") throw ParseError("not a mixdiff checkpoint");
    if (j.at("version").get<int>() != 1) throw ParseError("unsupported checkpoint version");
    Checkpoint ck;
    ck.config = run_config_from_json(j.at("config"));
    ck.config.model.validate();
    ck.vocab = LabelVocab(j.at("vocab").get<std::vector<std::string>>());
    ck.n_slots = j.at("n_slots").get<int>();
    ck.stats.offset = vec_from(j.at("stats").at("offset"));
    ck.stats.scale = vec_from(j.at("stats").at("scale"));
    ck.stats.validate();
    ck.label_dist = vec_from(j.at("label_distribution"));
    ck.net = Denoiser(ck.config.model, ck.vocab.num_labels(), ck.n_slots, 0);
    ad::ParamStore& ps = ck.net.params();
    const Json& params = j.at("params");
    if (params.size() != ps.count()) {
      throw ParseError("checkpoint holds " + std::to_string(params.size()) + " tensors, model expects " +
                       std::to_string(ps.count()));
    }
    ck.adam = Adam(ck.config.adam(), ps);
    const Json& jm = j.at("adam_m");
    const Json& jv = j.at("adam_v");
    for (std::size_t i = 0; i < ps.count(); ++i) {
      const std::string& name = ps.name(i);
      if (!params.contains(name)) throw ParseError("missing tensor \"" + name + "\"");
      RowMatrix& val = ps.value(i);
      val = matrix_from(params.at(name), name, val.rows(), val.cols());
      if (jm.contains(name)) {
        ck.adam.first_moments()[i] = matrix_from(jm.at(name), name, val.rows(), val.cols());
        ck.adam.second_moments()[i] = matrix_from(jv.at(name), name, val.rows(), val.cols());
      }
    }
    ck.adam.set_steps(j.at("step").get<long>());
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

Json read_json_file(const fs::path& path) { return parse_text(read_text(path), path.string()); }

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace mixdiff
