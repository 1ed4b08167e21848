// mixdiff command line: datasets, training, sampling, evaluation, rendering.
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixdiff/config.hpp"
#include "mixdiff/errors.hpp"
#include "mixdiff/io.hpp"
#include "mixdiff/metrics.hpp"
#include "mixdiff/render.hpp"
#include "mixdiff/rng.hpp"
#include "mixdiff/sampler.hpp"
#include "mixdiff/toyrooms.hpp"
#include "mixdiff/training.hpp"

using namespace mixdiff;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig c = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (g.threads) c.threads = *g.threads;
  return c;
}

std::string file_name(const char* prefix, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05zu%s", prefix, i, ext);
  return buf;
}

fs::path out_or(const Globals& g, const std::string& fallback) { return g.out.empty() ? fs::path(fallback) : fs::path(g.out); }

// ---- gen-data

struct GenArgs {
  std::optional<std::string> room_type;
  std::optional<int> count;
  std::optional<double> split_ratio;
  bool rotate_aug = false;
};

int cmd_gen_data(const Globals& g, const GenArgs& a) {
  RunConfig c = resolve_config(g);
  if (a.room_type) c.room_type = *a.room_type;
  if (a.count) c.count = *a.count;
  if (a.split_ratio) c.split_ratio = *a.split_ratio;
  if (a.rotate_aug) c.rotate_aug = true;
  c.validate();
  ToyRoomSpec spec = ToyRoomSpec::named(c.room_type);
  spec.rotate_aug = c.rotate_aug;
  const ToyDataset ds = generate(spec, c.count, c.seed);
  const fs::path dir = out_or(g, c.data_dir);
  const Manifest m = save_dataset(dir, ds, c.seed, c.split_ratio, config_hash(c));
  std::cout << "wrote " << ds.scenes.size() << " " << spec.name() << " scenes (" << m.train.size() << " train, "
            << m.test.size() << " test, " << ds.skipped << " skipped) to " << dir.string() << "\n";
  return 0;
}

// ---- train

struct TrainArgs {
  std::string data;
  std::string resume;
  std::optional<long> max_steps;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  RunConfig c;
  Checkpoint ck;
  if (!a.resume.empty()) {
    ck = load_checkpoint(a.resume);
    c = ck.config;
    if (!g.config.empty()) c = run_config_from_json(read_json_file(g.config), c);
    if (g.seed) c.seed = *g.seed;
    if (g.threads) c.threads = *g.threads;
  } else {
    c = resolve_config(g);
  }
  if (!a.data.empty()) c.data_dir = a.data;
  if (a.max_steps) c.max_steps = *a.max_steps;
  c.validate();

  const Dataset data = load_dataset(c.data_dir);
  const Manifest& m = data.manifest;
  if (data.train.empty()) throw InsufficientData("training split is empty");
  if (a.resume.empty()) {
    ck.config = c;
    ck.vocab = m.vocab;
    ck.n_slots = m.n_slots;
    ck.stats = m.stats;
    ck.label_dist = m.label_dist;
    ck.net = Denoiser(c.model, m.vocab.num_labels(), m.n_slots, c.seed);
    ck.adam = Adam(c.adam(), ck.net.params());
  } else {
    if (!(ck.vocab == m.vocab) || ck.n_slots != m.n_slots) throw InvalidInput("checkpoint does not match the dataset");
    ck.config = c;
  }
  const MixedSchedule sched = c.schedule(ck.vocab.num_labels());
  std::vector<EncodedScene> enc;
  for (const auto& s : data.train) enc.push_back(encode_scene(s, ck.vocab, ck.stats));

  TrainOptions opts;
  opts.batch_size = c.batch_size;
  opts.max_steps = c.max_steps;
  opts.lambda = c.lambda;
  opts.seed = c.seed;
  opts.threads = c.threads;
  Trainer trainer(ck.net, ck.adam, sched, opts, std::move(enc));

  const fs::path dir = out_or(g, ".");
  fs::create_directories(dir);
  const fs::path ck_path = dir / "checkpoint.json";
  std::string csv = "step,total,l_ddpm,l_d3pm_vb,l_d3pm_aux,lr\n";
  const auto t0 = std::chrono::steady_clock::now();
  try {
    trainer.run([&](long step, const MixedLossReport& r) {
      char line[256];
      std::snprintf(line, sizeof line, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g\n", step + 1, r.total, r.l_ddpm,
                    r.l_d3pm_vb, r.l_d3pm_aux, ck.adam.current_lr());
      csv += line;
      if (c.log_every > 0 && (step + 1) % c.log_every == 0) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::fprintf(stderr, "step %ld  loss %.5f  (ddpm %.5f vb %.5f aux %.5f)  %.1fs\n", step + 1, r.total,
                     r.l_ddpm, r.l_d3pm_vb, r.l_d3pm_aux, secs);
      }
      if (c.checkpoint_every > 0 && (step + 1) % c.checkpoint_every == 0) save_checkpoint(ck_path, ck);
    });
  } catch (const TrainingDiverged& e) {
    write_text_file(dir / "loss.csv", csv);
    std::cerr << "training aborted at step " << ck.adam.steps() + 1 << ": " << e.what() << "\n";
    return 3;
  }
  write_text_file(dir / "loss.csv", csv);
  save_checkpoint(ck_path, ck);
  std::cout << "trained to step " << ck.adam.steps() << "; checkpoint " << ck_path.string() << "\n";
  return 0;
}

// ---- sample / complete / arrange

struct SampleArgs {
  std::string checkpoint;
  std::string floors;
  std::string constraints;
  std::optional<int> n;
};

enum class Mode { Sample, Complete, Arrange };

std::vector<FloorPlan> floors_for(const SampleArgs& a, const Checkpoint& ck) {
  std::vector<FloorPlan> floors;
  if (!a.floors.empty()) {
    for (auto& s : load_scenes(a.floors, ck.vocab)) floors.push_back(s.floor);
  } else {
    const Dataset d = load_dataset(ck.config.data_dir);
    for (const auto& s : d.test.empty() ? d.train : d.test) floors.push_back(s.floor);
  }
  if (floors.empty()) throw InsufficientData("no floor plans found");
  return floors;
}

int cmd_sample(const Globals& g, const SampleArgs& a, Mode mode) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  RunConfig c = ck.config;
  if (!g.config.empty()) c = run_config_from_json(read_json_file(g.config), c);
  if (g.seed) c.seed = *g.seed;
  if (g.threads) c.threads = *g.threads;
  if (a.n) c.num_samples = *a.n;
  c.validate();
  const MixedSchedule sched = c.schedule(ck.vocab.num_labels());
  const SamplingContext ctx{&sched, &ck.vocab, &ck.stats};

  std::optional<MaskSpec> mask;
  if (mode != Mode::Sample) {
    if (a.constraints.empty()) throw InvalidInput("--constraints is required");
    mask = load_constraints(a.constraints, ck.vocab);
    if (mode == Mode::Arrange) {
      for (auto& s : mask->slots) {
        if (!s.constrained()) s.label = ck.vocab.empty_index();
      }
      mask->slots.resize(static_cast<std::size_t>(ck.n_slots), [&] {
        SlotMask e;
        e.label = ck.vocab.empty_index();
        return e;
      }());
    }
    mask->validate(ck.vocab, ck.n_slots);
  }

  const std::vector<FloorPlan> floors = floors_for(a, ck);
  std::vector<const FloorPlan*> chosen;
  for (int i = 0; i < c.num_samples; ++i) chosen.push_back(&floors[static_cast<std::size_t>(i) % floors.size()]);
  const auto scenes = sample_many(ck.net, chosen, ck.n_slots, ctx, c.seed, c.threads, mask ? &*mask : nullptr,
                                  c.room_type);
  const fs::path dir = out_or(g, "samples");
  const std::string hash = config_hash(c);
  for (std::size_t i = 0; i < scenes.size(); ++i) save_scene(dir / file_name("sample", i, ".json"), scenes[i], ck.vocab, hash);
  std::cout << "wrote " << scenes.size() << " scenes to " << dir.string() << "\n";
  return 0;
}

// ---- eval

struct EvalArgs {
  std::string scenes;
  std::string manifest;
};

Json report_json(const MetricsReport& r, const std::string& hash) {
  auto opt = [](bool ok, double v) { return ok ? Json(v) : Json(nullptr); };
  return Json{{"n_scenes", r.n_scenes},
              {"kl_labels", r.kl_labels},
              {"obj_mean", r.obj_mean},
              {"oob_pct", r.oob_pct},
              {"iou_pct", r.iou_pct},
              {"pos_std", opt(r.diversity_valid, r.pos_std)},
              {"pos_std_ib", opt(r.diversity_ib_valid, r.pos_std_ib)},
              {"size_std", opt(r.diversity_valid, r.size_std)},
              {"size_std_ib", opt(r.diversity_ib_valid, r.size_std_ib)},
              {"fid", nullptr},
              {"kid", nullptr},
              {"ca_pct", nullptr},
              {"config_hash", hash}};
}

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const RunConfig c = resolve_config(g);
  fs::path mpath = a.manifest.empty() ? fs::path(c.data_dir) / "manifest.json" : fs::path(a.manifest);
  if (fs::is_directory(mpath)) mpath /= "manifest.json";
  Manifest m;
  try {
    m = manifest_from_json(read_json_file(mpath));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(mpath.string() + ": " + e.what());
  }
  const auto scenes = load_scenes(a.scenes, m.vocab);
  const MetricsReport r = compute_metrics(scenes, m.label_dist, m.vocab);
  const Json j = report_json(r, config_hash(c));
  if (!g.out.empty()) write_text_file(g.out, j.dump(2) + "\n");
  std::printf("%-12s %12s\n", "metric", "value");
  std::printf("%-12s %12d\n", "n_scenes", r.n_scenes);
  std::printf("%-12s %12.5f\n", "kl_labels", r.kl_labels);
  std::printf("%-12s %12.5f\n", "obj_mean", r.obj_mean);
  std::printf("%-12s %12.3f\n", "oob_pct", r.oob_pct);
  std::printf("%-12s %12.3f\n", "iou_pct", r.iou_pct);
  std::printf("%-12s %12.4f\n", "pos_std", r.pos_std);
  std::printf("%-12s %12.4f\n", "pos_std_ib", r.pos_std_ib);
  std::printf("%-12s %12.4f\n", "size_std", r.size_std);
  std::printf("%-12s %12.4f\n", "size_std_ib", r.size_std_ib);
  return 0;
}

// ---- render

struct RenderArgs {
  std::vector<std::string> scenes;
  std::string manifest;
  std::string checkpoint;
};

LabelVocab infer_vocab(const std::vector<std::string>& paths) {
  std::set<std::string> labels;
  for (const auto& p : paths) {
    std::vector<fs::path> files;
    if (fs::is_directory(p)) {
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.path().extension() == ".json" && e.path().filename() != "manifest.json") files.push_back(e.path());
      }
    } else {
      files.emplace_back(p);
    }
    for (const auto& f : files) {
      const Json j = read_json_file(f);
      for (const auto& o : j.at("objects")) labels.insert(o.at("label").get<std::string>());
    }
  }
  labels.erase("empty");
  std::vector<std::string> names(labels.begin(), labels.end());
  names.push_back("empty");
  return LabelVocab(names);
}

int cmd_render(const Globals& g, const RenderArgs& a) {
  LabelVocab vocab;
  if (!a.manifest.empty()) {
    fs::path mp = a.manifest;
    if (fs::is_directory(mp)) mp /= "manifest.json";
    vocab = manifest_from_json(read_json_file(mp)).vocab;
  } else if (!a.checkpoint.empty()) {
    vocab = load_checkpoint(a.checkpoint).vocab;
  } else {
    vocab = infer_vocab(a.scenes);
  }
  const fs::path dir = out_or(g, "renders");
  fs::create_directories(dir);
  std::size_t n = 0;
  for (const auto& p : a.scenes) {
    std::vector<std::pair<std::string, SceneLayout>> items;
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.path().extension() == ".json" && e.path().filename() != "manifest.json") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        for (auto& s : load_scene_file(f, vocab)) items.emplace_back(f.stem().string(), std::move(s));
      }
    } else {
      auto scenes = load_scene_file(p, vocab);
      for (std::size_t i = 0; i < scenes.size(); ++i) {
        const std::string stem = fs::path(p).stem().string() + (scenes.size() > 1 ? "_" + std::to_string(i) : "");
        items.emplace_back(stem, std::move(scenes[i]));
      }
    }
    for (const auto& [stem, s] : items) {
      write_text_file(dir / (stem + ".svg"), render_svg(s, vocab));
      ++n;
    }
  }
  std::cout << "rendered " << n << " scenes to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixdiff: mixed discrete-continuous diffusion for floor-conditioned scene layouts"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--out", g.out, "Output path");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "Generate a toy room dataset");
  c_gen->add_option("--room-type", gen.room_type, "toy_dining or toy_bedroom");
  c_gen->add_option("--count", gen.count, "Number of scenes");
  c_gen->add_option("--split-ratio", gen.split_ratio, "Training share");
  c_gen->add_flag("--rotate-aug", gen.rotate_aug, "Rotate scenes by random multiples of 90 degrees");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a denoiser");
  c_train->add_option("--data", tr.data, "Dataset directory");
  c_train->add_option("--resume", tr.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  c_train->add_option("--max-steps", tr.max_steps, "Total optimisation steps");

  SampleArgs sa;
  auto add_sample_opts = [&](CLI::App* sub, bool constraints) {
    sub->add_option("--checkpoint", sa.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    sub->add_option("--floors", sa.floors, "Scene file or directory supplying floor plans");
    sub->add_option("-n,--num", sa.n, "Number of scenes");
    if (constraints) sub->add_option("--constraints", sa.constraints, "Constraint file")->required()->check(CLI::ExistingFile);
  };
  auto* c_sample = app.add_subcommand("sample", "Synthesise scenes for floor plans");
  add_sample_opts(c_sample, false);
  auto* c_complete = app.add_subcommand("complete", "Complete scenes around given objects");
  add_sample_opts(c_complete, true);
  auto* c_arrange = app.add_subcommand("arrange", "Arrange given objects (labels and sizes)");
  add_sample_opts(c_arrange, true);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Compute layout metrics");
  c_eval->add_option("--scenes", ev.scenes, "Scene file or directory")->required();
  c_eval->add_option("--manifest", ev.manifest, "Reference dataset manifest or directory");

  RenderArgs re;
  auto* c_render = app.add_subcommand("render", "Render scenes as SVG");
  c_render->add_option("scenes", re.scenes, "Scene files or directories")->required();
  c_render->add_option("--manifest", re.manifest, "Dataset manifest giving the label vocabulary");
  c_render->add_option("--checkpoint", re.checkpoint, "Checkpoint giving the label vocabulary");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_gen->parsed()) return cmd_gen_data(g, gen);
    if (c_train->parsed()) return cmd_train(g, tr);
    if (c_sample->parsed()) return cmd_sample(g, sa, Mode::Sample);
    if (c_complete->parsed()) return cmd_sample(g, sa, Mode::Complete);
    if (c_arrange->parsed()) return cmd_sample(g, sa, Mode::Arrange);
    if (c_eval->parsed()) return cmd_eval(g, ev);
    if (c_render->parsed()) return cmd_render(g, re);
  } catch (const InvalidInput& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
