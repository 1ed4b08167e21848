#include "mixdiff/toyrooms.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>

#include "mixdiff/errors.hpp"
#include "mixdiff/geometry.hpp"
#include "mixdiff/rng.hpp"

namespace mixdiff {

namespace {

constexpr int kMaxAttempts = 100;
constexpr double kWallGap = 0.03;
constexpr double kContainMargin = 0.01;
constexpr double kObjectGap = 0.02;

struct FloorDraw {
  Polygon poly;
  Vec2 hub;  // centre of the largest axis-aligned arm
};

FloorDraw draw_floor(const ToyRoomSpec& spec, Rng& rng) {
  const double W = rng.uniform(spec.min_side, spec.max_side);
  const double H = rng.uniform(spec.min_side, spec.max_side);
  const double hw = W / 2, hh = H / 2;
  FloorDraw f;
  if (rng.uniform() >= spec.l_shape_prob) {
    f.poly = {{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}};
    f.hub = Vec2::Zero();
    return f;
  }
  const double cw = W * rng.uniform(0.25, 0.45);
  const double ch = H * rng.uniform(0.25, 0.45);
  const int corner = rng.uniform_int(0, 3);
  // Cut the top-right corner, then mirror into place.
  f.poly = {{-hw, -hh}, {hw, -hh}, {hw, hh - ch}, {hw - cw, hh - ch}, {hw - cw, hh}, {-hw, hh}};
  const double area_a = W * (H - ch);
  const double area_b = (W - cw) * H;
  f.hub = area_a >= area_b ? Vec2(0.0, -ch / 2) : Vec2(-cw / 2, 0.0);
  const double sx = (corner & 1) ? -1.0 : 1.0;
  const double sy = (corner & 2) ? -1.0 : 1.0;
  for (auto& p : f.poly) p = Vec2(sx * p.x(), sy * p.y());
  f.hub = Vec2(sx * f.hub.x(), sy * f.hub.y());
  if (sx * sy < 0) std::reverse(f.poly.begin(), f.poly.end());
  return f;
}

class Placer {
 public:
  explicit Placer(const FloorPlan& floor)
      : floor_(floor), shrunk_(geom::offset_polygon(floor.polygon(), -kContainMargin)) {}

  bool fits(const ObjectInstance& o) const {
    const Polygon rect = footprint(o);
    for (const auto& c : rect) {
      if (!geom::point_in_polygon(c, shrunk_)) return false;
    }
    // A reflex vertex poking into the rectangle means it straddles a notch.
    for (const auto& v : floor_.polygon()) {
      if (geom::point_in_polygon(v, rect)) return false;
    }
    const Polygon grown = geom::oriented_rect(o.pos.head<2>(), o.size.x() + kObjectGap, o.size.y() + kObjectGap,
                                              o.angle.x(), o.angle.y());
    for (const auto& other : placed_) {
      if (geom::polygon_area(geom::clip_convex(other, grown)) > 0.0) return false;
    }
    return true;
  }

  void add(const ObjectInstance& o) { placed_.push_back(footprint(o)); }
  void clear() { placed_.clear(); }

 private:
  const FloorPlan& floor_;
  Polygon shrunk_;
  std::vector<Polygon> placed_;
};

double heading(const Vec2& d) { return std::atan2(d.y(), d.x()); }

ObjectInstance on_floor(int label, const Vec2& xy, const Vec3& half, double yaw) {
  return ObjectInstance::make(label, Vec3(xy.x(), xy.y(), half.z()), half, yaw);
}

// Point on a random wall: returns (wall start, direction, inward normal, length).
struct Wall {
  Vec2 a, d, n;
  double len;
};

Wall pick_wall(const Polygon& poly, Rng& rng) {
  const int n = static_cast<int>(poly.size());
  const int i = rng.uniform_int(0, n - 1);
  const Vec2 a = poly[static_cast<std::size_t>(i)];
  const Vec2 b = poly[static_cast<std::size_t>((i + 1) % n)];
  Wall w;
  w.a = a;
  w.len = (b - a).norm();
  w.d = (b - a) / w.len;
  w.n = Vec2(-w.d.y(), w.d.x());
  return w;
}

bool place_dining(const FloorDraw& fd, const FloorPlan& floor, int n_chairs, Rng& rng,
                  std::vector<ObjectInstance>& out) {
  constexpr int kTable = 0, kChair = 1;
  const Vec3 table_half(rng.uniform(0.6, 1.0), rng.uniform(0.4, 0.6), 0.375);
  const Vec3 chair_half(0.22, 0.22, 0.45);
  const double gap = 0.12;
  const double table_yaw = rng.uniform() < 0.5 ? 0.0 : std::numbers::pi / 2;
  const Vec2 centre = fd.hub + Vec2(rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25));
  const double c = std::cos(table_yaw), s = std::sin(table_yaw);
  auto world = [&](const Vec2& l) { return Vec2(centre.x() + c * l.x() - s * l.y(), centre.y() + s * l.x() + c * l.y()); };

  Placer placer(floor);
  out.clear();
  const ObjectInstance table = on_floor(kTable, centre, table_half, table_yaw);
  if (!placer.fits(table)) return false;
  placer.add(table);
  out.push_back(table);

  const double side = table_half.y() + gap + chair_half.x();
  const double end = table_half.x() + gap + chair_half.x();
  std::vector<Vec2> local;
  if (n_chairs == 2) {
    local = {{0.0, side}, {0.0, -side}};
  } else {
    const double hx = table_half.x() / 2;
    local = {{-hx, side}, {hx, side}, {-hx, -side}, {hx, -side}};
    if (n_chairs == 6) {
      local.emplace_back(end, 0.0);
      local.emplace_back(-end, 0.0);
    }
  }
  for (const auto& l : local) {
    // Chairs face the table across the nearer edge.
    const Vec2 fwd = l.y() == 0.0 ? Vec2(-std::copysign(1.0, l.x()), 0.0) : Vec2(0.0, -std::copysign(1.0, l.y()));
    const ObjectInstance chair = on_floor(kChair, world(l), chair_half, table_yaw + heading(fwd));
    if (!placer.fits(chair)) return false;
    placer.add(chair);
    out.push_back(chair);
  }
  return true;
}

bool place_bedroom(const FloorPlan& floor, int n_nightstands, int nightstand_side, bool wardrobe, Rng& rng,
                   std::vector<ObjectInstance>& out) {
  constexpr int kBed = 0, kNightstand = 1, kWardrobe = 2;
  const Vec3 bed_half(rng.uniform(0.95, 1.05), rng.uniform(0.7, 0.9), 0.3);
  const Vec3 ns_half(0.25, 0.25, 0.3);
  const Vec3 wr_half(0.3, rng.uniform(0.6, 0.9), 1.0);
  const double ns_offset = bed_half.y() + 0.05 + ns_half.y();

  Placer placer(floor);
  out.clear();
  const Wall w = pick_wall(floor.polygon(), rng);
  const double along = rng.uniform(0.0, w.len);
  const double yaw = heading(w.n);
  const Vec2 base = w.a + along * w.d;
  const ObjectInstance bed = on_floor(kBed, base + (kWallGap + bed_half.x()) * w.n, bed_half, yaw);
  if (!placer.fits(bed)) return false;
  placer.add(bed);
  out.push_back(bed);
  for (int k = 0; k < n_nightstands; ++k) {
    const double sign = n_nightstands == 2 ? (k == 0 ? -1.0 : 1.0) : (nightstand_side == 0 ? -1.0 : 1.0);
    const ObjectInstance ns =
        on_floor(kNightstand, base + sign * ns_offset * w.d + (kWallGap + ns_half.x()) * w.n, ns_half, yaw);
    if (!placer.fits(ns)) return false;
    placer.add(ns);
    out.push_back(ns);
  }
  if (wardrobe) {
    const Wall w2 = pick_wall(floor.polygon(), rng);
    const double along2 = rng.uniform(0.0, w2.len);
    const ObjectInstance wr =
        on_floor(kWardrobe, w2.a + along2 * w2.d + (kWallGap + wr_half.x()) * w2.n, wr_half, heading(w2.n));
    if (!placer.fits(wr)) return false;
    placer.add(wr);
    out.push_back(wr);
  }
  return true;
}

Vec2 rot90(const Vec2& p, int k) {
  switch (k & 3) {
    case 1: return Vec2(-p.y(), p.x());
    case 2: return Vec2(-p.x(), -p.y());
    case 3: return Vec2(p.y(), -p.x());
    default: return p;
  }
}

SceneLayout rotate_scene(const SceneLayout& s, int k, int empty_label) {
  Polygon poly;
  for (const auto& p : s.floor.polygon()) poly.push_back(rot90(p, k));
  SceneLayout out;
  out.floor = FloorPlan(poly);
  out.room_type = s.room_type;
  for (const auto& o : s.objects) {
    ObjectInstance r = o;
    if (o.label != empty_label) {
      r.pos.head<2>() = rot90(o.pos.head<2>(), k);
      r.angle = rot90(o.angle, k);
    }
    out.objects.push_back(r);
  }
  return out;
}

}  // namespace

ToyRoomSpec ToyRoomSpec::named(const std::string& room_type) {
  ToyRoomSpec s;
  if (room_type == "toy_dining") {
    s.type = ToyRoomType::Dining;
  } else if (room_type == "toy_bedroom") {
    s.type = ToyRoomType::Bedroom;
  } else {
    throw InvalidInput("unknown room type \"" + room_type + "\" (expected toy_dining or toy_bedroom)");
  }
  return s;
}

std::string ToyRoomSpec::name() const { return type == ToyRoomType::Dining ? "toy_dining" : "toy_bedroom"; }

LabelVocab ToyRoomSpec::vocab() const {
  if (type == ToyRoomType::Dining) return LabelVocab({"table", "chair", "empty"});
  return LabelVocab({"bed", "nightstand", "wardrobe", "empty"});
}

int ToyRoomSpec::n_slots() const { return type == ToyRoomType::Dining ? 8 : 6; }

Eigen::VectorXd ToyRoomSpec::label_distribution() const {
  Eigen::VectorXd d;
  if (type == ToyRoomType::Dining) {
    d.resize(2);
    d << 1.0, 4.0;  // chairs average (2 + 4 + 6) / 3
  } else {
    d.resize(3);
    d << 1.0, 1.0, wardrobe_prob;
  }
  return d / d.sum();
}

double ToyRoomSpec::mean_object_count() const {
  return type == ToyRoomType::Dining ? 5.0 : 2.0 + wardrobe_prob;
}

void ToyRoomSpec::validate() const {
  if (!(min_side > 0.0) || !(max_side >= min_side)) throw InvalidInput("floor side range must satisfy 0 < min <= max");
  if (min_side < 3.0) throw InvalidInput("floors smaller than 3 m cannot hold the toy furniture");
  if (l_shape_prob < 0.0 || l_shape_prob > 1.0) throw InvalidInput("l_shape_prob must lie in [0, 1]");
  if (wardrobe_prob < 0.0 || wardrobe_prob > 1.0) throw InvalidInput("wardrobe_prob must lie in [0, 1]");
}

ToyDataset generate(const ToyRoomSpec& spec, int count, std::uint64_t seed) {
  if (count < 1) throw InvalidInput("count must be at least 1");
  spec.validate();
  ToyDataset ds;
  ds.spec = spec;
  ds.vocab = spec.vocab();
  ds.n_slots = spec.n_slots();
  ds.label_dist = spec.label_distribution();
  const int empty = ds.vocab.empty_index();
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
    // Counts first; placement retries never redraw them.
    int n_chairs = 0, n_ns = 0, ns_side = 0;
    bool wardrobe = false;
    if (spec.type == ToyRoomType::Dining) {
      n_chairs = 2 * rng.uniform_int(1, 3);
    } else {
      n_ns = rng.uniform_int(0, 2);
      ns_side = rng.uniform_int(0, 1);
      wardrobe = rng.uniform() < spec.wardrobe_prob;
    }
    const int rot = spec.rotate_aug ? rng.uniform_int(0, 3) : 0;
    bool ok = false;
    SceneLayout scene;
    for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
      const FloorDraw fd = draw_floor(spec, rng);
      scene.floor = FloorPlan(fd.poly);
      scene.room_type = spec.name();
      ok = spec.type == ToyRoomType::Dining ? place_dining(fd, scene.floor, n_chairs, rng, scene.objects)
                                            : place_bedroom(scene.floor, n_ns, ns_side, wardrobe, rng, scene.objects);
    }
    if (!ok) {
      std::cerr << "toyrooms: scene " << i << " skipped after " << kMaxAttempts << " placement attempts\n";
      ++ds.skipped;
      continue;
    }
    scene = pad_scene(scene, ds.n_slots, empty);
    if (rot != 0) scene = rotate_scene(scene, rot, empty);
    for (const auto& o : scene.objects) validate_object(o, ds.vocab);
    ds.scenes.push_back(std::move(scene));
  }
  if (ds.scenes.empty()) throw InsufficientData("no scene could be placed");
  ds.stats = compute_norm_stats(ds.scenes, ds.vocab);
  return ds;
}

NormStats compute_norm_stats(const std::vector<SceneLayout>& scenes, const LabelVocab& vocab) {
  // One offset and scale per group (position, size), so a coordinate with
  // little spread keeps the scale of its group.
  double lo[2] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  double hi[2] = {-lo[0], -lo[1]};
  int n = 0;
  for (const auto& s : scenes) {
    for (const auto& o : s.objects) {
      if (o.label == vocab.empty_index()) continue;
      lo[0] = std::min(lo[0], o.pos.minCoeff());
      hi[0] = std::max(hi[0], o.pos.maxCoeff());
      lo[1] = std::min(lo[1], o.size.minCoeff());
      hi[1] = std::max(hi[1], o.size.maxCoeff());
      ++n;
    }
  }
  if (n == 0) throw InsufficientData("no objects to compute normalization stats from");
  NormStats st;
  for (int g = 0; g < 2; ++g) {
    const double half = 0.5 * (hi[g] - lo[g]);
    for (int j = 3 * g; j < 3 * g + 3; ++j) {
      st.offset(j) = 0.5 * (lo[g] + hi[g]);
      st.scale(j) = half > 1e-9 ? half : 1.0;
    }
  }
  return st;
}

Split split_indices(std::size_t n, std::uint64_t seed, double train_ratio) {
  if (!(train_ratio >= 0.0 && train_ratio <= 1.0)) throw InvalidInput("train ratio must lie in [0, 1]");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = Rng::stream(seed, 0x5b117ULL);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(n)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

}  // namespace mixdiff
