#include "mixdiff/geometry.hpp"

#include <cmath>
#include <cstddef>

namespace mixdiff::geom {

namespace {

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

int orientation(const Vec2& a, const Vec2& b, const Vec2& c) {
  const double v = cross(b - a, c - a);
  constexpr double kEps = 1e-12;
  if (v > kEps) return 1;
  if (v < -kEps) return -1;
  return 0;
}

bool on_segment(const Vec2& a, const Vec2& b, const Vec2& p) {
  return std::min(a.x(), b.x()) - 1e-12 <= p.x() && p.x() <= std::max(a.x(), b.x()) + 1e-12 &&
         std::min(a.y(), b.y()) - 1e-12 <= p.y() && p.y() <= std::max(a.y(), b.y()) + 1e-12;
}

bool segments_touch(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  const int o1 = orientation(a, b, c);
  const int o2 = orientation(a, b, d);
  const int o3 = orientation(c, d, a);
  const int o4 = orientation(c, d, b);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(a, b, c)) return true;
  if (o2 == 0 && on_segment(a, b, d)) return true;
  if (o3 == 0 && on_segment(c, d, a)) return true;
  if (o4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

}  // namespace

double signed_area(std::span<const Vec2> poly) {
  double a = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) a += cross(poly[i], poly[(i + 1) % n]);
  return 0.5 * a;
}

double polygon_area(std::span<const Vec2> poly) { return std::abs(signed_area(poly)); }

double perimeter(std::span<const Vec2> poly) {
  double p = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) p += (poly[(i + 1) % n] - poly[i]).norm();
  return p;
}

bool is_simple(std::span<const Vec2> poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    if ((poly[(i + 1) % n] - poly[i]).norm() < 1e-12) return false;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      // Skip the shared vertex of neighbouring edges.
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_touch(a, b, poly[j], poly[(j + 1) % n])) return false;
    }
  }
  return true;
}

bool point_in_polygon(const Vec2& p, std::span<const Vec2> poly) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x = (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x();
      if (p.x() < x) inside = !inside;
    }
  }
  return inside;
}

Polygon offset_polygon(std::span<const Vec2> poly, double distance) {
  const std::size_t n = poly.size();
  Polygon out(n);
  if (distance == 0.0) {
    out.assign(poly.begin(), poly.end());
    return out;
  }
  auto edge_normal = [&](std::size_t i) {
    const Vec2 d = (poly[(i + 1) % n] - poly[i]).normalized();
    return Vec2(d.y(), -d.x());
  };
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t prev = (i + n - 1) % n;
    const Vec2 n0 = edge_normal(prev);
    const Vec2 n1 = edge_normal(i);
    const Vec2 p0 = poly[prev] + distance * n0;
    const Vec2 d0 = poly[i] - poly[prev];
    const Vec2 p1 = poly[i] + distance * n1;
    const Vec2 d1 = poly[(i + 1) % n] - poly[i];
    const double denom = cross(d0, d1);
    if (std::abs(denom) < 1e-12 * d0.norm() * d1.norm()) {
      out[i] = poly[i] + distance * n1;
      continue;
    }
    const double s = cross(p1 - p0, d1) / denom;
    out[i] = p0 + s * d0;
  }
  return out;
}

Polygon oriented_rect(const Vec2& center, double hx, double hy, double c, double s) {
  const Vec2 ax(c * hx, s * hx);
  const Vec2 ay(-s * hy, c * hy);
  return {center - ax - ay, center + ax - ay, center + ax + ay, center - ax + ay};
}

Polygon clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  Polygon output(subject.begin(), subject.end());
  const std::size_t m = clip.size();
  for (std::size_t e = 0; e < m && !output.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % m];
    const Vec2 dir = b - a;
    auto side = [&](const Vec2& p) { return cross(dir, p - a); };
    Polygon input = std::move(output);
    output.clear();
    const std::size_t k = input.size();
    for (std::size_t i = 0; i < k; ++i) {
      const Vec2& cur = input[i];
      const Vec2& prev = input[(i + k - 1) % k];
      const double sc = side(cur);
      const double sp = side(prev);
      if (sc >= 0.0) {
        if (sp < 0.0) output.push_back(prev + (cur - prev) * (sp / (sp - sc)));
        output.push_back(cur);
      } else if (sp >= 0.0) {
        output.push_back(prev + (cur - prev) * (sp / (sp - sc)));
      }
    }
  }
  return output;
}

}  // namespace mixdiff::geom
