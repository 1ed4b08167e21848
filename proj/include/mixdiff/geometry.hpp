#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

namespace mixdiff {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Polygon = std::vector<Vec2>;

namespace geom {

// Positive for counter-clockwise vertex order.
double signed_area(std::span<const Vec2> poly);
double perimeter(std::span<const Vec2> poly);

// True when no two non-adjacent edges touch and no edge is degenerate.
bool is_simple(std::span<const Vec2> poly);

// Even-odd crossing test. Points exactly on the boundary may go either way.
bool point_in_polygon(const Vec2& p, std::span<const Vec2> poly);

// Offsets every edge of a counter-clockwise polygon outward by `distance`
// and re-intersects neighbouring edges (miter join). Exact for convex and
// rectilinear polygons; parallel neighbours keep the shifted vertex.
Polygon offset_polygon(std::span<const Vec2> poly, double distance);

// Corners of a rectangle with half-extents (hx, hy) rotated by the unit
// direction (c, s) and centred at `center`, counter-clockwise.
Polygon oriented_rect(const Vec2& center, double hx, double hy, double c, double s);

// Sutherland-Hodgman clip of `subject` against a convex counter-clockwise
// `clip` polygon.
Polygon clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip);

double polygon_area(std::span<const Vec2> poly);

}  // namespace geom
}  // namespace mixdiff
