#include "mixdiff/render.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>

#include "mixdiff/errors.hpp"

namespace mixdiff {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  std::string s(buf);
  if (s == "-0.000") s = "0.000";
  return s;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

double label_hue(int label, int num_nonempty) {
  if (num_nonempty < 1 || label < 0 || label >= num_nonempty) throw InvalidInput("label out of range for colouring");
  return 360.0 * label / num_nonempty;
}

std::string render_svg(const SceneLayout& scene, const LabelVocab& vocab, double px_per_m) {
  const Polygon& poly = scene.floor.polygon();
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
  auto grow = [&](const Vec2& p) {
    x0 = std::min(x0, p.x());
    y0 = std::min(y0, p.y());
    x1 = std::max(x1, p.x());
    y1 = std::max(y1, p.y());
  };
  for (const auto& p : poly) grow(p);
  const int K = vocab.num_labels() - 1;
  for (const auto& o : scene.objects) {
    if (o.label == vocab.empty_index()) continue;
    for (const auto& c : footprint(o)) grow(c);
  }
  if (!(x1 >= x0)) x0 = y0 = x1 = y1 = 0.0;
  const double margin = 0.5;
  x0 -= margin;
  y0 -= margin;
  x1 += margin;
  y1 += margin;
  // SVG y grows downward.
  auto px = [&](const Vec2& p) { return num((p.x() - x0) * px_per_m) + "," + num((y1 - p.y()) * px_per_m); };
  auto points = [&](const Polygon& pg) {
    std::string s;
    for (std::size_t i = 0; i < pg.size(); ++i) s += (i ? " " : "") + px(pg[i]);
    return s;
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num((x1 - x0) * px_per_m) + "\" height=\"" +
         num((y1 - y0) * px_per_m) + "\">\n";
  svg += "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "  <polygon class=\"floor\" points=\"" + points(poly) + "\" fill=\"#f4f4f4\" stroke=\"black\" stroke-width=\"2\"/>\n";
  for (const auto& o : scene.objects) {
    if (o.label == vocab.empty_index()) continue;
    const std::string fill = "hsl(" + num(label_hue(o.label, K)) + ",70%,55%)";
    svg += "  <polygon class=\"object\" data-label=\"" + escape(vocab.name(o.label)) + "\" points=\"" +
           points(footprint(o)) + "\" fill=\"" + fill + "\" fill-opacity=\"0.8\" stroke=\"black\" stroke-width=\"1\"/>\n";
    svg += "  <text x=\"" + num((o.pos.x() - x0) * px_per_m) + "\" y=\"" + num((y1 - o.pos.y()) * px_per_m) +
           "\" font-size=\"10\" font-family=\"sans-serif\" text-anchor=\"middle\" dominant-baseline=\"middle\">" +
           escape(vocab.name(o.label)) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace mixdiff
