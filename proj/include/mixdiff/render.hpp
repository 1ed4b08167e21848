#pragma once

#include <string>

#include "mixdiff/scene.hpp"

namespace mixdiff {

// Hue in degrees for label i of K non-empty labels: 360 i / K.
double label_hue(int label, int num_nonempty);

// Top-down SVG: floor outline plus one filled rotated rectangle and a text
// tag per non-empty object. Output depends only on the input values.
std::string render_svg(const SceneLayout& scene, const LabelVocab& vocab, double px_per_m = 60.0);

}  // namespace mixdiff
