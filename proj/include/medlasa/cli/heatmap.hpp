#pragma once

#include <array>
#include <string>

#include "medlasa/tracing/causal_trace.hpp"

namespace medlasa::cli {

struct Rgb {
  int r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// "#rrggbb" -> Rgb; throws ContractError on anything else.
Rgb parse_color(const std::string& hex);
std::string format_color(const Rgb& c);
/// Channel-wise linear blend, t clamped to [0, 1], rounded to the nearest integer.
Rgb blend(const Rgb& low, const Rgb& high, double t);

struct HeatmapSpec {
  Rgb low{255, 255, 255};
  Rgb high{106, 27, 154};
  std::size_t cell = 28;
  std::string title;
};

/// Rows are tokens (subject tokens starred), columns are layers. Fill blends
/// low -> high by (M - min M) / (max M - min M); a constant matrix is all low.
std::string render_heatmap(const ImpactMatrix& m, const HeatmapSpec& spec);

}  // namespace medlasa::cli
