#include "medlasa/cli/heatmap.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "medlasa/errors.hpp"

namespace medlasa::cli {

Rgb parse_color(const std::string& hex) {
  const bool ok = hex.size() == 7 && hex[0] == '#' &&
                  std::all_of(hex.begin() + 1, hex.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); });
  if (!ok) throw ContractError("colour must be #rrggbb: " + hex);
  auto channel = [&](std::size_t at) { return std::stoi(hex.substr(at, 2), nullptr, 16); };
  return {channel(1), channel(3), channel(5)};
}

std::string format_color(const Rgb& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

Rgb blend(const Rgb& low, const Rgb& high, double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto mix = [t](int a, int b) { return static_cast<int>(std::lround(a + (b - a) * t)); };
  return {mix(low.r, high.r), mix(low.g, high.g), mix(low.b, high.b)};
}

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string render_heatmap(const ImpactMatrix& m, const HeatmapSpec& spec) {
  const std::size_t rows = m.prompt_len(), cols = m.n_layers();
  if (rows == 0 || cols == 0) throw ContractError("empty impact matrix");
  if (!m.tokens.empty() && m.tokens.size() != rows) throw ContractError("token labels do not match the matrix rows");
  const auto values = m.values.values();
  const double lo = *std::min_element(values.begin(), values.end());
  const double hi = *std::max_element(values.begin(), values.end());
  const double range = hi - lo;

  const std::size_t c = spec.cell, label_w = 160, top = 40, bottom = 36, legend_w = 90;
  const std::size_t width = label_w + cols * c + legend_w, height = top + rows * c + bottom;
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
         std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(width) + "\" height=\"" + std::to_string(height) +
         "\" fill=\"#ffffff\" class=\"background\"/>\n";
  const std::string title = spec.title.empty() ? m.example_id + " (" + std::string(module_name(m.target)) + ")" : spec.title;
  svg += "<text x=\"" + std::to_string(label_w) + "\" y=\"20\" font-size=\"13\">" + escape(title) + "</text>\n";

  for (std::size_t i = 0; i < rows; ++i) {
    std::string label = m.tokens.empty() ? std::to_string(i) : m.tokens[i];
    if (m.noise.subject.contains(i)) label += "*";
    const std::size_t y = top + i * c;
    svg += "<text x=\"" + std::to_string(label_w - 6) + "\" y=\"" + std::to_string(y + c / 2 + 4) +
           "\" text-anchor=\"end\">" + escape(label) + "</text>\n";
    for (std::size_t l = 0; l < cols; ++l) {
      const double v = m.values(i, l);
      const double t = range > 0.0 ? (v - lo) / range : 0.0;
      svg += "<rect class=\"cell\" x=\"" + std::to_string(label_w + l * c) + "\" y=\"" + std::to_string(y) +
             "\" width=\"" + std::to_string(c) + "\" height=\"" + std::to_string(c) + "\" fill=\"" +
             format_color(blend(spec.low, spec.high, t)) + "\"><title>" + num(v) + "</title></rect>\n";
    }
  }
  for (std::size_t l = 0; l < cols; ++l)
    svg += "<text x=\"" + std::to_string(label_w + l * c + c / 2) + "\" y=\"" + std::to_string(top + rows * c + 14) +
           "\" text-anchor=\"middle\">" + std::to_string(l) + "</text>\n";
  svg += "<text x=\"" + std::to_string(label_w + cols * c / 2) + "\" y=\"" + std::to_string(top + rows * c + 30) +
         "\" text-anchor=\"middle\">layer</text>\n";

  const std::size_t lx = label_w + cols * c + 16;
  svg += "<rect x=\"" + std::to_string(lx) + "\" y=\"" + std::to_string(top) + "\" width=\"12\" height=\"12\" fill=\"" +
         format_color(spec.high) + "\"/><text x=\"" + std::to_string(lx + 16) + "\" y=\"" + std::to_string(top + 10) +
         "\">" + num(hi) + "</text>\n";
  svg += "<rect x=\"" + std::to_string(lx) + "\" y=\"" + std::to_string(top + 18) +
         "\" width=\"12\" height=\"12\" fill=\"" + format_color(spec.low) + "\" stroke=\"#999999\"/><text x=\"" +
         std::to_string(lx + 16) + "\" y=\"" + std::to_string(top + 28) + "\">" + num(lo) + "</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace medlasa::cli
