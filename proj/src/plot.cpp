#include "stdn/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace stdn {

namespace {

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

std::string bar_chart_svg(const std::string& title, const std::string& y_label, std::span<const Bar> bars) {
  const double width = std::max(320.0, 90.0 * static_cast<double>(bars.size()) + 100.0);
  const double height = 320.0;
  const double left = 70.0, right = 20.0, top = 40.0, bottom = 60.0;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  double top_value = 0.0;
  for (const Bar& b : bars) top_value = std::max(top_value, b.value + b.error);
  if (top_value <= 0.0) top_value = 1.0;
  top_value *= 1.1;
  auto y_of = [&](double v) { return top + plot_h * (1.0 - std::max(0.0, v) / top_value); };

  std::ostringstream os;
  os.precision(4);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
     << escape(title) << "</text>\n";
  os << "<text x=\"16\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 16 " << top + plot_h / 2
     << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << escape(y_label) << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\"" << top + plot_h
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = top_value * i / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << y_of(v) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << v << "</text>\n";
  }
  const double slot = bars.empty() ? plot_w : plot_w / static_cast<double>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const Bar& b = bars[i];
    const double cx = left + slot * (static_cast<double>(i) + 0.5);
    const double bw = slot * 0.6;
    const double y = y_of(b.value);
    os << "<rect x=\"" << cx - bw / 2 << "\" y=\"" << y << "\" width=\"" << bw << "\" height=\"" << top + plot_h - y
       << "\" fill=\"#4a78b5\"/>\n";
    if (b.error > 0.0) {
      os << "<line x1=\"" << cx << "\" y1=\"" << y_of(b.value + b.error) << "\" x2=\"" << cx << "\" y2=\""
         << y_of(b.value - b.error) << "\" stroke=\"black\"/>\n";
    }
    os << "<text x=\"" << cx << "\" y=\"" << top + plot_h + 16
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << escape(b.label) << "</text>\n";
    os << "<text x=\"" << cx << "\" y=\"" << y - 4 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
       << b.value << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

}  // namespace stdn
