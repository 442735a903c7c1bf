#pragma once

#include <filesystem>
#include <span>
#include <string>

namespace stdn {

struct Bar {
  std::string label;
  double value = 0.0;
  double error = 0.0;  // half-height of the error bar; 0 draws none
};

/// Static SVG bar chart with optional error bars.
std::string bar_chart_svg(const std::string& title, const std::string& y_label, std::span<const Bar> bars);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace stdn
