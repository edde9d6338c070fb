#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "appa/core_types.hpp"

namespace appa::plot {

using Color = std::array<double, 3>;

/// Distinct series colours, cycled.
Color palette(std::size_t i);

/// Minimal raster canvas for static figures.
class Canvas {
 public:
  Canvas(int width, int height, Color background = {1, 1, 1});
  void pixel(int x, int y, const Color& c);
  void line(double x0, double y0, double x1, double y1, const Color& c, int thickness = 1);
  void fill_rect(int x0, int y0, int x1, int y1, const Color& c);
  void outline_rect(int x0, int y0, int x1, int y1, const Color& c, int thickness = 1);
  /// Upper-case ASCII text drawn with a built-in 3x5 font at `scale`.
  void text(int x, int y, const std::string& s, const Color& c, int scale = 2);
  void save(const std::filesystem::path& path) const;
  int width() const { return img_.width(); }
  int height() const { return img_.height(); }

 private:
  Image img_;
};

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Line chart; the axes span [x_min, x_max] x [y_min, y_max].
void line_chart(const std::filesystem::path& path, const std::vector<Series>& series, double x_min, double x_max,
                double y_min, double y_max, const std::string& title);

/// Matrix heatmap with values in [0,1]; `highlight[r][c]` gets a frame.
void heatmap(const std::filesystem::path& path, const std::vector<std::vector<double>>& values,
             const std::vector<std::vector<bool>>& highlight, const std::vector<std::string>& row_labels,
             const std::vector<std::string>& col_labels, const std::string& title);

/// Vertical bars with values in [0,1].
void bar_chart(const std::filesystem::path& path, const std::vector<double>& values, const std::string& title);

}  // namespace appa::plot
