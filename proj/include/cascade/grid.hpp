#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cascade/error.hpp"

namespace cascade {

using Field = std::vector<double>;
using NodeId = std::string;

/// Regular raster of values at one resolution. cell_size is an abstract
/// length unit; rows*cols cells stored row-major.
struct Grid {
  int rows = 0;
  int cols = 0;
  double cell_size = 1.0;
  Field values;

  Grid() = default;
  Grid(int r, int c, double cs, double fill = 0.0)
      : rows(r), cols(c), cell_size(cs), values(static_cast<std::size_t>(r) * c, fill) {
    if (r <= 0 || c <= 0 || cs <= 0.0)
      fail(ErrorCode::config_invalid, "grid dimensions and cell size must be positive");
  }

  std::size_t size() const { return values.size(); }
  double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }

  double mean() const {
    double s = 0.0;
    for (double v : values) s += v;
    return values.empty() ? 0.0 : s / static_cast<double>(values.size());
  }
};

namespace detail {
inline int integer_ratio(double a, double b) {
  const double r = a / b;
  const double rounded = std::round(r);
  if (rounded < 1.0 || std::abs(r - rounded) > 1e-9 * r) return 0;
  return static_cast<int>(rounded);
}
}  // namespace detail

// Resolution alignment: coarsening takes the area mean of the covered fine
// cells; refinement replicates (nearest). Cell sizes must be integer
// multiples of one another.
inline Grid regrid(const Grid& src, double target_cell_size) {
  if (target_cell_size <= 0.0)
    fail(ErrorCode::incommensurate_resolutions, "target cell size must be positive");
  if (std::abs(target_cell_size - src.cell_size) <= 1e-12 * src.cell_size) {
    return src;
  }
  if (target_cell_size > src.cell_size) {
    const int r = detail::integer_ratio(target_cell_size, src.cell_size);
    if (r == 0 || src.rows % r != 0 || src.cols % r != 0)
      fail(ErrorCode::incommensurate_resolutions,
           "coarsen ratio not an integer divisor of grid shape");
    Grid out(src.rows / r, src.cols / r, target_cell_size);
    const double inv = 1.0 / (static_cast<double>(r) * r);
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) {
        double s = 0.0;
        for (int di = 0; di < r; ++di)
          for (int dj = 0; dj < r; ++dj) s += src.at(i * r + di, j * r + dj);
        out.at(i, j) = s * inv;
      }
    return out;
  }
  const int r = detail::integer_ratio(src.cell_size, target_cell_size);
  if (r == 0)
    fail(ErrorCode::incommensurate_resolutions, "refine ratio not an integer");
  Grid out(src.rows * r, src.cols * r, target_cell_size);
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out.at(i, j) = src.at(i / r, j / r);
  return out;
}

// Shortest decimal form that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v || (std::isnan(back) && std::isnan(v))) return buf;
  }
  return buf;
}

// Headered CSV: first line "rows,cols,cell_size", then one line per row of
// row-major values. Round trips bit-exactly.
inline void write_grid_csv(const Grid& g, std::ostream& os) {
  os << g.rows << ',' << g.cols << ',' << format_double(g.cell_size) << '\n';
  for (int i = 0; i < g.rows; ++i) {
    for (int j = 0; j < g.cols; ++j) {
      if (j) os << ',';
      os << format_double(g.at(i, j));
    }
    os << '\n';
  }
}

inline void write_grid_csv(const Grid& g, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::io_error, "cannot open for write: " + path);
  write_grid_csv(g, os);
}

inline Grid read_grid_csv(std::istream& is, const std::string& what = "grid") {
  std::string line;
  if (!std::getline(is, line)) fail(ErrorCode::io_error, "empty grid file: " + what);
  int rows = 0, cols = 0;
  double cs = 0.0;
  if (std::sscanf(line.c_str(), "%d,%d,%lf", &rows, &cols, &cs) != 3)
    fail(ErrorCode::io_error, "bad grid header in " + what);
  Grid g(rows, cols, cs);
  std::size_t idx = 0;
  while (idx < g.size() && std::getline(is, line)) {
    const char* p = line.c_str();
    const char* end = p + line.size();
    while (p < end && idx < g.size()) {
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc())
        fail(ErrorCode::io_error, "bad grid value in " + what);
      g.values[idx++] = v;
      p = next;
      if (p < end && *p == ',') ++p;
    }
  }
  if (idx != g.size()) fail(ErrorCode::io_error, "short grid file: " + what);
  return g;
}

inline Grid read_grid_csv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::io_error, "cannot open: " + path);
  return read_grid_csv(is, path);
}

}  // namespace cascade
