#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "wdl/grid.hpp"

namespace wdl::io {

inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// One histogram per row, header "bin_0,...,bin_{N-1}", no index column.
inline void write_histograms_csv(const std::string& path, const std::vector<Vec>& rows) {
  if (rows.empty()) throw validation_error("csv write: no rows");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw validation_error("csv write: cannot open " + path);
  const std::size_t n = rows[0].size();
  for (std::size_t j = 0; j < n; ++j) f << (j ? ",bin_" : "bin_") << j;
  f << "\n";
  for (const Vec& r : rows) {
    if (r.size() != n) throw validation_error("csv write: ragged rows");
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(r[j]))
        throw validation_error("csv write: non-finite cell");
      f << (j ? "," : "") << fmt_double(r[j]);
    }
    f << "\n";
  }
}

/// Reads comma-separated numeric rows; a leading "bin_*" header is skipped.
/// Rows are returned raw (not normalized).
inline std::vector<Vec> read_csv_rows(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw validation_error("csv read: cannot open " + path);
  std::vector<Vec> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    // strip trailing carriage return
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("bin_", 0) == 0) continue;  // header
    Vec row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t pos = 0;
        double v = std::stod(cell, &pos);
        row.push_back(v);
      } catch (const std::exception&) {
        throw validation_error(path + ":" + std::to_string(lineno) +
                               ": cannot parse cell '" + cell + "'");
      }
    }
    if (row.empty())
      throw validation_error(path + ":" + std::to_string(lineno) + ": empty row");
    if (!rows.empty() && rows[0].size() != row.size())
      throw validation_error(path + ":" + std::to_string(lineno) +
                             ": inconsistent row length");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw validation_error(path + ": no data rows");
  return rows;
}

struct PgmImage {
  int rows = 0, cols = 0, maxval = 255;
  Vec pixels;  // row-major, raw values
};

inline PgmImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw validation_error("pgm read: cannot open " + path);
  auto next_token = [&]() -> std::string {
    std::string tok;
    int c;
    while ((c = f.get()) != EOF) {
      if (c == '#') {  // comment to end of line
        while ((c = f.get()) != EOF && c != '\n') {}
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    return tok;
  };
  std::string magic = next_token();
  if (magic != "P2" && magic != "P5")
    throw validation_error(path + ": not a P2/P5 PGM file");
  PgmImage img;
  img.cols = std::stoi(next_token());
  img.rows = std::stoi(next_token());
  img.maxval = std::stoi(next_token());
  if (img.cols < 1 || img.rows < 1 || img.maxval < 1 || img.maxval > 65535)
    throw validation_error(path + ": bad PGM header");
  const std::size_t n = static_cast<std::size_t>(img.rows) * img.cols;
  img.pixels.resize(n);
  if (magic == "P2") {
    for (std::size_t i = 0; i < n; ++i) {
      std::string tok = next_token();
      if (tok.empty()) throw validation_error(path + ": truncated P2 data");
      img.pixels[i] = std::stod(tok);
    }
  } else {
    const int bytes = img.maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(n * static_cast<std::size_t>(bytes));
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() != static_cast<std::streamsize>(buf.size()))
      throw validation_error(path + ": truncated P5 data");
    for (std::size_t i = 0; i < n; ++i)
      img.pixels[i] = bytes == 1
                          ? buf[i]
                          : 256.0 * buf[2 * i] + buf[2 * i + 1];  // big-endian
  }
  return img;
}

/// Writes P2 with maxval 255, scaled so the largest bin maps to 255.
inline void write_pgm(const std::string& path, const Grid& grid, const Vec& values) {
  if (grid.axes() != 2)
    throw validation_error("pgm write: image output needs a 2-D grid");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw validation_error("pgm write: cannot open " + path);
  double mx = 0.0;
  for (double v : values) mx = std::max(mx, v);
  if (mx <= 0.0) mx = 1.0;
  f << "P2\n" << grid.dims[1] << " " << grid.dims[0] << "\n255\n";
  for (int r = 0; r < grid.dims[0]; ++r) {
    for (int c = 0; c < grid.dims[1]; ++c) {
      int v = static_cast<int>(std::lround(values[static_cast<std::size_t>(r) * grid.dims[1] + c] /
                                           mx * 255.0));
      f << (c ? " " : "") << v;
    }
    f << "\n";
  }
}

inline void write_history_csv(const std::string& path,
                              const std::vector<std::array<double, 4>>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw validation_error("csv write: cannot open " + path);
  f << "outer_iter,objective,mean_recon_error,seconds\n";
  for (const auto& r : rows) {
    f << static_cast<int>(r[0]) << "," << fmt_double(r[1]) << "," << fmt_double(r[2])
      << "," << fmt_double(r[3]) << "\n";
  }
}

/// Barycentric scatter: each datapoint drawn at sum_s lambda_s * vertex_s,
/// vertices of a regular S-gon inscribed in the unit circle, vertex 0 at the
/// top (angle 90 degrees), proceeding clockwise on screen.
inline void write_weights_scatter_svg(const std::string& path,
                                      const std::vector<Vec>& weights) {
  if (weights.empty()) throw validation_error("svg write: no weights");
  const std::size_t S = weights[0].size();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw validation_error("svg write: cannot open " + path);
  const double pi = 3.14159265358979323846;
  std::vector<double> vx(S), vy(S);
  for (std::size_t s = 0; s < S; ++s) {
    vx[s] = std::sin(2.0 * pi * static_cast<double>(s) / static_cast<double>(S));
    vy[s] = -std::cos(2.0 * pi * static_cast<double>(s) / static_cast<double>(S));
  }
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"-1.2 -1.2 2.4 2.4\" "
       "width=\"480\" height=\"480\">\n";
  f << "  <polygon points=\"";
  for (std::size_t s = 0; s < S; ++s)
    f << (s ? " " : "") << fmt_double(vx[s]) << "," << fmt_double(vy[s]);
  f << "\" fill=\"none\" stroke=\"#888\" stroke-width=\"0.01\"/>\n";
  for (std::size_t s = 0; s < S; ++s)
    f << "  <circle class=\"vertex\" cx=\"" << fmt_double(vx[s]) << "\" cy=\""
      << fmt_double(vy[s]) << "\" r=\"0.035\" fill=\"#c03\"/>\n";
  for (const Vec& w : weights) {
    if (w.size() != S) throw validation_error("svg write: ragged weights");
    double x = 0.0, y = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      x += w[s] * vx[s];
      y += w[s] * vy[s];
    }
    f << "  <circle class=\"point\" cx=\"" << fmt_double(x) << "\" cy=\""
      << fmt_double(y) << "\" r=\"0.02\" fill=\"#06c\"/>\n";
  }
  f << "</svg>\n";
}

}  // namespace wdl::io
