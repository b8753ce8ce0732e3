#pragma once

// Per-iteration metrics, their CSV form, and single-panel SVG line charts.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kafisto/core.hpp"

namespace kafisto::harness {

struct MetricsRow {
  std::uint64_t iteration = 0;
  std::uint64_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> full_batch_loss;
  double grad_sq_norm = 0.0;
  double var_x = 0.0;
  double var_c = 0.0;
  double var_p = 0.0;
  double R = 0.0;
  double q_x2 = 0.0;
  double q_p2 = 0.0;
  double gain_scale_x = 0.0;
  double elapsed_seconds = 0.0;

  /// A divergence marker has a non-finite training loss and ends the table.
  bool is_divergence_marker() const { return !std::isfinite(train_loss); }
};

inline constexpr std::array<std::string_view, 13> kColumns = {
    "iteration", "epoch", "train_loss", "full_batch_loss", "grad_sq_norm", "var_x", "var_c",
    "var_p",     "R",     "q_x2",       "q_p2",            "gain_scale_x", "elapsed_seconds"};

/// Value of a named column; nullopt for an absent full_batch_loss.
inline std::optional<double> column_value(const MetricsRow& r, std::string_view column) {
  if (column == "iteration") return static_cast<double>(r.iteration);
  if (column == "epoch") return static_cast<double>(r.epoch);
  if (column == "train_loss") return r.train_loss;
  if (column == "full_batch_loss") return r.full_batch_loss;
  if (column == "grad_sq_norm") return r.grad_sq_norm;
  if (column == "var_x") return r.var_x;
  if (column == "var_c") return r.var_c;
  if (column == "var_p") return r.var_p;
  if (column == "R") return r.R;
  if (column == "q_x2") return r.q_x2;
  if (column == "q_p2") return r.q_p2;
  if (column == "gain_scale_x") return r.gain_scale_x;
  if (column == "elapsed_seconds") return r.elapsed_seconds;
  throw InvalidArgument("unknown metrics column '" + std::string(column) + "'");
}

struct MetricsTable {
  std::vector<MetricsRow> rows;

  bool diverged() const { return !rows.empty() && rows.back().is_divergence_marker(); }

  void append(MetricsRow row) {
    if (!rows.empty() && row.iteration <= rows.back().iteration) {
      throw InvalidArgument("metrics rows must be strictly increasing in iteration");
    }
    if (diverged()) throw InvalidArgument("cannot append after a divergence marker");
    rows.push_back(std::move(row));
  }
};

inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

/// Header plus one line per row, 9 significant digits, newline-terminated.
inline std::string emit_csv(const MetricsTable& table) {
  std::string out;
  for (std::size_t i = 0; i < kColumns.size(); ++i) {
    if (i) out += ',';
    out += kColumns[i];
  }
  out += '\n';
  for (const auto& r : table.rows) {
    out += std::to_string(r.iteration);
    out += ',';
    out += std::to_string(r.epoch);
    for (std::size_t i = 2; i < kColumns.size(); ++i) {
      out += ',';
      const auto v = column_value(r, kColumns[i]);
      if (v) out += format_real(*v);
    }
    out += '\n';
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline double parse_real(const std::string& s, std::size_t line) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument("metrics CSV line " + std::to_string(line) + ": bad number '" + s + "'");
  }
}

}  // namespace detail

/// Inverse of emit_csv (exact up to the 9-digit formatting).
inline MetricsTable parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("metrics CSV is empty");
  const auto header = detail::split_csv_line(line);
  if (header.size() != kColumns.size() ||
      !std::equal(header.begin(), header.end(), kColumns.begin())) {
    throw InvalidArgument("metrics CSV header does not match the expected columns");
  }
  MetricsTable t;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != kColumns.size()) {
      throw InvalidArgument("metrics CSV line " + std::to_string(lineno) + ": expected " +
                            std::to_string(kColumns.size()) + " fields");
    }
    MetricsRow r;
    r.iteration = static_cast<std::uint64_t>(detail::parse_real(f[0], lineno));
    r.epoch = static_cast<std::uint64_t>(detail::parse_real(f[1], lineno));
    r.train_loss = detail::parse_real(f[2], lineno);
    if (!f[3].empty()) r.full_batch_loss = detail::parse_real(f[3], lineno);
    r.grad_sq_norm = detail::parse_real(f[4], lineno);
    r.var_x = detail::parse_real(f[5], lineno);
    r.var_c = detail::parse_real(f[6], lineno);
    r.var_p = detail::parse_real(f[7], lineno);
    r.R = detail::parse_real(f[8], lineno);
    r.q_x2 = detail::parse_real(f[9], lineno);
    r.q_p2 = detail::parse_real(f[10], lineno);
    r.gain_scale_x = detail::parse_real(f[11], lineno);
    r.elapsed_seconds = detail::parse_real(f[12], lineno);
    t.append(r);
  }
  return t;
}

struct PlotOptions {
  bool log_scale = false;
  double width = 640.0;
  double height = 400.0;
  std::string title;
};

namespace detail {

inline std::string svg_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace detail

/// Single-panel line chart of `column` against iteration as a standalone
/// SVG document. Rows without a usable value (absent, non-finite, or
/// non-positive on a log scale) are skipped.
inline std::string emit_plot(const MetricsTable& table, std::string_view column,
                             const PlotOptions& opt = {}) {
  if (std::find(kColumns.begin(), kColumns.end(), column) == kColumns.end()) {
    throw InvalidArgument("unknown metrics column '" + std::string(column) + "'");
  }
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : table.rows) {
    const auto v = column_value(r, column);
    if (!v || !std::isfinite(*v)) continue;
    if (opt.log_scale && *v <= 0.0) continue;
    pts.emplace_back(static_cast<double>(r.iteration), opt.log_scale ? std::log10(*v) : *v);
  }

  const double left = 80.0, right = 20.0, top = 40.0, bottom = 50.0;
  const double pw = opt.width - left - right;
  const double ph = opt.height - top - bottom;

  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
  if (!pts.empty()) {
    xmin = xmax = pts.front().first;
    ymin = ymax = pts.front().second;
    for (const auto& [x, y] : pts) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) {
    const double pad = ymin == 0.0 ? 1.0 : 0.1 * std::abs(ymin);
    ymin -= pad;
    ymax += pad;
  }
  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };
  using detail::svg_number;

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << svg_number(opt.width)
    << "\" height=\"" << svg_number(opt.height) << "\" viewBox=\"0 0 " << svg_number(opt.width)
    << ' ' << svg_number(opt.height) << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const std::string title = opt.title.empty() ? std::string(column) : opt.title;
  s << "<text x=\"" << svg_number(opt.width / 2) << "\" y=\"24\" text-anchor=\"middle\" "
    << "font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";
  s << "<g stroke=\"black\" stroke-width=\"1\">\n"
    << "<line x1=\"" << svg_number(left) << "\" y1=\"" << svg_number(top + ph) << "\" x2=\""
    << svg_number(left + pw) << "\" y2=\"" << svg_number(top + ph) << "\"/>\n"
    << "<line x1=\"" << svg_number(left) << "\" y1=\"" << svg_number(top) << "\" x2=\""
    << svg_number(left) << "\" y2=\"" << svg_number(top + ph) << "\"/>\n"
    << "</g>\n";

  s << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 4.0;
    const double fy = ymin + (ymax - ymin) * i / 4.0;
    s << "<text x=\"" << svg_number(sx(fx)) << "\" y=\"" << svg_number(top + ph + 16)
      << "\" text-anchor=\"middle\">" << detail::tick_label(fx) << "</text>\n";
    const double label = opt.log_scale ? std::pow(10.0, fy) : fy;
    s << "<text x=\"" << svg_number(left - 6) << "\" y=\"" << svg_number(sy(fy) + 4)
      << "\" text-anchor=\"end\">" << detail::tick_label(label) << "</text>\n";
  }
  s << "</g>\n";
  s << "<text x=\"" << svg_number(left + pw / 2) << "\" y=\"" << svg_number(opt.height - 10)
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">iteration</text>\n";
  s << "<text transform=\"translate(16," << svg_number(top + ph / 2)
    << ") rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
    << column << (opt.log_scale ? " (log)" : "") << "</text>\n";

  s << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i) s << ' ';
    s << svg_number(sx(pts[i].first)) << ',' << svg_number(sy(pts[i].second));
  }
  s << "\"/>\n</svg>\n";
  return s.str();
}

}  // namespace kafisto::harness
