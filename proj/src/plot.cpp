#include "fedunlearn/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fedunlearn/errors.hpp"

namespace fedunlearn {

namespace {

const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v, const char* f = "%.2f") {
  char buf[40];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

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

struct Series {
  std::string label;
  std::map<std::size_t, std::pair<double, int>> points;  // round -> (sum, count)
};

struct Chart {
  std::string title;
  std::vector<Series> series;
  std::set<double> boundaries;  // x positions between phases
};

std::string render(const Chart& chart, const PlotOptions& opt) {
  const double W = opt.width, H = opt.height;
  const double left = 60, right = 150, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  const double ymax = opt.percent ? 100.0 : 1.0;

  std::size_t xmin = SIZE_MAX, xmax = 0;
  for (const auto& s : chart.series) {
    for (const auto& [r, v] : s.points) {
      xmin = std::min(xmin, r);
      xmax = std::max(xmax, r);
    }
  }
  if (xmin == SIZE_MAX) xmin = xmax = 1;
  // a single round still gets a visible span
  const double x0 = static_cast<double>(xmin) - 0.5, x1 = static_cast<double>(xmax) + 0.5;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + (1.0 - y / ymax) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(W, "%g") << "\" height=\"" << fmt(H, "%g")
    << "\" viewBox=\"0 0 " << fmt(W, "%g") << ' ' << fmt(H, "%g") << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << fmt(left + pw / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
    << escape(chart.title) << "</text>\n";

  for (int i = 0; i <= 5; ++i) {
    const double v = ymax * i / 5.0;
    const double y = sy(v);
    o << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(y) << "\" x2=\"" << fmt(left + pw) << "\" y2=\"" << fmt(y)
      << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(y + 4) << "\" text-anchor=\"end\">"
      << (opt.percent ? fmt(v, "%g") : fmt(v, "%.1f")) << "</text>\n";
  }
  const std::size_t step = std::max<std::size_t>(1, (xmax - xmin + 1) / 12 + 1);
  for (std::size_t r = xmin; r <= xmax; r += step) {
    o << "<text x=\"" << fmt(sx(static_cast<double>(r))) << "\" y=\"" << fmt(top + ph + 16)
      << "\" text-anchor=\"middle\">" << r << "</text>\n";
  }
  o << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(pw) << "\" height=\"" << fmt(ph)
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<text x=\"" << fmt(left + pw / 2) << "\" y=\"" << fmt(H - 12) << "\" text-anchor=\"middle\">round</text>\n";
  o << "<text transform=\"translate(16," << fmt(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">accuracy"
    << (opt.percent ? " (%)" : "") << "</text>\n";

  for (double b : chart.boundaries) {
    if (b <= x0 || b >= x1) continue;
    o << "<line class=\"phase-boundary\" x1=\"" << fmt(sx(b)) << "\" y1=\"" << fmt(top) << "\" x2=\"" << fmt(sx(b))
      << "\" y2=\"" << fmt(top + ph) << "\" stroke=\"#555\" stroke-dasharray=\"4 3\"/>\n";
  }

  for (std::size_t i = 0; i < chart.series.size(); ++i) {
    const Series& s = chart.series[i];
    const char* color = kColors[i % std::size(kColors)];
    std::ostringstream pts;
    for (const auto& [r, acc] : s.points) {
      double y = acc.first / acc.second;
      if (opt.percent) y *= 100.0;
      pts << fmt(sx(static_cast<double>(r))) << ',' << fmt(sy(y)) << ' ';
    }
    o << "<g class=\"series\" data-label=\"" << escape(s.label) << "\">\n";
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts.str() << "\"/>\n";
    for (const auto& [r, acc] : s.points) {
      double y = acc.first / acc.second;
      if (opt.percent) y *= 100.0;
      o << "<circle cx=\"" << fmt(sx(static_cast<double>(r))) << "\" cy=\"" << fmt(sy(y)) << "\" r=\"2.5\" fill=\""
        << color << "\"/>\n";
    }
    o << "</g>\n";
    const double ly = top + 12 + 16.0 * static_cast<double>(i);
    o << "<line x1=\"" << fmt(left + pw + 10) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(left + pw + 30)
      << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << fmt(left + pw + 35) << "\" y=\"" << fmt(ly + 4) << "\">" << escape(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string file_stem(const std::string& dataset, double beta) {
  std::string s = dataset.empty() ? "run" : dataset;
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  }
  return s + "_beta" + fmt(beta, "%g");
}

}  // namespace

std::string series_label(const RunMetadata& meta) {
  std::string s = to_string(meta.strategy);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
  if (s == "FEDERASER") s = "FedEraser";
  return s + (meta.regime == Regime::ntk_linearized ? "-NTK" : "-STD");
}

std::vector<std::string> emit_plots(std::span<const MetricsLog> logs, const std::string& dir,
                                    const PlotOptions& options) {
  if (logs.empty()) throw ArgumentError("emit_plots: no logs");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());

  std::map<std::pair<std::string, double>, std::vector<const MetricsLog*>> groups;
  for (const auto& log : logs) groups[{log.meta.dataset, log.meta.beta}].push_back(&log);

  std::vector<std::string> written;
  for (const auto& [key, group] : groups) {
    Chart global, target;
    const std::string base = (key.first.empty() ? std::string("run") : key.first) + ", beta=" + fmt(key.second, "%g");
    global.title = base + ": global test accuracy";
    target.title = base + ": target client test accuracy";
    std::map<std::string, std::size_t> index;
    for (const MetricsLog* log : group) {
      const std::string label = series_label(log->meta);
      auto [it, fresh] = index.emplace(label, global.series.size());
      if (fresh) {
        global.series.push_back({label, {}});
        target.series.push_back({label, {}});
      }
      Series& g = global.series[it->second];
      Series& t = target.series[it->second];
      for (const auto& r : log->rounds) {
        auto& gp = g.points[r.round_index];
        gp.first += r.global_test_accuracy;
        ++gp.second;
        auto& tp = t.points[r.round_index];
        tp.first += r.target_test_accuracy;
        ++tp.second;
      }
      // boundaries from the reports themselves, so they match what was run
      for (std::size_t i = 1; i < log->rounds.size(); ++i) {
        if (log->rounds[i].phase != log->rounds[i - 1].phase) {
          const double b = 0.5 * static_cast<double>(log->rounds[i].round_index + log->rounds[i - 1].round_index);
          global.boundaries.insert(b);
          target.boundaries.insert(b);
        }
      }
    }
    const std::string stem = dir + "/" + file_stem(key.first, key.second);
    for (auto [chart, suffix] : {std::pair{&global, "_global.svg"}, std::pair{&target, "_target.svg"}}) {
      const std::string path = stem + suffix;
      std::ofstream f(path, std::ios::binary);
      if (!f) throw IoError("cannot open '" + path + "' for writing");
      f << render(*chart, options);
      if (!f) throw IoError("write failed for '" + path + "'");
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace fedunlearn
