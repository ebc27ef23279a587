#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "flowrl/metrics.hpp"
#include "flowrl/rng.hpp"

namespace flowrl {

struct PlotSeries {
  std::string name;
  std::vector<std::int64_t> steps;
  std::vector<double> scores;  // eval_success per epoch
};

inline PlotSeries series_from_metrics(const std::string& path) {
  PlotSeries s;
  s.name = path;
  for (const MetricsRow& r : read_metrics(path)) {
    s.steps.push_back(r.step);
    s.scores.push_back(r.eval_success);
  }
  return s;
}

struct PlotBand {
  std::vector<double> mean, lo, hi;  // per step; 95% bootstrap band over runs
};

// Bootstrap over runs (fixed internal seed, so plots are reproducible).
// With a single run the band collapses onto the curve.
inline PlotBand bootstrap_band(const std::vector<PlotSeries>& runs, int resamples = 1000) {
  std::size_t n_steps = runs.at(0).steps.size();
  std::size_t n_runs = runs.size();
  PlotBand band;
  band.mean.assign(n_steps, 0.0);
  for (const auto& r : runs)
    for (std::size_t i = 0; i < n_steps; ++i) band.mean[i] += r.scores[i] / n_runs;

  Rng rng = Rng::master(0xb00f).child("bootstrap");
  std::vector<std::vector<double>> draws(n_steps);
  for (int b = 0; b < resamples; ++b) {
    std::vector<std::size_t> pick(n_runs);
    for (auto& p : pick) p = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(n_runs)));
    for (std::size_t i = 0; i < n_steps; ++i) {
      double m = 0.0;
      for (std::size_t p : pick) m += runs[p].scores[i] / n_runs;
      draws[i].push_back(m);
    }
  }
  for (std::size_t i = 0; i < n_steps; ++i) {
    std::sort(draws[i].begin(), draws[i].end());
    band.lo.push_back(draws[i][static_cast<std::size_t>(0.025 * (resamples - 1))]);
    band.hi.push_back(draws[i][static_cast<std::size_t>(0.975 * (resamples - 1))]);
  }
  return band;
}

// Aligned step/score table: step, one column per run, then mean/lo/hi.
inline void write_plot_table(const std::string& path, const std::vector<PlotSeries>& runs,
                             const PlotBand& band) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_plot_table: cannot write " + path);
  out << "step";
  for (std::size_t r = 0; r < runs.size(); ++r) out << "\trun" << r;
  out << "\tmean\tlo\thi\n";
  for (std::size_t i = 0; i < runs[0].steps.size(); ++i) {
    out << runs[0].steps[i];
    for (const auto& r : runs) out << "\t" << r.scores[i];
    out << "\t" << band.mean[i] << "\t" << band.lo[i] << "\t" << band.hi[i] << "\n";
  }
}

// Minimal static SVG: shaded band, individual runs in light strokes, mean in
// bold. Y axis fixed to the score range [0, 1].
inline void write_plot_svg(const std::string& path, const std::vector<PlotSeries>& runs,
                           const PlotBand& band) {
  const double w = 640, h = 400, ml = 50, mr = 15, mt = 15, mb = 35;
  double x0 = static_cast<double>(runs[0].steps.front());
  double x1 = static_cast<double>(runs[0].steps.back());
  if (x1 <= x0) x1 = x0 + 1;
  auto px = [&](double step) { return ml + (step - x0) / (x1 - x0) * (w - ml - mr); };
  auto py = [&](double v) { return h - mb - std::clamp(v, 0.0, 1.0) * (h - mt - mb); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  svg << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";

  // band polygon
  svg << "<polygon fill=\"#9ecae1\" fill-opacity=\"0.45\" stroke=\"none\" points=\"";
  for (std::size_t i = 0; i < band.hi.size(); ++i)
    svg << px(static_cast<double>(runs[0].steps[i])) << "," << py(band.hi[i]) << " ";
  for (std::size_t i = band.lo.size(); i-- > 0;)
    svg << px(static_cast<double>(runs[0].steps[i])) << "," << py(band.lo[i]) << " ";
  svg << "\"/>\n";

  auto polyline = [&](const std::vector<double>& ys, const char* stroke, double width) {
    svg << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << width
        << "\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i)
      svg << px(static_cast<double>(runs[0].steps[i])) << "," << py(ys[i]) << " ";
    svg << "\"/>\n";
  };
  for (const auto& r : runs) polyline(r.scores, "#bbbbbb", 1.0);
  polyline(band.mean, "#08519c", 2.5);

  // axes and corner labels
  svg << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\"" << h - mb
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << ml - 8 << "\" y=\"" << h - mb + 4
      << "\" text-anchor=\"end\" font-size=\"12\">0</text>\n";
  svg << "<text x=\"" << ml - 8 << "\" y=\"" << mt + 4
      << "\" text-anchor=\"end\" font-size=\"12\">1</text>\n";
  svg << "<text x=\"" << ml << "\" y=\"" << h - mb + 16 << "\" font-size=\"12\">" << runs[0].steps.front()
      << "</text>\n";
  svg << "<text x=\"" << w - mr << "\" y=\"" << h - mb + 16
      << "\" text-anchor=\"end\" font-size=\"12\">" << runs[0].steps.back() << "</text>\n";
  svg << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 8
      << "\" text-anchor=\"middle\" font-size=\"12\">step</text>\n";
  svg << "<text x=\"14\" y=\"" << (mt + h - mb) / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
      << (mt + h - mb) / 2 << ")\">success rate</text>\n";
  svg << "</svg>\n";

  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_plot_svg: cannot write " + path);
  out << svg.str();
}

// Reads the given metrics files, verifies their evaluation grids align, and
// emits <out_prefix>_series.tsv plus <out_prefix>.svg.
inline void emit_plot(const std::vector<std::string>& metrics_files, const std::string& out_prefix,
                      int resamples = 1000) {
  if (metrics_files.empty()) throw std::invalid_argument("emit_plot: no metrics files");
  std::vector<PlotSeries> runs;
  for (const auto& f : metrics_files) {
    PlotSeries s = series_from_metrics(f);
    if (s.steps.empty()) throw std::runtime_error("emit_plot: no rows in " + f);
    if (!runs.empty() && s.steps != runs[0].steps)
      throw std::runtime_error("emit_plot: evaluation steps in " + f + " do not align with " +
                               runs[0].name);
    runs.push_back(std::move(s));
  }
  PlotBand band = bootstrap_band(runs, resamples);
  write_plot_table(out_prefix + "_series.tsv", runs, band);
  write_plot_svg(out_prefix + ".svg", runs, band);
}

}  // namespace flowrl
