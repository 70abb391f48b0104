#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sfda/experiments.hpp"

namespace sfda {

// Mean and population std of one method at one x value.
struct PlotPoint {
  std::string method;
  double x = 0.0;
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

struct PlotSeries {
  std::string experiment_id;
  std::string axes;
  std::string x_label;  // n_labels, mu_1, sigma_1 or mu_2
  std::vector<PlotPoint> points;
};

// Groups records by (experiment_id, axes) and picks the column that varies
// within each group as the x axis.
std::vector<PlotSeries> aggregate_for_plots(std::span<const ResultRecord> records);

std::string render_svg(const PlotSeries& series);

// One SVG plus one aggregated CSV per series, and a copy of the raw records
// as results.csv. Returns the written SVG paths.
std::vector<std::filesystem::path> emit_plots(std::span<const ResultRecord> records,
                                              const std::filesystem::path& out_dir);

}  // namespace sfda
