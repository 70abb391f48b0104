#include "sfda/plots.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "sfda/io.hpp"

namespace fs = std::filesystem;

namespace sfda {

namespace {

double column(const ResultRecord& r, const std::string& name) {
  if (name == "n_labels") return static_cast<double>(r.n_labels);
  const std::optional<double>* v = name == "mu_1"      ? &r.mu_1
                                   : name == "sigma_1" ? &r.sigma_1
                                   : name == "mu_2"    ? &r.mu_2
                                                       : &r.sigma_2;
  return v->value_or(0.0);
}

std::string choose_x(std::span<const ResultRecord* const> group) {
  auto varies = [&](const std::string& name) {
    std::set<double> seen;
    for (const auto* r : group) seen.insert(column(*r, name));
    return seen.size() > 1;
  };
  for (const char* name : {"n_labels", "mu_1", "mu_2", "sigma_1", "sigma_2"}) {
    if (varies(name)) return name;
  }
  return "mu_1";
}

std::string slug(std::string s) {
  for (char& c : s) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' || c == '_';
    if (!keep) c = '_';
  }
  return s;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::vector<PlotSeries> aggregate_for_plots(std::span<const ResultRecord> records) {
  if (records.empty()) throw std::invalid_argument("no records to plot");
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<const ResultRecord*>> groups;
  for (const auto& r : records) {
    auto key = std::make_pair(r.experiment_id, r.axes);
    if (!groups.contains(key)) order.push_back(key);
    groups[key].push_back(&r);
  }

  std::vector<PlotSeries> out;
  for (const auto& key : order) {
    const auto& group = groups[key];
    PlotSeries s{key.first, key.second, choose_x(group), {}};
    std::vector<std::string> methods;
    std::map<std::pair<std::string, double>, std::vector<double>> cells;
    for (const auto* r : group) {
      if (std::find(methods.begin(), methods.end(), r->method) == methods.end()) methods.push_back(r->method);
      cells[{r->method, column(*r, s.x_label)}].push_back(r->accuracy);
    }
    for (const auto& m : methods) {
      for (const auto& [cell, accs] : cells) {
        if (cell.first != m) continue;
        PlotPoint p{m, cell.second, 0.0, 0.0, accs.size()};
        for (double a : accs) p.mean += a;
        p.mean /= static_cast<double>(accs.size());
        for (double a : accs) p.std += (a - p.mean) * (a - p.mean);
        p.std = std::sqrt(p.std / static_cast<double>(accs.size()));
        s.points.push_back(p);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string render_svg(const PlotSeries& series) {
  constexpr double W = 640, H = 420, left = 60, right = 150, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  double xmin = series.points.front().x, xmax = xmin;
  for (const auto& p : series.points) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
  }
  if (xmax == xmin) {
    xmin -= 1.0;
    xmax += 1.0;
  }
  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return top + (1.0 - std::clamp(y, 0.0, 1.0)) * ph; };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << escape(series.experiment_id + " (" + series.axes + ")") << "</text>\n";
  for (int t = 0; t <= 5; ++t) {
    const double y = t / 5.0;
    svg << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << sy(y) << "\" y2=\"" << sy(y)
        << "\" stroke=\"#ddd\"/>\n"
        << "<text x=\"" << left - 6 << "\" y=\"" << sy(y) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(y)
        << "</text>\n";
  }
  std::set<double> xs;
  for (const auto& p : series.points) xs.insert(p.x);
  for (double x : xs) {
    svg << "<text x=\"" << sx(x) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
        << fmt(x) << "</text>\n";
  }
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n"
      << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
      << escape(series.x_label) << "</text>\n"
      << "<text x=\"16\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 16 " << top + ph / 2
      << ")\" text-anchor=\"middle\" font-size=\"12\">accuracy</text>\n";

  std::vector<std::string> methods;
  for (const auto& p : series.points) {
    if (std::find(methods.begin(), methods.end(), p.method) == methods.end()) methods.push_back(p.method);
  }
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const char* color = palette[m % std::size(palette)];
    std::ostringstream line;
    for (const auto& p : series.points) {
      if (p.method != methods[m]) continue;
      line << sx(p.x) << ',' << sy(p.mean) << ' ';
      svg << "<line x1=\"" << sx(p.x) << "\" x2=\"" << sx(p.x) << "\" y1=\"" << sy(p.mean - p.std) << "\" y2=\""
          << sy(p.mean + p.std) << "\" stroke=\"" << color << "\"/>\n"
          << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.mean) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << line.str()
        << "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(m);
    svg << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">" << escape(methods[m])
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<fs::path> emit_plots(std::span<const ResultRecord> records, const fs::path& out_dir) {
  const auto series = aggregate_for_plots(records);
  fs::create_directories(out_dir);
  write_results_csv(out_dir / "results.csv", records);
  std::vector<fs::path> written;
  for (const auto& s : series) {
    const std::string stem = slug(s.experiment_id + "__" + s.axes);
    std::ostringstream csv;
    csv << "method," << s.x_label << ",mean,std,count\n";
    for (const auto& p : s.points) {
      csv << p.method << ',' << fmt(p.x) << ',' << fmt(p.mean) << ',' << fmt(p.std) << ',' << p.count << '\n';
    }
    io::write_text_atomic(out_dir / (stem + ".csv"), csv.str());
    const fs::path svg = out_dir / (stem + ".svg");
    io::write_text_atomic(svg, render_svg(s));
    written.push_back(svg);
  }
  return written;
}

}  // namespace sfda
