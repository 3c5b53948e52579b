#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "reengage/harness.hpp"

namespace reengage::harness {

namespace fs = std::filesystem;

namespace {

struct SeedSeries {
  std::string config_id;
  std::string label;
  std::vector<std::pair<long, double>> points;  // (env_step, success)
};

std::uint64_t fnv64_str(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

SeedSeries read_seed_dir(const std::string& dir) {
  SeedSeries out;
  std::ifstream cfg(dir + "/config.txt");
  if (!cfg) throw std::runtime_error("curves: missing config.txt in " + dir);
  std::stringstream cfgss;
  cfgss << cfg.rdbuf();
  const std::string echo = cfgss.str();
  std::ostringstream id;
  id << std::hex << std::setw(16) << std::setfill('0') << fnv64_str(echo);
  out.config_id = id.str();

  // compact label from the distinguishing keys
  std::string env, algo, alpha, d;
  std::stringstream lines(echo);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind("env.name = ", 0) == 0) env = line.substr(11);
    if (line.rfind("algo = ", 0) == 0) algo = line.substr(7);
    if (line.rfind("alpha = ", 0) == 0) alpha = line.substr(8);
    if (line.rfind("env.d = ", 0) == 0) d = line.substr(8);
  }
  out.label = env + " d=" + d + " " + algo + " alpha=" + alpha;

  std::ifstream evals(dir + "/evals.csv");
  if (!evals) throw std::runtime_error("curves: missing evals.csv in " + dir);
  std::string row;
  std::getline(evals, row);  // header
  while (std::getline(evals, row)) {
    if (row.empty()) continue;
    std::stringstream ss(row);
    std::string step, succ;
    std::getline(ss, step, ',');
    std::getline(ss, succ, ',');
    out.points.emplace_back(std::stol(step), std::stod(succ));
  }
  return out;
}

double value_at_or_before(const std::vector<std::pair<long, double>>& pts, long step) {
  double v = pts.empty() ? 0.0 : pts.front().second;
  for (const auto& [s, y] : pts) {
    if (s > step) break;
    v = y;
  }
  return v;
}

}  // namespace

std::vector<CurveSeries> aggregate_curves(const std::vector<std::string>& run_dirs,
                                          std::ostream& warnings) {
  if (run_dirs.empty()) throw std::invalid_argument("curves: need at least one run directory");

  std::map<std::string, std::vector<SeedSeries>> by_config;
  for (const auto& dir : run_dirs) {
    // accept either a seed dir or a parent containing seed_* dirs
    if (fs::exists(dir + "/evals.csv")) {
      SeedSeries s = read_seed_dir(dir);
      by_config[s.config_id].push_back(std::move(s));
      continue;
    }
    bool found = false;
    if (fs::is_directory(dir)) {
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory() && entry.path().filename().string().rfind("seed_", 0) == 0 &&
            fs::exists(entry.path() / "evals.csv")) {
          SeedSeries s = read_seed_dir(entry.path().string());
          by_config[s.config_id].push_back(std::move(s));
          found = true;
        }
      }
    }
    if (!found) throw std::runtime_error("curves: no evals.csv under " + dir);
  }

  std::vector<CurveSeries> out;
  for (auto& [config_id, seeds] : by_config) {
    // coarsest common grid: the seed with the fewest evaluation points
    std::size_t coarsest = 0;
    bool mismatch = false;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      if (seeds[i].points.size() != seeds[0].points.size()) mismatch = true;
      if (seeds[i].points.size() < seeds[coarsest].points.size()) coarsest = i;
    }
    if (mismatch)
      warnings << "warning: mismatched evaluation grids for config " << config_id
               << "; resampling to the coarsest grid\n";

    CurveSeries series;
    series.config_id = config_id;
    series.label = seeds[0].label;
    for (const auto& [step, unused] : seeds[coarsest].points) {
      CurvePoint p;
      p.step = step;
      p.n_seeds = static_cast<int>(seeds.size());
      double sum = 0.0, sumsq = 0.0;
      for (const auto& s : seeds) {
        const double v = value_at_or_before(s.points, step);
        sum += v;
        sumsq += v * v;
      }
      p.mean = sum / p.n_seeds;
      p.stddev = std::sqrt(std::max(0.0, sumsq / p.n_seeds - p.mean * p.mean));
      series.points.push_back(p);
    }
    out.push_back(std::move(series));
  }
  return out;
}

void write_curves_csv(const std::vector<CurveSeries>& series, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("curves: cannot write " + path);
  f << "config_id,step,mean,std,n_seeds\n" << std::setprecision(12);
  for (const auto& s : series)
    for (const auto& p : s.points)
      f << s.config_id << "," << p.step << "," << p.mean << "," << p.stddev << "," << p.n_seeds
        << "\n";
}

void write_curves_svg(const std::vector<CurveSeries>& series, const std::string& path) {
  const int width = 880, height = 560;
  const int ml = 70, mr = 220, mt = 30, mb = 60;
  const double plot_w = width - ml - mr, plot_h = height - mt - mb;

  long max_step = 1;
  for (const auto& s : series)
    for (const auto& p : s.points) max_step = std::max(max_step, p.step);

  auto sx = [&](double step) { return ml + plot_w * step / static_cast<double>(max_step); };
  auto sy = [&](double v) { return mt + plot_h * (1.0 - std::clamp(v, 0.0, 1.0)); };

  const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                           "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

  std::ofstream f(path);
  if (!f) throw std::runtime_error("curves: cannot write " + path);
  f << std::setprecision(6);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << plot_w << "\" height=\"" << plot_h
    << "\" fill=\"none\" stroke=\"#333\"/>\n";

  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    f << "<line x1=\"" << ml - 4 << "\" y1=\"" << sy(v) << "\" x2=\"" << ml << "\" y2=\"" << sy(v)
      << "\" stroke=\"#333\"/>\n";
    f << "<text x=\"" << ml - 10 << "\" y=\"" << sy(v) + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" << v
      << "</text>\n";
    const long step = static_cast<long>(max_step * v);
    f << "<line x1=\"" << sx(step) << "\" y1=\"" << mt + plot_h << "\" x2=\"" << sx(step)
      << "\" y2=\"" << mt + plot_h + 4 << "\" stroke=\"#333\"/>\n";
    f << "<text x=\"" << sx(step) << "\" y=\"" << mt + plot_h + 18
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << step
      << "</text>\n";
  }
  f << "<text x=\"" << ml + plot_w / 2 << "\" y=\"" << height - 14
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">environment "
       "steps</text>\n";
  f << "<text x=\"18\" y=\"" << mt + plot_h / 2
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
       "transform=\"rotate(-90 18 "
    << mt + plot_h / 2 << ")\">success rate</text>\n";

  int color = 0;
  for (const auto& s : series) {
    const char* c = palette[color % 8];
    if (!s.points.empty()) {
      std::ostringstream band;
      for (const auto& p : s.points) band << sx(p.step) << "," << sy(p.mean + p.stddev) << " ";
      for (auto it = s.points.rbegin(); it != s.points.rend(); ++it)
        band << sx(it->step) << "," << sy(it->mean - it->stddev) << " ";
      f << "<polygon points=\"" << band.str() << "\" fill=\"" << c
        << "\" opacity=\"0.15\" stroke=\"none\"/>\n";
      std::ostringstream line;
      for (const auto& p : s.points) line << sx(p.step) << "," << sy(p.mean) << " ";
      f << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << c
        << "\" stroke-width=\"2\"/>\n";
    }
    const double ly = mt + 16 + 18 * color;
    f << "<line x1=\"" << width - mr + 12 << "\" y1=\"" << ly << "\" x2=\"" << width - mr + 34
      << "\" y2=\"" << ly << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    f << "<text x=\"" << width - mr + 40 << "\" y=\"" << ly + 4
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.label << "</text>\n";
    ++color;
  }
  f << "</svg>\n";
}

}  // namespace reengage::harness
