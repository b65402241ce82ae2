#include "fedseg/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fedseg {
namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing " + path.string());
  return nlohmann::json::parse(in);
}

std::string fmt(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

RunSummary load_run_summary(const fs::path& run_dir) {
  const auto manifest = read_json(run_dir / "manifest.json");
  RunSummary r;
  r.dir = run_dir;
  r.name = manifest.value("name", run_dir.filename().string());
  r.paradigm = manifest.value("paradigm", std::string("federated"));
  const auto fed = federation_config_from_json(manifest.at("federation"));
  r.mode = std::string(to_string(fed.policy.mode));
  r.h1 = fed.policy.h1;
  r.warmup_epochs = fed.policy.warmup_epochs;
  r.validation = cohort_from_json(manifest.at("validation"));
  if (manifest.contains("test")) r.test = cohort_from_json(manifest.at("test"));
  for (const auto& round : read_json(run_dir / "history.json")) r.validation_by_round.push_back(round.at("validation_score"));
  return r;
}

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series) {
  constexpr double W = 640, H = 420, L = 70, R = 170, T = 40, B = 55;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  const double pad = std::max(0.02, (y1 - y0) * 0.08);
  y0 = std::max(0.0, y0 - pad);
  y1 = std::min(1.0, y1 + pad);
  if (y1 - y0 < 1e-12) y0 = 0, y1 = 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << (L + (W - L - R) / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << escape_xml(title) << "</text>\n";
  for (int k = 0; k <= 5; ++k) {
    const double yv = y0 + (y1 - y0) * k / 5.0, xv = x0 + (x1 - x0) * k / 5.0;
    svg << "<line x1=\"" << L << "\" x2=\"" << (W - R) << "\" y1=\"" << py(yv) << "\" y2=\"" << py(yv)
        << "\" stroke=\"#e5e5e5\"/>\n"
        << "<text x=\"" << (L - 6) << "\" y=\"" << (py(yv) + 4) << "\" text-anchor=\"end\">" << fmt(yv, 3)
        << "</text>\n"
        << "<text x=\"" << px(xv) << "\" y=\"" << (H - B + 18) << "\" text-anchor=\"middle\">"
        << fmt(xv, std::abs(x1 - x0) >= 5 ? 0 : 2) << "</text>\n";
  }
  svg << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << (W - L - R) << "\" height=\"" << (H - T - B)
      << "\" fill=\"none\" stroke=\"black\"/>\n"
      << "<text x=\"" << (L + (W - L - R) / 2) << "\" y=\"" << (H - 12) << "\" text-anchor=\"middle\">"
      << escape_xml(x_label) << "</text>\n"
      << "<text transform=\"translate(18," << (T + (H - T - B) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape_xml(y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % 10];
    const auto& sr = series[s];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < sr.x.size(); ++i) svg << px(sr.x[i]) << ',' << py(sr.y[i]) << ' ';
    svg << "\"/>\n";
    for (std::size_t i = 0; i < sr.x.size(); ++i)
      svg << "<circle cx=\"" << px(sr.x[i]) << "\" cy=\"" << py(sr.y[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const double ly = T + 14 + 18.0 * static_cast<double>(s);
    svg << "<line x1=\"" << (W - R + 12) << "\" x2=\"" << (W - R + 32) << "\" y1=\"" << ly << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << (W - R + 38) << "\" y=\"" << (ly + 4) << "\">" << escape_xml(sr.label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string write_report(const std::vector<RunSummary>& runs, const fs::path& out_dir) {
  if (runs.empty()) throw std::invalid_argument("report needs at least one run");
  fs::create_directories(out_dir);

  auto scores = [](const RunSummary& r) { return r.test ? *r.test : r.validation; };
  const bool all_test = std::all_of(runs.begin(), runs.end(), [](const auto& r) { return r.test.has_value(); });

  std::ostringstream csv;
  csv << "run,paradigm,mode,h1,warmup_epochs,split,p_dice,v_dice,precision,recall\n";
  for (const auto& r : runs) {
    const auto m = scores(r);
    csv << r.name << ',' << r.paradigm << ',' << r.mode << ',' << r.h1 << ',' << r.warmup_epochs << ','
        << (r.test ? "test" : "validation") << ',' << fmt(m.p_dice, 6) << ',' << fmt(m.v_dice, 6) << ','
        << fmt(m.precision, 6) << ',' << fmt(m.recall, 6) << '\n';
  }
  std::ofstream(out_dir / "summary.csv") << csv.str();

  std::size_t name_w = 3;
  for (const auto& r : runs) name_w = std::max(name_w, r.name.size());
  std::ostringstream txt;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %-11s  %-12s  %-10s  %7s  %7s  %9s  %7s\n", static_cast<int>(name_w), "run",
                "paradigm", "mode", "split", "P-Dice", "V-Dice", "Precision", "Recall");
  txt << line << std::string(name_w + 82, '-') << '\n';
  for (const auto& r : runs) {
    const auto m = scores(r);
    std::snprintf(line, sizeof line, "%-*s  %-11s  %-12s  %-10s  %7.4f  %7.4f  %9.4f  %7.4f\n",
                  static_cast<int>(name_w), r.name.c_str(), r.paradigm.c_str(), r.mode.c_str(),
                  r.test ? "test" : "validation", m.p_dice, m.v_dice, m.precision, m.recall);
    txt << line;
  }
  std::ofstream(out_dir / "summary.txt") << txt.str();

  std::vector<Series> by_round;
  for (const auto& r : runs) {
    Series s{r.name, {}, r.validation_by_round};
    for (std::size_t i = 0; i < r.validation_by_round.size(); ++i) s.x.push_back(static_cast<double>(i + 1));
    by_round.push_back(std::move(s));
  }
  std::ofstream(out_dir / "validation_vs_round.svg")
      << line_plot_svg("Central validation score per round", "round", "validation score", by_round);

  const std::string split = all_test ? "test" : "held-out";
  // Sweeps: one series per mode, mean score at each setting.
  auto sweep = [&](auto key, const char* file, const char* x_label) {
    std::map<std::string, std::map<double, std::pair<double, int>>> acc;
    std::set<double> distinct;
    for (const auto& r : runs) {
      const double k = key(r);
      distinct.insert(k);
      auto& cell = acc[r.mode][k];
      cell.first += scores(r).v_dice;
      cell.second += 1;
    }
    if (distinct.size() < 2) return;
    std::vector<Series> series;
    for (const auto& [mode, points] : acc) {
      Series s{mode, {}, {}};
      for (const auto& [k, v] : points) {
        s.x.push_back(k);
        s.y.push_back(v.first / v.second);
      }
      series.push_back(std::move(s));
    }
    std::ofstream(out_dir / file) << line_plot_svg(std::string(split) + " V-Dice vs " + x_label, x_label,
                                                   split + " V-Dice", series);
  };
  sweep([](const RunSummary& r) { return r.h1; }, "v_dice_vs_h1.svg", "H1");
  sweep([](const RunSummary& r) { return static_cast<double>(r.warmup_epochs); }, "v_dice_vs_warmup.svg",
        "warm-up epochs");
  return txt.str();
}

}  // namespace fedseg
