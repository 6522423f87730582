#include "metadmoe/io.hpp"
#include "metadmoe/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace metadmoe {

using nlohmann::json;

namespace {

const char* const kMethods[] = {"meta_dmoe", "meta_dmoe_no_adapt", "erm", "arm_bn"};
const char* const kMetrics[] = {"accuracy", "macro_f1", "worst_case_accuracy", "pearson_r", "worst_case_pearson_r"};

double metric_of(const MetricReport& r, const std::string& metric) {
  if (metric == "accuracy") return r.accuracy;
  if (metric == "macro_f1") return r.macro_f1;
  if (metric == "worst_case_accuracy") return r.worst_case_accuracy;
  if (metric == "pearson_r") return r.pearson_r;
  return r.worst_case_pearson_r;
}

/// Metric value or NaN when the record has no such method.
double cell(const RunRecord& rec, const std::string& method, const std::string& metric) {
  auto it = rec.reports.find(method);
  return it == rec.reports.end() ? std::nan("") : metric_of(it->second, metric);
}

std::string fmt(double v, int digits = 6) {
  if (!std::isfinite(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

struct Stat {
  double mean = std::nan("");
  double std = std::nan("");
  int n = 0;
};

/// Mean and unbiased standard deviation of the finite entries.
Stat stat(const std::vector<double>& xs) {
  std::vector<double> v;
  for (double x : xs) {
    if (std::isfinite(x)) v.push_back(x);
  }
  Stat s;
  s.n = static_cast<int>(v.size());
  if (v.empty()) return s;
  double sum = 0;
  for (double x : v) sum += x;
  s.mean = sum / s.n;
  if (s.n > 1) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / (s.n - 1));
  }
  return s;
}

/// Records grouped by (axis, value) in order of first appearance.
std::vector<std::vector<const RunRecord*>> groups(const std::vector<RunRecord>& records) {
  std::vector<std::vector<const RunRecord*>> out;
  for (const auto& r : records) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& g) {
      return g.front()->axis == r.axis && g.front()->axis_value == r.axis_value;
    });
    if (it == out.end()) out.push_back({&r});
    else it->push_back(&r);
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string records_csv(const std::vector<RunRecord>& records) {
  std::ostringstream out;
  out << "axis,value,seed";
  for (const char* m : kMethods) {
    for (const char* k : kMetrics) out << ',' << m << '_' << k;
  }
  out << ",runtime\n";
  for (const auto& r : records) {
    out << csv_field(r.axis) << ',' << csv_field(r.axis_value) << ',' << r.seed;
    for (const char* m : kMethods) {
      for (const char* k : kMetrics) out << ',' << fmt(cell(r, m, k));
    }
    out << ',' << fmt(r.runtime(), 3) << '\n';
  }
  return out.str();
}

std::string summary_csv(const std::vector<RunRecord>& records) {
  std::ostringstream out;
  out << "axis,value,seeds";
  for (const char* m : kMethods) {
    for (const char* k : kMetrics) out << ',' << m << '_' << k << "_mean," << m << '_' << k << "_std";
  }
  out << ",runtime_mean,runtime_std\n";
  for (const auto& g : groups(records)) {
    out << csv_field(g.front()->axis) << ',' << csv_field(g.front()->axis_value) << ',' << g.size();
    for (const char* m : kMethods) {
      for (const char* k : kMetrics) {
        std::vector<double> xs;
        for (const RunRecord* r : g) xs.push_back(cell(*r, m, k));
        const Stat s = stat(xs);
        out << ',' << fmt(s.mean) << ',' << fmt(s.std);
      }
    }
    std::vector<double> times;
    for (const RunRecord* r : g) times.push_back(r->runtime());
    const Stat t = stat(times);
    out << ',' << fmt(t.mean, 3) << ',' << fmt(t.std, 3) << '\n';
  }
  return out.str();
}

std::string curve_csv(const std::vector<CurveRow>& curve) {
  std::ostringstream out;
  out << "epoch,mean_query_loss,val_metric,beta_a,beta_s\n";
  for (const auto& c : curve) {
    out << c.epoch << ',' << fmt(c.mean_loss) << ',' << fmt(c.val_metric) << ',' << fmt(c.beta_a, 9) << ','
        << fmt(c.beta_s, 9) << '\n';
  }
  return out.str();
}

std::string ablation_plot_svg(const std::vector<RunRecord>& records, const std::string& metric) {
  const auto gs = groups(records);
  const double width = 640, height = 400, left = 70, right = 150, top = 40, bottom = 60;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const char* const colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"};

  struct Series {
    std::string method;
    std::vector<Stat> points;
  };
  std::vector<Series> series;
  double lo = INFINITY, hi = -INFINITY;
  for (const char* m : kMethods) {
    Series s{m, {}};
    bool any = false;
    for (const auto& g : gs) {
      std::vector<double> xs;
      for (const RunRecord* r : g) xs.push_back(cell(*r, m, metric));
      s.points.push_back(stat(xs));
      const Stat& p = s.points.back();
      if (p.n == 0) continue;
      any = true;
      const double sd = std::isfinite(p.std) ? p.std : 0;
      lo = std::min(lo, p.mean - sd);
      hi = std::max(hi, p.mean + sd);
    }
    if (any) series.push_back(std::move(s));
  }
  if (!(hi > lo)) {
    lo = std::isfinite(lo) ? lo - 0.5 : 0;
    hi = lo + 1;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const std::size_t n = gs.size();
  auto x_at = [&](std::size_t i) { return left + (n > 1 ? plot_w * static_cast<double>(i) / (n - 1) : plot_w / 2); };
  auto y_at = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };

  std::ostringstream out;
  out << std::fixed;
  out.precision(2);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const std::string axis_name = gs.empty() ? "" : gs.front().front()->axis;
  out << "<text x=\"" << left + plot_w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << metric
      << " vs " << axis_name << " (mean, 1 std band)</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4;
    out << "<text x=\"" << left - 6 << "\" y=\"" << y_at(v) + 4 << "\" text-anchor=\"end\">" << fmt(v, 3)
        << "</text>\n";
  }
  for (std::size_t i = 0; i < n; ++i) {
    out << "<text x=\"" << x_at(i) << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"middle\">"
        << gs[i].front()->axis_value << "</text>\n";
  }
  out << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 15 << "\" text-anchor=\"middle\">" << axis_name
      << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const char* color = colors[k % 4];
    std::ostringstream upper, lower, line;
    upper << std::fixed;
    lower << std::fixed;
    line << std::fixed;
    upper.precision(2);
    lower.precision(2);
    line.precision(2);
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < n; ++i) {
      if (s.points[i].n > 0) valid.push_back(i);
    }
    for (std::size_t i : valid) {
      const Stat& p = s.points[i];
      const double sd = std::isfinite(p.std) ? p.std : 0;
      upper << x_at(i) << ',' << y_at(p.mean + sd) << ' ';
      line << x_at(i) << ',' << y_at(p.mean) << ' ';
    }
    for (auto it = valid.rbegin(); it != valid.rend(); ++it) {
      const Stat& p = s.points[*it];
      const double sd = std::isfinite(p.std) ? p.std : 0;
      lower << x_at(*it) << ',' << y_at(p.mean - sd) << ' ';
    }
    out << "<polygon points=\"" << upper.str() << lower.str() << "\" fill=\"" << color
        << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    out << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    for (std::size_t i : valid) {
      out << "<circle cx=\"" << x_at(i) << "\" cy=\"" << y_at(s.points[i].mean) << "\" r=\"3\" fill=\"" << color
          << "\"/>\n";
    }
    const double ly = top + 15 + 20.0 * static_cast<double>(k);
    out << "<line x1=\"" << left + plot_w + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + plot_w + 35 << "\" y2=\""
        << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << left + plot_w + 40 << "\" y=\"" << ly + 4 << "\">" << s.method << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::vector<std::filesystem::path> emit_report(const std::vector<RunRecord>& records,
                                               const std::filesystem::path& dir) {
  if (records.empty()) throw std::invalid_argument("emit_report: no records");
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto write = [&](const std::string& name, const std::string& text) {
    io::write_text(dir / name, text);
    written.push_back(dir / name);
  };
  write("records.csv", records_csv(records));
  write("summary.csv", summary_csv(records));
  json all = json::array();
  for (const auto& r : records) all.push_back(r.to_json());
  write("records.json", all.dump(2) + "\n");
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].curve.empty()) write("curve_" + std::to_string(i) + ".csv", curve_csv(records[i].curve));
  }
  const bool ablation = std::any_of(records.begin(), records.end(), [](const RunRecord& r) { return !r.axis.empty(); });
  if (ablation) {
    const bool regression = records.front().config.at("data").at("task") == "regression";
    const std::vector<std::string> metrics =
        regression ? std::vector<std::string>{"pearson_r", "worst_case_pearson_r"}
                   : std::vector<std::string>{"accuracy", "macro_f1", "worst_case_accuracy"};
    for (const auto& m : metrics) write("plot_" + m + ".svg", ablation_plot_svg(records, m));
  }
  return written;
}

}  // namespace metadmoe
