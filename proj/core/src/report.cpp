#include "ewcdet/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <tuple>
#include <vector>

namespace ewcdet {

namespace {

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string fmt_opt(std::optional<double> v, const char* spec = "%.4f") { return v ? fmt(*v, spec) : ""; }

std::optional<double> pct(std::optional<double> fraction) {
  if (!fraction) return std::nullopt;
  return *fraction * 100.0;
}

std::optional<double> reasonable(const std::optional<EvalReport>& r) {
  if (!r) return std::nullopt;
  return r->at(BucketId::reasonable);
}

void mr2_row(std::ostringstream& out, const std::string& prefix, const EvalReport& r) {
  out << prefix;
  for (const auto& b : kBuckets) out << ',' << format_percent(r.at(b.id));
  out << '\n';
}

struct Series {
  std::string label;
  std::string color;
  std::vector<std::pair<int, double>> points;
};

}  // namespace

std::string format_percent(std::optional<double> fraction) { return fmt_opt(pct(fraction)); }

std::string train_log_csv(const TrainLog& log, int first_epoch) {
  std::ostringstream out;
  out << "epoch,l_cls,l_reg,l_ewc,l_total,mr2_A,mr2_B\n";
  for (const auto& e : log.epochs) {
    out << (first_epoch + e.epoch - 1) << ',' << fmt(e.mean_loss.l_cls, "%.9g") << ','
        << fmt(e.mean_loss.l_reg, "%.9g") << ',' << fmt(e.mean_loss.l_ewc, "%.9g") << ','
        << fmt(e.mean_loss.l_total, "%.9g") << ',' << format_percent(reasonable(e.eval_a)) << ','
        << format_percent(reasonable(e.eval_b)) << '\n';
  }
  return out.str();
}

std::string mr2_table_csv(const ScenarioReport& report) {
  std::ostringstream out;
  out << "stage,train_domain,test_domain,reasonable,bare,partial,heavy\n";
  mr2_row(out, "train,A,A", report.before_a);
  mr2_row(out, "train,A,B", report.before_b);
  if (report.baseline) {
    mr2_row(out, "baseline_finetune,B,A", report.baseline->eval_a);
    mr2_row(out, "baseline_finetune,B,B", report.baseline->eval_b);
  }
  if (report.proposed) {
    mr2_row(out, "proposed_finetune,B,A", report.proposed->eval_a);
    mr2_row(out, "proposed_finetune,B,B", report.proposed->eval_b);
  }
  return out.str();
}

std::string forgetting_csv(const ScenarioReport& report) {
  std::ostringstream out;
  out << "arm,test_domain,bucket,mr2_before,mr2_after,absolute_increase,percent_increase\n";
  auto emit = [&](const ArmResult& arm) {
    const ForgettingReport fa = forgetting_report(report.before_a, arm.eval_a);
    const ForgettingReport fb = forgetting_report(report.before_b, arm.eval_b);
    for (const auto& [domain, fr] : {std::pair{'A', &fa}, std::pair{'B', &fb}}) {
      for (const auto& b : kBuckets) {
        const BucketChange& c = fr->at(b.id);
        out << arm.name << ',' << domain << ',' << b.name << ',' << format_percent(c.before) << ','
            << format_percent(c.after) << ',' << format_percent(c.absolute_increase) << ','
            << fmt_opt(c.percent_increase, "%.2f") << '\n';
      }
    }
  };
  if (report.baseline) emit(*report.baseline);
  if (report.proposed) emit(*report.proposed);
  return out.str();
}

std::string improvement_csv(const ScenarioReport& report) {
  std::ostringstream out;
  out << "test_domain,bucket,baseline,proposed,improvement\n";
  if (!report.baseline || !report.proposed) return out.str();
  for (const auto& [domain, base, prop] :
       {std::tuple{'A', &report.baseline->eval_a, &report.proposed->eval_a},
        std::tuple{'B', &report.baseline->eval_b, &report.proposed->eval_b}}) {
    for (const auto& b : kBuckets) {
      const auto x = base->at(b.id);
      const auto y = prop->at(b.id);
      std::optional<double> diff;
      if (x && y) diff = *x - *y;
      out << domain << ',' << b.name << ',' << format_percent(x) << ',' << format_percent(y) << ','
          << format_percent(diff) << '\n';
    }
  }
  return out.str();
}

std::string epoch_curve_csv(const ScenarioReport& report) {
  std::ostringstream out;
  out << "arm,epoch,mr2_A,mr2_B\n";
  const int offset = static_cast<int>(report.reference.log.epochs.size());
  for (const auto& e : report.reference.log.epochs)
    out << "train," << e.epoch << ',' << format_percent(reasonable(e.eval_a)) << ','
        << format_percent(reasonable(e.eval_b)) << '\n';
  for (const auto* arm : {report.baseline ? &*report.baseline : nullptr, report.proposed ? &*report.proposed : nullptr}) {
    if (arm == nullptr) continue;
    for (const auto& e : arm->log.epochs)
      out << arm->name << ',' << (offset + e.epoch) << ',' << format_percent(reasonable(e.eval_a)) << ','
          << format_percent(reasonable(e.eval_b)) << '\n';
  }
  return out.str();
}

std::string fppi_curve_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "fppi,miss_rate,threshold\n";
  for (const auto& p : report.curve)
    out << fmt(p.fppi, "%.6f") << ',' << fmt(p.miss_rate, "%.6f") << ',' << fmt(p.threshold, "%.9g") << '\n';
  return out.str();
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  const auto best = recommended_lambda(rows);
  out << "# recommended_lambda=" << (best ? fmt(*best, "%.9g") : std::string("n/a")) << '\n';
  out << "lambda,mr2_A,mr2_B,drift\n";
  for (const auto& r : rows)
    out << fmt(r.lambda, "%.9g") << ',' << format_percent(r.mr2_a) << ',' << format_percent(r.mr2_b) << ','
        << fmt(r.drift, "%.9g") << '\n';
  return out.str();
}

std::string mr2_table_text(const ScenarioReport& report) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-20s %-6s %10s %10s %10s %10s\n", "Stage", "Test", "Reasonable", "Bare",
                "Partial", "Heavy");
  out << line << std::string(71, '-') << '\n';
  auto row = [&](const char* stage, const char* test, const EvalReport& r) {
    auto cell = [&](BucketId id) {
      const auto v = r.at(id);
      return v ? fmt(*v * 100.0, "%.2f") : std::string("n/a");
    };
    std::snprintf(line, sizeof(line), "%-20s %-6s %10s %10s %10s %10s\n", stage, test,
                  cell(BucketId::reasonable).c_str(), cell(BucketId::bare).c_str(), cell(BucketId::partial).c_str(),
                  cell(BucketId::heavy).c_str());
    out << line;
  };
  row("Train on A", "A", report.before_a);
  row("Train on A", "B", report.before_b);
  if (report.baseline) {
    row("Baseline fine-tune", "A", report.baseline->eval_a);
    row("Baseline fine-tune", "B", report.baseline->eval_b);
  }
  if (report.proposed) {
    row("Proposed fine-tune", "A", report.proposed->eval_a);
    row("Proposed fine-tune", "B", report.proposed->eval_b);
  }
  out << "(MR^-2 in percent, lower is better)\n";
  return out.str();
}

std::string epoch_curve_svg(const ScenarioReport& report, char domain) {
  auto pick = [&](const EpochRecord& e) { return reasonable(domain == 'A' ? e.eval_a : e.eval_b); };
  std::vector<Series> series;
  Series train{"train", "#444444", {}};
  for (const auto& e : report.reference.log.epochs)
    if (auto v = pick(e)) train.points.emplace_back(e.epoch, *v * 100.0);
  const int offset = static_cast<int>(report.reference.log.epochs.size());
  auto arm_series = [&](const ArmResult& arm, const char* color) {
    Series s{arm.name, color, {}};
    if (!train.points.empty()) s.points.push_back(train.points.back());
    for (const auto& e : arm.log.epochs)
      if (auto v = pick(e)) s.points.emplace_back(offset + e.epoch, *v * 100.0);
    return s;
  };
  series.push_back(train);
  if (report.baseline) series.push_back(arm_series(*report.baseline, "#d62728"));
  if (report.proposed) series.push_back(arm_series(*report.proposed, "#1f77b4"));

  int max_epoch = 1;
  double y_min = 100.0, y_max = 0.0;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      max_epoch = std::max(max_epoch, x);
      y_min = std::min(y_min, y);
      y_max = std::max(y_max, y);
    }
  }
  if (y_min > y_max) y_min = 0.0, y_max = 100.0;
  y_min = std::max(0.0, std::floor(y_min / 5.0) * 5.0 - 5.0);
  y_max = std::min(100.0, std::ceil(y_max / 5.0) * 5.0 + 5.0);
  if (y_max <= y_min) y_max = y_min + 5.0;

  constexpr double W = 640, H = 400, L = 60, R = 20, T = 30, B = 50;
  auto sx = [&](double x) { return L + (x - 1) / std::max(1, max_epoch - 1) * (W - L - R); };
  auto sy = [&](double y) { return T + (y_max - y) / (y_max - y_min) * (H - T - B); };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
      << "Reasonable MR^-2 on domain " << domain << "</text>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int e = 1; e <= max_epoch; ++e) {
    out << "<text x=\"" << fmt(sx(e), "%.1f") << "\" y=\"" << H - B + 16
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << e << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double y = y_min + (y_max - y_min) * k / 4.0;
    out << "<text x=\"" << L - 6 << "\" y=\"" << fmt(sy(y) + 3, "%.1f")
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fmt(y, "%.1f") << "</text>\n";
  }
  if (offset > 0) {
    out << "<line x1=\"" << fmt(sx(offset), "%.1f") << "\" y1=\"" << T << "\" x2=\"" << fmt(sx(offset), "%.1f")
        << "\" y2=\"" << H - B << "\" stroke=\"#999999\" stroke-dasharray=\"4 3\"/>\n";
  }
  out << "<text x=\"" << W / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch</text>\n";
  double legend_y = T + 10;
  for (const auto& s : series) {
    if (s.points.empty()) continue;
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : s.points) out << fmt(sx(x), "%.1f") << ',' << fmt(sy(y), "%.1f") << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << W - R - 90 << "\" y=\"" << legend_y << "\" fill=\"" << s.color
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.label << "</text>\n";
    legend_y += 16;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace ewcdet
