#include "gliopipe/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "gliopipe/error.hpp"
#include "gliopipe/util.hpp"

namespace gliopipe {

// ---------------------------------------------------------------- predictions

std::vector<double> PredictionTable::scores() const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.score);
  return out;
}

std::vector<int> PredictionTable::labels() const {
  std::vector<int> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.label);
  return out;
}

std::string serialize_predictions(const PredictionTable& table) {
  std::string out = "patient_id,score,label\n";
  char buf[40];
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.score);
    out += csv_escape(r.patient_id) + "," + buf + "," + (r.label < 0 ? "" : std::to_string(r.label)) + "\n";
  }
  return out;
}

PredictionTable parse_predictions(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  PredictionTable t;
  std::size_t line_no = 0;
  int id_col = -1, score_col = -1, label_col = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (id_col < 0) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto h = to_lower(trim(cells[i]));
        if (h == "patient_id") id_col = static_cast<int>(i);
        if (h == "score") score_col = static_cast<int>(i);
        if (h == "label") label_col = static_cast<int>(i);
      }
      if (id_col < 0 || score_col < 0) throw DataError("prediction table needs patient_id and score columns");
      continue;
    }
    Prediction p;
    p.patient_id = trim(cells.at(static_cast<std::size_t>(id_col)));
    try {
      std::size_t used = 0;
      const std::string s = trim(cells.at(static_cast<std::size_t>(score_col)));
      p.score = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      if (label_col >= 0 && static_cast<std::size_t>(label_col) < cells.size()) {
        const std::string l = trim(cells[static_cast<std::size_t>(label_col)]);
        if (!l.empty()) p.label = std::stoi(l);
      }
    } catch (const std::exception&) {
      throw DataError("prediction table line " + std::to_string(line_no) + ": malformed value");
    }
    if (p.label != -1 && p.label != 0 && p.label != 1)
      throw DataError("prediction table line " + std::to_string(line_no) + ": label must be 0 or 1");
    t.rows.push_back(std::move(p));
  }
  return t;
}

void write_predictions(const PredictionTable& table, const std::filesystem::path& path) {
  write_text_file(path, serialize_predictions(table));
}

PredictionTable read_predictions(const std::filesystem::path& path) { return parse_predictions(read_text_file(path)); }

// ---------------------------------------------------------------- ROC

namespace {

struct Counts {
  std::vector<double> thresholds;
  std::vector<std::uint64_t> fp;
  std::vector<std::uint64_t> tp;
  std::uint64_t pos = 0;
  std::uint64_t neg = 0;
};

Counts cumulative_counts(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DataError("AUROC: score and label counts differ");
  Counts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1)
      ++c.pos;
    else if (labels[i] == 0)
      ++c.neg;
    else
      throw DataError("AUROC: labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw NumericalError("AUROC: non-finite score");
  }
  if (c.pos == 0 || c.neg == 0) throw DataError("AUROC undefined: labels contain a single class");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  c.thresholds.push_back(std::numeric_limits<double>::infinity());
  c.fp.push_back(0);
  c.tp.push_back(0);
  std::uint64_t fp = 0, tp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      if (labels[order[i]] == 1)
        ++tp;
      else
        ++fp;
      ++i;
    }
    c.thresholds.push_back(s);
    c.fp.push_back(fp);
    c.tp.push_back(tp);
  }
  return c;
}

// Twice the Mann-Whitney count, kept in integers; dividing by 2PN gives the area.
double area_from_counts(const Counts& c) {
  std::uint64_t twice = 0;
  for (std::size_t i = 1; i < c.fp.size(); ++i) twice += (c.fp[i] - c.fp[i - 1]) * (c.tp[i] + c.tp[i - 1]);
  const std::uint64_t denom = 2 * c.pos * c.neg;
  // Evaluate the smaller side so that an AUROC and its label complement sum to exactly 1.
  if (2 * twice <= denom) return static_cast<double>(twice) / static_cast<double>(denom);
  return 1.0 - static_cast<double>(denom - twice) / static_cast<double>(denom);
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  return area_from_counts(cumulative_counts(scores, labels));
}

RocResult roc_curve(std::span<const double> scores, std::span<const int> labels) {
  const Counts c = cumulative_counts(scores, labels);
  RocResult r;
  r.thresholds = c.thresholds;
  for (std::size_t i = 0; i < c.fp.size(); ++i) {
    r.fpr.push_back(static_cast<double>(c.fp[i]) / static_cast<double>(c.neg));
    r.tpr.push_back(static_cast<double>(c.tp[i]) / static_cast<double>(c.pos));
  }
  r.auroc = area_from_counts(c);
  return r;
}

double trapezoid_area(std::span<const double> x, std::span<const double> y) {
  double a = 0.0;
  for (std::size_t i = 1; i < x.size() && i < y.size(); ++i) a += (x[i] - x[i - 1]) * (y[i] + y[i - 1]) * 0.5;
  return a;
}

TrendLine complexity_trend(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw DataError("degenerate abscissa: need at least two points");
  const double n = static_cast<double>(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (sxx == 0.0) throw DataError("degenerate abscissa: all depths identical");
  TrendLine t;
  t.slope = sxy / sxx;
  t.intercept = my - t.slope * mx;
  t.r = syy == 0.0 ? 0.0 : sxy / std::sqrt(sxx * syy);
  return t;
}

// ---------------------------------------------------------------- report

std::string ResultRow::model_label() const {
  return "ResNet" + std::to_string(depth) + ", " + std::to_string(dim) + "D";
}

Stat summarize_values(std::span<const double> values) {
  Stat s;
  if (values.empty()) return s;
  s.n = values.size();
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  return s;
}

namespace {

std::string view_title(View v) {
  std::string s(to_string(v));
  s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

// One value per (depth, sequence): the 2D ensemble AUROC.
std::vector<std::pair<const ResultRow*, double>> ensemble_cells(const std::vector<ResultRow>& rows) {
  std::vector<std::pair<const ResultRow*, double>> out;
  std::set<std::pair<int, int>> seen;
  for (const auto& r : rows) {
    if (r.dim != 2 || !r.ensemble_test_auroc) continue;
    if (seen.insert({r.depth, static_cast<int>(r.sequence)}).second) out.push_back({&r, *r.ensemble_test_auroc});
  }
  return out;
}

std::vector<std::pair<double, double>> plot_points(const std::vector<ResultRow>& rows, int dim, Sequence seq) {
  std::vector<std::pair<double, double>> pts;
  if (dim == 2) {
    for (const auto& [r, v] : ensemble_cells(rows))
      if (r->sequence == seq) pts.push_back({static_cast<double>(r->depth), v});
  } else {
    for (const auto& r : rows)
      if (r.dim == 3 && r.sequence == seq) pts.push_back({static_cast<double>(r.depth), r.test_auroc});
  }
  std::sort(pts.begin(), pts.end());
  return pts;
}

bool distinct_abscissa(const std::vector<std::pair<double, double>>& pts) {
  for (const auto& p : pts)
    if (p.first != pts.front().first) return true;
  return false;
}

}  // namespace

ReportSummary summarize_results(const std::vector<ResultRow>& rows) {
  ReportSummary s;
  std::map<std::string, std::vector<double>> groups;
  for (const auto& r : rows) {
    if (r.dim == 2 && r.view) groups["2d_view_" + std::string(to_string(*r.view))].push_back(r.test_auroc);
    if (r.dim == 3) {
      groups["3d"].push_back(r.test_auroc);
      groups["3d_" + std::string(to_string(r.sequence))].push_back(r.test_auroc);
      groups["overall"].push_back(r.test_auroc);
    }
  }
  for (const auto& [r, v] : ensemble_cells(rows)) {
    groups["2d_ensemble"].push_back(v);
    groups["2d_ensemble_" + std::string(to_string(r->sequence))].push_back(v);
    groups["overall"].push_back(v);
  }
  for (const auto& [name, values] : groups) s.groups[name] = summarize_values(values);
  for (int dim : {2, 3})
    for (Sequence seq : kAllSequences) {
      const auto pts = plot_points(rows, dim, seq);
      if (pts.size() >= 2 && distinct_abscissa(pts))
        s.trends[std::to_string(dim) + "d_" + std::string(to_string(seq))] = complexity_trend(pts);
    }
  return s;
}

nlohmann::json ReportSummary::to_json() const {
  nlohmann::json j;
  j["groups"] = nlohmann::json::object();
  for (const auto& [name, st] : groups)
    j["groups"][name] = {{"mean", st.mean}, {"min", st.min}, {"max", st.max}, {"n", st.n}};
  j["trends"] = nlohmann::json::object();
  for (const auto& [name, t] : trends) j["trends"][name] = {{"slope", t.slope}, {"intercept", t.intercept}, {"r", t.r}};
  return j;
}

std::string report_csv(const std::vector<ResultRow>& rows, int dim) {
  std::string out = dim == 2 ? "Model,Gene,Modality,View,Val AUROC,Test AUROC,Ensemble test AUROC\n"
                             : "Model,Gene,Modality,Val AUROC,Test AUROC\n";
  std::vector<const ResultRow*> sel;
  for (const auto& r : rows)
    if (r.dim == dim) sel.push_back(&r);
  std::stable_sort(sel.begin(), sel.end(), [](const ResultRow* a, const ResultRow* b) {
    if (a->depth != b->depth) return a->depth < b->depth;
    if (a->sequence != b->sequence) return a->sequence < b->sequence;
    return a->view.value_or(View::axial) < b->view.value_or(View::axial);
  });
  for (const ResultRow* r : sel) {
    out += csv_escape(r->model_label()) + "," + std::string(to_string(r->task)) + "," +
           std::string(to_string(r->sequence)) + ",";
    if (dim == 2) out += (r->view ? view_title(*r->view) : std::string()) + ",";
    out += format_fixed(r->tune_auroc, 4) + "," + format_fixed(r->test_auroc, 4);
    if (dim == 2) out += "," + (r->ensemble_test_auroc ? format_fixed(*r->ensemble_test_auroc, 4) : std::string());
    out += "\n";
  }
  return out;
}

std::vector<ResultRow> parse_report_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::vector<std::string> header;
  std::vector<ResultRow> rows;
  auto col = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (to_lower(trim(header[i])) == name) return static_cast<int>(i);
    return -1;
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (header.empty()) {
      header = cells;
      continue;
    }
    cells.resize(header.size());
    ResultRow r;
    const std::string model = to_lower(trim(cells.at(static_cast<std::size_t>(col("model")))));
    // "resnet50, 2d"
    const auto comma = model.find(',');
    if (model.rfind("resnet", 0) != 0 || comma == std::string::npos)
      throw DataError("report row has malformed model '" + model + "'");
    r.depth = std::stoi(model.substr(6, comma - 6));
    r.dim = trim(model.substr(comma + 1)) == "3d" ? 3 : 2;
    r.task = parse_task(cells.at(static_cast<std::size_t>(col("gene"))));
    r.sequence = parse_sequence(cells.at(static_cast<std::size_t>(col("modality"))));
    if (const int v = col("view"); v >= 0 && !trim(cells[static_cast<std::size_t>(v)]).empty())
      r.view = parse_view(cells[static_cast<std::size_t>(v)]);
    r.tune_auroc = std::stod(cells.at(static_cast<std::size_t>(col("val auroc"))));
    r.test_auroc = std::stod(cells.at(static_cast<std::size_t>(col("test auroc"))));
    if (const int e = col("ensemble test auroc"); e >= 0 && !trim(cells[static_cast<std::size_t>(e)]).empty())
      r.ensemble_test_auroc = std::stod(cells[static_cast<std::size_t>(e)]);
    rows.push_back(r);
  }
  return rows;
}

std::string report_svg(const std::vector<ResultRow>& rows, int dim) {
  constexpr double W = 640, H = 420, L = 70, R = 150, T = 40, B = 60;
  std::vector<double> depths, values;
  for (Sequence seq : kAllSequences)
    for (const auto& [x, y] : plot_points(rows, dim, seq)) {
      depths.push_back(x);
      values.push_back(y);
    }
  double x0 = 0, x1 = 160, y0 = 0.5, y1 = 1.0;
  if (!depths.empty()) {
    x0 = std::max(0.0, *std::min_element(depths.begin(), depths.end()) - 5.0);
    x1 = *std::max_element(depths.begin(), depths.end()) + 5.0;
    y0 = std::max(0.0, std::floor((*std::min_element(values.begin(), values.end()) - 0.02) * 20.0) / 20.0);
    y1 = std::min(1.0, std::ceil((*std::max_element(values.begin(), values.end()) + 0.02) * 20.0) / 20.0);
    if (y1 <= y0) y1 = y0 + 0.05;
  }
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  auto f = [](double v) { return format_fixed(v, 2); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" viewBox=\"0 0 640 420\">\n";
  s += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
  s += "<text x=\"" + f(W / 2 - R / 2 + L / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"15\">Test AUROC of " + std::to_string(dim) + "D models</text>\n";
  s += "<line x1=\"" + f(L) + "\" y1=\"" + f(H - B) + "\" x2=\"" + f(W - R) + "\" y2=\"" + f(H - B) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + f(L) + "\" y1=\"" + f(T) + "\" x2=\"" + f(L) + "\" y2=\"" + f(H - B) + "\" stroke=\"black\"/>\n";
  std::set<double> ticks(depths.begin(), depths.end());
  for (double d : ticks)
    s += "<text x=\"" + f(px(d)) + "\" y=\"" + f(H - B + 18) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + std::to_string(static_cast<int>(d)) +
         "</text>\n";
  for (double y = y0; y <= y1 + 1e-9; y += 0.05)
    s += "<text x=\"" + f(L - 8) + "\" y=\"" + f(py(y) + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + format_fixed(y, 2) + "</text>\n";
  s += "<text x=\"" + f((L + W - R) / 2) + "\" y=\"" + f(H - 18) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">ResNet depth</text>\n";
  s += "<text x=\"18\" y=\"" + f((T + H - B) / 2) + "\" transform=\"rotate(-90 18 " + f((T + H - B) / 2) +
       ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">Test AUROC</text>\n";

  static const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c"};
  int legend = 0;
  for (Sequence seq : kAllSequences) {
    const auto pts = plot_points(rows, dim, seq);
    if (pts.empty()) continue;
    const char* color = kColors[static_cast<int>(seq)];
    for (const auto& [x, y] : pts)
      s += "<circle cx=\"" + f(px(x)) + "\" cy=\"" + f(py(y)) + "\" r=\"4\" fill=\"" + color + "\"/>\n";
    if (distinct_abscissa(pts)) {
      const TrendLine t = complexity_trend(pts);
      const double a = pts.front().first, b = pts.back().first;
      s += "<line x1=\"" + f(px(a)) + "\" y1=\"" + f(py(t.intercept + t.slope * a)) + "\" x2=\"" + f(px(b)) +
           "\" y2=\"" + f(py(t.intercept + t.slope * b)) + "\" stroke=\"" + color +
           "\" stroke-dasharray=\"5,3\"/>\n";
    }
    const double ly = T + 20 + 22 * legend++;
    s += "<circle cx=\"" + f(W - R + 20) + "\" cy=\"" + f(ly) + "\" r=\"4\" fill=\"" + color + "\"/>\n";
    s += "<text x=\"" + f(W - R + 30) + "\" y=\"" + f(ly + 4) + "\" font-family=\"sans-serif\" font-size=\"12\">" +
         std::string(to_string(seq)) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

ReportFiles emit_report(const std::vector<ResultRow>& rows, const ReportGrid& grid,
                        const std::filesystem::path& out_dir) {
  auto find = [&](int dim, int depth, Sequence seq, std::optional<View> view) {
    for (const auto& r : rows)
      if (r.dim == dim && r.depth == depth && r.sequence == seq && r.view == view) return &r;
    return static_cast<const ResultRow*>(nullptr);
  };
  for (int depth : grid.depths_2d)
    for (Sequence seq : grid.sequences)
      for (View v : kAllViews) {
        const ResultRow* r = find(2, depth, seq, v);
        if (r == nullptr || !r->ensemble_test_auroc)
          throw DataError("report grid incomplete: missing (ResNet" + std::to_string(depth) + " 2D, " +
                          std::string(to_string(seq)) + ", " + std::string(to_string(v)) + ")");
      }
  for (int depth : grid.depths_3d)
    for (Sequence seq : grid.sequences)
      if (find(3, depth, seq, std::nullopt) == nullptr)
        throw DataError("report grid incomplete: missing (ResNet" + std::to_string(depth) + " 3D, " +
                        std::string(to_string(seq)) + ", volume)");

  ReportFiles files;
  for (int dim : {2, 3}) {
    if ((dim == 2 ? grid.depths_2d : grid.depths_3d).empty()) continue;
    const auto tag = std::to_string(dim) + "d";
    files.csv.push_back(out_dir / ("report_" + tag + ".csv"));
    write_text_file(files.csv.back(), report_csv(rows, dim));
    files.svg.push_back(out_dir / ("auroc_" + tag + ".svg"));
    write_text_file(files.svg.back(), report_svg(rows, dim));
  }
  files.summary = out_dir / "summary.json";
  write_text_file(files.summary, summarize_results(rows).to_json().dump(2) + "\n");
  return files;
}

// ---------------------------------------------------------------- evaluation stage

PredictionTable EvaluationStage::label_test_predictions(const PredictionTable& scores) const {
  const std::vector<LabeledPatient> truth = test_partition_labels(labeling_, split_, TestLabelToken{});
  std::map<std::string, int> lookup;
  for (const auto& p : truth) lookup[p.patient_id] = p.label == Label::positive ? 1 : 0;
  PredictionTable out = scores;
  for (auto& row : out.rows) {
    const auto it = lookup.find(row.patient_id);
    if (it == lookup.end()) throw DataError("patient " + row.patient_id + " is not in the test partition");
    row.label = it->second;
  }
  return out;
}

double EvaluationStage::test_auroc(const PredictionTable& scores) const {
  const PredictionTable labeled = label_test_predictions(scores);
  const auto s = labeled.scores();
  const auto l = labeled.labels();
  return auroc(s, l);
}

}  // namespace gliopipe
