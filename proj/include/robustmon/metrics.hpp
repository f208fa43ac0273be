#ifndef ROBUSTMON_METRICS_HPP
#define ROBUSTMON_METRICS_HPP

// Tolerance-window confusion counts, precision/recall/F1 and robustness error.

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustmon/error.hpp"
#include "robustmon/util.hpp"

namespace robustmon::metrics {

struct ToleranceParams {
  long delta = 6;
};

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

inline Scores prf_scores(const ConfusionCounts& c) {
  Scores s;
  const auto tp = static_cast<double>(c.tp);
  if (c.tp + c.fp > 0) s.precision = tp / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) s.recall = tp / static_cast<double>(c.tp + c.fn);
  if (c.total() > 0) s.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

/// Confusion counts for one trace. A step is ground-truth positive when G
/// fires anywhere in [t, t+delta]; it is a hit when P fired anywhere in
/// [t-delta, t]. Negative steps are scored pointwise. Windows are clamped to
/// the series.
inline ConfusionCounts tolerance_confusion(std::span<const int> p, std::span<const int> g,
                                           const ToleranceParams& prm = {}) {
  if (p.size() != g.size()) throw ShapeError("prediction and ground-truth series differ in length");
  if (prm.delta < 0) throw InvalidArgument("delta must be >= 0");
  const auto n = p.size();
  const auto d = static_cast<std::size_t>(prm.delta);
  // prefix counts: cp[i] = number of positives in [0, i)
  std::vector<std::size_t> cp(n + 1, 0), cg(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    cp[i + 1] = cp[i] + (p[i] != 0 ? 1 : 0);
    cg[i + 1] = cg[i] + (g[i] != 0 ? 1 : 0);
  }
  ConfusionCounts c;
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t g_end = std::min(n, t + d + 1);
    const bool gt_positive = cg[g_end] > cg[t];
    if (gt_positive) {
      const std::size_t p_begin = t >= d ? t - d : 0;
      if (cp[t + 1] > cp[p_begin]) {
        ++c.tp;
      } else {
        ++c.fn;
      }
    } else if (p[t] != 0) {
      ++c.fp;
    } else {
      ++c.tn;
    }
  }
  return c;
}

/// One scored series: predictions and ground truth for consecutive steps of a trace.
struct Series {
  std::vector<int> p;
  std::vector<int> g;
};

inline ConfusionCounts tolerance_confusion(const std::vector<Series>& series, const ToleranceParams& prm = {}) {
  ConfusionCounts total;
  for (const auto& s : series) total += tolerance_confusion(s.p, s.g, prm);
  return total;
}

/// Step coordinates of a sample; used to rebuild per-trace series.
struct StepRef {
  std::string trace_id;
  long t = 0;
  int ground_truth = 0;
};

/// Groups per-sample predictions into per-trace series ordered by step.
inline std::vector<Series> group_series(std::span<const StepRef> refs, std::span<const int> preds) {
  if (refs.size() != preds.size()) throw ShapeError("sample references and predictions differ in length");
  std::map<std::string, std::vector<std::size_t>> by_trace;
  for (std::size_t i = 0; i < refs.size(); ++i) by_trace[refs[i].trace_id].push_back(i);
  std::vector<Series> out;
  for (auto& [id, idx] : by_trace) {
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return refs[a].t < refs[b].t; });
    Series s;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto i = idx[k];
      if (k > 0 && refs[i].t == refs[idx[k - 1]].t) throw InvalidArgument("duplicate step in trace " + id);
      s.p.push_back(preds[i] != 0 ? 1 : 0);
      s.g.push_back(refs[i].ground_truth != 0 ? 1 : 0);
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct FlipCounts {
  std::size_t safe_to_unsafe = 0;
  std::size_t unsafe_to_safe = 0;
  std::size_t total() const { return safe_to_unsafe + unsafe_to_safe; }
};

struct PerturbationId {
  std::string kind = "none";
  double magnitude = 0.0;
  std::uint64_t seed = 0;
};

struct RobustnessReport {
  std::string model;
  PerturbationId perturbation;
  std::size_t samples = 0;
  ConfusionCounts clean;
  ConfusionCounts perturbed;
  double robustness_error = 0.0;
  FlipCounts flips;
};

/// Fraction of samples whose predicted class differs between the two arrays.
inline double robustness_error(std::span<const int> clean, std::span<const int> perturbed,
                               FlipCounts* flips = nullptr) {
  if (clean.size() != perturbed.size()) throw ShapeError("clean and perturbed batches are misaligned");
  if (clean.empty()) throw InvalidArgument("robustness error of an empty batch");
  FlipCounts f;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const bool a = clean[i] != 0, b = perturbed[i] != 0;
    if (!a && b) ++f.safe_to_unsafe;
    if (a && !b) ++f.unsafe_to_safe;
  }
  if (flips) *flips = f;
  return static_cast<double>(f.total()) / static_cast<double>(clean.size());
}

inline RobustnessReport make_report(std::string model, PerturbationId perturbation,
                                    std::span<const StepRef> refs, std::span<const int> clean,
                                    std::span<const int> perturbed, const ToleranceParams& prm = {}) {
  RobustnessReport r;
  r.model = std::move(model);
  r.perturbation = std::move(perturbation);
  r.samples = clean.size();
  r.robustness_error = robustness_error(clean, perturbed, &r.flips);
  r.clean = tolerance_confusion(group_series(refs, clean), prm);
  r.perturbed = tolerance_confusion(group_series(refs, perturbed), prm);
  return r;
}

inline nlohmann::ordered_json to_json(const ConfusionCounts& c) {
  const auto s = prf_scores(c);
  return {{"tp", c.tp},
          {"fp", c.fp},
          {"tn", c.tn},
          {"fn", c.fn},
          {"precision", s.precision},
          {"recall", s.recall},
          {"acc", s.accuracy},
          {"f1", s.f1}};
}

inline nlohmann::ordered_json to_json(const RobustnessReport& r) {
  return {{"model", r.model},
          {"perturbation",
           {{"kind", r.perturbation.kind},
            {"magnitude", r.perturbation.magnitude},
            {"seed", r.perturbation.seed}}},
          {"samples", r.samples},
          {"clean", to_json(r.clean)},
          {"perturbed", to_json(r.perturbed)},
          {"robustness_error", r.robustness_error},
          {"flips", {{"safe_to_unsafe", r.flips.safe_to_unsafe}, {"unsafe_to_safe", r.flips.unsafe_to_safe}}}};
}

inline ConfusionCounts confusion_from_json(const nlohmann::json& j) {
  return {j.at("tp").get<std::size_t>(), j.at("fp").get<std::size_t>(), j.at("tn").get<std::size_t>(),
          j.at("fn").get<std::size_t>()};
}

inline RobustnessReport report_from_json(const nlohmann::json& j) {
  RobustnessReport r;
  r.model = j.at("model").get<std::string>();
  const auto& p = j.at("perturbation");
  r.perturbation = {p.at("kind").get<std::string>(), p.at("magnitude").get<double>(),
                    p.at("seed").get<std::uint64_t>()};
  r.samples = j.at("samples").get<std::size_t>();
  r.clean = confusion_from_json(j.at("clean"));
  r.perturbed = confusion_from_json(j.at("perturbed"));
  r.robustness_error = j.at("robustness_error").get<double>();
  r.flips = {j.at("flips").at("safe_to_unsafe").get<std::size_t>(),
             j.at("flips").at("unsafe_to_safe").get<std::size_t>()};
  return r;
}

/// Model x magnitude matrix of mean robustness error (over seeds) for one
/// perturbation kind. Rows follow first appearance, columns ascend.
inline std::string robustness_matrix_csv(const std::vector<RobustnessReport>& reports, const std::string& kind) {
  std::vector<std::string> models;
  std::set<double> levels;
  std::map<std::pair<std::string, double>, std::pair<double, std::size_t>> cells;
  for (const auto& r : reports) {
    if (r.perturbation.kind != kind) continue;
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    levels.insert(r.perturbation.magnitude);
    auto& cell = cells[{r.model, r.perturbation.magnitude}];
    cell.first += r.robustness_error;
    cell.second += 1;
  }
  std::string out = "model";
  for (double m : levels) out += "," + format_double(m);
  out += '\n';
  for (const auto& model : models) {
    out += model;
    for (double m : levels) {
      out += ',';
      auto it = cells.find({model, m});
      if (it != cells.end()) out += format_double(it->second.first / static_cast<double>(it->second.second));
    }
    out += '\n';
  }
  return out;
}

/// Writes `robustness.json` and one `robustness_<kind>.csv` per perturbation
/// kind into `dir`. Returns the written paths.
inline std::vector<std::string> emit_report(const std::vector<RobustnessReport>& reports, const std::string& dir) {
  if (reports.empty()) throw InvalidArgument("no reports to emit");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  std::vector<std::string> kinds;
  for (const auto& r : reports) {
    arr.push_back(to_json(r));
    if (std::find(kinds.begin(), kinds.end(), r.perturbation.kind) == kinds.end()) kinds.push_back(r.perturbation.kind);
  }
  std::vector<std::string> paths;
  const auto json_path = (std::filesystem::path(dir) / "robustness.json").string();
  write_file(json_path, arr.dump(2) + "\n");
  paths.push_back(json_path);
  for (const auto& k : kinds) {
    const auto p = (std::filesystem::path(dir) / ("robustness_" + k + ".csv")).string();
    write_file(p, robustness_matrix_csv(reports, k));
    paths.push_back(p);
  }
  return paths;
}

}  // namespace robustmon::metrics

#endif  // ROBUSTMON_METRICS_HPP
