#include "slnk/metrics.hpp"

#include <algorithm>
#include <ctime>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace slnk::metrics {

RunReport make_report_skeleton(const std::string& model_name,
                               const std::string& spec_summary, uint64_t seed) {
  RunReport r;
  r.model_name = model_name;
  std::ostringstream h;
  h << std::hex << std::setw(16) << std::setfill('0') << fnv1a(spec_summary);
  r.spec_hash = h.str();
  r.seed = seed;
  std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%d", std::gmtime(&now));
  r.date = buf;
  return r;
}

std::string RunReport::to_json() const {
  nlohmann::json j;
  j["model"] = model_name;
  j["spec_hash"] = spec_hash;
  j["seed"] = seed;
  j["date"] = date;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row;
    row["width"] = r.width;
    row["params"] = r.params;
    row["multiplies"] = r.multiplies;
    if (r.accuracy >= 0.0) row["accuracy"] = r.accuracy;
    if (r.relative_fa >= 0.0) row["relative_fa"] = r.relative_fa;
    if (r.loss >= 0.0) row["loss"] = r.loss;
    if (r.time_per_step_ms >= 0.0) row["time_per_step_ms"] = r.time_per_step_ms;
    j["rows"].push_back(row);
  }
  return j.dump(2);
}

std::string RunReport::to_table() const {
  std::ostringstream os;
  os << "Model: " << model_name << "  (spec " << spec_hash << ", seed " << seed
     << ", " << date << ")\n";
  os << std::left << std::setw(8) << "Width" << std::right << std::setw(12)
     << "Params" << std::setw(14) << "Multiplies";
  bool any_acc = false, any_fa = false, any_ms = false;
  for (const auto& r : rows) {
    any_acc |= r.accuracy >= 0.0;
    any_fa |= r.relative_fa >= 0.0;
    any_ms |= r.time_per_step_ms >= 0.0;
  }
  if (any_acc) os << std::setw(12) << "Accuracy";
  if (any_fa) os << std::setw(14) << "Rel. FA";
  if (any_ms) os << std::setw(14) << "ms/step";
  os << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(8) << r.width << std::right << std::setw(12)
       << r.params << std::setw(14) << r.multiplies;
    if (any_acc) {
      if (r.accuracy >= 0.0)
        os << std::setw(12) << std::fixed << std::setprecision(4) << r.accuracy;
      else
        os << std::setw(12) << "-";
      os << std::defaultfloat << std::setprecision(6);
    }
    if (any_fa) {
      if (r.relative_fa >= 0.0)
        os << std::setw(14) << std::fixed << std::setprecision(3) << r.relative_fa;
      else
        os << std::setw(14) << "-";
      os << std::defaultfloat << std::setprecision(6);
    }
    if (any_ms) {
      if (r.time_per_step_ms >= 0.0)
        os << std::setw(14) << std::fixed << std::setprecision(2) << r.time_per_step_ms;
      else
        os << std::setw(14) << "-";
      os << std::defaultfloat << std::setprecision(6);
    }
    os << "\n";
  }
  return os.str();
}

FaResult false_accepts_at_miss_rate(const std::vector<double>& scores,
                                    const std::vector<int64_t>& labels,
                                    double target_miss) {
  if (scores.size() != labels.size())
    throw MetricError("scores and labels must have equal length");
  if (target_miss < 0.0 || target_miss >= 1.0)
    throw MetricError("target miss rate must be in [0, 1)");
  std::vector<double> pos, neg;
  for (size_t i = 0; i < scores.size(); ++i)
    (labels[i] == 1 ? pos : neg).push_back(scores[i]);
  if (pos.empty() || neg.empty())
    throw MetricError("false-accept metric needs both positives and negatives");

  std::sort(pos.begin(), pos.end());
  // Allow floor(target * P) misses: the threshold is the (k+1)-th smallest
  // positive score, so at most k positives land strictly below it.
  const int64_t p = static_cast<int64_t>(pos.size());
  const int64_t k = static_cast<int64_t>(target_miss * static_cast<double>(p));
  FaResult r;
  r.threshold = pos[static_cast<size_t>(std::min(k, p - 1))];
  r.positives = p;
  r.negatives = static_cast<int64_t>(neg.size());
  int64_t missed = 0;
  for (double s : pos)
    if (s < r.threshold) ++missed;
  r.miss_rate = static_cast<double>(missed) / static_cast<double>(p);
  for (double s : neg)
    if (s >= r.threshold) ++r.false_accepts;
  return r;
}

double relative_false_accepts(const FaResult& model, const FaResult& baseline) {
  if (baseline.false_accepts == 0)
    throw MetricError("baseline has zero false accepts; relative FA undefined");
  return static_cast<double>(model.false_accepts) /
         static_cast<double>(baseline.false_accepts);
}

}  // namespace slnk::metrics
