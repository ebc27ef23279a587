#pragma once

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace flowrl {

// One evaluation epoch: loss components averaged since the previous epoch,
// evaluation results, and wall-clock seconds. The seconds column is the only
// field excluded from byte-identity guarantees.
struct MetricsRow {
  std::int64_t step = 0;
  double loss_critic = 0.0;
  double loss_flow_bc = 0.0;
  double loss_distill = 0.0;
  double q_mean = 0.0;
  double eval_success = 0.0;
  double eval_return = 0.0;
  double seconds = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "step,loss_critic,loss_flow_bc,loss_distill,q_mean,eval_success,eval_return,seconds";

inline std::string format_metrics_row(const MetricsRow& r) {
  char buf[320];
  std::snprintf(buf, sizeof(buf), "%" PRId64 ",%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f", r.step,
                r.loss_critic, r.loss_flow_bc, r.loss_distill, r.q_mean, r.eval_success,
                r.eval_return, r.seconds);
  return buf;
}

// Append-only CSV sink; rows must arrive with strictly increasing steps.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) : out_(path) {
    if (!out_) throw std::runtime_error("MetricsWriter: cannot write " + path);
    out_ << kMetricsHeader << "\n";
  }

  void append(const MetricsRow& row) {
    if (row.step <= last_step_)
      throw std::invalid_argument("MetricsWriter: steps must strictly increase");
    last_step_ = row.step;
    out_ << format_metrics_row(row) << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::int64_t last_step_ = -1;
};

inline std::vector<MetricsRow> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_metrics: cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
    throw std::runtime_error("read_metrics: " + path + " is not a flowrl metrics file");
  std::vector<MetricsRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    MetricsRow r;
    if (std::sscanf(line.c_str(), "%" SCNd64 ",%lg,%lg,%lg,%lg,%lg,%lg,%lg", &r.step,
                    &r.loss_critic, &r.loss_flow_bc, &r.loss_distill, &r.q_mean, &r.eval_success,
                    &r.eval_return, &r.seconds) != 8)
      throw std::runtime_error("read_metrics: malformed line " + std::to_string(lineno) + " in " +
                               path);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace flowrl
