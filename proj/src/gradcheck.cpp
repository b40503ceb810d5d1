#include "decs/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace decs {

double floored_relative_error(double analytic, double numeric, double floor) noexcept {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

double central_difference(double& x, double step, const std::function<double()>& f) {
  const double saved = x;
  x = saved + step;
  const double up = f();
  x = saved - step;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * step);
}

const ParameterError* GradCheckReport::worst() const noexcept {
  const ParameterError* best = nullptr;
  for (const auto& e : per_parameter_errors) {
    if (best == nullptr || e.rel_err > best->rel_err) best = &e;
  }
  return best;
}

void GradCheckReport::merge(const GradCheckReport& other, const std::string& prefix) {
  max_rel_err = std::max(max_rel_err, other.max_rel_err);
  max_abs_err = std::max(max_abs_err, other.max_abs_err);
  checked += other.checked;
  excluded += other.excluded;
  for (auto e : other.per_parameter_errors) {
    e.path = prefix + e.path;
    per_parameter_errors.push_back(std::move(e));
  }
  for (auto b : other.blocks) {
    b.path = prefix + b.path;
    blocks.push_back(std::move(b));
  }
  pass = max_rel_err <= tolerance;
}

void GradCheckBuilder::begin_block(std::string path) {
  close_block();
  current_ = BlockSummary{};
  current_.path = std::move(path);
  analytic_sq_ = 0.0;
  numeric_sq_ = 0.0;
  open_ = true;
}

void GradCheckBuilder::add(const std::string& coordinate, double analytic, double numeric) {
  const double abs_err = std::abs(analytic - numeric);
  const double rel_err = floored_relative_error(analytic, numeric, floor_);
  report_.per_parameter_errors.push_back(
      {current_.path + coordinate, rel_err, abs_err, analytic, numeric});
  report_.max_rel_err = std::max(report_.max_rel_err, rel_err);
  report_.max_abs_err = std::max(report_.max_abs_err, abs_err);
  ++report_.checked;
  ++current_.checked;
  current_.rel_err = std::max(current_.rel_err, rel_err);
  analytic_sq_ += analytic * analytic;
  numeric_sq_ += numeric * numeric;
}

void GradCheckBuilder::exclude() {
  ++report_.excluded;
  ++current_.excluded;
}

void GradCheckBuilder::close_block() {
  if (!open_) return;
  current_.analytic_norm = std::sqrt(analytic_sq_);
  current_.numeric_norm = std::sqrt(numeric_sq_);
  report_.blocks.push_back(current_);
  open_ = false;
}

GradCheckReport GradCheckBuilder::finish() {
  close_block();
  report_.pass = report_.max_rel_err <= tolerance_;
  return report_;
}

void write_report(std::ostream& os, const GradCheckReport& report) {
  char line[512];
  os << "# path analytic_norm numeric_norm rel_err\n";
  for (const auto& b : report.blocks) {
    std::snprintf(line, sizeof line, "%s %.17g %.17g %.6e\n", b.path.c_str(), b.analytic_norm,
                  b.numeric_norm, b.rel_err);
    os << line;
  }
  std::snprintf(line, sizeof line,
                "# checked=%zu excluded=%zu max_rel_err=%.6e max_abs_err=%.6e tolerance=%.3e\n",
                report.checked, report.excluded, report.max_rel_err, report.max_abs_err,
                report.tolerance);
  os << line;
  if (const auto* w = report.worst(); w != nullptr) {
    std::snprintf(line, sizeof line,
                  "# worst=%s rel_err=%.6e analytic=%.17g numeric=%.17g\n", w->path.c_str(),
                  w->rel_err, w->analytic, w->numeric);
    os << line;
  }
  os << (report.pass ? "PASS\n" : "FAIL\n");
}

}  // namespace decs
