#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace decs {

/// Relative error with a magnitude floor: |a - b| / max(|a|, |b|, floor).
/// Below the floor the comparison degrades to an absolute one, which is what
/// makes near-zero gradients (stationary points) checkable at all.
double floored_relative_error(double analytic, double numeric, double floor) noexcept;

/// Central difference (f(x+h) - f(x-h)) / 2h of `f` along coordinate `x`,
/// restoring the coordinate afterwards.
double central_difference(double& x, double step, const std::function<double()>& f);

struct ParameterError {
  std::string path;
  double rel_err = 0.0;
  double abs_err = 0.0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct BlockSummary {
  std::string path;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double rel_err = 0.0;  ///< worst coordinate error inside the block
  std::size_t checked = 0;
  std::size_t excluded = 0;
};

/// Outcome of comparing analytic gradients to finite differences.
/// Invariant: pass == (max_rel_err <= tolerance).
struct GradCheckReport {
  double tolerance = 0.0;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::vector<ParameterError> per_parameter_errors;
  std::vector<BlockSummary> blocks;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  bool pass = true;

  /// Coordinate with the largest relative error, or nullptr when nothing was checked.
  const ParameterError* worst() const noexcept;

  /// Folds another report in (e.g. one configuration of a sweep), prefixing
  /// its paths with `prefix`.
  void merge(const GradCheckReport& other, const std::string& prefix);
};

/// Accumulates coordinate comparisons for one named parameter block.
class GradCheckBuilder {
 public:
  GradCheckBuilder(double tolerance, double magnitude_floor)
      : tolerance_(tolerance), floor_(magnitude_floor) {
    report_.tolerance = tolerance;
  }

  void begin_block(std::string path);
  void add(const std::string& coordinate, double analytic, double numeric);
  void exclude();
  GradCheckReport finish();

 private:
  void close_block();

  double tolerance_;
  double floor_;
  GradCheckReport report_;
  BlockSummary current_;
  double analytic_sq_ = 0.0;
  double numeric_sq_ = 0.0;
  bool open_ = false;
};

/// Plain-text report: a header line, one line per parameter block
/// (path, analytic norm, numeric norm, rel err), then a verdict line.
void write_report(std::ostream& os, const GradCheckReport& report);

}  // namespace decs
