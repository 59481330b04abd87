// SPDX-License-Identifier: Apache-2.0
//
// Randomized gradient verification. Each trial draws a small network and
// head, then compares
//   * hand-written backward passes of L1..L4 (and of the full batch loss)
//     against central finite differences, and
//   * backward passes under unit vectors / unit scale / identity g against the
//     closed-form negative gradients in losses.hpp.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace fact {

inline constexpr double kFiniteDiffTolerance = 1e-5;
inline constexpr double kClosedFormTolerance = 1e-9;

struct GradCheckOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 200;
  double step = 1e-5;
  /// Test hook: scale every analytic gradient by (1 + 1e-3) before comparing.
  bool corrupt = false;
};

struct GradCheckTerm {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t checks = 0;

  bool passed() const { return max_error <= tolerance; }
};

struct GradCheckReport {
  std::vector<GradCheckTerm> terms;
  double elapsed_seconds = 0.0;

  bool passed() const;
  double max_finite_diff_error() const;
  double max_closed_form_error() const;
  std::vector<std::string> failing() const;
};

/// Throws InvalidParameter if trials == 0.
GradCheckReport run_gradient_suite(const GradCheckOptions& options);

void write_gradcheck_report(std::ostream& out, const GradCheckReport& report);

}  // namespace fact
