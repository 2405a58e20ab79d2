#pragma once

#include <cstdint>
#include <string>
#include <vector>

/// Central-difference checks of every hand-written backward pass, in double
/// precision on small random shapes.
namespace mtlsed::gradcheck {

inline constexpr double kStep = 1e-4;
inline constexpr double kKinkMargin = 1e-3;
inline constexpr double kKernelTolerance = 1e-4;
inline constexpr double kModelTolerance = 1e-3;

/// |a - n| / max(1e-8, |a| + |n|).
double relative_error(double analytic, double numeric);

std::vector<std::string> registered_ops();
double tolerance(const std::string& op);

/// Largest relative error over every input element of `op` for one seed.
/// Inputs that land within kKinkMargin of a non-differentiable point are
/// redrawn.
double grad_check(const std::string& op, std::uint64_t seed);

struct OpReport {
  std::string op;
  double max_rel_error = 0;
  double tolerance = 0;
  std::size_t seeds = 0;

  bool passed() const { return max_rel_error < tolerance; }
};

OpReport check_op(const std::string& op, std::size_t n_seeds = 20, std::uint64_t first_seed = 0);

}  // namespace mtlsed::gradcheck
