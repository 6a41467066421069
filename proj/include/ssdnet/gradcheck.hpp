#pragma once

#include <functional>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssdnet/autodiff.hpp"

namespace ssdnet {

/// A deterministic tensor program mapping input variables to a scalar.
using TapeProgram = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Compares reverse-mode gradients against central finite differences.
///
/// The relative error per entry is |analytic - numeric| divided by
/// max(|analytic|, |numeric|, 1e-8); the maximum over all entries of all
/// inputs is returned. The program runs on eval-mode tapes, so dropout is
/// inactive.
GradCheckResult grad_check(const TapeProgram& program, std::span<const Tensor> inputs, double eps = 1e-5);

/// Same check with respect to a set of parameters, perturbed in place.
GradCheckResult grad_check_parameters(const std::function<Var(Tape&)>& program, std::span<Parameter* const> params,
                                      double eps = 1e-5);

double relative_error(double analytic, double numeric);

/// One primitive under test: the program reduces the primitive's output to a
/// scalar through a fixed random projection.
struct PrimitiveCheck {
    std::string name;
    TapeProgram program;
    std::vector<Tensor> inputs;
};

/// Every differentiable primitive, with inputs kept away from kinks.
std::vector<PrimitiveCheck> primitive_checks(std::uint64_t seed = 11);
std::vector<std::string> primitive_names();

}  // namespace ssdnet
