#pragma once

// Finite-difference verification of the reverse-mode gradients. The oracle is
// plain central differencing of the forward evaluation; it never touches the
// analytic backward path it checks.

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "egoflow/tensor.hpp"

namespace egoflow {

struct GradCheckCase {
    std::string name;
    std::function<Tensor<double>()> loss;  // rebuilds the graph from the captured leaves
    std::vector<Tensor<double>> leaves;
    int max_probes_total = 0;  // 0 = probe every element of every leaf
    double step_override = 0;  // 0 = use the suite's h. Deep composites need a
                               // larger step: the cancellation noise of a long
                               // evaluation chain dominates (up-dn) below it.
};

struct GradCheckReport {
    std::string name;
    int instances = 0;
    double max_rel_err = 0;
    bool pass = false;
};

/// Max of |analytic - central_difference| / max(1, |fd|) over probed elements.
double check_case(const GradCheckCase& c, double h = 1e-5, std::uint64_t probe_seed = 0);

/// One instance of every differentiable op and loss (and the small
/// end-to-end network when include_end_to_end is set).
std::vector<GradCheckCase> gradient_suite_cases(std::uint64_t seed, bool include_end_to_end);

/// Runs `instances` seeded instances per case; the end-to-end case is capped
/// at two instances. Prints one line per op when log is given.
std::vector<GradCheckReport> run_gradient_suite(int instances, std::uint64_t seed,
                                                double h = 1e-5, double tol = 1e-4,
                                                std::ostream* log = nullptr);

}  // namespace egoflow
