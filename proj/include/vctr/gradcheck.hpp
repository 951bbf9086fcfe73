#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vctr/tensor.hpp"

namespace vctr {

using GradFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckOptions {
    double step = 1e-6;
    // Entries probed per input tensor; 0 probes all of them.
    std::size_t max_entries = 0;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    std::string module;
    std::string name;
    double error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    double tolerance = 0.0;
    std::size_t entries = 0;
    bool pass = false;
};

// Compares reverse-mode gradients of sum(w * fn(inputs)), w a fixed random
// weighting, against central differences. Inputs are perturbed in place, so
// they may alias module parameters captured by `fn`.
GradCheckResult check_gradients(const std::string& name, const GradFn& fn, std::vector<Tensor> inputs,
                                double tolerance, const GradCheckOptions& opts = {});

// Names accepted by run_gradcheck_suite besides "all".
std::vector<std::string> gradcheck_modules();

// Runs the finite-difference cases for one module (or "all"). A tolerance
// given here replaces every per-case default. Throws ConfigError for an
// unknown module name.
std::vector<GradCheckResult> run_gradcheck_suite(const std::string& module, std::uint64_t seed,
                                                 std::optional<double> tolerance = std::nullopt);

}  // namespace vctr
