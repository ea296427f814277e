#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace deformreg {

// Central finite differences in binary64 against every analytic gradient.
struct GradcheckOptions {
    int instances = 20;
    std::uint64_t seed = 0;
    double tolerance = 1e-4;       // relative error, binary64 paths
    double tolerance_f32 = 1e-3;   // relative error, binary32 conv path
    double epsilon = 1e-6;
};

struct GradcheckCase {
    std::string name;
    int instances = 0;
    int failures = 0;
    double max_rel_error = 0.0;
    double tolerance = 0.0;

    bool passed() const { return instances > 0 && failures == 0; }
};

// ||a - b|| / max(||a||, ||b||, 1e-12)
double relative_error(const std::vector<double>& a, const std::vector<double>& b);

std::vector<GradcheckCase> run_gradchecks(const GradcheckOptions& opts);

} // namespace deformreg
