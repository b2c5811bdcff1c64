#pragma once

#include <string>
#include <vector>

namespace msd {

struct VerifyOptions {
    // Test hook: perturbs the merge weights handed to md_merge (but not to the
    // least-squares oracle) so merge_argmin must fail.
    bool corrupt_merge_weights = false;
};

struct VerifyCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct VerifyReport {
    std::vector<VerifyCheck> checks;
    double seconds = 0.0;

    bool all_passed() const;
    std::string table() const;
};

// merge_argmin, gradient_vs_fd, omega0_equivalence, grid_counts, decay_endpoints, tau_rule.
VerifyReport run_verification(const VerifyOptions& options = {});

}  // namespace msd
