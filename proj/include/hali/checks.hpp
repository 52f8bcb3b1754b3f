#pragma once

#include <string>
#include <vector>

namespace hali::checks {

struct CheckResult {
    std::string name;
    double statistic = 0;
    double bound = 0;
    double margin = 0; // positive means the bound holds with room
    bool pass = false;
};

// Finite-difference verification of every differentiable op plus a tiny
// end-to-end discriminator and generator loss (toy-2d model).
std::vector<CheckResult> gradient_suite(uint64_t seed);

// Enumeration checks of the divergence lemmas and both propositions.
// `trials` joint pairs per lemma case; trials/2 hierarchical instances for
// the propositions.
std::vector<CheckResult> theory_suite(int trials, uint64_t seed);

int count_failures(const std::vector<CheckResult>& results);
void write_report(const std::string& path, const std::vector<CheckResult>& results);
std::string format_result(const CheckResult& r);

} // namespace hali::checks
