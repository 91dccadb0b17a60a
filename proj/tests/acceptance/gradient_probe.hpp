#pragma once

#include <string>
#include <vector>

// Float64 gradient probe shared by the acceptance binary and the unit tests.
// Kept free of library types so float and double builds can both include it.
struct GradientProbeCase {
    std::string name;
    double max_rel_error = 0;
    int probed = 0;
};

struct GradientProbeSummary {
    std::vector<GradientProbeCase> cases;
    double worst() const {
        double w = 0;
        for (const auto& c : cases) w = c.max_rel_error > w ? c.max_rel_error : w;
        return w;
    }
};

/// Central differences (step 1e-6) against the analytic encoder gradient of
/// total_loss for FULL / NO_LATENT / NO_PERCEPTUAL weights on both latent kinds,
/// masked and unmasked. `params_per_case` coordinates are probed per case.
GradientProbeSummary run_gradient_probe(int params_per_case = 10, unsigned seed = 7);

/// Largest deviation of the cosine latent loss from its closed form on the
/// identical / opposite / 45-degree fixtures (0, 2, 1 - sqrt(2)/2).
double cosine_fixture_error();
