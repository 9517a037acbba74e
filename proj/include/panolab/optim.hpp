#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "panolab/autodiff.hpp"

namespace panolab {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

/// Bias-corrected Adam. Moments are keyed by parameter name, so a parameter
/// set may be passed in any order between steps.
class Adam {
public:
    explicit Adam(AdamConfig cfg);

    /// Applies one update to every parameter from its accumulated grad.
    void step(std::span<Parameter* const> params);

    int steps() const noexcept { return step_; }
    const AdamConfig& config() const noexcept { return cfg_; }

private:
    struct Moments {
        std::vector<float> m;
        std::vector<float> v;
    };

    AdamConfig cfg_;
    int step_ = 0;
    std::unordered_map<std::string, Moments> moments_;
};

} // namespace panolab
