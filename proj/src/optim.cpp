#include "panolab/optim.hpp"

#include <cmath>

#include "panolab/error.hpp"

namespace panolab {

Adam::Adam(AdamConfig cfg) : cfg_(cfg)
{
    if (!(cfg.lr > 0.0f))
        throw ArgumentError("adam: learning rate must be positive, got " + std::to_string(cfg.lr));
    if (!(cfg.beta1 >= 0.0f && cfg.beta1 < 1.0f && cfg.beta2 >= 0.0f && cfg.beta2 < 1.0f))
        throw ArgumentError("adam: betas must lie in [0, 1)");
}

void Adam::step(std::span<Parameter* const> params)
{
    ++step_;
    const double c1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), step_);
    const double c2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), step_);
    for (Parameter* p : params) {
        Moments& mo = moments_[p->name];
        const std::size_t n = p->value.numel();
        if (mo.m.size() != n) {
            mo.m.assign(n, 0.0f);
            mo.v.assign(n, 0.0f);
        }
        float* w = p->value.raw();
        const float* g = p->grad.raw();
        for (std::size_t i = 0; i < n; ++i) {
            mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0f - cfg_.beta1) * g[i];
            mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0f - cfg_.beta2) * g[i] * g[i];
            const double mhat = mo.m[i] / c1;
            const double vhat = mo.v[i] / c2;
            w[i] = static_cast<float>(w[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }
}

} // namespace panolab
