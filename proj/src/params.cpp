#include "panolab/params.hpp"

#include <cmath>
#include <random>

#include "panolab/error.hpp"

namespace panolab {

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) noexcept
{
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

constexpr std::uint64_t fnv_basis = 14695981039346656037ull;

} // namespace

Parameter& ParamSet::add(std::string name, VideoTensor value)
{
    if (index_.count(name))
        throw ArgumentError("duplicate parameter name '" + name + "'");
    index_.emplace(name, items_.size());
    items_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value)));
    return *items_.back();
}

Parameter& ParamSet::get(const std::string& name)
{
    Parameter* p = find(name);
    if (!p)
        throw ArgumentError("unknown parameter '" + name + "'");
    return *p;
}

const Parameter& ParamSet::get(const std::string& name) const
{
    return const_cast<ParamSet*>(this)->get(name);
}

Parameter* ParamSet::find(const std::string& name) noexcept
{
    const auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].get();
}

std::vector<Parameter*> ParamSet::all() const
{
    std::vector<Parameter*> out;
    out.reserve(items_.size());
    for (const auto& p : items_)
        out.push_back(p.get());
    return out;
}

std::vector<Parameter*> ParamSet::with_prefix(std::string_view prefix) const
{
    std::vector<Parameter*> out;
    for (const auto& p : items_)
        if (std::string_view(p->name).starts_with(prefix))
            out.push_back(p.get());
    return out;
}

std::size_t ParamSet::numel(std::string_view prefix) const
{
    std::size_t n = 0;
    for (const Parameter* p : with_prefix(prefix))
        n += p->value.numel();
    return n;
}

void ParamSet::zero_grad()
{
    for (auto& p : items_)
        p->zero_grad();
}

VideoTensor fan_in_uniform(const Shape& shape, int fan_in, std::uint64_t seed, std::string_view name)
{
    std::mt19937_64 rng(fnv1a(fnv1a(fnv_basis, &seed, sizeof seed), name.data(), name.size()));
    const float bound = static_cast<float>(1.0 / std::sqrt(static_cast<double>(fan_in)));
    std::uniform_real_distribution<float> u(-bound, bound);
    VideoTensor t(shape);
    for (float& v : t.data())
        v = u(rng);
    return t;
}

std::uint64_t checksum(const std::vector<Parameter*>& params) noexcept
{
    std::uint64_t h = fnv_basis;
    for (const Parameter* p : params) {
        h = fnv1a(h, p->name.data(), p->name.size());
        const std::uint64_t c = checksum(p->value);
        h = fnv1a(h, &c, sizeof c);
    }
    return h;
}

Var ParamBinder::operator()(const std::string& name)
{
    const auto it = bound_.find(name);
    if (it != bound_.end())
        return it->second;
    Parameter& p = params_.get(name);
    const bool train = trainable_ ? trainable_(p) : true;
    const Var v = tape_.param(p, train);
    bound_.emplace(name, v);
    return v;
}

} // namespace panolab
