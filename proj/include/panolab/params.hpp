#pragma once

// Named parameter storage shared by the adapter and the denoiser.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "panolab/autodiff.hpp"

namespace panolab {

class ParamSet {
public:
    /// Adds a parameter; names must be unique. References stay valid.
    Parameter& add(std::string name, VideoTensor value);

    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    Parameter* find(const std::string& name) noexcept;
    bool contains(const std::string& name) const noexcept { return index_.count(name) != 0; }

    /// Insertion order.
    std::vector<Parameter*> all() const;
    std::vector<Parameter*> with_prefix(std::string_view prefix) const;
    /// Total element count of parameters whose name starts with prefix.
    std::size_t numel(std::string_view prefix = {}) const;
    std::size_t size() const noexcept { return items_.size(); }

    void zero_grad();

private:
    std::vector<std::unique_ptr<Parameter>> items_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// Uniform in +-1/sqrt(fan_in), seeded from (seed, name) so adding other
/// parameters never changes this one.
VideoTensor fan_in_uniform(const Shape& shape, int fan_in, std::uint64_t seed, std::string_view name);

/// Digest over names, shapes and payloads, in order.
std::uint64_t checksum(const std::vector<Parameter*>& params) noexcept;

/// Binds parameters onto one tape, at most once each.
class ParamBinder {
public:
    using Trainable = std::function<bool(const Parameter&)>;

    ParamBinder(Tape& tape, ParamSet& params, Trainable trainable = {})
        : tape_(tape), params_(params), trainable_(std::move(trainable))
    {
    }

    Var operator()(const std::string& name);
    Tape& tape() const noexcept { return tape_; }

private:
    Tape& tape_;
    ParamSet& params_;
    Trainable trainable_;
    std::map<std::string, Var, std::less<>> bound_;
};

} // namespace panolab
