#pragma once

#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ssdnet/autodiff.hpp"

namespace ssdnet {

/// Named parameters of one model. Names are unique; iteration follows
/// lexicographic name order.
class ParameterStore {
public:
    Parameter& add(std::string name, Tensor value);
    Parameter& at(std::string_view name);
    const Parameter& at(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    std::size_t count() const { return params_.size(); }
    std::size_t total_size() const;
    void zero_grad();

    /// Records the parameter on a tape.
    Var var(Tape& tape, std::string_view name) { return tape.parameter(at(name)); }

private:
    std::map<std::string, Parameter, std::less<>> params_;
};

/// Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
Tensor normal_tensor(Shape shape, double std, std::mt19937_64& rng);

}  // namespace ssdnet
