#include "ssdnet/parameters.hpp"

#include <cmath>

#include "ssdnet/errors.hpp"

namespace ssdnet {

Parameter& ParameterStore::add(std::string name, Tensor value) {
    if (params_.contains(name)) throw ContractError("duplicate parameter name " + name);
    Tensor grad(value.shape());
    auto [it, ok] = params_.emplace(name, Parameter{name, std::move(value), std::move(grad)});
    return it->second;
}

Parameter& ParameterStore::at(std::string_view name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("missing parameter " + std::string(name));
    return it->second;
}

const Parameter& ParameterStore::at(std::string_view name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("missing parameter " + std::string(name));
    return it->second;
}

bool ParameterStore::contains(std::string_view name) const { return params_.find(name) != params_.end(); }

std::vector<Parameter*> ParameterStore::all() {
    std::vector<Parameter*> out;
    for (auto& [name, p] : params_) out.push_back(&p);
    return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
    std::vector<const Parameter*> out;
    for (const auto& [name, p] : params_) out.push_back(&p);
    return out;
}

std::size_t ParameterStore::total_size() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.value.size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(Shape{fan_in, fan_out});
    for (double& v : t.data()) v = dist(rng);
    return t;
}

Tensor normal_tensor(Shape shape, double std, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng);
    return t;
}

}  // namespace ssdnet
