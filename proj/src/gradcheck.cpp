#include "ssdnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "ssdnet/errors.hpp"

namespace ssdnet {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
    return std::fabs(analytic - numeric) / denom;
}

namespace {

double evaluate(const TapeProgram& program, std::span<const Tensor> inputs) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
    Var out = program(tape, vars);
    if (out.value().size() != 1) throw ContractError("grad_check program must return a scalar");
    return out.value()[0];
}

}  // namespace

GradCheckResult grad_check(const TapeProgram& program, std::span<const Tensor> inputs, double eps) {
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> vars;
        for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
        Var out = program(tape, vars);
        tape.backward(out);
        for (const Var& v : vars) {
            const Tensor& g = tape.grad(v);
            analytic.push_back(g.empty() ? Tensor(v.shape()) : g);
        }
    }
    GradCheckResult result;
    std::vector<Tensor> work(inputs.begin(), inputs.end());
    for (std::size_t i = 0; i < work.size(); ++i) {
        for (std::size_t k = 0; k < work[i].size(); ++k) {
            const double orig = work[i][k];
            work[i][k] = orig + eps;
            const double up = evaluate(program, work);
            work[i][k] = orig - eps;
            const double down = evaluate(program, work);
            work[i][k] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double err = relative_error(analytic[i][k], numeric);
            if (err > result.max_rel_error || (i == 0 && k == 0)) {
                result = {err, i, k, analytic[i][k], numeric};
            }
        }
    }
    return result;
}

GradCheckResult grad_check_parameters(const std::function<Var(Tape&)>& program, std::span<Parameter* const> params,
                                      double eps) {
    for (Parameter* p : params) p->zero_grad();
    {
        Tape tape;
        Var out = program(tape);
        tape.backward(out);
    }
    std::vector<Tensor> analytic;
    for (Parameter* p : params) analytic.push_back(p->grad);

    auto run = [&]() {
        Tape tape;
        return program(tape).value().item();
    };
    GradCheckResult result;
    bool first = true;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& value = params[i]->value;
        for (std::size_t k = 0; k < value.size(); ++k) {
            const double orig = value[k];
            value[k] = orig + eps;
            const double up = run();
            value[k] = orig - eps;
            const double down = run();
            value[k] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double err = relative_error(analytic[i][k], numeric);
            if (first || err > result.max_rel_error) {
                result = {err, i, k, analytic[i][k], numeric};
                first = false;
            }
        }
    }
    return result;
}

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng);
    return t;
}

/// Values with |v| in [lo, hi] and random sign.
Tensor away_from_zero(Shape shape, std::mt19937_64& rng, double lo, double hi) {
    Tensor t = random_tensor(std::move(shape), rng, lo, hi);
    std::bernoulli_distribution flip(0.5);
    for (double& v : t.data()) {
        if (flip(rng)) v = -v;
    }
    return t;
}

/// sum(f(x) * w) for a fixed projection w.
TapeProgram projected(std::function<Var(Tape&, std::span<const Var>)> f, Tensor weights) {
    return [f = std::move(f), w = std::move(weights)](Tape& tape, std::span<const Var> in) {
        Var out = f(tape, in);
        return sum(mul(out, tape.constant(w)));
    };
}

}  // namespace

std::vector<PrimitiveCheck> primitive_checks(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Shape s{3, 4};
    auto w = [&](Shape shape) { return random_tensor(std::move(shape), rng, -1.0, 1.0); };
    auto unary = [&](std::string name, Var (*op)(Var), Tensor x) {
        return PrimitiveCheck{std::move(name),
                              projected([op](Tape&, std::span<const Var> in) { return op(in[0]); }, w(x.shape())),
                              {std::move(x)}};
    };

    std::vector<PrimitiveCheck> checks;
    checks.push_back({"add",
                      projected([](Tape&, std::span<const Var> in) { return add(in[0], in[1]); }, w({2, 3, 4})),
                      {random_tensor({2, 3, 4}, rng, -1, 1), random_tensor({4}, rng, -1, 1)}});
    checks.push_back({"sub",
                      projected([](Tape&, std::span<const Var> in) { return sub(in[0], in[1]); }, w(s)),
                      {random_tensor(s, rng, -1, 1), random_tensor(s, rng, -1, 1)}});
    checks.push_back({"mul",
                      projected([](Tape&, std::span<const Var> in) { return mul(in[0], in[1]); }, w({2, 3, 4})),
                      {random_tensor({2, 3, 4}, rng, -1, 1), random_tensor({3, 4}, rng, -1, 1)}});
    checks.push_back({"div",
                      projected([](Tape&, std::span<const Var> in) { return div(in[0], in[1]); }, w(s)),
                      {random_tensor(s, rng, -1, 1), away_from_zero(s, rng, 0.5, 2.0)}});
    checks.push_back({"affine",
                      projected([](Tape&, std::span<const Var> in) { return affine(in[0], -1.7, 0.3); }, w(s)),
                      {random_tensor(s, rng, -1, 1)}});
    checks.push_back({"matmul",
                      projected([](Tape&, std::span<const Var> in) { return matmul(in[0], in[1]); }, w({2, 3, 5})),
                      {random_tensor({2, 3, 4}, rng, -1, 1), random_tensor({4, 5}, rng, -1, 1)}});
    checks.push_back({"matmul_batched",
                      projected([](Tape&, std::span<const Var> in) { return matmul(in[0], in[1]); }, w({2, 3, 5})),
                      {random_tensor({2, 3, 4}, rng, -1, 1), random_tensor({2, 4, 5}, rng, -1, 1)}});
    checks.push_back({"transpose",
                      projected([](Tape&, std::span<const Var> in) { return transpose_last2(in[0]); }, w({2, 4, 3})),
                      {random_tensor({2, 3, 4}, rng, -1, 1)}});
    checks.push_back({"reshape",
                      projected([](Tape&, std::span<const Var> in) { return reshape(in[0], {4, 3}); }, w({4, 3})),
                      {random_tensor(s, rng, -1, 1)}});
    checks.push_back({"concat",
                      projected([](Tape&, std::span<const Var> in) { return concat({in[0], in[1]}, 1); },
                                w({2, 5, 3})),
                      {random_tensor({2, 2, 3}, rng, -1, 1), random_tensor({2, 3, 3}, rng, -1, 1)}});
    checks.push_back({"slice",
                      projected([](Tape&, std::span<const Var> in) { return slice(in[0], -1, 1, 3); }, w({3, 2})),
                      {random_tensor(s, rng, -1, 1)}});
    checks.push_back({"sum", [](Tape&, std::span<const Var> in) { return sum(square(in[0])); },
                      {random_tensor(s, rng, -1, 1)}});
    checks.push_back({"mean", [](Tape&, std::span<const Var> in) { return mean(square(in[0])); },
                      {random_tensor(s, rng, -1, 1)}});
    checks.push_back(unary("exp", &exp, random_tensor(s, rng, -1, 1)));
    checks.push_back(unary("log", &log, random_tensor(s, rng, 0.5, 2.0)));
    checks.push_back(unary("abs", &abs, away_from_zero(s, rng, 0.1, 1.0)));
    checks.push_back(unary("square", &square, random_tensor(s, rng, -1, 1)));
    checks.push_back(unary("relu", &relu, away_from_zero(s, rng, 0.1, 1.0)));
    checks.push_back(unary("sigmoid", &sigmoid, random_tensor(s, rng, -3, 3)));
    checks.push_back(unary("tanh", &tanh, random_tensor(s, rng, -2, 2)));
    checks.push_back(unary("softplus", &softplus, random_tensor(s, rng, -3, 3)));
    checks.push_back(unary("hard_sigmoid", &hard_sigmoid, random_tensor(s, rng, -2.5, 2.5)));
    checks.push_back({"softmax",
                      projected([](Tape&, std::span<const Var> in) { return softmax_last(in[0]); }, w({2, 3, 4})),
                      {random_tensor({2, 3, 4}, rng, -2, 2)}});
    {
        auto mask = std::make_shared<std::vector<std::uint8_t>>(16, 0);
        for (std::size_t q = 0; q < 4; ++q) {
            for (std::size_t k = 0; k <= q; ++k) (*mask)[q * 4 + k] = 1;
        }
        checks.push_back(
            {"softmax_masked",
             projected([mask](Tape&, std::span<const Var> in) { return softmax_last(in[0], mask.get()); },
                       w({2, 4, 4})),
             {random_tensor({2, 4, 4}, rng, -2, 2)}});
    }
    checks.push_back(
        {"layer_norm",
         projected([](Tape&, std::span<const Var> in) { return layer_norm(in[0], in[1], in[2]); }, w({2, 3, 5})),
         {random_tensor({2, 3, 5}, rng, -2, 2), random_tensor({5}, rng, 0.5, 1.5), random_tensor({5}, rng, -1, 1)}});
    checks.push_back(
        {"embedding",
         projected([](Tape&, std::span<const Var> in) { return embedding(in[0], {2, 0, 2, 1}, {2, 2}); },
                   w({2, 2, 3})),
         {random_tensor({3, 3}, rng, -1, 1)}});
    return checks;
}

std::vector<std::string> primitive_names() {
    std::vector<std::string> names;
    for (const auto& c : primitive_checks()) names.push_back(c.name);
    return names;
}

}  // namespace ssdnet
