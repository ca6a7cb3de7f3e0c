#include "nfad/optimizer.hpp"

#include <cmath>

namespace nfad {

namespace {

void ensure_moments(OptimizerState& st, const std::vector<Tensor>& params) {
    if (st.first_moment.empty()) {
        st.first_moment.resize(params.size());
        st.second_moment.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            st.first_moment[i].assign(params[i].size(), 0.0);
            st.second_moment[i].assign(params[i].size(), 0.0);
        }
        return;
    }
    if (st.first_moment.size() != params.size()) throw ShapeError("optimizer: parameter count changed");
    for (size_t i = 0; i < params.size(); ++i) {
        if (st.first_moment[i].size() != static_cast<size_t>(params[i].size()) ||
            st.second_moment[i].size() != static_cast<size_t>(params[i].size()))
            throw ShapeError("optimizer: moment buffer does not match parameter shape");
    }
}

void check_grads(const std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads) {
    if (grads.size() != params.size()) throw ShapeError("optimizer: grads/params count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != static_cast<size_t>(params[i].size()))
            throw ShapeError("optimizer: grad does not match parameter shape");
    }
}

} // namespace

std::string optimizer_kind_name(OptimizerKind k) {
    return k == OptimizerKind::Adam ? "adam" : "adamax";
}

OptimizerKind optimizer_kind_from_name(const std::string& s) {
    if (s == "adam") return OptimizerKind::Adam;
    if (s == "adamax") return OptimizerKind::AdaMax;
    throw ConfigError("unknown optimizer '" + s + "'");
}

OptimizerState make_adam(double lr) {
    OptimizerState st;
    st.kind = OptimizerKind::Adam;
    st.learning_rate = lr;
    return st;
}

OptimizerState make_adamax(double lr) {
    OptimizerState st;
    st.kind = OptimizerKind::AdaMax;
    st.learning_rate = lr;
    return st;
}

void adam_step(OptimizerState& state, std::vector<Tensor>& params,
               const std::vector<std::vector<double>>& grads) {
    ensure_moments(state, params);
    check_grads(params, grads);
    state.step_count += 1;
    double t = static_cast<double>(state.step_count);
    double c1 = 1.0 - std::pow(state.beta1, t);
    double c2 = 1.0 - std::pow(state.beta2, t);
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].mutable_value();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        const auto& g = grads[i];
        for (size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            double mhat = m[j] / c1;
            double vhat = v[j] / c2;
            p[j] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

void adamax_step(OptimizerState& state, std::vector<Tensor>& params,
                 const std::vector<std::vector<double>>& grads) {
    ensure_moments(state, params);
    check_grads(params, grads);
    state.step_count += 1;
    double t = static_cast<double>(state.step_count);
    double c1 = 1.0 - std::pow(state.beta1, t);
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].mutable_value();
        auto& m = state.first_moment[i];
        auto& u = state.second_moment[i];
        const auto& g = grads[i];
        for (size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            u[j] = std::max(state.beta2 * u[j], std::fabs(g[j]));
            p[j] -= (state.learning_rate / c1) * m[j] / (u[j] + state.epsilon);
        }
    }
}

void optimizer_step(OptimizerState& state, std::vector<Tensor>& params) {
    std::vector<std::vector<double>> grads;
    grads.reserve(params.size());
    for (auto& p : params) grads.push_back(p.grad());
    if (state.kind == OptimizerKind::Adam)
        adam_step(state, params, grads);
    else
        adamax_step(state, params, grads);
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (auto& p : params)
        for (double g : p.grad()) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        double f = max_norm / norm;
        for (auto& p : params) {
            auto* node = p.node();
            for (auto& g : node->grad) g *= f;
        }
    }
    return norm;
}

} // namespace nfad
