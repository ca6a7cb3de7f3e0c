#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nfad/tensor.hpp"

namespace nfad {

enum class OptimizerKind { Adam, AdaMax };

std::string optimizer_kind_name(OptimizerKind k);
OptimizerKind optimizer_kind_from_name(const std::string& s);

// Moment buffers are lazily sized to the parameter list on the first
// step and shape-checked on every later one. For AdaMax the second
// moment is the running infinity norm.
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int64_t step_count = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
};

OptimizerState make_adam(double lr);
OptimizerState make_adamax(double lr);

void adam_step(OptimizerState& state, std::vector<Tensor>& params,
               const std::vector<std::vector<double>>& grads);
void adamax_step(OptimizerState& state, std::vector<Tensor>& params,
                 const std::vector<std::vector<double>>& grads);

// Reads grads off the parameters themselves and dispatches on kind.
void optimizer_step(OptimizerState& state, std::vector<Tensor>& params);

// Scales all grads so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

} // namespace nfad
