#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "nfad/tensor.hpp"

namespace nfad {

enum class LossKind { nll_only, oe_threshold, oe_modified };

std::string loss_kind_name(LossKind k);
LossKind loss_kind_from_name(const std::string& s);

// Loss selection plus its scalar knobs. c and the NLLs it is compared
// against must share the model's normalization (total vs per-dim).
struct LossSpec {
    LossKind kind = LossKind::nll_only;
    double c = 0.0;
    double k = 0.5; // outlier-term weight, oe_modified only
    std::string nll_normalization; // recorded alongside checkpoints

    void validate() const; // ConfigError on out-of-range fields
};

void to_json(nlohmann::json& j, const LossSpec& s);
void from_json(const nlohmann::json& j, LossSpec& s);

// Which outliers count toward the penalty term: NLL below c, and (when
// cap_at_target_max) also below the largest target NLL of the batch.
struct OutlierGate {
    std::vector<bool> qualifying;
    int count = 0;
};
OutlierGate qualifying_outliers(const std::vector<double>& outlier_nll, double c,
                                double target_max, bool cap_at_target_max);

// All losses take per-sample NLL tensors and return a scalar graph
// tensor. Gates are computed from detached NLL values, so qualifying
// outliers receive gradient -1/N_q (times k where applicable) and
// non-qualifying ones exactly zero.

// Mean target NLL. EmptyBatchError on an empty batch.
Tensor loss_nll(const Tensor& target_nll);

// Mean target NLL minus the mean of outlier NLLs below c. The second
// term vanishes when nothing qualifies. An undefined or empty outlier
// tensor reduces to loss_nll.
Tensor loss_oe_threshold(const Tensor& target_nll, const Tensor& outlier_nll, double c);

// Like loss_oe_threshold with the outlier term weighted by k, and the
// gate additionally requiring the outlier NLL to stay below the batch's
// maximum target NLL. cap_at_target_max=false disables that second
// condition (used to check the k=1 equivalence with the plain
// thresholded loss).
Tensor loss_oe_modified(const Tensor& target_nll, const Tensor& outlier_nll, double c, double k,
                        bool cap_at_target_max = true);

// Dispatch on spec.kind; outlier_nll may be undefined for nll_only.
Tensor apply_loss(const LossSpec& spec, const Tensor& target_nll, const Tensor& outlier_nll);

} // namespace nfad
