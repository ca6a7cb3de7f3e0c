#include "nfad/losses.hpp"

#include <algorithm>
#include <cmath>

#include "nfad/errors.hpp"

namespace nfad {

namespace {

bool no_outliers(const Tensor& outlier_nll) {
    return !outlier_nll.defined() || outlier_nll.size() == 0;
}

// Outlier penalty as a weighted sum with constant weights: qualifying
// samples get weight / N_q, the rest zero. Keeping the gate out of the
// graph makes the indicator a fixed mask during backward.
Tensor gated_outlier_term(const Tensor& outlier_nll, const OutlierGate& gate, double weight) {
    std::vector<double> w(gate.qualifying.size(), 0.0);
    for (size_t i = 0; i < w.size(); ++i)
        if (gate.qualifying[i]) w[i] = weight / static_cast<double>(gate.count);
    return sum_all(mul(outlier_nll, Tensor::constant(outlier_nll.shape(), std::move(w))));
}

} // namespace

std::string loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::nll_only: return "nll_only";
        case LossKind::oe_threshold: return "oe_threshold";
        case LossKind::oe_modified: return "oe_modified";
    }
    return "nll_only";
}

LossKind loss_kind_from_name(const std::string& s) {
    if (s == "nll_only") return LossKind::nll_only;
    if (s == "oe_threshold") return LossKind::oe_threshold;
    if (s == "oe_modified") return LossKind::oe_modified;
    throw ConfigError("unknown loss kind '" + s +
                      "' (expected nll_only, oe_threshold or oe_modified)");
}

void LossSpec::validate() const {
    if (kind == LossKind::oe_modified && !(k > 0.0 && k < 1.0))
        throw ConfigError("oe_modified requires 0 < k < 1, got k = " + std::to_string(k));
    if (kind != LossKind::nll_only && !std::isfinite(c))
        throw ConfigError("loss threshold c must be finite");
}

void to_json(nlohmann::json& j, const LossSpec& s) {
    j = nlohmann::json{{"kind", loss_kind_name(s.kind)},
                       {"c", s.c},
                       {"k", s.k},
                       {"nll_normalization", s.nll_normalization}};
}

void from_json(const nlohmann::json& j, LossSpec& s) {
    LossSpec d;
    s.kind = loss_kind_from_name(j.value("kind", loss_kind_name(d.kind)));
    s.c = j.value("c", d.c);
    s.k = j.value("k", d.k);
    s.nll_normalization = j.value("nll_normalization", d.nll_normalization);
}

OutlierGate qualifying_outliers(const std::vector<double>& outlier_nll, double c,
                                double target_max, bool cap_at_target_max) {
    OutlierGate gate;
    gate.qualifying.resize(outlier_nll.size(), false);
    for (size_t i = 0; i < outlier_nll.size(); ++i) {
        bool in = outlier_nll[i] < c;
        if (cap_at_target_max) in = in && outlier_nll[i] < target_max;
        if (in) {
            gate.qualifying[i] = true;
            ++gate.count;
        }
    }
    return gate;
}

Tensor loss_nll(const Tensor& target_nll) {
    if (!target_nll.defined() || target_nll.size() == 0)
        throw EmptyBatchError("loss needs at least one target sample");
    return mean_all(target_nll);
}

Tensor loss_oe_threshold(const Tensor& target_nll, const Tensor& outlier_nll, double c) {
    Tensor base = loss_nll(target_nll);
    if (no_outliers(outlier_nll)) return base;
    OutlierGate gate = qualifying_outliers(outlier_nll.value(), c, 0.0, false);
    if (gate.count == 0) return base;
    return sub(base, gated_outlier_term(outlier_nll, gate, 1.0));
}

Tensor loss_oe_modified(const Tensor& target_nll, const Tensor& outlier_nll, double c, double k,
                        bool cap_at_target_max) {
    Tensor base = loss_nll(target_nll);
    if (no_outliers(outlier_nll)) return base;
    double target_max = *std::max_element(target_nll.value().begin(), target_nll.value().end());
    OutlierGate gate = qualifying_outliers(outlier_nll.value(), c, target_max, cap_at_target_max);
    if (gate.count == 0) return base;
    return sub(base, gated_outlier_term(outlier_nll, gate, k));
}

Tensor apply_loss(const LossSpec& spec, const Tensor& target_nll, const Tensor& outlier_nll) {
    spec.validate();
    switch (spec.kind) {
        case LossKind::nll_only: return loss_nll(target_nll);
        case LossKind::oe_threshold: return loss_oe_threshold(target_nll, outlier_nll, spec.c);
        case LossKind::oe_modified: return loss_oe_modified(target_nll, outlier_nll, spec.c, spec.k);
    }
    throw ConfigError("unhandled loss kind");
}

} // namespace nfad
