#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "nfad/errors.hpp"
#include "nfad/losses.hpp"
#include "nfad/rng.hpp"

using namespace nfad;

namespace {

Tensor vec(const std::vector<double>& v) {
    return Tensor::constant({static_cast<int>(v.size())}, v);
}

Tensor param_vec(const std::vector<double>& v) {
    return Tensor::parameter({static_cast<int>(v.size())}, v);
}

// Plain-loop evaluation of both outlier-exposure losses, written
// independently of the graph implementation.
double slow_loss(const std::vector<double>& target, const std::vector<double>& outlier, double c,
                 double k, bool modified) {
    double t_sum = 0.0;
    for (double v : target) t_sum += v;
    double t_mean = t_sum / static_cast<double>(target.size());
    double t_max = target.empty() ? 0.0 : *std::max_element(target.begin(), target.end());
    double q_sum = 0.0;
    int q_count = 0;
    for (double v : outlier) {
        bool in = v < c;
        if (modified) in = in && v < t_max;
        if (in) {
            q_sum += v;
            ++q_count;
        }
    }
    if (q_count == 0) return t_mean;
    double weight = modified ? k : 1.0;
    return t_mean - weight * q_sum / static_cast<double>(q_count);
}

} // namespace

TEST_CASE("mean target loss") {
    CHECK(loss_nll(vec({2.0, 4.0})).item() == 3.0);
    CHECK(loss_nll(vec({7.25})).item() == 7.25);
    CHECK_THROWS_AS(loss_nll(Tensor()), EmptyBatchError);
    CHECK_THROWS_AS(loss_nll(Tensor::constant({0}, {})), EmptyBatchError);
}

TEST_CASE("thresholded outlier loss hand values") {
    // qualifying set {3.0}: 3.0 - 3.0
    CHECK(loss_oe_threshold(vec({2.0, 4.0}), vec({3.0, 10.0}), 5.0).item() == 0.0);
    // nothing qualifies when every outlier sits at or above c
    CHECK(loss_oe_threshold(vec({2.0, 4.0}), vec({5.0, 9.0}), 5.0).item() == 3.0);
    // qualifying set {0.5, 0.7}: 1.0 - 0.6
    CHECK(loss_oe_threshold(vec({1.0}), vec({0.5, 0.7}), 5.0).item() ==
          doctest::Approx(0.4).epsilon(1e-12));
    // no outliers at all reduces to the plain mean
    CHECK(loss_oe_threshold(vec({2.0, 4.0}), Tensor(), 5.0).item() == 3.0);
    CHECK_THROWS_AS(loss_oe_threshold(Tensor(), vec({1.0}), 5.0), EmptyBatchError);
}

TEST_CASE("capped outlier loss hand values") {
    // target max 4.0 excludes 6.0; qualifying {3.0, 3.5}: 3.0 - 0.5 * 3.25
    CHECK(loss_oe_modified(vec({2.0, 4.0}), vec({3.0, 3.5, 6.0}), 5.0, 0.5).item() ==
          doctest::Approx(1.375).epsilon(1e-12));
    // every outlier above the target max: penalty removed entirely
    CHECK(loss_oe_modified(vec({2.0, 4.0}), vec({4.5, 6.0}), 10.0, 0.5).item() == 3.0);
    // empty outlier list reduces to the plain mean
    CHECK(loss_oe_modified(vec({2.0, 4.0}), Tensor(), 5.0, 0.5).item() == 3.0);
}

TEST_CASE("k = 1 without the cap reproduces the thresholded loss exactly") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        int nt = 1 + static_cast<int>(rng.below(6));
        int no = static_cast<int>(rng.below(6));
        std::vector<double> t(static_cast<size_t>(nt)), o(static_cast<size_t>(no));
        for (auto& v : t) v = rng.uniform(-5.0, 5.0);
        for (auto& v : o) v = rng.uniform(-5.0, 5.0);
        double c = rng.uniform(-5.0, 5.0);
        double a = loss_oe_threshold(vec(t), no ? vec(o) : Tensor(), c).item();
        double b = loss_oe_modified(vec(t), no ? vec(o) : Tensor(), c, 1.0, false).item();
        CHECK(a == b);
    }
}

TEST_CASE("losses agree with a plain-loop oracle on random batches") {
    Rng rng(12);
    for (int trial = 0; trial < 1000; ++trial) {
        int nt = 1 + static_cast<int>(rng.below(8));
        int no = static_cast<int>(rng.below(8));
        std::vector<double> t(static_cast<size_t>(nt)), o(static_cast<size_t>(no));
        for (auto& v : t) v = rng.uniform(-10.0, 10.0);
        for (auto& v : o) v = rng.uniform(-10.0, 10.0);
        double c = rng.uniform(-10.0, 10.0);
        double k = rng.uniform(0.05, 0.95);
        Tensor ot = no ? vec(o) : Tensor();
        CHECK(loss_oe_threshold(vec(t), ot, c).item() ==
              doctest::Approx(slow_loss(t, o, c, 1.0, false)).epsilon(1e-12));
        CHECK(loss_oe_modified(vec(t), ot, c, k).item() ==
              doctest::Approx(slow_loss(t, o, c, k, true)).epsilon(1e-12));
    }
}

TEST_CASE("gradients hit qualifying outliers only") {
    // target [2, 4], outliers [3, 3.5, 6], c = 5: the capped loss
    // qualifies {3, 3.5} and must leave 6 with exactly zero gradient.
    Tensor t = param_vec({2.0, 4.0});
    Tensor o = param_vec({3.0, 3.5, 6.0});
    double k = 0.5;

    SUBCASE("capped loss") {
        Tensor L = loss_oe_modified(t, o, 5.0, k);
        backward(L);
        for (double g : t.grad()) CHECK(g == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(o.grad()[0] == doctest::Approx(-k / 2.0).epsilon(1e-12));
        CHECK(o.grad()[1] == doctest::Approx(-k / 2.0).epsilon(1e-12));
        CHECK(o.grad()[2] == 0.0);
    }
    SUBCASE("thresholded loss") {
        Tensor L = loss_oe_threshold(t, o, 5.0);
        backward(L);
        for (double g : t.grad()) CHECK(g == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(o.grad()[0] == doctest::Approx(-1.0 / 2.0).epsilon(1e-12));
        CHECK(o.grad()[1] == doctest::Approx(-1.0 / 2.0).epsilon(1e-12));
        CHECK(o.grad()[2] == 0.0);
    }
    SUBCASE("nothing qualifies: outliers get no gradient at all") {
        Tensor L = loss_oe_threshold(t, o, 1.0);
        backward(L);
        CHECK(L.item() == 3.0);
        for (double g : t.grad()) CHECK(g == doctest::Approx(0.5).epsilon(1e-12));
        // grads never touched: the outlier tensor stayed out of the graph
        for (double g : o.grad()) CHECK(g == 0.0);
    }
}

TEST_CASE("capped loss sits above the thresholded loss by (1-k) times the penalty") {
    // outliers all kept below the target max so both gates coincide
    Rng rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> t = {5.0, 9.0};
        std::vector<double> o(3);
        for (auto& v : o) v = rng.uniform(0.0, 8.9);
        double c = rng.uniform(1.0, 12.0);
        double k = rng.uniform(0.1, 0.9);
        double l4 = loss_oe_threshold(vec(t), vec(o), c).item();
        double l5 = loss_oe_modified(vec(t), vec(o), c, k).item();
        double q_sum = 0.0;
        int q_count = 0;
        for (double v : o)
            if (v < c) {
                q_sum += v;
                ++q_count;
            }
        if (q_count == 0) {
            CHECK(l4 == l5);
        } else {
            CHECK(l5 - l4 ==
                  doctest::Approx((1.0 - k) * q_sum / q_count).epsilon(1e-12));
        }
    }
}

TEST_CASE("qualifying set grows monotonically in c") {
    std::vector<double> o = {-3.0, -1.0, 0.5, 2.0, 2.0, 7.5};
    int prev = 0;
    for (double c = -5.0; c <= 9.0; c += 0.25) {
        OutlierGate gate = qualifying_outliers(o, c, 0.0, false);
        CHECK(gate.count >= prev);
        prev = gate.count;
        // membership is monotone too: once in, never out
        OutlierGate wider = qualifying_outliers(o, c + 0.25, 0.0, false);
        for (size_t i = 0; i < o.size(); ++i)
            if (gate.qualifying[i]) CHECK(wider.qualifying[i]);
    }
    CHECK(prev == static_cast<int>(o.size()));
}

TEST_CASE("spec validation and serialization") {
    LossSpec s;
    s.kind = LossKind::oe_modified;
    s.c = 5.0;
    s.k = 0.5;
    s.nll_normalization = "per_dim";
    s.validate();

    s.k = 1.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.k = 0.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.k = 0.5;
    s.c = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(s.validate(), ConfigError);

    LossSpec round;
    round.kind = LossKind::oe_threshold;
    round.c = -750.0;
    round.k = 0.25;
    round.nll_normalization = "total";
    nlohmann::json j = round;
    LossSpec back = j.get<LossSpec>();
    CHECK(back.kind == LossKind::oe_threshold);
    CHECK(back.c == -750.0);
    CHECK(back.k == 0.25);
    CHECK(back.nll_normalization == "total");

    CHECK_THROWS_AS(loss_kind_from_name("focal"), ConfigError);

    // dispatch respects the spec
    LossSpec plain;
    plain.kind = LossKind::nll_only;
    CHECK(apply_loss(plain, vec({2.0, 4.0}), Tensor()).item() == 3.0);
    LossSpec mod;
    mod.kind = LossKind::oe_modified;
    mod.c = 5.0;
    mod.k = 0.5;
    CHECK(apply_loss(mod, vec({2.0, 4.0}), vec({3.0, 3.5, 6.0})).item() ==
          doctest::Approx(1.375).epsilon(1e-12));
}
