#include <doctest.h>

#include <cmath>
#include <map>

#include "framecast/losses.hpp"
#include "test_util.hpp"

using namespace framecast;
using testutil::random_tensor;

namespace {

ad::Var scalar(ad::Tape& t, double v) { return t.constant(Tensor::scalar(v)); }

double value(ad::Var v) { return v.value().item(); }

}  // namespace

TEST_CASE("shuffle loss plug-in oracles") {
    ad::Tape t;
    // an undecided discriminator scores 0.5 on both sequences
    CHECK(value(losses::shuffle_loss(scalar(t, 0.5), scalar(t, 0.5))) ==
          doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
    // -ln 0.9 - ln 0.8
    CHECK(value(losses::shuffle_loss(scalar(t, 0.9), scalar(t, 0.2))) ==
          doctest::Approx(0.3285040669720361).epsilon(1e-9));
    // optimum saturates to an eps-bounded floor
    CHECK(value(losses::shuffle_loss(scalar(t, 1.0), scalar(t, 0.0))) <= 1e-6);
    // saturated-wrong outputs stay finite thanks to the clamp
    CHECK(std::isfinite(value(losses::shuffle_loss(scalar(t, 0.0), scalar(t, 1.0)))));
}

TEST_CASE("adversarial loss plug-in oracles") {
    ad::Tape t;
    const double two_ln2 = 2.0 * std::log(2.0);
    CHECK(value(losses::real_fake_bce(scalar(t, 0.5), scalar(t, 0.5))) ==
          doctest::Approx(two_ln2).epsilon(1e-9));
    CHECK(value(losses::bce_real(scalar(t, 0.5))) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    // D(fake) = 0.25 -> generator loss ln 4
    CHECK(value(losses::bce_real(scalar(t, 0.25))) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-9));
    // perfect discriminator
    CHECK(value(losses::real_fake_bce(scalar(t, 1.0), scalar(t, 0.0))) <= 1e-6);
}

TEST_CASE("consistency: hand-computable pair case") {
    ad::Tape t;
    // t = 4 frames, d = 1: odd-frame features of clip i, even-frame of clip j;
    // distances are {0.2, 0.4} so D = 0.3
    ad::Var fi = t.constant(Tensor({4, 1}, {0.0, 99.0, 1.0, 99.0}));
    ad::Var fj = t.constant(Tensor({4, 1}, {77.0, 0.2, 77.0, 1.4}));
    CHECK(value(losses::pair_distance(fi, fj)) == doctest::Approx(0.3).epsilon(1e-9));
    CHECK(value(losses::pair_consistency(fi, fj, false, 1.0)) ==
          doctest::Approx(0.49).epsilon(1e-6));
    // same-clip pairs square the distance and ignore delta
    CHECK(value(losses::pair_consistency(fi, fj, true, 1.0)) ==
          doctest::Approx(0.09).epsilon(1e-6));
    CHECK(value(losses::pair_consistency(fi, fj, true, 123.0)) ==
          doctest::Approx(0.09).epsilon(1e-6));
}

TEST_CASE("consistency: identical embeddings give zero, wide margins go inactive") {
    ad::Tape t;
    ad::Var same = t.constant(Tensor({4, 2}, {1, 2, 1, 2, 1, 2, 1, 2}));
    CHECK(value(losses::pair_consistency(same, same, true, 1.0)) <= 1e-9);
    // D = 1.5 >= delta -> hinge inactive
    ad::Var far_j = t.constant(Tensor({4, 2}, {1, 3.5, 1, 3.5, 1, 3.5, 1, 3.5}));
    CHECK(value(losses::pair_consistency(same, far_j, false, 1.0)) == doctest::Approx(0.0));
    CHECK_THROWS_AS((void)losses::pair_consistency(same, far_j, false, 0.0),
                    std::invalid_argument);
}

TEST_CASE("consistency batch form sums every ordered pair") {
    Rng rng(31);
    const int t_len = 4, d = 3;
    std::vector<Tensor> feats = {random_tensor({t_len, d}, rng), random_tensor({t_len, d}, rng),
                                 random_tensor({t_len, d}, rng)};
    const double delta = 1.0;

    // brute-force scalar oracle
    auto dist = [&](const Tensor& a, const Tensor& b) {
        double acc = 0.0;
        for (int n = 0; n < t_len / 2; ++n) {
            double s = 0.0;
            for (int c = 0; c < d; ++c) {
                const double diff = a.at(2 * n, c) - b.at(2 * n + 1, c);
                s += diff * diff;
            }
            acc += std::sqrt(s);
        }
        return acc / (t_len / 2);
    };
    double expected = 0.0;
    for (size_t i = 0; i < feats.size(); ++i) {
        for (size_t j = 0; j < feats.size(); ++j) {
            const double dij = dist(feats[i], feats[j]);
            expected += i == j ? dij * dij : std::pow(std::max(delta - dij, 0.0), 2.0);
        }
    }

    ad::Tape t;
    std::vector<ad::Var> vars;
    for (const auto& f : feats) vars.push_back(t.constant(f));
    CHECK(value(losses::batch_consistency(vars, delta)) ==
          doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("reconstruction losses") {
    Rng rng(32);
    ad::Tape t;
    const Tensor x = random_tensor({2, 1, 4, 4}, rng, 0.0, 1.0);
    ad::Var xv = t.constant(x);
    CHECK(value(losses::mse(xv, xv)) == doctest::Approx(0.0));
    // constant offset of 0.1 -> l1 exactly 0.1
    Tensor shifted = x;
    for (size_t i = 0; i < shifted.size(); ++i) shifted[i] += 0.1;
    CHECK(value(losses::l1(t.constant(shifted), xv)) == doctest::Approx(0.1).epsilon(1e-12));

    // random toys against a scalar loop oracle
    const Tensor a = random_tensor({2, 2}, rng);
    const Tensor b = random_tensor({2, 2}, rng);
    double se = 0.0, ae = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        se += (a[i] - b[i]) * (a[i] - b[i]);
        ae += std::abs(a[i] - b[i]);
    }
    CHECK(value(losses::mse(t.constant(a), t.constant(b))) ==
          doctest::Approx(se / 4.0).epsilon(1e-9));
    CHECK(value(losses::l1(t.constant(a), t.constant(b))) ==
          doctest::Approx(ae / 4.0).epsilon(1e-9));
}

TEST_CASE("combined objective arithmetic") {
    losses::LossWeights w;
    w.lambda1 = 1.0;
    w.lambda2 = 0.01;
    w.lambda3 = 1.0;
    w.lambda4 = 0.01;
    w.alpha = 1.0;
    w.beta = 1e-5;
    ad::Tape t;
    auto o = losses::combined_objective(scalar(t, 1), scalar(t, 2), scalar(t, 3), scalar(t, 4),
                                        scalar(t, 5), scalar(t, 6), w);
    CHECK(value(o.total) == doctest::Approx(9.06006).epsilon(1e-9));
    CHECK(value(o.content) == doctest::Approx(1.02).epsilon(1e-12));
    CHECK(value(o.motion) == doctest::Approx(3.04).epsilon(1e-12));
    CHECK(value(o.generate) == doctest::Approx(5.00006).epsilon(1e-12));

    auto zero = losses::combined_objective(scalar(t, 0), scalar(t, 0), scalar(t, 0), scalar(t, 0),
                                           scalar(t, 0), scalar(t, 0), w);
    CHECK(value(zero.total) == doctest::Approx(0.0));

    // ablation path: lambda3 = 0 leaves only the reconstruction term
    w.lambda3 = 0.0;
    auto ablated = losses::combined_objective(scalar(t, 1), scalar(t, 2), scalar(t, 3),
                                              scalar(t, 4), scalar(t, 5), scalar(t, 6), w);
    CHECK(value(ablated.motion) == doctest::Approx(0.01 * 4.0).epsilon(1e-12));

    losses::LossWeights bad;
    bad.delta = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = losses::LossWeights{};
    bad.lambda2 = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("shuffle sampling: rejection of identity, uniformity, inverse recovery") {
    Rng rng(77);
    CHECK_THROWS_AS((void)losses::random_non_identity_permutation(2, rng),
                    std::invalid_argument);

    std::map<std::vector<int>, int> counts;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        const auto p = losses::random_non_identity_permutation(3, rng);
        REQUIRE(p != std::vector<int>{0, 1, 2});
        counts[p]++;
    }
    REQUIRE(counts.size() == 5);
    // chi-squared against uniform over the 5 non-identity permutations;
    // 13.2767 is the 4-dof critical value at p = 0.01
    const double expected = draws / 5.0;
    double chi2 = 0.0;
    for (const auto& [p, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < 13.2767);

    // applying the stored permutation reproduces `shuffled`; its inverse
    // recovers `ordered`
    std::vector<Tensor> ordered;
    for (int i = 0; i < 4; ++i) ordered.push_back(Tensor::scalar(i));
    const auto sample = losses::make_shuffle_sample(ordered, rng);
    REQUIRE(sample.shuffled.size() == 4);
    for (size_t j = 0; j < 4; ++j) {
        CHECK(sample.shuffled[j].item() ==
              ordered[static_cast<size_t>(sample.permutation[j])].item());
    }
    std::vector<Tensor> recovered(4);
    for (size_t j = 0; j < 4; ++j) {
        recovered[static_cast<size_t>(sample.permutation[j])] = sample.shuffled[j];
    }
    for (size_t j = 0; j < 4; ++j) CHECK(recovered[j].item() == ordered[j].item());
}

TEST_CASE("losses are nonnegative and finite on random inputs") {
    Rng rng(78);
    for (int trial = 0; trial < 50; ++trial) {
        ad::Tape t;
        const double p = rng.uniform(0.0, 1.0), q = rng.uniform(0.0, 1.0);
        CHECK(value(losses::shuffle_loss(scalar(t, p), scalar(t, q))) >= 0.0);
        CHECK(std::isfinite(value(losses::real_fake_bce(scalar(t, p), scalar(t, q)))));
        ad::Var a = t.constant(random_tensor({4, 3}, rng));
        ad::Var b = t.constant(random_tensor({4, 3}, rng));
        CHECK(value(losses::pair_consistency(a, b, trial % 2 == 0, 1.0)) >= 0.0);
        CHECK(value(losses::mse(a, b)) >= 0.0);
        CHECK(value(losses::l1(a, b)) >= 0.0);
    }
}
