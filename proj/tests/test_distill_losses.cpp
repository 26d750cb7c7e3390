#include "doctest.h"

#include "meds/distill_losses.hpp"

#include <cmath>

using namespace meds;
using D = double;
using nn::Tensor;
using nn::Var;

namespace {

Var<D> map_of(std::vector<D> vals, int h, int w) {
    Tensor<D> t({1, 1, h, w});
    t.v = std::move(vals);
    return nn::make_var(std::move(t), false);
}

Var<D> const_map(double v, int h, int w) {
    Tensor<D> t({1, 1, h, w}, v);
    return nn::make_var(std::move(t), false);
}

} // namespace

TEST_CASE("dice loss identities") {
    losses::LossWeights w;
    const D eps = static_cast<D>(w.dice_epsilon);

    // perfect overlap
    auto t = map_of({1, 0, 1, 0}, 2, 2);
    CHECK(losses::dice_loss(t, t, eps)->val.v[0] == doctest::Approx(0.0).epsilon(1e-4));

    // pred all ones, target all zeros, eps = 1: 1 - 1/(N+1)
    auto p1 = const_map(1.0, 2, 2);
    auto t0 = const_map(0.0, 2, 2);
    CHECK(losses::dice_loss(p1, t0, 1.0)->val.v[0] ==
          doctest::Approx(1.0 - 1.0 / 5.0).epsilon(1e-12));

    // pred uniform 0.5, target half-ones on 4 pixels
    auto ph = const_map(0.5, 2, 2);
    auto th = map_of({1, 1, 0, 0}, 2, 2);
    const double expected = 1.0 - (2.0 * 1.0 + 1e-5) / (2.0 + 2.0 + 1e-5);
    CHECK(losses::dice_loss(ph, th, 1e-5)->val.v[0] ==
          doctest::Approx(expected).epsilon(1e-12));
    CHECK(losses::dice_loss(ph, th, 1e-5)->val.v[0] == doctest::Approx(0.5).epsilon(1e-4));

    auto bad = const_map(0.5, 3, 2);
    CHECK_THROWS_AS(losses::dice_loss(ph, bad, eps), std::invalid_argument);
}

TEST_CASE("loss1 wiring: coefficient and additivity") {
    losses::LossWeights w;
    w.alpha = 0.5;
    const D eps = static_cast<D>(w.dice_epsilon);

    auto target = map_of({1, 1, 1, 1}, 2, 2);
    model::DetectorOutputs<D> out;
    out.main_prob = const_map(0.8, 2, 2);
    out.aux_probs = {const_map(0.6, 2, 2), const_map(0.4, 2, 2)};

    const double dm = losses::dice_loss(out.main_prob, target, eps)->val.v[0];
    const double d1 = losses::dice_loss(out.aux_probs[0], target, eps)->val.v[0];
    const double d2 = losses::dice_loss(out.aux_probs[1], target, eps)->val.v[0];
    const double l1 = losses::loss1(out, target, w)->val.v[0];
    CHECK(l1 == doctest::Approx((1 - w.alpha) * dm + d1 + d2).epsilon(1e-12));

    // alpha = 1 annihilates the main term
    w.alpha = 1.0;
    CHECK(losses::loss1(out, target, w)->val.v[0] ==
          doctest::Approx(d1 + d2).epsilon(1e-12));

    // all five outputs equal target -> ~0
    model::DetectorOutputs<D> perfect;
    perfect.main_prob = target;
    perfect.aux_probs = {target, target};
    w.alpha = 0.3;
    CHECK(losses::loss1(perfect, target, w)->val.v[0] ==
          doctest::Approx(0.0).epsilon(1e-4));
}

TEST_CASE("kl loss: identity, coefficient, scalar value") {
    losses::LossWeights w;

    model::DetectorOutputs<D> out;
    out.main_prob = const_map(0.5, 1, 1);
    out.aux_probs = {const_map(0.8, 1, 1)};

    // aux == main -> 0
    model::DetectorOutputs<D> same;
    same.main_prob = const_map(0.31, 2, 2);
    same.aux_probs = {const_map(0.31, 2, 2), const_map(0.31, 2, 2)};
    w.alpha = 0.7;
    CHECK(losses::kl_loss(same, w)->val.v[0] == doctest::Approx(0.0).epsilon(1e-15));

    // alpha = 0 -> 0 regardless
    w.alpha = 0.0;
    CHECK(losses::kl_loss(out, w)->val.v[0] == 0.0);

    // single pixel p=0.8, q=0.5, alpha=1, k=1
    w.alpha = 1.0;
    const double expected = 0.8 * std::log(1.6) + 0.2 * std::log(0.4);
    CHECK(losses::kl_loss(out, w)->val.v[0] ==
          doctest::Approx(expected).epsilon(1e-9));
    CHECK(losses::kl_loss(out, w)->val.v[0] == doctest::Approx(0.1927).epsilon(1e-3));
}

TEST_CASE("feature loss: identity, coefficient, mean-square arithmetic") {
    losses::LossWeights w;
    model::DetectorOutputs<D> out;
    out.main_feat = map_of({1, 2, 3, 4}, 2, 2);
    out.aux_feats = {map_of({2, 1, 3, 4}, 2, 2)}; // diffs {1,-1,0,0}

    w.lambda_feat = 2.0;
    CHECK(losses::feature_loss(out, w)->val.v[0] == doctest::Approx(1.0).epsilon(1e-12));

    w.lambda_feat = 0.0;
    CHECK(losses::feature_loss(out, w)->val.v[0] == 0.0);

    model::DetectorOutputs<D> same;
    same.main_feat = out.main_feat;
    same.aux_feats = {out.main_feat};
    w.lambda_feat = 3.0;
    CHECK(losses::feature_loss(same, w)->val.v[0] == 0.0);

    model::DetectorOutputs<D> bad;
    bad.main_feat = out.main_feat;
    bad.aux_feats = {const_map(0.0, 3, 2)};
    CHECK_THROWS_AS(losses::feature_loss(bad, w), std::invalid_argument);
}

TEST_CASE("total loss: breakdown sum, ablation identity, perfect outputs") {
    losses::LossWeights w;
    auto target = map_of({1, 0, 0, 1}, 2, 2);

    model::DetectorOutputs<D> out;
    out.main_prob = map_of({0.9, 0.2, 0.1, 0.7}, 2, 2);
    out.aux_probs = {map_of({0.6, 0.3, 0.2, 0.5}, 2, 2)};
    out.main_feat = map_of({1, 2, 3, 4}, 2, 2);
    out.aux_feats = {map_of({1.5, 2, 3, 4.5}, 2, 2)};

    auto tl = losses::total_loss(out, target, w);
    CHECK(tl.breakdown.total ==
          doctest::Approx(tl.breakdown.loss1 + tl.breakdown.loss2 + tl.breakdown.loss3)
              .epsilon(1e-15));
    CHECK(tl.breakdown.loss1 >= 0.0);
    CHECK(tl.breakdown.loss2 >= 0.0);
    CHECK(tl.breakdown.loss3 >= 0.0);

    // alpha = lambda = 0 reduces total to loss1 (pure deep supervision)
    losses::LossWeights w0;
    w0.alpha = 0.0;
    w0.lambda_feat = 0.0;
    auto tl0 = losses::total_loss(out, target, w0);
    CHECK(tl0.breakdown.total == doctest::Approx(tl0.breakdown.loss1).epsilon(1e-15));
    CHECK(tl0.breakdown.loss2 == 0.0);
    CHECK(tl0.breakdown.loss3 == 0.0);

    // perfect outputs -> ~0 total
    model::DetectorOutputs<D> perfect;
    perfect.main_prob = target;
    perfect.aux_probs = {target};
    perfect.main_feat = out.main_feat;
    perfect.aux_feats = {out.main_feat};
    auto tlp = losses::total_loss(perfect, target, w);
    CHECK(tlp.breakdown.total == doctest::Approx(0.0).epsilon(1e-4));
}

TEST_CASE("relabeling {0,1} -> {0,1} leaves losses unchanged") {
    losses::LossWeights w;
    auto target = map_of({1, 0, 1, 1}, 2, 2);
    auto target_copy = map_of({1, 0, 1, 1}, 2, 2);
    model::DetectorOutputs<D> out;
    out.main_prob = map_of({0.9, 0.2, 0.8, 0.6}, 2, 2);
    out.aux_probs = {map_of({0.5, 0.5, 0.5, 0.5}, 2, 2)};
    out.main_feat = map_of({0, 1, 2, 3}, 2, 2);
    out.aux_feats = {map_of({1, 1, 2, 2}, 2, 2)};
    auto a = losses::total_loss(out, target, w);
    auto b = losses::total_loss(out, target_copy, w);
    CHECK(a.breakdown.total == b.breakdown.total);
}

TEST_CASE("teacher detachment: loss2/loss3 leave no gradient on the main head") {
    // A miniature "network": main and aux probability maps produced from two
    // independent parameter tensors through sigmoid; features likewise.
    nn::Rng rng(3);
    auto wmain = nn::make_param<D>({1, 1, 2, 2});
    auto waux = nn::make_param<D>({1, 1, 2, 2});
    auto wmf = nn::make_param<D>({1, 2, 2, 2});
    auto waf = nn::make_param<D>({1, 2, 2, 2});
    nn::fill_uniform(wmain->val, rng, -1.0, 1.0);
    nn::fill_uniform(waux->val, rng, -1.0, 1.0);
    nn::fill_uniform(wmf->val, rng, -1.0, 1.0);
    nn::fill_uniform(waf->val, rng, -1.0, 1.0);
    auto target = map_of({1, 0, 0, 1}, 2, 2);

    auto run = [&](double alpha, double lambda) {
        losses::LossWeights w;
        w.alpha = alpha;
        w.lambda_feat = lambda;
        model::DetectorOutputs<D> out;
        out.main_prob = nn::sigmoid(wmain);
        out.aux_probs = {nn::sigmoid(waux)};
        out.main_feat = nn::sigmoid(wmf);
        out.aux_feats = {nn::sigmoid(waf)};
        nn::zero_grad<D>({wmain, waux, wmf, waf});
        auto tl = losses::total_loss(out, target, w);
        nn::backward(tl.total);
        return std::make_pair(wmain->grad.v, wmf->grad.v);
    };

    auto [g_main_full, g_feat_full] = run(0.4, 0.3);
    auto [g_main_dice, g_feat_dice] = run(0.0, 0.0);
    // With detachment, the main-map gradient from the full objective is exactly
    // (1-alpha) times the pure-dice gradient; the main feature gets none.
    for (std::size_t i = 0; i < g_main_full.size(); ++i)
        CHECK(g_main_full[i] == doctest::Approx(0.6 * g_main_dice[i]).epsilon(1e-9));
    for (double g : g_feat_full) CHECK(g == 0.0);
}
