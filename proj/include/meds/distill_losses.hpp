#pragma once

#include "meds/meds_model.hpp"

namespace meds::losses {

using model::DetectorOutputs;
using nn::Var;

struct LossWeights {
    double alpha = 0.3;       // moderates distillation vs ground-truth terms
    double lambda_feat = 0.1; // feature-loss weight
    double dice_epsilon = 1e-5;
    double kl_epsilon = 1e-7;

    void validate() const {
        if (alpha < 0.0 || alpha > 1.0)
            throw std::invalid_argument("LossWeights: alpha must be in [0,1]");
        if (lambda_feat < 0.0)
            throw std::invalid_argument("LossWeights: lambda_feat must be >= 0");
        if (dice_epsilon <= 0.0)
            throw std::invalid_argument("LossWeights: dice_epsilon must be > 0");
        if (kl_epsilon <= 0.0)
            throw std::invalid_argument("LossWeights: kl_epsilon must be > 0");
    }
};

struct LossBreakdown {
    double loss1 = 0.0;
    double loss2 = 0.0;
    double loss3 = 0.0;
    double total = 0.0;
};

// Soft dice loss, averaged per sample over the batch axis.
// pred in [0,1], target in {0,1}, shapes equal.
template <class T>
Var<T> dice_loss(const Var<T>& pred, const Var<T>& target, T eps) {
    if (!pred->val.same_shape(target->val))
        throw std::invalid_argument("dice_loss: shape mismatch");
    const int N = pred->val.shape.empty() ? 1 : pred->val.shape[0];
    Var<T> acc;
    for (int n = 0; n < N; ++n) {
        Var<T> p = N == 1 ? pred : nn::slice_batch(pred, n);
        Var<T> t = N == 1 ? target : nn::slice_batch(target, n);
        Var<T> inter = nn::sum(nn::mul(p, t));
        Var<T> num = nn::affine(inter, T(2), eps);
        Var<T> den = nn::affine(nn::add(nn::sum(p), nn::sum(t)), T(1), eps);
        Var<T> d = nn::affine(nn::div_scalar(num, den), T(-1), T(1));
        acc = acc ? nn::add(acc, d) : d;
    }
    return N == 1 ? acc : nn::affine(acc, T(1) / static_cast<T>(N), T(0));
}

// Loss 1: deep supervision — (1-alpha) * dice(main) + sum_i dice(aux_i).
template <class T>
Var<T> loss1(const DetectorOutputs<T>& out, const Var<T>& target,
             const LossWeights& w) {
    const T eps = static_cast<T>(w.dice_epsilon);
    Var<T> l = nn::affine(dice_loss(out.main_prob, target, eps),
                          static_cast<T>(1.0 - w.alpha), T(0));
    for (const auto& aux : out.aux_probs)
        l = nn::add(l, dice_loss(aux, target, eps));
    return l;
}

// Loss 2: alpha * sum_i mean-per-pixel Bernoulli KL(aux_i || main), with the
// main detector treated as a gradient-free teacher.
template <class T>
Var<T> kl_loss(const DetectorOutputs<T>& out, const LossWeights& w) {
    const T e = static_cast<T>(w.kl_epsilon);
    Var<T> q = nn::clamp(nn::detach(out.main_prob), e, T(1) - e);
    Var<T> log_q = nn::log_op(q);
    Var<T> log_1q = nn::log_op(nn::affine(q, T(-1), T(1)));
    Var<T> acc;
    for (const auto& aux : out.aux_probs) {
        Var<T> p = nn::clamp(aux, e, T(1) - e);
        Var<T> pm1 = nn::affine(p, T(-1), T(1));
        Var<T> term = nn::add(nn::mul(p, nn::sub(nn::log_op(p), log_q)),
                              nn::mul(pm1, nn::sub(nn::log_op(pm1), log_1q)));
        Var<T> m = nn::mean(term);
        acc = acc ? nn::add(acc, m) : m;
    }
    if (!acc) {
        nn::Tensor<T> zero({1});
        return nn::make_var(std::move(zero));
    }
    return nn::affine(acc, static_cast<T>(w.alpha), T(0));
}

// Loss 3: lambda * sum_i mean squared difference between each auxiliary
// feature map and the (detached) main feature map.
template <class T>
Var<T> feature_loss(const DetectorOutputs<T>& out, const LossWeights& w) {
    Var<T> fm = nn::detach(out.main_feat);
    Var<T> acc;
    for (const auto& f : out.aux_feats) {
        if (!f->val.same_shape(fm->val))
            throw std::invalid_argument(
                "feature_loss: aux feature shape does not match main");
        Var<T> d = nn::sub(f, fm);
        Var<T> m = nn::mean(nn::mul(d, d));
        acc = acc ? nn::add(acc, m) : m;
    }
    if (!acc) {
        nn::Tensor<T> zero({1});
        return nn::make_var(std::move(zero));
    }
    return nn::affine(acc, static_cast<T>(w.lambda_feat), T(0));
}

template <class T>
struct TotalLoss {
    Var<T> total;
    LossBreakdown breakdown;
};

template <class T>
TotalLoss<T> total_loss(const DetectorOutputs<T>& out, const Var<T>& target,
                        const LossWeights& w) {
    Var<T> l1 = loss1(out, target, w);
    Var<T> l2 = kl_loss(out, w);
    Var<T> l3 = feature_loss(out, w);
    Var<T> tot = nn::add(nn::add(l1, l2), l3);
    TotalLoss<T> r;
    r.total = tot;
    r.breakdown.loss1 = static_cast<double>(l1->val.v[0]);
    r.breakdown.loss2 = static_cast<double>(l2->val.v[0]);
    r.breakdown.loss3 = static_cast<double>(l3->val.v[0]);
    r.breakdown.total = static_cast<double>(tot->val.v[0]);
    return r;
}

} // namespace meds::losses
