#include "doctest.h"

#include "meds/nn/modules.hpp"

#include <functional>

using namespace meds;
using nn::Tensor;
using nn::Var;

namespace {

using D = double;

Var<D> rand_var(std::vector<int> shape, nn::Rng& rng, bool requires_grad = true,
                double lo = -1.0, double hi = 1.0) {
    Tensor<D> t(std::move(shape));
    nn::fill_uniform(t, rng, lo, hi);
    return nn::make_var(std::move(t), requires_grad);
}

// Scalarize an arbitrary tensor output with fixed random weights so every
// output element influences the loss.
Var<D> weighted_sum(const Var<D>& y, nn::Rng& rng) {
    Tensor<D> w(y->val.shape);
    nn::fill_uniform(w, rng, -1.0, 1.0);
    return nn::sum(nn::mul(y, nn::make_var(std::move(w), false)));
}

// Central finite differences vs reverse-mode gradients on every element of
// every listed input. Returns the max relative error (scaled by gradient
// magnitude or 1, whichever is larger).
double check_gradients(const std::function<Var<D>()>& loss_fn,
                       const std::vector<Var<D>>& inputs, double h = 1e-6) {
    Var<D> loss = loss_fn();
    nn::zero_grad(inputs);
    nn::backward(loss);
    double max_rel = 0.0;
    for (const auto& in : inputs) {
        for (std::size_t i = 0; i < in->val.numel(); ++i) {
            const double orig = in->val.v[i];
            in->val.v[i] = orig + h;
            const double fp = loss_fn()->val.v[0];
            in->val.v[i] = orig - h;
            const double fm = loss_fn()->val.v[0];
            in->val.v[i] = orig;
            const double num = (fp - fm) / (2 * h);
            const double ana = in->grad.v.empty() ? 0.0 : in->grad.v[i];
            const double denom = std::max({std::abs(num), std::abs(ana), 1.0});
            max_rel = std::max(max_rel, std::abs(num - ana) / denom);
        }
    }
    return max_rel;
}

} // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    nn::Rng rng(42);
    auto x = rand_var({2, 3, 4}, rng);
    auto y = rand_var({2, 3, 4}, rng);
    nn::Rng wrng(7);
    auto w1 = rand_var({2, 3, 4}, wrng, false);

    auto loss_add = [&] { return nn::sum(nn::mul(nn::add(x, y), w1)); };
    CHECK(check_gradients(loss_add, {x, y}) < 1e-7);

    auto loss_mul = [&] { return nn::sum(nn::mul(nn::mul(x, y), w1)); };
    CHECK(check_gradients(loss_mul, {x, y}) < 1e-7);

    auto loss_sub = [&] { return nn::sum(nn::mul(nn::sub(x, y), w1)); };
    CHECK(check_gradients(loss_sub, {x, y}) < 1e-7);

    auto loss_affine = [&] { return nn::sum(nn::mul(nn::affine(x, 2.5, -0.3), w1)); };
    CHECK(check_gradients(loss_affine, {x}) < 1e-7);

    auto loss_relu = [&] { return nn::sum(nn::mul(nn::relu(x), w1)); };
    CHECK(check_gradients(loss_relu, {x}) < 1e-6);

    auto loss_sig = [&] { return nn::sum(nn::mul(nn::sigmoid(x), w1)); };
    CHECK(check_gradients(loss_sig, {x}) < 1e-7);

    auto loss_mean = [&] { return nn::mean(nn::mul(x, y)); };
    CHECK(check_gradients(loss_mean, {x, y}) < 1e-7);
}

TEST_CASE("log / clamp / div gradients") {
    nn::Rng rng(1);
    auto x = rand_var({12}, rng, true, 0.1, 0.9);
    auto loss_log = [&] { return nn::sum(nn::log_op(x)); };
    CHECK(check_gradients(loss_log, {x}) < 1e-6);

    // clamp: keep sample points away from the clamp boundaries
    auto loss_clamp = [&] { return nn::sum(nn::clamp(x, 0.05, 0.95)); };
    CHECK(check_gradients(loss_clamp, {x}) < 1e-7);

    auto a = rand_var({1}, rng, true, 1.0, 2.0);
    auto b = rand_var({1}, rng, true, 1.0, 2.0);
    auto loss_div = [&] { return nn::div_scalar(a, b); };
    CHECK(check_gradients(loss_div, {a, b}) < 1e-7);
}

TEST_CASE("conv2d gradients (input, weight, bias)") {
    nn::Rng rng(3);
    auto x = rand_var({2, 3, 5, 6}, rng);
    auto w = rand_var({4, 3, 3, 3}, rng);
    auto b = rand_var({4}, rng);
    nn::Rng wrng(11);
    auto ww = rand_var({2, 4, 5, 6}, wrng, false);
    auto loss = [&] { return nn::sum(nn::mul(nn::conv2d(x, w, b), ww)); };
    CHECK(check_gradients(loss, {x, w, b}) < 1e-6);
}

TEST_CASE("conv2d 1x1 gradients") {
    nn::Rng rng(4);
    auto x = rand_var({1, 3, 4, 4}, rng);
    auto w = rand_var({2, 3, 1, 1}, rng);
    auto b = rand_var({2}, rng);
    nn::Rng wrng(12);
    auto ww = rand_var({1, 2, 4, 4}, wrng, false);
    auto loss = [&] { return nn::sum(nn::mul(nn::conv2d(x, w, b), ww)); };
    CHECK(check_gradients(loss, {x, w, b}) < 1e-6);
}

TEST_CASE("conv3d gradients") {
    nn::Rng rng(5);
    auto x = rand_var({1, 2, 3, 4, 5}, rng);
    auto w = rand_var({3, 2, 3, 3, 3}, rng);
    auto b = rand_var({3}, rng);
    nn::Rng wrng(13);
    auto ww = rand_var({1, 3, 3, 4, 5}, wrng, false);
    auto loss = [&] { return nn::sum(nn::mul(nn::conv3d(x, w, b), ww)); };
    CHECK(check_gradients(loss, {x, w, b}) < 1e-6);
}

TEST_CASE("conv_transpose2d gradients") {
    nn::Rng rng(6);
    auto x = rand_var({2, 3, 3, 4}, rng);
    auto w = rand_var({3, 2, 2, 2}, rng);
    auto b = rand_var({2}, rng);
    nn::Rng wrng(14);
    auto ww = rand_var({2, 2, 6, 8}, wrng, false);
    auto loss = [&] { return nn::sum(nn::mul(nn::conv_transpose2d(x, w, b), ww)); };
    CHECK(check_gradients(loss, {x, w, b}) < 1e-6);
}

TEST_CASE("pooling gradients") {
    nn::Rng rng(8);
    auto x = rand_var({2, 2, 5, 5}, rng); // odd size exercises ceil windows
    nn::Rng wrng(15);
    auto ww = rand_var({2, 2, 3, 3}, wrng, false);
    auto loss = [&] { return nn::sum(nn::mul(nn::maxpool2d(x), ww)); };
    CHECK(check_gradients(loss, {x}) < 1e-6);

    auto x3 = rand_var({1, 2, 5, 3, 3}, rng);
    auto w3 = rand_var({1, 2, 3, 3, 3}, wrng, false);
    auto loss3 = [&] { return nn::sum(nn::mul(nn::maxpool3d_depth(x3), w3)); };
    CHECK(check_gradients(loss3, {x3}) < 1e-6);
}

TEST_CASE("resize and structural op gradients") {
    nn::Rng rng(9);
    auto x = rand_var({1, 2, 3, 3}, rng);
    nn::Rng wrng(16);
    auto ww = rand_var({1, 2, 6, 6}, wrng, false);
    auto loss = [&] { return nn::sum(nn::mul(nn::resize_nearest2d(x, 6, 6), ww)); };
    CHECK(check_gradients(loss, {x}) < 1e-7);

    auto a = rand_var({2, 2, 3, 3}, rng);
    auto b = rand_var({2, 3, 3, 3}, rng);
    auto wc = rand_var({2, 5, 3, 3}, wrng, false);
    auto loss_cat = [&] {
        return nn::sum(nn::mul(nn::concat_channels<D>({a, b}), wc));
    };
    CHECK(check_gradients(loss_cat, {a, b}) < 1e-7);

    auto s = rand_var({3, 2, 2, 2}, rng);
    auto wsl = rand_var({1, 2, 2, 2}, wrng, false);
    auto loss_slice = [&] { return nn::sum(nn::mul(nn::slice_batch(s, 1), wsl)); };
    CHECK(check_gradients(loss_slice, {s}) < 1e-7);

    auto skip = rand_var({2, 3, 4, 4}, rng);
    auto coeff = rand_var({2, 1, 4, 4}, rng, true, 0.1, 0.9);
    auto wb = rand_var({2, 3, 4, 4}, wrng, false);
    auto loss_bc = [&] {
        return nn::sum(nn::mul(nn::mul_bcast_channel(skip, coeff), wb));
    };
    CHECK(check_gradients(loss_bc, {skip, coeff}) < 1e-7);
}

TEST_CASE("batch_norm gradients in training and eval mode") {
    nn::Rng rng(10);
    auto x = rand_var({3, 2, 4, 4}, rng);
    auto gamma = rand_var({2}, rng, true, 0.5, 1.5);
    auto beta = rand_var({2}, rng, true, -0.5, 0.5);
    Tensor<D> rm({2}, 0.0), rv({2}, 1.0);
    nn::Rng wrng(17);
    auto ww = rand_var({3, 2, 4, 4}, wrng, false);

    auto loss_train = [&] {
        Tensor<D> rm_copy = rm, rv_copy = rv; // keep stats fixed across calls
        auto y = nn::batch_norm(x, gamma, beta, rm_copy, rv_copy, true, 0.9, 1e-5);
        return nn::sum(nn::mul(y, ww));
    };
    CHECK(check_gradients(loss_train, {x, gamma, beta}, 1e-5) < 1e-5);

    rm.v = {0.1, -0.2};
    rv.v = {0.8, 1.3};
    auto loss_eval = [&] {
        auto y = nn::batch_norm(x, gamma, beta, rm, rv, false, 0.9, 1e-5);
        return nn::sum(nn::mul(y, ww));
    };
    CHECK(check_gradients(loss_eval, {x, gamma, beta}) < 1e-6);
}

TEST_CASE("no-grad mode skips graph construction") {
    nn::Rng rng(20);
    auto x = rand_var({2, 2}, rng);
    {
        nn::NoGradGuard guard;
        auto y = nn::relu(x);
        CHECK(y->parents.empty());
        CHECK_FALSE(y->needs_grad);
    }
    auto y = nn::relu(x);
    CHECK(y->needs_grad);
}

TEST_CASE("detach blocks gradient flow") {
    nn::Rng rng(21);
    auto x = rand_var({4}, rng);
    auto loss = nn::sum(nn::mul(nn::detach(x), x));
    nn::zero_grad<D>({x});
    nn::backward(loss);
    // d/dx of sum(c * x) with c = detach(x): gradient is exactly c, not 2x.
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(x->grad.v[i] == doctest::Approx(x->val.v[i]).epsilon(1e-12));
}
