#pragma once

#include <string>
#include <vector>

#include "meds/nn/ops.hpp"

namespace meds::nn {

// Named parameter or persistent buffer (running statistics). Buffers are
// saved in checkpoints but excluded from optimization.
template <class T>
struct NamedTensor {
    std::string name;
    Var<T> param;      // set for trainable parameters
    Tensor<T>* buffer = nullptr; // set for buffers
};

template <class T>
struct ParamRegistry {
    std::vector<NamedTensor<T>> entries;

    void add_param(const std::string& name, const Var<T>& p) {
        entries.push_back({name, p, nullptr});
    }
    void add_buffer(const std::string& name, Tensor<T>* b) {
        entries.push_back({name, nullptr, b});
    }
    std::vector<Var<T>> params() const {
        std::vector<Var<T>> out;
        for (const auto& e : entries)
            if (e.param) out.push_back(e.param);
        return out;
    }
    std::size_t param_count(const std::string& prefix = "") const {
        std::size_t n = 0;
        for (const auto& e : entries)
            if (e.param && e.name.rfind(prefix, 0) == 0) n += e.param->val.numel();
        return n;
    }
};

template <class T>
Var<T> make_param(std::vector<int> shape) {
    auto v = make_var<T>(Tensor<T>(std::move(shape)), true);
    return v;
}

// He-normal initialisation for convolution weights.
template <class T>
void init_he(const Var<T>& w, Rng& rng, std::size_t fan_in) {
    fill_normal(w->val, rng, T(0), std::sqrt(T(2) / static_cast<T>(fan_in)));
}

template <class T>
struct Conv2d {
    Var<T> w, b;
    Conv2d() = default;
    Conv2d(int cin, int cout, int k, Rng& rng) {
        w = make_param<T>({cout, cin, k, k});
        b = make_param<T>({cout});
        init_he(w, rng, static_cast<std::size_t>(cin) * k * k);
    }
    Var<T> operator()(const Var<T>& x) const { return conv2d(x, w, b); }
    void collect(const std::string& p, ParamRegistry<T>& r) {
        r.add_param(p + ".w", w);
        r.add_param(p + ".b", b);
    }
};

template <class T>
struct Conv3d {
    Var<T> w, b;
    Conv3d() = default;
    Conv3d(int cin, int cout, int k, Rng& rng) {
        w = make_param<T>({cout, cin, k, k, k});
        b = make_param<T>({cout});
        init_he(w, rng, static_cast<std::size_t>(cin) * k * k * k);
    }
    Var<T> operator()(const Var<T>& x) const { return conv3d(x, w, b); }
    void collect(const std::string& p, ParamRegistry<T>& r) {
        r.add_param(p + ".w", w);
        r.add_param(p + ".b", b);
    }
};

template <class T>
struct ConvT2d {
    Var<T> w, b;
    ConvT2d() = default;
    ConvT2d(int cin, int cout, Rng& rng) {
        w = make_param<T>({cin, cout, 2, 2});
        b = make_param<T>({cout});
        init_he(w, rng, static_cast<std::size_t>(cin) * 4);
    }
    Var<T> operator()(const Var<T>& x) const { return conv_transpose2d(x, w, b); }
    void collect(const std::string& p, ParamRegistry<T>& r) {
        r.add_param(p + ".w", w);
        r.add_param(p + ".b", b);
    }
};

template <class T>
struct BatchNorm {
    Var<T> gamma, beta;
    Tensor<T> running_mean, running_var;
    T momentum = T(0.9);
    T eps = T(1e-5);

    BatchNorm() = default;
    explicit BatchNorm(int c, T mom = T(0.9)) : momentum(mom) {
        gamma = make_param<T>({c});
        beta = make_param<T>({c});
        gamma->val.fill(T(1));
        running_mean = Tensor<T>({c}, T(0));
        running_var = Tensor<T>({c}, T(1));
    }
    Var<T> operator()(const Var<T>& x, bool training) {
        return batch_norm(x, gamma, beta, running_mean, running_var, training,
                          momentum, eps);
    }
    void collect(const std::string& p, ParamRegistry<T>& r) {
        r.add_param(p + ".gamma", gamma);
        r.add_param(p + ".beta", beta);
        r.add_buffer(p + ".rmean", &running_mean);
        r.add_buffer(p + ".rvar", &running_var);
    }
};

// Adam optimizer over a fixed parameter list.
template <class T>
struct Adam {
    std::vector<Var<T>> params;
    std::vector<Tensor<T>> m, v;
    T lr = T(1e-3), beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
    long step_count = 0;

    Adam() = default;
    Adam(std::vector<Var<T>> ps, T lr_, T b1, T b2)
        : params(std::move(ps)), lr(lr_), beta1(b1), beta2(b2) {
        for (const auto& p : params) {
            m.emplace_back(p->val.shape);
            v.emplace_back(p->val.shape);
        }
    }

    void step() {
        ++step_count;
        const T bc1 = T(1) - std::pow(beta1, static_cast<T>(step_count));
        const T bc2 = T(1) - std::pow(beta2, static_cast<T>(step_count));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            if (p->grad.v.empty()) continue;
            for (std::size_t j = 0; j < p->val.numel(); ++j) {
                const T g = p->grad.v[j];
                m[i].v[j] = beta1 * m[i].v[j] + (T(1) - beta1) * g;
                v[i].v[j] = beta2 * v[i].v[j] + (T(1) - beta2) * g * g;
                const T mhat = m[i].v[j] / bc1;
                const T vhat = v[i].v[j] / bc2;
                p->val.v[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    void zero_grad() { nn::zero_grad(params); }
};

} // namespace meds::nn
