#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "meds/nn/modules.hpp"

namespace meds::model {

using nn::Rng;
using nn::Var;

// Architecture hyper-parameters. Defaults follow the full-scale network;
// tests and the phantom benchmark shrink them.
struct ModelConfig {
    int base_width = 8;       // feature maps in the first Conv-Block
    int encoder_depth = 6;    // Conv-Blocks per encoder
    int num_aux_detectors = 4; // 0 drops the distillation heads entirely
    int input_size = 256;
    int patch_depth = 11;
    int dense_growth = 4;  // channels emitted by each dense-unit conv set
    int dense_width = 8;   // transition channels of dense units 1..4
    int head_width = 8;    // detector feature channels (the aligned F maps)
    bool use_attention = true;
    bool use_patch_input = true;
    bool use_forward_mip = true;
    bool use_backward_mip = true;
    double bn_momentum = 0.9;

    int num_encoders() const {
        return (use_patch_input ? 1 : 0) + (use_forward_mip ? 1 : 0) +
               (use_backward_mip ? 1 : 0);
    }

    // Spatial side length after each encoder block (ceil-mode pooling).
    std::vector<int> encoder_sizes() const {
        std::vector<int> s{input_size};
        for (int l = 0; l < encoder_depth; ++l) s.push_back((s.back() + 1) / 2);
        return s;
    }

    // Depth of the dense-block tensor after each of the four poolings.
    std::vector<int> dense_depth_trace() const {
        std::vector<int> t{patch_depth};
        for (int i = 0; i < 4; ++i) t.push_back((t.back() + 1) / 2);
        return t;
    }

    void validate() const {
        using std::to_string;
        auto fail = [](const std::string& m) {
            throw std::invalid_argument("ModelConfig: " + m);
        };
        if (base_width < 1) fail("base_width must be >= 1");
        if (encoder_depth < 2) fail("encoder_depth must be >= 2");
        if (num_aux_detectors < 0 || num_aux_detectors > encoder_depth - 2)
            fail("num_aux_detectors must be in [0, encoder_depth-2]");
        if (num_encoders() < 1) fail("at least one input branch must be enabled");
        const int div = 1 << (encoder_depth - 1);
        if (input_size <= 0 || input_size % div != 0)
            fail("input_size must be divisible by 2^(encoder_depth-1) = " +
                 to_string(div));
        const auto s = encoder_sizes();
        for (std::size_t l = 0; l + 1 < s.size(); ++l)
            if (s[l] != 1 && s[l] % 2 != 0)
                fail("encoder size trace hits odd size " + to_string(s[l]) +
                     "; decoder upsampling cannot double it exactly");
        if (patch_depth < 1) fail("patch_depth must be >= 1");
        if (use_patch_input && dense_depth_trace().back() != 1)
            fail("patch_depth " + to_string(patch_depth) +
                 " does not reduce to depth 1 after four poolings (max 16)");
        if (dense_growth < 1 || dense_width < 1 || head_width < 1)
            fail("channel widths must be >= 1");
    }

    bool compatible_with(const ModelConfig& o) const {
        return base_width == o.base_width && encoder_depth == o.encoder_depth &&
               num_aux_detectors == o.num_aux_detectors &&
               input_size == o.input_size && patch_depth == o.patch_depth &&
               dense_growth == o.dense_growth && dense_width == o.dense_width &&
               head_width == o.head_width && use_attention == o.use_attention &&
               use_patch_input == o.use_patch_input &&
               use_forward_mip == o.use_forward_mip &&
               use_backward_mip == o.use_backward_mip;
    }
};

// Probability maps and aligned feature maps from the five detectors.
template <class T>
struct DetectorOutputs {
    Var<T> main_prob;               // (N,1,S,S), values in [0,1]
    std::vector<Var<T>> aux_probs;  // k maps, same shape
    Var<T> main_feat;               // (N,head_width,S,S)
    std::vector<Var<T>> aux_feats;  // k maps aligned to main_feat
};

// Five conv sets with dense connectivity, compressed by a 1x1x1 transition.
template <class T>
struct DenseUnit {
    std::vector<nn::Conv3d<T>> convs;
    std::vector<nn::BatchNorm<T>> bns;
    nn::Conv3d<T> transition;

    DenseUnit() = default;
    DenseUnit(int cin, int growth, int cout, T bn_mom, Rng& rng) {
        for (int j = 0; j < 5; ++j) {
            convs.emplace_back(cin + j * growth, growth, 3, rng);
            bns.emplace_back(growth, bn_mom);
        }
        // 1x1x1 conv built through the generic k=1 path
        transition = nn::Conv3d<T>(5 * growth, cout, 1, rng);
    }

    Var<T> forward(const Var<T>& x, bool training) {
        std::vector<Var<T>> feats;
        Var<T> cur = x;
        for (int j = 0; j < 5; ++j) {
            std::vector<Var<T>> cat{x};
            for (const auto& f : feats) cat.push_back(f);
            Var<T> in = cat.size() == 1 ? x : nn::concat_channels(cat);
            feats.push_back(bns[j](nn::relu(convs[j](in)), training));
        }
        return transition(nn::concat_channels(feats));
    }

    void collect(const std::string& p, nn::ParamRegistry<T>& r) {
        for (int j = 0; j < 5; ++j) {
            convs[j].collect(p + ".set" + std::to_string(j) + ".conv", r);
            bns[j].collect(p + ".set" + std::to_string(j) + ".bn", r);
        }
        transition.collect(p + ".trans", r);
    }
};

// 3D dense block: four dense units with depth pooling, a fifth unit, and a
// squeeze to a 3-channel planar latent matching the MIP image layout.
template <class T>
struct DenseBlock {
    std::vector<DenseUnit<T>> units;

    DenseBlock() = default;
    DenseBlock(const ModelConfig& cfg, Rng& rng) {
        int cin = 1;
        for (int u = 0; u < 5; ++u) {
            const int cout = (u == 4) ? 3 : cfg.dense_width;
            units.emplace_back(cin, cfg.dense_growth, cout,
                               static_cast<T>(cfg.bn_momentum), rng);
            cin = cout;
        }
    }

    // x (N,1,D,S,S) -> (N,3,S,S)
    Var<T> forward(const Var<T>& x, bool training) {
        Var<T> cur = x;
        for (int u = 0; u < 4; ++u) {
            cur = units[u].forward(cur, training);
            cur = nn::maxpool3d_depth(cur);
        }
        cur = units[4].forward(cur, training);
        if (cur->val.shape[2] != 1)
            throw std::invalid_argument("dense_block: depth did not reduce to 1");
        return nn::reshape(cur, {cur->val.shape[0], cur->val.shape[1],
                                 cur->val.shape[3], cur->val.shape[4]});
    }

    void collect(const std::string& p, nn::ParamRegistry<T>& r) {
        for (int u = 0; u < 5; ++u)
            units[u].collect(p + ".unit" + std::to_string(u), r);
    }
};

// Encoder Conv-Block: two residual conv stages, then a downsampling pool.
// The pre-pool features are exposed for the decoder skips.
template <class T>
struct ConvBlock {
    nn::Conv2d<T> c1, c2, c3, c4;
    nn::BatchNorm<T> bn1, bn2;
    std::optional<nn::Conv2d<T>> proj;

    ConvBlock() = default;
    ConvBlock(int cin, int cout, T bn_mom, Rng& rng)
        : c1(cin, cout, 3, rng),
          c2(cout, cout, 3, rng),
          c3(cout, cout, 3, rng),
          c4(cout, cout, 3, rng),
          bn1(cout, bn_mom),
          bn2(cout, bn_mom) {
        if (cin != cout) proj.emplace(cin, cout, 1, rng);
    }

    // Returns (pre-pool features, pooled output).
    std::pair<Var<T>, Var<T>> forward(const Var<T>& x, bool training) {
        Var<T> skip = proj ? (*proj)(x) : x;
        Var<T> z = nn::relu(nn::add(bn1(c2(nn::relu(c1(x))), training), skip));
        Var<T> z2 = nn::relu(nn::add(bn2(c4(nn::relu(c3(z))), training), z));
        return {z2, nn::maxpool2d(z2)};
    }

    void collect(const std::string& p, nn::ParamRegistry<T>& r) {
        c1.collect(p + ".c1", r);
        c2.collect(p + ".c2", r);
        bn1.collect(p + ".bn1", r);
        c3.collect(p + ".c3", r);
        c4.collect(p + ".c4", r);
        bn2.collect(p + ".bn2", r);
        if (proj) proj->collect(p + ".proj", r);
    }
};

template <class T>
struct Encoder {
    std::vector<ConvBlock<T>> blocks;

    Encoder() = default;
    Encoder(const ModelConfig& cfg, Rng& rng) {
        int cin = 3;
        for (int l = 0; l < cfg.encoder_depth; ++l) {
            const int cout = cfg.base_width << l;
            blocks.emplace_back(cin, cout, static_cast<T>(cfg.bn_momentum), rng);
            cin = cout;
        }
    }

    // Returns skip features of blocks 2..E (pre-pool) and the bottleneck.
    std::pair<std::vector<Var<T>>, Var<T>> forward(const Var<T>& x, bool training) {
        std::vector<Var<T>> skips;
        Var<T> cur = x;
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            auto [pre, pooled] = blocks[l].forward(cur, training);
            if (l >= 1) skips.push_back(pre);
            cur = pooled;
        }
        return {skips, cur};
    }

    void collect(const std::string& p, nn::ParamRegistry<T>& r) {
        for (std::size_t l = 0; l < blocks.size(); ++l)
            blocks[l].collect(p + ".block" + std::to_string(l), r);
    }
};

// Additive attention gate: coefficients from (skip, gate), output skip-scaled.
template <class T>
struct AttentionGate {
    nn::Conv2d<T> theta, phi, psi;

    AttentionGate() = default;
    AttentionGate(int c_skip, int c_gate, Rng& rng)
        : theta(c_skip, std::max(1, c_skip / 2), 1, rng),
          phi(c_gate, std::max(1, c_skip / 2), 1, rng),
          psi(std::max(1, c_skip / 2), 1, 1, rng) {}

    Var<T> forward(const Var<T>& skip, const Var<T>& gate) {
        Var<T> g = nn::resize_nearest2d(gate, skip->val.shape[2], skip->val.shape[3]);
        if (g->val.shape[2] != skip->val.shape[2] ||
            g->val.shape[3] != skip->val.shape[3])
            throw std::invalid_argument("attention_gate: spatial mismatch");
        Var<T> a = nn::relu(nn::add(theta(skip), phi(g)));
        Var<T> coeff = nn::sigmoid(psi(a));
        return nn::mul_bcast_channel(skip, coeff);
    }

    void collect(const std::string& p, nn::ParamRegistry<T>& r) {
        theta.collect(p + ".theta", r);
        phi.collect(p + ".phi", r);
        psi.collect(p + ".psi", r);
    }
};

// Decoder DeConv-Block: two residual conv stages then a doubling upsample
// (transposed convolution); identity when the paired encoder level did not
// shrink (1x1 bottleneck case).
template <class T>
struct DeConvBlock {
    nn::Conv2d<T> c1, c2, c3, c4;
    nn::BatchNorm<T> bn1, bn2;
    std::optional<nn::Conv2d<T>> proj;
    std::optional<nn::ConvT2d<T>> up;

    DeConvBlock() = default;
    DeConvBlock(int cin, int cout, bool upsample, T bn_mom, Rng& rng)
        : c1(cin, cout, 3, rng),
          c2(cout, cout, 3, rng),
          c3(cout, cout, 3, rng),
          c4(cout, cout, 3, rng),
          bn1(cout, bn_mom),
          bn2(cout, bn_mom) {
        if (cin != cout) proj.emplace(cin, cout, 1, rng);
        if (upsample) up.emplace(cout, cout, rng);
    }

    Var<T> forward(const Var<T>& x, bool training) {
        Var<T> skip = proj ? (*proj)(x) : x;
        Var<T> z = nn::relu(nn::add(bn1(c2(nn::relu(c1(x))), training), skip));
        Var<T> z2 = nn::relu(nn::add(bn2(c4(nn::relu(c3(z))), training), z));
        return up ? (*up)(z2) : z2;
    }

    void collect(const std::string& p, nn::ParamRegistry<T>& r) {
        c1.collect(p + ".c1", r);
        c2.collect(p + ".c2", r);
        bn1.collect(p + ".bn1", r);
        c3.collect(p + ".c3", r);
        c4.collect(p + ".c4", r);
        bn2.collect(p + ".bn2", r);
        if (proj) proj->collect(p + ".proj", r);
        if (up) up->collect(p + ".up", r);
    }
};

// Detector block: upsample straight to the input resolution, conv+relu into
// the aligned feature map, then a single-filter conv with logistic squashing.
template <class T>
struct DetectorHead {
    nn::Conv2d<T> c1, c2;
    int out_size = 0;

    DetectorHead() = default;
    DetectorHead(int cin, int head_width, int out, Rng& rng)
        : c1(cin, head_width, 3, rng), c2(head_width, 1, 1, rng), out_size(out) {}

    // Returns (probability map, aligned feature map).
    std::pair<Var<T>, Var<T>> forward(const Var<T>& x) {
        Var<T> u = nn::resize_nearest2d(x, out_size, out_size);
        Var<T> f = nn::relu(c1(u));
        return {nn::sigmoid(c2(f)), f};
    }

    void collect(const std::string& p, nn::ParamRegistry<T>& r) {
        c1.collect(p + ".c1", r);
        c2.collect(p + ".c2", r);
    }
};

template <class T>
class MedsNet {
  public:
    MedsNet() = default;
    MedsNet(const ModelConfig& cfg, unsigned long long seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed);
        const T mom = static_cast<T>(cfg_.bn_momentum);
        const int E = cfg_.encoder_depth;
        const int e = cfg_.num_encoders();
        const auto w = widths();

        if (cfg_.use_patch_input) dense_ = DenseBlock<T>(cfg_, rng);
        for (int i = 0; i < e; ++i) encoders_.emplace_back(cfg_, rng);

        const auto sizes = cfg_.encoder_sizes();
        for (int j = 1; j <= E; ++j) {
            const int cout = w[E - j];
            // D_j consumes the previous decoder features plus the gated
            // concatenation of encoder block E-j+1 skips (both at s[E-j+1]).
            const int cin =
                (j == 1) ? e * w[E - 1] : (1 + e) * w[E - j + 1];
            const bool upsample = sizes[E - j] != sizes[E - j + 1];
            decoder_.emplace_back(cin, cout, upsample, mom, rng);
            if (j >= 2 && cfg_.use_attention)
                gates_.emplace_back(e * w[E - j + 1], w[E - j + 1], rng);
        }

        main_head_ = DetectorHead<T>(w[0], cfg_.head_width, cfg_.input_size, rng);
        for (int i = 1; i <= cfg_.num_aux_detectors; ++i) {
            const int level = E - cfg_.num_aux_detectors - 1 + i; // decoder level
            aux_heads_.emplace_back(w[E - level], cfg_.head_width, cfg_.input_size,
                                    rng);
        }

        registry_ = {};
        if (cfg_.use_patch_input) dense_.collect("dense", registry_);
        for (std::size_t i = 0; i < encoders_.size(); ++i)
            encoders_[i].collect("encoder" + std::to_string(i), registry_);
        for (std::size_t g = 0; g < gates_.size(); ++g)
            gates_[g].collect("attn" + std::to_string(g + 2), registry_);
        for (std::size_t j = 0; j < decoder_.size(); ++j)
            decoder_[j].collect("decoder.block" + std::to_string(j + 1), registry_);
        main_head_.collect("head.main", registry_);
        for (std::size_t i = 0; i < aux_heads_.size(); ++i)
            aux_heads_[i].collect("head.aux" + std::to_string(i + 1), registry_);
    }

    const ModelConfig& config() const { return cfg_; }
    nn::ParamRegistry<T>& registry() { return registry_; }
    const nn::ParamRegistry<T>& registry() const { return registry_; }
    std::vector<Var<T>> parameters() const { return registry_.params(); }
    std::size_t param_count(const std::string& prefix = "") const {
        return registry_.param_count(prefix);
    }

    // patch (N,1,D,S,S); fmips/bmips (N,3,S,S); all values in [0,1].
    DetectorOutputs<T> forward(const Var<T>& patch, const Var<T>& fmips,
                               const Var<T>& bmips, bool training) {
        validate_inputs(patch, fmips, bmips);
        const int E = cfg_.encoder_depth;

        std::vector<Var<T>> enc_inputs;
        if (cfg_.use_patch_input)
            enc_inputs.push_back(dense_.forward(patch, training));
        if (cfg_.use_forward_mip) enc_inputs.push_back(fmips);
        if (cfg_.use_backward_mip) enc_inputs.push_back(bmips);

        std::vector<std::vector<Var<T>>> skips(enc_inputs.size());
        std::vector<Var<T>> bottlenecks;
        for (std::size_t i = 0; i < enc_inputs.size(); ++i) {
            auto [s, b] = encoders_[i].forward(enc_inputs[i], training);
            skips[i] = std::move(s);
            bottlenecks.push_back(b);
        }

        // Per-level concatenation across encoders; skip list index l covers
        // encoder blocks 2..E, resolution descending with l.
        auto level_skip = [&](int l) {
            std::vector<Var<T>> xs;
            for (auto& s : skips) xs.push_back(s[l]);
            return xs.size() == 1 ? xs[0] : nn::concat_channels(xs);
        };

        Var<T> x = bottlenecks.size() == 1 ? bottlenecks[0]
                                           : nn::concat_channels(bottlenecks);
        std::vector<Var<T>> exported; // decoder levels 2..E
        for (int j = 1; j <= E; ++j) {
            if (j >= 2) {
                Var<T> s = level_skip(E - j); // resolution == x's resolution
                Var<T> gated = cfg_.use_attention ? gates_[j - 2].forward(s, x) : s;
                x = nn::concat_channels<T>({x, gated});
            }
            x = decoder_[j - 1].forward(x, training);
            if (j >= 2) exported.push_back(x);
        }

        DetectorOutputs<T> out;
        auto [mp, mf] = main_head_.forward(exported.back());
        out.main_prob = mp;
        out.main_feat = mf;
        const int k = cfg_.num_aux_detectors;
        for (int i = 1; i <= k; ++i) {
            const int level = E - k - 1 + i;
            auto [p, f] = aux_heads_[i - 1].forward(exported[level - 2]);
            out.aux_probs.push_back(p);
            out.aux_feats.push_back(f);
        }
        return out;
    }

  private:
    std::vector<int> widths() const {
        std::vector<int> w;
        for (int l = 0; l < cfg_.encoder_depth; ++l)
            w.push_back(cfg_.base_width << l);
        return w;
    }

    void validate_inputs(const Var<T>& patch, const Var<T>& fmips,
                         const Var<T>& bmips) const {
        const int S = cfg_.input_size;
        auto check_range = [](const Var<T>& v, const char* what) {
            for (auto x : v->val.v)
                if (!(x >= T(0) && x <= T(1)))
                    throw std::invalid_argument(std::string(what) +
                                                ": values outside [0,1]");
        };
        if (cfg_.use_patch_input) {
            const auto& s = patch->val.shape;
            if (patch->val.ndim() != 5 || s[1] != 1 || s[2] != cfg_.patch_depth ||
                s[3] != S || s[4] != S)
                throw std::invalid_argument("meds_forward: bad patch shape");
            check_range(patch, "patch");
        }
        auto check_mips = [&](const Var<T>& m, const char* what) {
            const auto& s = m->val.shape;
            if (m->val.ndim() != 4 || s[1] != 3 || s[2] != S || s[3] != S)
                throw std::invalid_argument(std::string("meds_forward: bad ") +
                                            what + " shape");
            check_range(m, what);
        };
        if (cfg_.use_forward_mip) check_mips(fmips, "forward MIPs");
        if (cfg_.use_backward_mip) check_mips(bmips, "backward MIPs");
    }

    ModelConfig cfg_;
    DenseBlock<T> dense_;
    std::vector<Encoder<T>> encoders_;
    std::vector<AttentionGate<T>> gates_;
    std::vector<DeConvBlock<T>> decoder_;
    DetectorHead<T> main_head_;
    std::vector<DetectorHead<T>> aux_heads_;
    nn::ParamRegistry<T> registry_;
};

} // namespace meds::model
