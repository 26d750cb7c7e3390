#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "meds/nn/autodiff.hpp"

namespace meds::nn {

namespace detail {

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_acc(const T* A, const T* B, T* C, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        const T* Ai = A + static_cast<std::size_t>(i) * K;
        T* Ci = C + static_cast<std::size_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const T a = Ai[k];
            if (a == T(0)) continue;
            const T* Bk = B + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) Ci[j] += a * Bk[j];
        }
    }
}

// C[M,K] += A[M,N] * B[K,N]^T   (rows of A dotted with rows of B)
template <class T>
void gemm_abt(const T* A, const T* B, T* C, int M, int N, int K) {
    for (int i = 0; i < M; ++i) {
        const T* Ai = A + static_cast<std::size_t>(i) * N;
        T* Ci = C + static_cast<std::size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const T* Bk = B + static_cast<std::size_t>(k) * N;
            T acc = T(0);
            for (int j = 0; j < N; ++j) acc += Ai[j] * Bk[j];
            Ci[k] += acc;
        }
    }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <class T>
void gemm_atb(const T* A, const T* B, T* C, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        const T* Ai = A + static_cast<std::size_t>(i) * K;
        const T* Bi = B + static_cast<std::size_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const T a = Ai[k];
            if (a == T(0)) continue;
            T* Ck = C + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) Ck[j] += a * Bi[j];
        }
    }
}

// im2col for 3D convolution, stride 1, symmetric zero padding (same size).
// col is (C*kd*kh*kw) x (D*H*W).
template <class T>
void im2col3d(const T* x, int C, int D, int H, int W, int kd, int kh, int kw,
              T* col) {
    const int pd = kd / 2, ph = kh / 2, pw = kw / 2;
    const std::size_t plane = static_cast<std::size_t>(D) * H * W;
    std::size_t row = 0;
    for (int c = 0; c < C; ++c) {
        const T* xc = x + static_cast<std::size_t>(c) * plane;
        for (int dz = 0; dz < kd; ++dz)
            for (int dy = 0; dy < kh; ++dy)
                for (int dx = 0; dx < kw; ++dx, ++row) {
                    T* out = col + row * plane;
                    for (int z = 0; z < D; ++z) {
                        const int iz = z + dz - pd;
                        for (int y = 0; y < H; ++y) {
                            const int iy = y + dy - ph;
                            T* o = out + (static_cast<std::size_t>(z) * H + y) * W;
                            if (iz < 0 || iz >= D || iy < 0 || iy >= H) {
                                std::fill(o, o + W, T(0));
                                continue;
                            }
                            const T* src =
                                xc + (static_cast<std::size_t>(iz) * H + iy) * W;
                            const int x0 = std::max(0, pw - dx);
                            const int x1 = std::min(W, W + pw - dx);
                            for (int xq = 0; xq < x0; ++xq) o[xq] = T(0);
                            for (int xq = x0; xq < x1; ++xq) o[xq] = src[xq + dx - pw];
                            for (int xq = x1; xq < W; ++xq) o[xq] = T(0);
                        }
                    }
                }
    }
}

// Scatter-add transpose of im2col3d.
template <class T>
void col2im3d(const T* col, int C, int D, int H, int W, int kd, int kh, int kw,
              T* x) {
    const int pd = kd / 2, ph = kh / 2, pw = kw / 2;
    const std::size_t plane = static_cast<std::size_t>(D) * H * W;
    std::size_t row = 0;
    for (int c = 0; c < C; ++c) {
        T* xc = x + static_cast<std::size_t>(c) * plane;
        for (int dz = 0; dz < kd; ++dz)
            for (int dy = 0; dy < kh; ++dy)
                for (int dx = 0; dx < kw; ++dx, ++row) {
                    const T* in = col + row * plane;
                    for (int z = 0; z < D; ++z) {
                        const int iz = z + dz - pd;
                        if (iz < 0 || iz >= D) continue;
                        for (int y = 0; y < H; ++y) {
                            const int iy = y + dy - ph;
                            if (iy < 0 || iy >= H) continue;
                            const T* i = in + (static_cast<std::size_t>(z) * H + y) * W;
                            T* dst = xc + (static_cast<std::size_t>(iz) * H + iy) * W;
                            const int x0 = std::max(0, pw - dx);
                            const int x1 = std::min(W, W + pw - dx);
                            for (int xq = x0; xq < x1; ++xq) dst[xq + dx - pw] += i[xq];
                        }
                    }
                }
    }
}

inline void check(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::check(a->val.same_shape(b->val), "add: shape mismatch");
    Tensor<T> out = a->val;
    for (std::size_t i = 0; i < out.numel(); ++i) out.v[i] += b->val.v[i];
    return attach<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (a->needs_grad) {
            auto& g = a->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) g.v[i] += self.grad.v[i];
        }
        if (b->needs_grad) {
            auto& g = b->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) g.v[i] += self.grad.v[i];
        }
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::check(a->val.same_shape(b->val), "sub: shape mismatch");
    Tensor<T> out = a->val;
    for (std::size_t i = 0; i < out.numel(); ++i) out.v[i] -= b->val.v[i];
    return attach<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (a->needs_grad) {
            auto& g = a->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) g.v[i] += self.grad.v[i];
        }
        if (b->needs_grad) {
            auto& g = b->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) g.v[i] -= self.grad.v[i];
        }
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::check(a->val.same_shape(b->val), "mul: shape mismatch");
    Tensor<T> out = a->val;
    for (std::size_t i = 0; i < out.numel(); ++i) out.v[i] *= b->val.v[i];
    return attach<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (a->needs_grad) {
            auto& g = a->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i)
                g.v[i] += self.grad.v[i] * b->val.v[i];
        }
        if (b->needs_grad) {
            auto& g = b->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i)
                g.v[i] += self.grad.v[i] * a->val.v[i];
        }
    });
}

// y = scale * x + shift
template <class T>
Var<T> affine(const Var<T>& x, T scale, T shift) {
    Tensor<T> out = x->val;
    for (auto& v : out.v) v = scale * v + shift;
    return attach<T>(std::move(out), {x}, [x, scale](Node<T>& self) {
        if (!x->needs_grad) return;
        auto& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g.v[i] += scale * self.grad.v[i];
    });
}

template <class T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out = x->val;
    for (auto& v : out.v) v = v > T(0) ? v : T(0);
    return attach<T>(std::move(out), {x}, [x](Node<T>& self) {
        if (!x->needs_grad) return;
        auto& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (x->val.v[i] > T(0)) g.v[i] += self.grad.v[i];
    });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> out = x->val;
    for (auto& v : out.v) v = T(1) / (T(1) + std::exp(-v));
    return attach<T>(std::move(out), {x}, [x](Node<T>& self) {
        if (!x->needs_grad) return;
        auto& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const T y = self.val.v[i];
            g.v[i] += self.grad.v[i] * y * (T(1) - y);
        }
    });
}

template <class T>
Var<T> log_op(const Var<T>& x) {
    Tensor<T> out = x->val;
    for (auto& v : out.v) v = std::log(v);
    return attach<T>(std::move(out), {x}, [x](Node<T>& self) {
        if (!x->needs_grad) return;
        auto& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i)
            g.v[i] += self.grad.v[i] / x->val.v[i];
    });
}

// Clamp with zero gradient outside the open interval (lo, hi).
template <class T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
    Tensor<T> out = x->val;
    for (auto& v : out.v) v = std::min(hi, std::max(lo, v));
    return attach<T>(std::move(out), {x}, [x, lo, hi](Node<T>& self) {
        if (!x->needs_grad) return;
        auto& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const T v = x->val.v[i];
            if (v > lo && v < hi) g.v[i] += self.grad.v[i];
        }
    });
}

template <class T>
Var<T> sum(const Var<T>& x) {
    T acc = T(0);
    for (auto v : x->val.v) acc += v;
    Tensor<T> out({1});
    out.v[0] = acc;
    return attach<T>(std::move(out), {x}, [x](Node<T>& self) {
        if (!x->needs_grad) return;
        auto& g = x->ensure_grad();
        const T go = self.grad.v[0];
        for (auto& v : g.v) v += go;
    });
}

template <class T>
Var<T> mean(const Var<T>& x) {
    return affine(sum(x), T(1) / static_cast<T>(x->val.numel()), T(0));
}

// Scalar (shape {1}) division a / b.
template <class T>
Var<T> div_scalar(const Var<T>& a, const Var<T>& b) {
    detail::check(a->val.numel() == 1 && b->val.numel() == 1,
                  "div_scalar: scalars expected");
    Tensor<T> out({1});
    out.v[0] = a->val.v[0] / b->val.v[0];
    return attach<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        const T go = self.grad.v[0];
        const T bv = b->val.v[0];
        if (a->needs_grad) a->ensure_grad().v[0] += go / bv;
        if (b->needs_grad)
            b->ensure_grad().v[0] -= go * a->val.v[0] / (bv * bv);
    });
}

template <class T>
Var<T> detach(const Var<T>& x) {
    return make_var<T>(x->val, false);
}

template <class T>
Var<T> reshape(const Var<T>& x, std::vector<int> new_shape) {
    detail::check(Tensor<T>::numel(new_shape) == x->val.numel(),
                  "reshape: element count mismatch");
    Tensor<T> out = x->val;
    out.shape = std::move(new_shape);
    return attach<T>(std::move(out), {x}, [x](Node<T>& self) {
        if (!x->needs_grad) return;
        auto& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g.v[i] += self.grad.v[i];
    });
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

// Concatenate along the channel axis (dim 1).
template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
    detail::check(!xs.empty(), "concat: empty input list");
    auto shape = xs[0]->val.shape;
    int ctotal = 0;
    std::size_t inner = 1;
    for (std::size_t d = 2; d < shape.size(); ++d) inner *= shape[d];
    for (const auto& x : xs) {
        detail::check(x->val.ndim() == static_cast<int>(shape.size()),
                      "concat: rank mismatch");
        for (std::size_t d = 0; d < shape.size(); ++d)
            if (d != 1)
                detail::check(x->val.shape[d] == shape[d], "concat: shape mismatch");
        ctotal += x->val.shape[1];
    }
    const int N = shape[0];
    shape[1] = ctotal;
    Tensor<T> out(shape);
    const std::size_t out_stride = static_cast<std::size_t>(ctotal) * inner;
    for (int n = 0; n < N; ++n) {
        std::size_t coff = 0;
        for (const auto& x : xs) {
            const std::size_t xc = static_cast<std::size_t>(x->val.shape[1]) * inner;
            std::copy_n(x->val.data() + n * xc, xc,
                        out.data() + n * out_stride + coff);
            coff += xc;
        }
    }
    std::vector<Var<T>> parents = xs;
    return attach<T>(std::move(out), std::move(parents),
                     [xs, N, inner, out_stride](Node<T>& self) {
                         std::size_t coff = 0;
                         for (const auto& x : xs) {
                             const std::size_t xc =
                                 static_cast<std::size_t>(x->val.shape[1]) * inner;
                             if (x->needs_grad) {
                                 auto& g = x->ensure_grad();
                                 for (int n = 0; n < N; ++n) {
                                     const T* src =
                                         self.grad.data() + n * out_stride + coff;
                                     T* dst = g.data() + n * xc;
                                     for (std::size_t i = 0; i < xc; ++i) dst[i] += src[i];
                                 }
                             }
                             coff += xc;
                         }
                     });
}

// Select one sample along the batch axis, keeping a batch dim of 1.
template <class T>
Var<T> slice_batch(const Var<T>& x, int n) {
    detail::check(n >= 0 && n < x->val.shape[0], "slice_batch: index out of range");
    auto shape = x->val.shape;
    shape[0] = 1;
    const std::size_t stride = x->val.numel() / x->val.shape[0];
    Tensor<T> out(shape);
    std::copy_n(x->val.data() + n * stride, stride, out.data());
    return attach<T>(std::move(out), {x}, [x, n, stride](Node<T>& self) {
        if (!x->needs_grad) return;
        auto& g = x->ensure_grad();
        T* dst = g.data() + n * stride;
        for (std::size_t i = 0; i < stride; ++i) dst[i] += self.grad.v[i];
    });
}

// skip (N,C,H,W) * coeff (N,1,H,W), broadcast over channels.
template <class T>
Var<T> mul_bcast_channel(const Var<T>& skip, const Var<T>& coeff) {
    detail::check(skip->val.ndim() == 4 && coeff->val.ndim() == 4 &&
                      coeff->val.shape[1] == 1 &&
                      skip->val.shape[0] == coeff->val.shape[0] &&
                      skip->val.shape[2] == coeff->val.shape[2] &&
                      skip->val.shape[3] == coeff->val.shape[3],
                  "mul_bcast_channel: shape mismatch");
    const int N = skip->val.shape[0], C = skip->val.shape[1];
    const std::size_t hw =
        static_cast<std::size_t>(skip->val.shape[2]) * skip->val.shape[3];
    Tensor<T> out = skip->val;
    for (int n = 0; n < N; ++n) {
        const T* cf = coeff->val.data() + n * hw;
        for (int c = 0; c < C; ++c) {
            T* o = out.data() + (static_cast<std::size_t>(n) * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) o[i] *= cf[i];
        }
    }
    return attach<T>(std::move(out), {skip, coeff},
                     [skip, coeff, N, C, hw](Node<T>& self) {
                         if (skip->needs_grad) {
                             auto& g = skip->ensure_grad();
                             for (int n = 0; n < N; ++n) {
                                 const T* cf = coeff->val.data() + n * hw;
                                 for (int c = 0; c < C; ++c) {
                                     const std::size_t off =
                                         (static_cast<std::size_t>(n) * C + c) * hw;
                                     for (std::size_t i = 0; i < hw; ++i)
                                         g.v[off + i] += self.grad.v[off + i] * cf[i];
                                 }
                             }
                         }
                         if (coeff->needs_grad) {
                             auto& g = coeff->ensure_grad();
                             for (int n = 0; n < N; ++n) {
                                 T* gc = g.data() + n * hw;
                                 for (int c = 0; c < C; ++c) {
                                     const std::size_t off =
                                         (static_cast<std::size_t>(n) * C + c) * hw;
                                     for (std::size_t i = 0; i < hw; ++i)
                                         gc[i] += self.grad.v[off + i] * skip->val.v[off + i];
                                 }
                             }
                         }
                     });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

// 2D convolution, stride 1, same padding. x (N,C,H,W), w (O,C,kh,kw), b (O).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    detail::check(x->val.ndim() == 4 && w->val.ndim() == 4, "conv2d: rank");
    const int N = x->val.shape[0], C = x->val.shape[1], H = x->val.shape[2],
              W = x->val.shape[3];
    const int O = w->val.shape[0], kh = w->val.shape[2], kw = w->val.shape[3];
    detail::check(w->val.shape[1] == C, "conv2d: channel mismatch");
    detail::check(kh % 2 == 1 && kw % 2 == 1, "conv2d: odd kernels only");
    const std::size_t spatial = static_cast<std::size_t>(H) * W;
    const int K = C * kh * kw;
    Tensor<T> out({N, O, H, W});
    std::vector<T> col(static_cast<std::size_t>(K) * spatial);
    for (int n = 0; n < N; ++n) {
        detail::im2col3d(x->val.data() + static_cast<std::size_t>(n) * C * spatial,
                         C, 1, H, W, 1, kh, kw, col.data());
        T* o = out.data() + static_cast<std::size_t>(n) * O * spatial;
        detail::gemm_acc(w->val.data(), col.data(), o, O, K, static_cast<int>(spatial));
        for (int oc = 0; oc < O; ++oc) {
            const T bias = b->val.v[oc];
            T* oo = o + static_cast<std::size_t>(oc) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) oo[i] += bias;
        }
    }
    return attach<T>(
        std::move(out), {x, w, b},
        [x, w, b, N, C, H, W, O, kh, kw, K, spatial](Node<T>& self) {
            std::vector<T> col(static_cast<std::size_t>(K) * spatial);
            std::vector<T> dcol;
            if (x->needs_grad) dcol.resize(col.size());
            for (int n = 0; n < N; ++n) {
                const T* dy = self.grad.data() + static_cast<std::size_t>(n) * O * spatial;
                if (w->needs_grad || x->needs_grad)
                    detail::im2col3d(
                        x->val.data() + static_cast<std::size_t>(n) * C * spatial, C, 1,
                        H, W, 1, kh, kw, col.data());
                if (w->needs_grad)
                    detail::gemm_abt(dy, col.data(), w->ensure_grad().data(), O,
                                     static_cast<int>(spatial), K);
                if (b->needs_grad) {
                    auto& gb = b->ensure_grad();
                    for (int oc = 0; oc < O; ++oc) {
                        const T* d = dy + static_cast<std::size_t>(oc) * spatial;
                        T acc = T(0);
                        for (std::size_t i = 0; i < spatial; ++i) acc += d[i];
                        gb.v[oc] += acc;
                    }
                }
                if (x->needs_grad) {
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    detail::gemm_atb(w->val.data(), dy, dcol.data(), O, K,
                                     static_cast<int>(spatial));
                    detail::col2im3d(dcol.data(), C, 1, H, W, 1, kh, kw,
                                     x->ensure_grad().data() +
                                         static_cast<std::size_t>(n) * C * spatial);
                }
            }
        });
}

// 3D convolution, stride 1, same padding. x (N,C,D,H,W), w (O,C,kd,kh,kw).
template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    detail::check(x->val.ndim() == 5 && w->val.ndim() == 5, "conv3d: rank");
    const int N = x->val.shape[0], C = x->val.shape[1], D = x->val.shape[2],
              H = x->val.shape[3], W = x->val.shape[4];
    const int O = w->val.shape[0], kd = w->val.shape[2], kh = w->val.shape[3],
              kw = w->val.shape[4];
    detail::check(w->val.shape[1] == C, "conv3d: channel mismatch");
    detail::check(kd % 2 == 1 && kh % 2 == 1 && kw % 2 == 1,
                  "conv3d: odd kernels only");
    const std::size_t spatial = static_cast<std::size_t>(D) * H * W;
    const int K = C * kd * kh * kw;
    Tensor<T> out({N, O, D, H, W});
    std::vector<T> col(static_cast<std::size_t>(K) * spatial);
    for (int n = 0; n < N; ++n) {
        detail::im2col3d(x->val.data() + static_cast<std::size_t>(n) * C * spatial,
                         C, D, H, W, kd, kh, kw, col.data());
        T* o = out.data() + static_cast<std::size_t>(n) * O * spatial;
        detail::gemm_acc(w->val.data(), col.data(), o, O, K, static_cast<int>(spatial));
        for (int oc = 0; oc < O; ++oc) {
            const T bias = b->val.v[oc];
            T* oo = o + static_cast<std::size_t>(oc) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) oo[i] += bias;
        }
    }
    return attach<T>(
        std::move(out), {x, w, b},
        [x, w, b, N, C, D, H, W, O, kd, kh, kw, K, spatial](Node<T>& self) {
            std::vector<T> col(static_cast<std::size_t>(K) * spatial);
            std::vector<T> dcol;
            if (x->needs_grad) dcol.resize(col.size());
            for (int n = 0; n < N; ++n) {
                const T* dy = self.grad.data() + static_cast<std::size_t>(n) * O * spatial;
                if (w->needs_grad || x->needs_grad)
                    detail::im2col3d(
                        x->val.data() + static_cast<std::size_t>(n) * C * spatial, C, D,
                        H, W, kd, kh, kw, col.data());
                if (w->needs_grad)
                    detail::gemm_abt(dy, col.data(), w->ensure_grad().data(), O,
                                     static_cast<int>(spatial), K);
                if (b->needs_grad) {
                    auto& gb = b->ensure_grad();
                    for (int oc = 0; oc < O; ++oc) {
                        const T* d = dy + static_cast<std::size_t>(oc) * spatial;
                        T acc = T(0);
                        for (std::size_t i = 0; i < spatial; ++i) acc += d[i];
                        gb.v[oc] += acc;
                    }
                }
                if (x->needs_grad) {
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    detail::gemm_atb(w->val.data(), dy, dcol.data(), O, K,
                                     static_cast<int>(spatial));
                    detail::col2im3d(dcol.data(), C, D, H, W, kd, kh, kw,
                                     x->ensure_grad().data() +
                                         static_cast<std::size_t>(n) * C * spatial);
                }
            }
        });
}

// Transposed 2D convolution, kernel 2, stride 2 (exact doubling).
// x (N,C,H,W), w (C,O,2,2), b (O) -> (N,O,2H,2W).
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    detail::check(x->val.ndim() == 4 && w->val.ndim() == 4 &&
                      w->val.shape[2] == 2 && w->val.shape[3] == 2,
                  "conv_transpose2d: expects k2s2");
    const int N = x->val.shape[0], C = x->val.shape[1], H = x->val.shape[2],
              W = x->val.shape[3];
    const int O = w->val.shape[1];
    detail::check(w->val.shape[0] == C, "conv_transpose2d: channel mismatch");
    const int OH = 2 * H, OW = 2 * W;
    Tensor<T> out({N, O, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            T* op = out.data() +
                    (static_cast<std::size_t>(n) * O + o) * OH * OW;
            const T bias = b->val.v[o];
            for (std::size_t i = 0; i < static_cast<std::size_t>(OH) * OW; ++i)
                op[i] = bias;
            for (int c = 0; c < C; ++c) {
                const T* xp = x->val.data() +
                              (static_cast<std::size_t>(n) * C + c) * H * W;
                const T* wp = w->val.data() +
                              (static_cast<std::size_t>(c) * O + o) * 4;
                for (int y = 0; y < H; ++y) {
                    T* r0 = op + static_cast<std::size_t>(2 * y) * OW;
                    T* r1 = r0 + OW;
                    const T* xr = xp + static_cast<std::size_t>(y) * W;
                    for (int xq = 0; xq < W; ++xq) {
                        const T v = xr[xq];
                        r0[2 * xq] += v * wp[0];
                        r0[2 * xq + 1] += v * wp[1];
                        r1[2 * xq] += v * wp[2];
                        r1[2 * xq + 1] += v * wp[3];
                    }
                }
            }
        }
    return attach<T>(
        std::move(out), {x, w, b}, [x, w, b, N, C, H, W, O, OH, OW](Node<T>& self) {
            for (int n = 0; n < N; ++n) {
                for (int o = 0; o < O; ++o) {
                    const T* dyp = self.grad.data() +
                                   (static_cast<std::size_t>(n) * O + o) * OH * OW;
                    if (b->needs_grad) {
                        T acc = T(0);
                        for (std::size_t i = 0; i < static_cast<std::size_t>(OH) * OW; ++i)
                            acc += dyp[i];
                        b->ensure_grad().v[o] += acc;
                    }
                    for (int c = 0; c < C; ++c) {
                        const T* xp = x->val.data() +
                                      (static_cast<std::size_t>(n) * C + c) * H * W;
                        const T* wp = w->val.data() +
                                      (static_cast<std::size_t>(c) * O + o) * 4;
                        T* gw = w->needs_grad
                                    ? w->ensure_grad().data() +
                                          (static_cast<std::size_t>(c) * O + o) * 4
                                    : nullptr;
                        T* gx = x->needs_grad
                                    ? x->ensure_grad().data() +
                                          (static_cast<std::size_t>(n) * C + c) * H * W
                                    : nullptr;
                        for (int y = 0; y < H; ++y) {
                            const T* r0 = dyp + static_cast<std::size_t>(2 * y) * OW;
                            const T* r1 = r0 + OW;
                            const T* xr = xp + static_cast<std::size_t>(y) * W;
                            for (int xq = 0; xq < W; ++xq) {
                                const T d0 = r0[2 * xq], d1 = r0[2 * xq + 1];
                                const T d2 = r1[2 * xq], d3 = r1[2 * xq + 1];
                                if (gw) {
                                    const T v = xr[xq];
                                    gw[0] += v * d0;
                                    gw[1] += v * d1;
                                    gw[2] += v * d2;
                                    gw[3] += v * d3;
                                }
                                if (gx)
                                    gx[static_cast<std::size_t>(y) * W + xq] +=
                                        d0 * wp[0] + d1 * wp[1] + d2 * wp[2] + d3 * wp[3];
                            }
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Pooling / resampling
// ---------------------------------------------------------------------------

// 2x2 stride-2 max pooling with ceil semantics (edge windows shrink).
template <class T>
Var<T> maxpool2d(const Var<T>& x) {
    detail::check(x->val.ndim() == 4, "maxpool2d: rank");
    const int N = x->val.shape[0], C = x->val.shape[1], H = x->val.shape[2],
              W = x->val.shape[3];
    const int OH = (H + 1) / 2, OW = (W + 1) / 2;
    Tensor<T> out({N, C, OH, OW});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
    std::size_t oi = 0;
    for (int nc = 0; nc < N * C; ++nc) {
        const T* xp = x->val.data() + static_cast<std::size_t>(nc) * H * W;
        const std::size_t base = static_cast<std::size_t>(nc) * H * W;
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox, ++oi) {
                const int y1 = std::min(2 * oy + 1, H - 1);
                const int x1 = std::min(2 * ox + 1, W - 1);
                T best = xp[static_cast<std::size_t>(2 * oy) * W + 2 * ox];
                std::size_t bidx = static_cast<std::size_t>(2 * oy) * W + 2 * ox;
                for (int y = 2 * oy; y <= y1; ++y)
                    for (int xx = 2 * ox; xx <= x1; ++xx) {
                        const std::size_t ii = static_cast<std::size_t>(y) * W + xx;
                        if (xp[ii] > best) {
                            best = xp[ii];
                            bidx = ii;
                        }
                    }
                out.v[oi] = best;
                (*argmax)[oi] = base + bidx;
            }
    }
    return attach<T>(std::move(out), {x}, [x, argmax](Node<T>& self) {
        if (!x->needs_grad) return;
        auto& g = x->ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            g.v[(*argmax)[i]] += self.grad.v[i];
    });
}

// Max pooling along depth only, size 2 stride 2, ceil semantics.
// x (N,C,D,H,W) -> (N,C,ceil(D/2),H,W).
template <class T>
Var<T> maxpool3d_depth(const Var<T>& x) {
    detail::check(x->val.ndim() == 5, "maxpool3d_depth: rank");
    const int N = x->val.shape[0], C = x->val.shape[1], D = x->val.shape[2],
              H = x->val.shape[3], W = x->val.shape[4];
    const int OD = (D + 1) / 2;
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    Tensor<T> out({N, C, OD, H, W});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
    std::size_t oi = 0;
    for (int nc = 0; nc < N * C; ++nc) {
        const std::size_t base = static_cast<std::size_t>(nc) * D * hw;
        const T* xp = x->val.data() + base;
        for (int od = 0; od < OD; ++od) {
            const int z0 = 2 * od, z1 = std::min(2 * od + 1, D - 1);
            for (std::size_t i = 0; i < hw; ++i, ++oi) {
                const T a = xp[static_cast<std::size_t>(z0) * hw + i];
                if (z1 > z0) {
                    const T bval = xp[static_cast<std::size_t>(z1) * hw + i];
                    if (bval > a) {
                        out.v[oi] = bval;
                        (*argmax)[oi] = base + static_cast<std::size_t>(z1) * hw + i;
                        continue;
                    }
                }
                out.v[oi] = a;
                (*argmax)[oi] = base + static_cast<std::size_t>(z0) * hw + i;
            }
        }
    }
    return attach<T>(std::move(out), {x}, [x, argmax](Node<T>& self) {
        if (!x->needs_grad) return;
        auto& g = x->ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            g.v[(*argmax)[i]] += self.grad.v[i];
    });
}

// Nearest-neighbour resize to (OH, OW).
template <class T>
Var<T> resize_nearest2d(const Var<T>& x, int OH, int OW) {
    detail::check(x->val.ndim() == 4, "resize_nearest2d: rank");
    detail::check(OH > 0 && OW > 0, "resize_nearest2d: bad target");
    const int N = x->val.shape[0], C = x->val.shape[1], H = x->val.shape[2],
              W = x->val.shape[3];
    if (OH == H && OW == W) return x;
    Tensor<T> out({N, C, OH, OW});
    std::vector<int> ymap(OH), xmap(OW);
    for (int y = 0; y < OH; ++y) ymap[y] = static_cast<int>((static_cast<long long>(y) * H) / OH);
    for (int xx = 0; xx < OW; ++xx) xmap[xx] = static_cast<int>((static_cast<long long>(xx) * W) / OW);
    for (int nc = 0; nc < N * C; ++nc) {
        const T* xp = x->val.data() + static_cast<std::size_t>(nc) * H * W;
        T* op = out.data() + static_cast<std::size_t>(nc) * OH * OW;
        for (int y = 0; y < OH; ++y) {
            const T* row = xp + static_cast<std::size_t>(ymap[y]) * W;
            T* orow = op + static_cast<std::size_t>(y) * OW;
            for (int xx = 0; xx < OW; ++xx) orow[xx] = row[xmap[xx]];
        }
    }
    return attach<T>(std::move(out), {x},
                     [x, N, C, H, W, OH, OW, ymap, xmap](Node<T>& self) {
                         if (!x->needs_grad) return;
                         auto& g = x->ensure_grad();
                         for (int nc = 0; nc < N * C; ++nc) {
                             T* gp = g.data() + static_cast<std::size_t>(nc) * H * W;
                             const T* dp =
                                 self.grad.data() + static_cast<std::size_t>(nc) * OH * OW;
                             for (int y = 0; y < OH; ++y) {
                                 T* grow = gp + static_cast<std::size_t>(ymap[y]) * W;
                                 const T* drow = dp + static_cast<std::size_t>(y) * OW;
                                 for (int xx = 0; xx < OW; ++xx)
                                     grow[xmap[xx]] += drow[xx];
                             }
                         }
                     });
}

// ---------------------------------------------------------------------------
// Batch normalization (channel axis 1, any rank >= 2)
// ---------------------------------------------------------------------------

// Training mode: normalize by batch statistics and update running stats.
// Running stats are plain tensors owned by the calling module.
template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                  T momentum, T eps) {
    const int C = x->val.shape[1];
    detail::check(gamma->val.numel() == static_cast<std::size_t>(C) &&
                      beta->val.numel() == static_cast<std::size_t>(C),
                  "batch_norm: parameter size mismatch");
    const int N = x->val.shape[0];
    std::size_t inner = 1;
    for (int d = 2; d < x->val.ndim(); ++d) inner *= x->val.shape[d];
    const std::size_t m = static_cast<std::size_t>(N) * inner;
    const std::size_t cstride = static_cast<std::size_t>(C) * inner;

    auto mu = std::make_shared<std::vector<T>>(C, T(0));
    auto invstd = std::make_shared<std::vector<T>>(C, T(0));
    if (training) {
        for (int c = 0; c < C; ++c) {
            T s = T(0);
            for (int n = 0; n < N; ++n) {
                const T* xp = x->val.data() + n * cstride + c * inner;
                for (std::size_t i = 0; i < inner; ++i) s += xp[i];
            }
            const T mean_c = s / static_cast<T>(m);
            T v = T(0);
            for (int n = 0; n < N; ++n) {
                const T* xp = x->val.data() + n * cstride + c * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    const T d = xp[i] - mean_c;
                    v += d * d;
                }
            }
            const T var_c = v / static_cast<T>(m);
            (*mu)[c] = mean_c;
            (*invstd)[c] = T(1) / std::sqrt(var_c + eps);
            running_mean.v[c] = momentum * running_mean.v[c] + (T(1) - momentum) * mean_c;
            running_var.v[c] = momentum * running_var.v[c] + (T(1) - momentum) * var_c;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            (*mu)[c] = running_mean.v[c];
            (*invstd)[c] = T(1) / std::sqrt(running_var.v[c] + eps);
        }
    }

    Tensor<T> out(x->val.shape);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* xp = x->val.data() + n * cstride + c * inner;
            T* op = out.data() + n * cstride + c * inner;
            const T g = gamma->val.v[c], bb = beta->val.v[c];
            const T mc = (*mu)[c], is = (*invstd)[c];
            for (std::size_t i = 0; i < inner; ++i)
                op[i] = g * ((xp[i] - mc) * is) + bb;
        }

    return attach<T>(
        std::move(out), {x, gamma, beta},
        [x, gamma, beta, mu, invstd, N, C, inner, cstride, m,
         training](Node<T>& self) {
            // Per-channel reductions of dy and dy*xhat.
            std::vector<T> dbeta(C, T(0)), dgamma(C, T(0));
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T* xp = x->val.data() + n * cstride + c * inner;
                    const T* dy = self.grad.data() + n * cstride + c * inner;
                    const T mc = (*mu)[c], is = (*invstd)[c];
                    T s1 = T(0), s2 = T(0);
                    for (std::size_t i = 0; i < inner; ++i) {
                        s1 += dy[i];
                        s2 += dy[i] * (xp[i] - mc) * is;
                    }
                    dbeta[c] += s1;
                    dgamma[c] += s2;
                }
            if (beta->needs_grad) {
                auto& g = beta->ensure_grad();
                for (int c = 0; c < C; ++c) g.v[c] += dbeta[c];
            }
            if (gamma->needs_grad) {
                auto& g = gamma->ensure_grad();
                for (int c = 0; c < C; ++c) g.v[c] += dgamma[c];
            }
            if (x->needs_grad) {
                auto& gx = x->ensure_grad();
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const T* xp = x->val.data() + n * cstride + c * inner;
                        const T* dy = self.grad.data() + n * cstride + c * inner;
                        T* gp = gx.data() + n * cstride + c * inner;
                        const T mc = (*mu)[c], is = (*invstd)[c];
                        const T gsc = gamma->val.v[c] * is;
                        if (training) {
                            const T k1 = dbeta[c] / static_cast<T>(m);
                            const T k2 = dgamma[c] / static_cast<T>(m);
                            for (std::size_t i = 0; i < inner; ++i) {
                                const T xhat = (xp[i] - mc) * is;
                                gp[i] += gsc * (dy[i] - k1 - xhat * k2);
                            }
                        } else {
                            for (std::size_t i = 0; i < inner; ++i)
                                gp[i] += gsc * dy[i];
                        }
                    }
            }
        });
}

} // namespace meds::nn
