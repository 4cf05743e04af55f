#ifndef MEMDEBLUR_OPS_HPP
#define MEMDEBLUR_OPS_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "memdeblur/autograd.hpp"
#include "memdeblur/errors.hpp"
#include "memdeblur/tensor.hpp"

namespace memdeblur {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

template <typename T>
ConstMatMap<T> as_mat(const Tensor<T>& t, int rows, int cols) {
    return ConstMatMap<T>(t.data(), rows, cols);
}

template <typename T>
MatMap<T> as_mat(Tensor<T>& t, int rows, int cols) {
    return MatMap<T>(t.data(), rows, cols);
}

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// Unfold [C,H,W] into [C*kh*kw, Ho*Wo] patches (zero padding).
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad) {
    const int c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = conv_out_dim(h, kh, stride, pad);
    const int wo = conv_out_dim(w, kw, stride, pad);
    Tensor<T> col({c_in * kh * kw, ho * wo});
    for (int c = 0; c < c_in; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                T* row = col.data() + static_cast<std::size_t>((c * kh + i) * kw + j) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + i - pad;
                    if (iy < 0 || iy >= h) continue;
                    const T* src = x.data() + (static_cast<std::size_t>(c) * h + iy) * w;
                    T* dst = row + static_cast<std::size_t>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + j - pad;
                        if (ix >= 0 && ix < w) dst[ox] = src[ix];
                    }
                }
            }
    return col;
}

// Transpose of im2col: scatter-add patches back into [C,H,W].
template <typename T>
void col2im(const Tensor<T>& col, int c_in, int h, int w, int kh, int kw, int stride,
            int pad, Tensor<T>& x_out) {
    const int ho = conv_out_dim(h, kh, stride, pad);
    const int wo = conv_out_dim(w, kw, stride, pad);
    for (int c = 0; c < c_in; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                const T* row =
                    col.data() + static_cast<std::size_t>((c * kh + i) * kw + j) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + i - pad;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = x_out.data() + (static_cast<std::size_t>(c) * h + iy) * w;
                    const T* src = row + static_cast<std::size_t>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + j - pad;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
}

inline int reflect101(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise / structural ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> constant(Tensor<T> v) {
    return Var<T>(std::move(v), false);
}

template <typename T>
Var<T> zeros_var(std::vector<int> shape) {
    return Var<T>(Tensor<T>::zeros(std::move(shape)), false);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (!a.value().same_shape(b.value()))
        throw ValidationError("add: shape mismatch " + Tensor<T>::shape_str(a.shape()) +
                              " vs " + Tensor<T>::shape_str(b.shape()));
    Tensor<T> out = a.value();
    out += b.value();
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        a.node()->accumulate(self.grad);
        b.node()->accumulate(self.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    if (!a.value().same_shape(b.value()))
        throw ValidationError("sub: shape mismatch");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        a.node()->accumulate(self.grad);
        Tensor<T> gb = self.grad;
        gb *= T(-1);
        b.node()->accumulate(gb);
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a.value();
    out *= s;
    return make_op<T>(std::move(out), {a}, [a, s](Node<T>& self) {
        Tensor<T> g = self.grad;
        g *= s;
        a.node()->accumulate(g);
    });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
    Tensor<T> out = a.value();
    for (auto& v : out.vec())
        if (v < T(0)) v *= slope;
    return make_op<T>(std::move(out), {a}, [a, slope](Node<T>& self) {
        Tensor<T> g = self.grad;
        const auto& x = a.value();
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (x[i] < T(0)) g[i] *= slope;
        a.node()->accumulate(g);
    });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw UsageError("concat_channels: no inputs");
    const int h = parts[0].value().dim(1), w = parts[0].value().dim(2);
    int c_total = 0;
    for (const auto& p : parts) {
        if (p.value().rank() != 3 || p.value().dim(1) != h || p.value().dim(2) != w)
            throw ValidationError("concat_channels: spatial dims mismatch");
        c_total += p.value().dim(0);
    }
    Tensor<T> out({c_total, h, w});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data(), p.value().data() + p.value().numel(), out.data() + off);
        off += p.value().numel();
    }
    return make_op<T>(std::move(out), parts, [parts](Node<T>& self) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t n = p.value().numel();
            if (p.node()->requires_grad) {
                Tensor<T> g(p.value().shape());
                std::copy(self.grad.data() + off, self.grad.data() + off + n, g.data());
                p.node()->accumulate(g);
            }
            off += n;
        }
    });
}

// Crop a [C,H,W] tensor to a window.
template <typename T>
Var<T> slice_hw(const Var<T>& x, int y0, int x0, int h, int w) {
    const int c = x.value().dim(0), hi = x.value().dim(1), wi = x.value().dim(2);
    if (y0 < 0 || x0 < 0 || y0 + h > hi || x0 + w > wi)
        throw ValidationError("slice_hw: window out of range");
    Tensor<T> out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            std::copy(&x.value().at(ch, y0 + y, x0), &x.value().at(ch, y0 + y, x0) + w,
                      &out.at(ch, y, 0));
    return make_op<T>(std::move(out), {x}, [x, y0, x0, h, w](Node<T>& self) {
        Tensor<T> g(x.value().shape());
        const int c = x.value().dim(0);
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                std::copy(&self.grad.at(ch, y, 0), &self.grad.at(ch, y, 0) + w,
                          &g.at(ch, y0 + y, x0));
        x.node()->accumulate(g);
    });
}

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<int> shape) {
    Tensor<T> out = x.value().reshaped(shape);
    return make_op<T>(std::move(out), {x}, [x](Node<T>& self) {
        x.node()->accumulate(self.grad.reshaped(x.value().shape()));
    });
}

template <typename T>
Var<T> reflect_pad(const Var<T>& x, int pt, int pb, int pl, int pr) {
    const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
    Tensor<T> out({c, h + pt + pb, w + pl + pr});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h + pt + pb; ++y) {
            const int sy = detail::reflect101(y - pt, h);
            for (int xx = 0; xx < w + pl + pr; ++xx)
                out.at(ch, y, xx) = x.value().at(ch, sy, detail::reflect101(xx - pl, w));
        }
    return make_op<T>(std::move(out), {x}, [x, pt, pb, pl, pr](Node<T>& self) {
        const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
        Tensor<T> g(x.value().shape());
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h + pt + pb; ++y) {
                const int sy = detail::reflect101(y - pt, h);
                for (int xx = 0; xx < w + pl + pr; ++xx)
                    g.at(ch, sy, detail::reflect101(xx - pl, w)) += self.grad.at(ch, y, xx);
            }
        x.node()->accumulate(g);
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    const std::size_t n = a.value().numel();
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += a.value()[i];
    Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
    return make_op<T>(std::move(out), {a}, [a, n](Node<T>& self) {
        Tensor<T> g = Tensor<T>::full(a.value().shape(), self.grad[0] / static_cast<T>(n));
        a.node()->accumulate(g);
    });
}

// mean over all elements of sqrt((a-b)^2 + eps^2)
template <typename T>
Var<T> charbonnier_op(const Var<T>& a, const Var<T>& b, T eps) {
    if (!a.value().same_shape(b.value()))
        throw ValidationError("charbonnier: shape mismatch");
    if (!(eps > T(0))) throw ValidationError("charbonnier: eps must be positive");
    const std::size_t n = a.value().numel();
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T d = a.value()[i] - b.value()[i];
        acc += std::sqrt(d * d + eps * eps);
    }
    Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
    return make_op<T>(std::move(out), {a, b}, [a, b, eps, n](Node<T>& self) {
        const T g0 = self.grad[0] / static_cast<T>(n);
        Tensor<T> ga(a.value().shape());
        for (std::size_t i = 0; i < n; ++i) {
            const T d = a.value()[i] - b.value()[i];
            ga[i] = g0 * d / std::sqrt(d * d + eps * eps);
        }
        if (b.node()->requires_grad) {
            Tensor<T> gb = ga;
            gb *= T(-1);
            b.node()->accumulate(gb);
        }
        a.node()->accumulate(ga);
    });
}

// ---------------------------------------------------------------------------
// convolution family
// ---------------------------------------------------------------------------

// x:[Cin,H,W]  w:[Cout,Cin,kh,kw]  b:[Cout]
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
    const int c_in = x.value().dim(0), h = x.value().dim(1), wd = x.value().dim(2);
    const int c_out = w.value().dim(0), kh = w.value().dim(2), kw = w.value().dim(3);
    if (w.value().dim(1) != c_in)
        throw ValidationError("conv2d: weight expects " + std::to_string(w.value().dim(1)) +
                              " input channels, got " + std::to_string(c_in));
    const int ho = detail::conv_out_dim(h, kh, stride, pad);
    const int wo = detail::conv_out_dim(wd, kw, stride, pad);
    if (ho <= 0 || wo <= 0) throw ValidationError("conv2d: empty output");

    Tensor<T> col = detail::im2col(x.value(), kh, kw, stride, pad);
    Tensor<T> out({c_out, ho, wo});
    {
        auto wm = detail::as_mat(w.value(), c_out, c_in * kh * kw);
        auto cm = detail::as_mat(col, c_in * kh * kw, ho * wo);
        auto om = detail::as_mat(out, c_out, ho * wo);
        om.noalias() = wm * cm;
    }
    for (int co = 0; co < c_out; ++co) {
        const T bias = b.value()[static_cast<std::size_t>(co)];
        T* p = out.data() + static_cast<std::size_t>(co) * ho * wo;
        for (int i = 0; i < ho * wo; ++i) p[i] += bias;
    }

    return make_op<T>(std::move(out), {x, w, b},
                      [x, w, b, stride, pad, c_in, h, wd, c_out, kh, kw, ho,
                       wo](Node<T>& self) {
        auto gm = detail::as_mat(self.grad, c_out, ho * wo);
        if (b.node()->requires_grad) {
            Tensor<T> gb({c_out});
            for (int co = 0; co < c_out; ++co)
                gb[static_cast<std::size_t>(co)] = gm.row(co).sum();
            b.node()->accumulate(gb);
        }
        const bool need_x = x.node()->requires_grad;
        const bool need_w = w.node()->requires_grad;
        if (need_w) {
            Tensor<T> col = detail::im2col(x.value(), kh, kw, stride, pad);
            Tensor<T> gw(w.value().shape());
            auto gwm = detail::as_mat(gw, c_out, c_in * kh * kw);
            auto cm = detail::as_mat(col, c_in * kh * kw, ho * wo);
            gwm.noalias() = gm * cm.transpose();
            w.node()->accumulate(gw);
        }
        if (need_x) {
            Tensor<T> gcol({c_in * kh * kw, ho * wo});
            auto wm = detail::as_mat(w.value(), c_out, c_in * kh * kw);
            auto gcm = detail::as_mat(gcol, c_in * kh * kw, ho * wo);
            gcm.noalias() = wm.transpose() * gm;
            Tensor<T> gx({c_in, h, wd});
            detail::col2im(gcol, c_in, h, wd, kh, kw, stride, pad, gx);
            x.node()->accumulate(gx);
        }
    });
}

// x:[Cin,H,W]  w:[Cin,Cout,kh,kw]  b:[Cout]  out:[Cout,(H-1)s+kh,(W-1)s+kw]
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride) {
    const int c_in = x.value().dim(0), h = x.value().dim(1), wd = x.value().dim(2);
    const int c_out = w.value().dim(1), kh = w.value().dim(2), kw = w.value().dim(3);
    if (w.value().dim(0) != c_in)
        throw ValidationError("conv_transpose2d: channel mismatch");
    const int ho = (h - 1) * stride + kh;
    const int wo = (wd - 1) * stride + kw;

    // cols[(co*kh+i)*kw+j, y*W+x] then scatter-add at (y*s+i, x*s+j)
    Tensor<T> cols({c_out * kh * kw, h * wd});
    {
        auto wm = detail::as_mat(w.value(), c_in, c_out * kh * kw);
        auto xm = detail::as_mat(x.value(), c_in, h * wd);
        auto cm = detail::as_mat(cols, c_out * kh * kw, h * wd);
        cm.noalias() = wm.transpose() * xm;
    }
    Tensor<T> out({c_out, ho, wo});
    for (int co = 0; co < c_out; ++co) {
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                const T* src =
                    cols.data() + static_cast<std::size_t>((co * kh + i) * kw + j) * h * wd;
                for (int y = 0; y < h; ++y) {
                    T* dst = &out.at(co, y * stride + i, j);
                    const T* s = src + static_cast<std::size_t>(y) * wd;
                    for (int xx = 0; xx < wd; ++xx) dst[static_cast<std::size_t>(xx) * stride] += s[xx];
                }
            }
        const T bias = b.value()[static_cast<std::size_t>(co)];
        T* p = out.data() + static_cast<std::size_t>(co) * ho * wo;
        for (int i = 0; i < ho * wo; ++i) p[i] += bias;
    }

    return make_op<T>(std::move(out), {x, w, b},
                      [x, w, b, stride, c_in, h, wd, c_out, kh, kw, ho, wo](Node<T>& self) {
        if (b.node()->requires_grad) {
            Tensor<T> gb({c_out});
            for (int co = 0; co < c_out; ++co) {
                T acc = 0;
                const T* p = self.grad.data() + static_cast<std::size_t>(co) * ho * wo;
                for (int i = 0; i < ho * wo; ++i) acc += p[i];
                gb[static_cast<std::size_t>(co)] = acc;
            }
            b.node()->accumulate(gb);
        }
        // gather the scatter: gcols[(co*kh+i)*kw+j, y*W+x] = gout[co, y*s+i, x*s+j]
        Tensor<T> gcols({c_out * kh * kw, h * wd});
        for (int co = 0; co < c_out; ++co)
            for (int i = 0; i < kh; ++i)
                for (int j = 0; j < kw; ++j) {
                    T* dst = gcols.data() +
                             static_cast<std::size_t>((co * kh + i) * kw + j) * h * wd;
                    for (int y = 0; y < h; ++y) {
                        const T* src = &self.grad.at(co, y * stride + i, j);
                        T* d = dst + static_cast<std::size_t>(y) * wd;
                        for (int xx = 0; xx < wd; ++xx)
                            d[xx] = src[static_cast<std::size_t>(xx) * stride];
                    }
                }
        if (x.node()->requires_grad) {
            Tensor<T> gx({c_in, h, wd});
            auto wm = detail::as_mat(w.value(), c_in, c_out * kh * kw);
            auto gcm = detail::as_mat(gcols, c_out * kh * kw, h * wd);
            auto gxm = detail::as_mat(gx, c_in, h * wd);
            gxm.noalias() = wm * gcm;
            x.node()->accumulate(gx);
        }
        if (w.node()->requires_grad) {
            Tensor<T> gw(w.value().shape());
            auto xm = detail::as_mat(x.value(), c_in, h * wd);
            auto gcm = detail::as_mat(gcols, c_out * kh * kw, h * wd);
            auto gwm = detail::as_mat(gw, c_in, c_out * kh * kw);
            gwm.noalias() = xm * gcm.transpose();
            w.node()->accumulate(gw);
        }
    });
}

// [C*r*r, H, W] -> [C, H*r, W*r]; out[c, h*r+dy, w*r+dx] = in[(c*r+dy)*r+dx, h, w]
template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int r) {
    const int c_in = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
    if (c_in % (r * r) != 0)
        throw ValidationError("pixel_shuffle: channels not divisible by r^2");
    const int c_out = c_in / (r * r);
    Tensor<T> out({c_out, h * r, w * r});
    for (int c = 0; c < c_out; ++c)
        for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx) {
                const int ci = (c * r + dy) * r + dx;
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx)
                        out.at(c, y * r + dy, xx * r + dx) = x.value().at(ci, y, xx);
            }
    return make_op<T>(std::move(out), {x}, [x, r, c_out, h, w](Node<T>& self) {
        Tensor<T> g(x.value().shape());
        for (int c = 0; c < c_out; ++c)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const int ci = (c * r + dy) * r + dx;
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx)
                            g.at(ci, y, xx) = self.grad.at(c, y * r + dy, xx * r + dx);
                }
        x.node()->accumulate(g);
    });
}

namespace detail {

struct LerpAxis {
    std::vector<int> i0, i1;
    std::vector<double> f;
};

// Half-pixel-center sample positions, clamped at the borders.
inline LerpAxis lerp_axis(int in, int out) {
    LerpAxis a;
    a.i0.resize(out);
    a.i1.resize(out);
    a.f.resize(out);
    const double r = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double s = (o + 0.5) * r - 0.5;
        if (s < 0) s = 0;
        if (s > in - 1) s = in - 1;
        const int i0 = static_cast<int>(std::floor(s));
        a.i0[o] = i0;
        a.i1[o] = std::min(i0 + 1, in - 1);
        a.f[o] = s - i0;
    }
    return a;
}

} // namespace detail

template <typename T>
Var<T> bilinear_resize(const Var<T>& x, int ho, int wo) {
    const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
    if (ho < 1 || wo < 1) throw ValidationError("bilinear_resize: bad target dims");
    const auto ay = detail::lerp_axis(h, ho);
    const auto ax = detail::lerp_axis(w, wo);
    Tensor<T> out({c, ho, wo});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < ho; ++y) {
            const T fy = static_cast<T>(ay.f[y]);
            for (int xx = 0; xx < wo; ++xx) {
                const T fx = static_cast<T>(ax.f[xx]);
                const T v00 = x.value().at(ch, ay.i0[y], ax.i0[xx]);
                const T v01 = x.value().at(ch, ay.i0[y], ax.i1[xx]);
                const T v10 = x.value().at(ch, ay.i1[y], ax.i0[xx]);
                const T v11 = x.value().at(ch, ay.i1[y], ax.i1[xx]);
                out.at(ch, y, xx) = (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) +
                                    fy * ((T(1) - fx) * v10 + fx * v11);
            }
        }
    return make_op<T>(std::move(out), {x}, [x, ho, wo, ay, ax](Node<T>& self) {
        const int c = x.value().dim(0);
        Tensor<T> g(x.value().shape());
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < ho; ++y) {
                const T fy = static_cast<T>(ay.f[y]);
                for (int xx = 0; xx < wo; ++xx) {
                    const T fx = static_cast<T>(ax.f[xx]);
                    const T go = self.grad.at(ch, y, xx);
                    g.at(ch, ay.i0[y], ax.i0[xx]) += (T(1) - fy) * (T(1) - fx) * go;
                    g.at(ch, ay.i0[y], ax.i1[xx]) += (T(1) - fy) * fx * go;
                    g.at(ch, ay.i1[y], ax.i0[xx]) += fy * (T(1) - fx) * go;
                    g.at(ch, ay.i1[y], ax.i1[xx]) += fy * fx * go;
                }
            }
        x.node()->accumulate(g);
    });
}

// ---------------------------------------------------------------------------
// attention primitives (keys/values as [C, P] location matrices)
// ---------------------------------------------------------------------------

// [C,H,W] -> [C, H*W]; same memory layout, shape change only.
template <typename T>
Var<T> flatten_locations(const Var<T>& x) {
    return reshape(x, {x.value().dim(0), x.value().dim(1) * x.value().dim(2)});
}

template <typename T>
Var<T> concat_locations(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw UsageError("concat_locations: no inputs");
    const int c = parts[0].value().dim(0);
    int p_total = 0;
    for (const auto& p : parts) {
        if (p.value().rank() != 2 || p.value().dim(0) != c)
            throw ValidationError("concat_locations: channel mismatch");
        p_total += p.value().dim(1);
    }
    Tensor<T> out({c, p_total});
    int off = 0;
    for (const auto& p : parts) {
        const int pc = p.value().dim(1);
        for (int ch = 0; ch < c; ++ch)
            std::copy(p.value().data() + static_cast<std::size_t>(ch) * pc,
                      p.value().data() + static_cast<std::size_t>(ch + 1) * pc,
                      out.data() + static_cast<std::size_t>(ch) * p_total + off);
        off += pc;
    }
    return make_op<T>(std::move(out), parts, [parts, c, p_total](Node<T>& self) {
        int off = 0;
        for (const auto& p : parts) {
            const int pc = p.value().dim(1);
            if (p.node()->requires_grad) {
                Tensor<T> g({c, pc});
                for (int ch = 0; ch < c; ++ch)
                    std::copy(self.grad.data() + static_cast<std::size_t>(ch) * p_total + off,
                              self.grad.data() + static_cast<std::size_t>(ch) * p_total + off + pc,
                              g.data() + static_cast<std::size_t>(ch) * pc);
                p.node()->accumulate(g);
            }
            off += pc;
        }
    });
}

// S[q,p] = <query[:,q], mem[:,p]>
template <typename T>
Var<T> affinity_dot(const Var<T>& query, const Var<T>& mem) {
    const int c = query.value().dim(0), q = query.value().dim(1), p = mem.value().dim(1);
    if (mem.value().dim(0) != c) throw ValidationError("affinity: key channel mismatch");
    Tensor<T> s({q, p});
    {
        auto qm = detail::as_mat(query.value(), c, q);
        auto mm = detail::as_mat(mem.value(), c, p);
        auto sm = detail::as_mat(s, q, p);
        sm.noalias() = qm.transpose() * mm;
    }
    return make_op<T>(std::move(s), {query, mem}, [query, mem, c, q, p](Node<T>& self) {
        auto gs = detail::as_mat(self.grad, q, p);
        if (query.node()->requires_grad) {
            Tensor<T> gq({c, q});
            auto mm = detail::as_mat(mem.value(), c, p);
            auto gqm = detail::as_mat(gq, c, q);
            gqm.noalias() = mm * gs.transpose();
            query.node()->accumulate(gq);
        }
        if (mem.node()->requires_grad) {
            Tensor<T> gm({c, p});
            auto qm = detail::as_mat(query.value(), c, q);
            auto gmm = detail::as_mat(gm, c, p);
            gmm.noalias() = qm * gs;
            mem.node()->accumulate(gm);
        }
    });
}

// S[q,p] = -sum_c (query[c,q] - mem[c,p])^2
template <typename T>
Var<T> affinity_neg_l2(const Var<T>& query, const Var<T>& mem) {
    const int c = query.value().dim(0), q = query.value().dim(1), p = mem.value().dim(1);
    if (mem.value().dim(0) != c) throw ValidationError("affinity: key channel mismatch");
    Tensor<T> s({q, p});
    {
        auto qm = detail::as_mat(query.value(), c, q);
        auto mm = detail::as_mat(mem.value(), c, p);
        auto sm = detail::as_mat(s, q, p);
        sm.noalias() = T(2) * (qm.transpose() * mm);
        Eigen::Matrix<T, Eigen::Dynamic, 1> qn = qm.colwise().squaredNorm().transpose();
        Eigen::Matrix<T, Eigen::Dynamic, 1> mn = mm.colwise().squaredNorm().transpose();
        sm.colwise() -= qn;
        sm.rowwise() -= mn.transpose();
    }
    return make_op<T>(std::move(s), {query, mem}, [query, mem, c, q, p](Node<T>& self) {
        auto gs = detail::as_mat(self.grad, q, p);
        auto qm = detail::as_mat(query.value(), c, q);
        auto mm = detail::as_mat(mem.value(), c, p);
        if (query.node()->requires_grad) {
            Tensor<T> gq({c, q});
            auto gqm = detail::as_mat(gq, c, q);
            Eigen::Matrix<T, Eigen::Dynamic, 1> rs = gs.rowwise().sum();
            gqm.noalias() = T(2) * (mm * gs.transpose());
            gqm -= T(2) * (qm * rs.asDiagonal());
            query.node()->accumulate(gq);
        }
        if (mem.node()->requires_grad) {
            Tensor<T> gm({c, p});
            auto gmm = detail::as_mat(gm, c, p);
            Eigen::Matrix<T, Eigen::Dynamic, 1> cs = gs.colwise().sum().transpose();
            gmm.noalias() = T(2) * (qm * gs);
            gmm -= T(2) * (mm * cs.asDiagonal());
            mem.node()->accumulate(gm);
        }
    });
}

// Row-normalize an affinity matrix. verbatim: W = exp(S) / (sqrt(Ck) * sum exp(S)),
// rows sum to 1/sqrt(Ck). standard: softmax(S / sqrt(Ck)), rows sum to 1.
// Row max is subtracted before exponentiation.
template <typename T>
Var<T> attention_normalize(const Var<T>& s, int c_k, bool standard_mode) {
    if (c_k < 1) throw ValidationError("attention_normalize: C_k must be >= 1");
    const int q = s.value().dim(0), p = s.value().dim(1);
    const T root_ck = std::sqrt(static_cast<T>(c_k));
    Tensor<T> w({q, p});
    for (int r = 0; r < q; ++r) {
        const T* sr = s.value().data() + static_cast<std::size_t>(r) * p;
        T* wr = w.data() + static_cast<std::size_t>(r) * p;
        T mx = sr[0];
        if (standard_mode) {
            for (int j = 1; j < p; ++j) mx = std::max(mx, sr[j]);
            T sum = 0;
            for (int j = 0; j < p; ++j) {
                wr[j] = std::exp((sr[j] - mx) / root_ck);
                sum += wr[j];
            }
            for (int j = 0; j < p; ++j) wr[j] /= sum;
        } else {
            for (int j = 1; j < p; ++j) mx = std::max(mx, sr[j]);
            T sum = 0;
            for (int j = 0; j < p; ++j) {
                wr[j] = std::exp(sr[j] - mx);
                sum += wr[j];
            }
            const T denom = root_ck * sum;
            for (int j = 0; j < p; ++j) wr[j] /= denom;
        }
    }
    return make_op<T>(std::move(w), {s}, [s, q, p, root_ck, standard_mode](Node<T>& self) {
        // dS = (1/sqrt(Ck)) * A o (gW - rowsum(gW o A)), A = softmax actually applied
        Tensor<T> gs({q, p});
        for (int r = 0; r < q; ++r) {
            const T* wr = self.value.data() + static_cast<std::size_t>(r) * p;
            const T* gw = self.grad.data() + static_cast<std::size_t>(r) * p;
            T* out = gs.data() + static_cast<std::size_t>(r) * p;
            const T a_scale = standard_mode ? T(1) : root_ck;
            T dot = 0;
            for (int j = 0; j < p; ++j) dot += gw[j] * (a_scale * wr[j]);
            for (int j = 0; j < p; ++j)
                out[j] = (a_scale * wr[j]) * (gw[j] - dot) / root_ck;
        }
        s.node()->accumulate(gs);
    });
}

// out[c,q] = sum_p values[c,p] * w[q,p]
template <typename T>
Var<T> readout_apply(const Var<T>& values, const Var<T>& w) {
    const int c = values.value().dim(0), p = values.value().dim(1);
    const int q = w.value().dim(0);
    if (w.value().dim(1) != p) throw ValidationError("readout: location count mismatch");
    Tensor<T> out({c, q});
    {
        auto vm = detail::as_mat(values.value(), c, p);
        auto wm = detail::as_mat(w.value(), q, p);
        auto om = detail::as_mat(out, c, q);
        om.noalias() = vm * wm.transpose();
    }
    return make_op<T>(std::move(out), {values, w}, [values, w, c, p, q](Node<T>& self) {
        auto go = detail::as_mat(self.grad, c, q);
        if (values.node()->requires_grad) {
            Tensor<T> gv({c, p});
            auto wm = detail::as_mat(w.value(), q, p);
            auto gvm = detail::as_mat(gv, c, p);
            gvm.noalias() = go * wm;
            values.node()->accumulate(gv);
        }
        if (w.node()->requires_grad) {
            Tensor<T> gw({q, p});
            auto vm = detail::as_mat(values.value(), c, p);
            auto gwm = detail::as_mat(gw, q, p);
            gwm.noalias() = go.transpose() * vm;
            w.node()->accumulate(gw);
        }
    });
}

} // namespace memdeblur

#endif
