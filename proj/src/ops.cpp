#include "stylesiam/ops.hpp"

#include <cmath>
#include <cstring>

#include "stylesiam/exceptions.hpp"

namespace stylesiam::ops {

namespace {

TensorPtr out_like(Graph& g, std::vector<int> shape, std::initializer_list<TensorPtr> inputs) {
    auto out = make_tensor(std::move(shape));
    if (wants_grad(g, inputs)) out->set_requires_grad(true);
    return out;
}

bool any_shadow(std::initializer_list<TensorPtr> inputs) {
    for (const auto& t : inputs) {
        if (t && t->has_shadow()) return true;
    }
    return false;
}

std::vector<double> widen(const TensorPtr& t) {
    if (t->has_shadow()) return t->shadow;
    return std::vector<double>(t->data.begin(), t->data.end());
}

// valid output-column range [lo, hi] for a kernel column kw, or lo > hi when empty
void col_range(int kw, int padding, int stride, int in_w, int out_w, int& lo, int& hi) {
    int num = padding - kw;
    lo = num <= 0 ? 0 : (num + stride - 1) / stride;
    int top = in_w - 1 + padding - kw;
    hi = top < 0 ? -1 : top / stride;
    if (hi > out_w - 1) hi = out_w - 1;
}

template <typename T>
void conv_kernel(const T* x, const T* w, const T* bs, T* y, int batch, int c_in, int in_h,
                 int in_w, int c_out, int k_h, int k_w, int out_h, int out_w, int stride,
                 int padding) {
    for (int b = 0; b < batch; ++b) {
        for (int co = 0; co < c_out; ++co) {
            T* y_plane = y + (static_cast<size_t>(b) * c_out + co) * out_h * out_w;
            const T bv = bs[co];
            for (int i = 0; i < out_h * out_w; ++i) y_plane[i] = bv;
            for (int ci = 0; ci < c_in; ++ci) {
                const T* x_plane = x + (static_cast<size_t>(b) * c_in + ci) * in_h * in_w;
                for (int kh = 0; kh < k_h; ++kh) {
                    for (int kw = 0; kw < k_w; ++kw) {
                        const T wv = w[((static_cast<size_t>(co) * c_in + ci) * k_h + kh) * k_w + kw];
                        int lo, hi;
                        col_range(kw, padding, stride, in_w, out_w, lo, hi);
                        for (int oh = 0; oh < out_h; ++oh) {
                            const int ih = oh * stride + kh - padding;
                            if (ih < 0 || ih >= in_h) continue;
                            const T* x_row = x_plane + static_cast<size_t>(ih) * in_w + kw - padding;
                            T* y_row = y_plane + static_cast<size_t>(oh) * out_w;
                            for (int ow = lo; ow <= hi; ++ow) {
                                y_row[ow] += wv * x_row[ow * stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void dense_kernel(const T* x, const T* w, const T* bs, T* y, int batch, int d_in, int d_out) {
    for (int b = 0; b < batch; ++b) {
        const T* xr = x + static_cast<size_t>(b) * d_in;
        T* yr = y + static_cast<size_t>(b) * d_out;
        for (int o = 0; o < d_out; ++o) {
            const T* wr = w + static_cast<size_t>(o) * d_in;
            T acc = bs[o];
            for (int i = 0; i < d_in; ++i) acc += xr[i] * wr[i];
            yr[o] = acc;
        }
    }
}

template <typename T>
void gram_kernel(const T* f, T* y, int ch, int m) {
    for (int i = 0; i < ch; ++i) {
        for (int j = i; j < ch; ++j) {
            const T* fi = f + static_cast<size_t>(i) * m;
            const T* fj = f + static_cast<size_t>(j) * m;
            T acc = T(0);
            for (int k = 0; k < m; ++k) acc += fi[k] * fj[k];
            y[static_cast<size_t>(i) * ch + j] = acc;
            y[static_cast<size_t>(j) * ch + i] = acc;
        }
    }
}

template <typename T>
void bn_stats_kernel(const T* x, int batch, int ch, int spatial, double eps, double* mean,
                     double* inv_std, double* var) {
    const int count = batch * spatial;
    for (int c = 0; c < ch; ++c) mean[c] = 0.0;
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < ch; ++c) {
            const T* xp = x + (static_cast<size_t>(b) * ch + c) * spatial;
            double acc = 0.0;
            for (int s = 0; s < spatial; ++s) acc += xp[s];
            mean[c] += acc;
        }
    }
    for (int c = 0; c < ch; ++c) {
        mean[c] /= count;
        var[c] = 0.0;
    }
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < ch; ++c) {
            const T* xp = x + (static_cast<size_t>(b) * ch + c) * spatial;
            const double m = mean[c];
            double acc = 0.0;
            for (int s = 0; s < spatial; ++s) {
                const double d = xp[s] - m;
                acc += d * d;
            }
            var[c] += acc;
        }
    }
    for (int c = 0; c < ch; ++c) {
        var[c] /= count;  // biased, matches the running-stats update
        inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    }
}

template <typename TIn, typename TOut>
void bn_normalize_kernel(const TIn* x, TOut* y, int batch, int ch, int spatial,
                         const double* mean, const double* inv_std, const float* gm,
                         const float* bt) {
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < ch; ++c) {
            const TIn* xp = x + (static_cast<size_t>(b) * ch + c) * spatial;
            TOut* yp = y + (static_cast<size_t>(b) * ch + c) * spatial;
            const double m = mean[c];
            const double is = inv_std[c];
            const double gv = gm[c];
            const double bv = bt[c];
            for (int s = 0; s < spatial; ++s) {
                yp[s] = static_cast<TOut>((xp[s] - m) * is * gv + bv);
            }
        }
    }
}

}  // namespace

TensorPtr conv2d(Graph& g, const TensorPtr& input, const TensorPtr& weight,
                 const TensorPtr& bias, int stride, int padding) {
    const bool batched = input->shape.size() == 4;
    if (!batched && input->shape.size() != 3) {
        throw dim_error("conv2d input must be [C,H,W] or [B,C,H,W], got " + shape_str(input->shape));
    }
    if (weight->shape.size() != 4) {
        throw dim_error("conv2d weight must be [C_out,C_in,kH,kW], got " + shape_str(weight->shape));
    }
    if (stride < 1) throw dim_error("conv2d stride must be >= 1");
    if (padding < 0) throw dim_error("conv2d padding must be >= 0");

    const int batch = batched ? input->shape[0] : 1;
    const int c_in = batched ? input->shape[1] : input->shape[0];
    const int in_h = batched ? input->shape[2] : input->shape[1];
    const int in_w = batched ? input->shape[3] : input->shape[2];
    const int c_out = weight->shape[0];
    const int k_h = weight->shape[2];
    const int k_w = weight->shape[3];

    if (weight->shape[1] != c_in) {
        throw dim_error("conv2d channel mismatch: input has " + std::to_string(c_in) +
                        " channels, weight expects " + std::to_string(weight->shape[1]));
    }
    if (bias->shape.size() != 1 || bias->shape[0] != c_out) {
        throw dim_error("conv2d bias must be [C_out]=" + std::to_string(c_out) + ", got " + shape_str(bias->shape));
    }
    if (k_h > in_h + 2 * padding || k_w > in_w + 2 * padding) {
        throw dim_error("conv2d kernel exceeds padded input extent");
    }

    const int out_h = (in_h + 2 * padding - k_h) / stride + 1;
    const int out_w = (in_w + 2 * padding - k_w) / stride + 1;

    std::vector<int> out_shape = batched ? std::vector<int>{batch, c_out, out_h, out_w}
                                         : std::vector<int>{c_out, out_h, out_w};
    auto out = out_like(g, std::move(out_shape), {input, weight, bias});

    const float* x = input->data.data();
    const float* w = weight->data.data();
    conv_kernel<float>(x, w, bias->data.data(), out->data.data(), batch, c_in, in_h, in_w,
                       c_out, k_h, k_w, out_h, out_w, stride, padding);

    if (any_shadow({input, weight, bias})) {
        const auto xs = widen(input);
        const auto ws = widen(weight);
        const auto bs = widen(bias);
        out->shadow.assign(out->data.size(), 0.0);
        conv_kernel<double>(xs.data(), ws.data(), bs.data(), out->shadow.data(), batch, c_in,
                            in_h, in_w, c_out, k_h, k_w, out_h, out_w, stride, padding);
    }

    g.record("conv2d", {input, weight, bias}, out, [=]() {
        const float* gy = out->grad.data();
        if (input->requires_grad) {
            float* gx = input->grad.data();
            for (int b = 0; b < batch; ++b) {
                for (int co = 0; co < c_out; ++co) {
                    const float* gy_plane = gy + (static_cast<size_t>(b) * c_out + co) * out_h * out_w;
                    for (int ci = 0; ci < c_in; ++ci) {
                        float* gx_plane = gx + (static_cast<size_t>(b) * c_in + ci) * in_h * in_w;
                        for (int kh = 0; kh < k_h; ++kh) {
                            for (int kw = 0; kw < k_w; ++kw) {
                                const float wv = w[((static_cast<size_t>(co) * c_in + ci) * k_h + kh) * k_w + kw];
                                int lo, hi;
                                col_range(kw, padding, stride, in_w, out_w, lo, hi);
                                for (int oh = 0; oh < out_h; ++oh) {
                                    const int ih = oh * stride + kh - padding;
                                    if (ih < 0 || ih >= in_h) continue;
                                    float* gx_row = gx_plane + static_cast<size_t>(ih) * in_w + kw - padding;
                                    const float* gy_row = gy_plane + static_cast<size_t>(oh) * out_w;
                                    for (int ow = lo; ow <= hi; ++ow) {
                                        gx_row[ow * stride] += wv * gy_row[ow];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if (weight->requires_grad) {
            float* gw = weight->grad.data();
            for (int b = 0; b < batch; ++b) {
                for (int co = 0; co < c_out; ++co) {
                    const float* gy_plane = gy + (static_cast<size_t>(b) * c_out + co) * out_h * out_w;
                    for (int ci = 0; ci < c_in; ++ci) {
                        const float* x_plane = x + (static_cast<size_t>(b) * c_in + ci) * in_h * in_w;
                        for (int kh = 0; kh < k_h; ++kh) {
                            for (int kw = 0; kw < k_w; ++kw) {
                                int lo, hi;
                                col_range(kw, padding, stride, in_w, out_w, lo, hi);
                                float acc = 0.0f;
                                for (int oh = 0; oh < out_h; ++oh) {
                                    const int ih = oh * stride + kh - padding;
                                    if (ih < 0 || ih >= in_h) continue;
                                    const float* x_row = x_plane + static_cast<size_t>(ih) * in_w + kw - padding;
                                    const float* gy_row = gy_plane + static_cast<size_t>(oh) * out_w;
                                    for (int ow = lo; ow <= hi; ++ow) {
                                        acc += gy_row[ow] * x_row[ow * stride];
                                    }
                                }
                                gw[((static_cast<size_t>(co) * c_in + ci) * k_h + kh) * k_w + kw] += acc;
                            }
                        }
                    }
                }
            }
        }
        if (bias->requires_grad) {
            float* gb = bias->grad.data();
            for (int b = 0; b < batch; ++b) {
                for (int co = 0; co < c_out; ++co) {
                    const float* gy_plane = gy + (static_cast<size_t>(b) * c_out + co) * out_h * out_w;
                    float acc = 0.0f;
                    for (int i = 0; i < out_h * out_w; ++i) acc += gy_plane[i];
                    gb[co] += acc;
                }
            }
        }
    });
    return out;
}

TensorPtr maxpool2(Graph& g, const TensorPtr& input) {
    const bool batched = input->shape.size() == 4;
    if (!batched && input->shape.size() != 3) {
        throw dim_error("maxpool2 input must be [C,H,W] or [B,C,H,W], got " + shape_str(input->shape));
    }
    const int batch = batched ? input->shape[0] : 1;
    const int ch = batched ? input->shape[1] : input->shape[0];
    const int in_h = batched ? input->shape[2] : input->shape[1];
    const int in_w = batched ? input->shape[3] : input->shape[2];
    if (in_h % 2 != 0 || in_w % 2 != 0) {
        throw dim_error("maxpool2 needs even spatial dims, got " + shape_str(input->shape));
    }
    const int out_h = in_h / 2;
    const int out_w = in_w / 2;

    std::vector<int> out_shape = batched ? std::vector<int>{batch, ch, out_h, out_w}
                                         : std::vector<int>{ch, out_h, out_w};
    auto out = out_like(g, std::move(out_shape), {input});

    const float* x = input->data.data();
    float* y = out->data.data();
    // absolute flat input index of each window max; ties go to the first
    // element in row-major window order
    auto argmax = std::make_shared<std::vector<size_t>>(out->data.size());

    size_t oi = 0;
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < ch; ++c) {
            const size_t plane = (static_cast<size_t>(b) * ch + c) * in_h * in_w;
            for (int oh = 0; oh < out_h; ++oh) {
                for (int ow = 0; ow < out_w; ++ow, ++oi) {
                    size_t best_idx = plane + static_cast<size_t>(2 * oh) * in_w + 2 * ow;
                    float best = x[best_idx];
                    for (int dh = 0; dh < 2; ++dh) {
                        for (int dw = 0; dw < 2; ++dw) {
                            const size_t idx = plane + static_cast<size_t>(2 * oh + dh) * in_w + 2 * ow + dw;
                            if (x[idx] > best) {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    y[oi] = best;
                    (*argmax)[oi] = best_idx;
                }
            }
        }
    }

    if (input->has_shadow()) {
        out->shadow.resize(out->data.size());
        for (size_t i = 0; i < out->data.size(); ++i) out->shadow[i] = input->shadow[(*argmax)[i]];
    }

    g.record("maxpool2", {input}, out, [=]() {
        if (!input->requires_grad) return;
        float* gx = input->grad.data();
        const float* gy = out->grad.data();
        for (size_t i = 0; i < out->data.size(); ++i) {
            gx[(*argmax)[i]] += gy[i];
        }
    });
    return out;
}

TensorPtr batchnorm(Graph& g, const TensorPtr& input, const TensorPtr& gamma,
                    const TensorPtr& beta, const TensorPtr& running_mean,
                    const TensorPtr& running_var, BnMode mode, float eps, float momentum) {
    if (input->shape.size() < 2) {
        throw dim_error("batchnorm input must be [B,C,...], got " + shape_str(input->shape));
    }
    const int batch = input->shape[0];
    const int ch = input->shape[1];
    const int spatial = input->numel() / (batch * ch);
    if (gamma->numel() != ch || beta->numel() != ch || running_mean->numel() != ch ||
        running_var->numel() != ch) {
        throw dim_error("batchnorm per-channel params must have length " + std::to_string(ch));
    }
    if (eps <= 0.0f) throw contract_error("batchnorm eps must be > 0");
    if (momentum < 0.0f || momentum > 1.0f) throw contract_error("batchnorm momentum must be in [0,1]");
    if (mode == BnMode::train && batch < 2) {
        throw dim_error("batchnorm train mode requires batch >= 2 (degenerate batch of " +
                        std::to_string(batch) + ")");
    }

    auto out = out_like(g, input->shape, {input, gamma, beta});
    const float* x = input->data.data();
    const float* gm = gamma->data.data();
    const float* bt = beta->data.data();
    const int count = batch * spatial;

    // Stats run in double with a fixed accumulation order and are applied in
    // double before the single float32 store.
    auto mean = std::make_shared<std::vector<double>>(ch, 0.0);
    auto inv_std = std::make_shared<std::vector<double>>(ch, 0.0);

    if (mode == BnMode::train) {
        std::vector<double> var(ch, 0.0);
        bn_stats_kernel<float>(x, batch, ch, spatial, eps, mean->data(), inv_std->data(), var.data());
        for (int c = 0; c < ch; ++c) {
            running_mean->data[c] = static_cast<float>(
                (1.0 - momentum) * running_mean->data[c] + momentum * (*mean)[c]);
            running_var->data[c] = static_cast<float>(
                (1.0 - momentum) * running_var->data[c] + momentum * var[c]);
        }
    } else {
        for (int c = 0; c < ch; ++c) {
            (*mean)[c] = running_mean->data[c];
            (*inv_std)[c] = 1.0 / std::sqrt(static_cast<double>(running_var->data[c]) + eps);
        }
    }

    bn_normalize_kernel<float, float>(x, out->data.data(), batch, ch, spatial, mean->data(),
                                      inv_std->data(), gm, bt);

    if (any_shadow({input, gamma, beta})) {
        const auto xs = widen(input);
        out->shadow.assign(out->data.size(), 0.0);
        if (mode == BnMode::train) {
            std::vector<double> s_mean(ch), s_inv(ch), s_var(ch);
            bn_stats_kernel<double>(xs.data(), batch, ch, spatial, eps, s_mean.data(),
                                    s_inv.data(), s_var.data());
            bn_normalize_kernel<double, double>(xs.data(), out->shadow.data(), batch, ch, spatial,
                                                s_mean.data(), s_inv.data(), gm, bt);
        } else {
            bn_normalize_kernel<double, double>(xs.data(), out->shadow.data(), batch, ch, spatial,
                                                mean->data(), inv_std->data(), gm, bt);
        }
    }

    const bool train = mode == BnMode::train;
    g.record("batchnorm", {input, gamma, beta}, out, [=]() {
        const float* gy = out->grad.data();
        std::vector<double> sum_gy(ch, 0.0);
        std::vector<double> sum_gy_xhat(ch, 0.0);
        for (int b = 0; b < batch; ++b) {
            for (int c = 0; c < ch; ++c) {
                const float* xp = x + (static_cast<size_t>(b) * ch + c) * spatial;
                const float* gp = gy + (static_cast<size_t>(b) * ch + c) * spatial;
                const double m = (*mean)[c];
                const double is = (*inv_std)[c];
                double a0 = 0.0, a1 = 0.0;
                for (int s = 0; s < spatial; ++s) {
                    a0 += gp[s];
                    a1 += gp[s] * (xp[s] - m) * is;
                }
                sum_gy[c] += a0;
                sum_gy_xhat[c] += a1;
            }
        }
        if (beta->requires_grad) {
            for (int c = 0; c < ch; ++c) beta->grad[c] += static_cast<float>(sum_gy[c]);
        }
        if (gamma->requires_grad) {
            for (int c = 0; c < ch; ++c) gamma->grad[c] += static_cast<float>(sum_gy_xhat[c]);
        }
        if (input->requires_grad) {
            float* gx = input->grad.data();
            for (int b = 0; b < batch; ++b) {
                for (int c = 0; c < ch; ++c) {
                    const float* xp = x + (static_cast<size_t>(b) * ch + c) * spatial;
                    const float* gp = gy + (static_cast<size_t>(b) * ch + c) * spatial;
                    float* gxp = gx + (static_cast<size_t>(b) * ch + c) * spatial;
                    const double m = (*mean)[c];
                    const double is = (*inv_std)[c];
                    const double gv = gm[c];
                    if (train) {
                        const double mg = sum_gy[c] / count;
                        const double mgx = sum_gy_xhat[c] / count;
                        for (int s = 0; s < spatial; ++s) {
                            const double xhat = (xp[s] - m) * is;
                            gxp[s] += static_cast<float>(gv * is * (gp[s] - mg - xhat * mgx));
                        }
                    } else {
                        for (int s = 0; s < spatial; ++s) {
                            gxp[s] += static_cast<float>(gv * is * gp[s]);
                        }
                    }
                }
            }
        }
    });
    return out;
}

TensorPtr gram_matrix(Graph& g, const TensorPtr& features) {
    if (features->shape.size() != 2) {
        throw dim_error("gram_matrix expects [C,m] features, got " + shape_str(features->shape));
    }
    const int ch = features->shape[0];
    const int m = features->shape[1];
    auto out = out_like(g, {ch, ch}, {features});

    const float* f = features->data.data();
    gram_kernel<float>(f, out->data.data(), ch, m);

    if (features->has_shadow()) {
        out->shadow.assign(out->data.size(), 0.0);
        gram_kernel<double>(features->shadow.data(), out->shadow.data(), ch, m);
    }

    g.record("gram_matrix", {features}, out, [=]() {
        if (!features->requires_grad) return;
        const float* gy = out->grad.data();
        float* gf = features->grad.data();
        for (int i = 0; i < ch; ++i) {
            for (int j = 0; j < ch; ++j) {
                const float coef = gy[static_cast<size_t>(i) * ch + j] + gy[static_cast<size_t>(j) * ch + i];
                if (coef == 0.0f) continue;
                const float* fj = f + static_cast<size_t>(j) * m;
                float* gfi = gf + static_cast<size_t>(i) * m;
                for (int k = 0; k < m; ++k) gfi[k] += coef * fj[k];
            }
        }
    });
    return out;
}

TensorPtr dense(Graph& g, const TensorPtr& input, const TensorPtr& weight, const TensorPtr& bias) {
    if (input->shape.size() != 2 || weight->shape.size() != 2 || bias->shape.size() != 1) {
        throw dim_error("dense expects input [B,D_in], weight [D_out,D_in], bias [D_out]");
    }
    const int batch = input->shape[0];
    const int d_in = input->shape[1];
    const int d_out = weight->shape[0];
    if (weight->shape[1] != d_in) {
        throw dim_error("dense dim mismatch: input D_in=" + std::to_string(d_in) +
                        ", weight expects " + std::to_string(weight->shape[1]));
    }
    if (bias->shape[0] != d_out) {
        throw dim_error("dense bias must be [D_out]=" + std::to_string(d_out));
    }

    auto out = out_like(g, {batch, d_out}, {input, weight, bias});
    const float* x = input->data.data();
    const float* w = weight->data.data();
    dense_kernel<float>(x, w, bias->data.data(), out->data.data(), batch, d_in, d_out);

    if (any_shadow({input, weight, bias})) {
        const auto xs = widen(input);
        const auto ws = widen(weight);
        const auto bs = widen(bias);
        out->shadow.assign(out->data.size(), 0.0);
        dense_kernel<double>(xs.data(), ws.data(), bs.data(), out->shadow.data(), batch, d_in, d_out);
    }

    g.record("dense", {input, weight, bias}, out, [=]() {
        const float* gy = out->grad.data();
        if (input->requires_grad) {
            float* gx = input->grad.data();
            for (int b = 0; b < batch; ++b) {
                const float* gyr = gy + static_cast<size_t>(b) * d_out;
                float* gxr = gx + static_cast<size_t>(b) * d_in;
                for (int o = 0; o < d_out; ++o) {
                    const float gv = gyr[o];
                    if (gv == 0.0f) continue;
                    const float* wr = w + static_cast<size_t>(o) * d_in;
                    for (int i = 0; i < d_in; ++i) gxr[i] += gv * wr[i];
                }
            }
        }
        if (weight->requires_grad) {
            float* gw = weight->grad.data();
            for (int b = 0; b < batch; ++b) {
                const float* gyr = gy + static_cast<size_t>(b) * d_out;
                const float* xr = x + static_cast<size_t>(b) * d_in;
                for (int o = 0; o < d_out; ++o) {
                    const float gv = gyr[o];
                    if (gv == 0.0f) continue;
                    float* gwr = gw + static_cast<size_t>(o) * d_in;
                    for (int i = 0; i < d_in; ++i) gwr[i] += gv * xr[i];
                }
            }
        }
        if (bias->requires_grad) {
            float* gb = bias->grad.data();
            for (int b = 0; b < batch; ++b) {
                const float* gyr = gy + static_cast<size_t>(b) * d_out;
                for (int o = 0; o < d_out; ++o) gb[o] += gyr[o];
            }
        }
    });
    return out;
}

TensorPtr relu(Graph& g, const TensorPtr& input) {
    auto out = out_like(g, input->shape, {input});
    const size_t n = input->data.size();
    for (size_t i = 0; i < n; ++i) {
        const float v = input->data[i];
        out->data[i] = v > 0.0f ? v : 0.0f;
    }
    if (input->has_shadow()) {
        out->shadow.resize(n);
        for (size_t i = 0; i < n; ++i) {
            out->shadow[i] = input->shadow[i] > 0.0 ? input->shadow[i] : 0.0;
        }
    }
    g.record("relu", {input}, out, [=]() {
        if (!input->requires_grad) return;
        for (size_t i = 0; i < n; ++i) {
            if (input->data[i] > 0.0f) input->grad[i] += out->grad[i];
        }
    });
    return out;
}

TensorPtr reshape(Graph& g, const TensorPtr& input, std::vector<int> new_shape) {
    auto out = out_like(g, std::move(new_shape), {input});
    if (out->numel() != input->numel()) {
        throw dim_error("reshape cannot change element count: " + shape_str(input->shape) +
                        " -> " + shape_str(out->shape));
    }
    out->data = input->data;
    out->shadow = input->shadow;
    g.record("reshape", {input}, out, [=]() {
        if (!input->requires_grad) return;
        for (size_t i = 0; i < out->grad.size(); ++i) input->grad[i] += out->grad[i];
    });
    return out;
}

TensorPtr select_row(Graph& g, const TensorPtr& input, int row) {
    if (input->shape.size() < 2) {
        throw dim_error("select_row needs a batched tensor, got " + shape_str(input->shape));
    }
    const int batch = input->shape[0];
    if (row < 0 || row >= batch) {
        throw dim_error("select_row index " + std::to_string(row) + " out of range [0," +
                        std::to_string(batch) + ")");
    }
    std::vector<int> rest(input->shape.begin() + 1, input->shape.end());
    auto out = out_like(g, std::move(rest), {input});
    const size_t stride = out->data.size();
    const size_t base = static_cast<size_t>(row) * stride;
    std::memcpy(out->data.data(), input->data.data() + base, stride * sizeof(float));
    if (input->has_shadow()) {
        out->shadow.assign(input->shadow.begin() + base, input->shadow.begin() + base + stride);
    }
    g.record("select_row", {input}, out, [=]() {
        if (!input->requires_grad) return;
        for (size_t i = 0; i < stride; ++i) input->grad[base + i] += out->grad[i];
    });
    return out;
}

TensorPtr stack_rows(Graph& g, const std::vector<TensorPtr>& rows) {
    if (rows.empty()) throw dim_error("stack_rows needs at least one row");
    for (const auto& r : rows) {
        if (r->shape != rows[0]->shape) {
            throw dim_error("stack_rows shape mismatch: " + shape_str(rows[0]->shape) + " vs " +
                            shape_str(r->shape));
        }
    }
    std::vector<int> out_shape;
    out_shape.push_back(static_cast<int>(rows.size()));
    out_shape.insert(out_shape.end(), rows[0]->shape.begin(), rows[0]->shape.end());
    auto out = make_tensor(std::move(out_shape));
    bool grad = false;
    bool shadow = false;
    for (const auto& r : rows) {
        grad = grad || r->requires_grad;
        shadow = shadow || r->has_shadow();
    }
    if (g.recording && grad) out->set_requires_grad(true);

    const size_t stride = rows[0]->data.size();
    for (size_t b = 0; b < rows.size(); ++b) {
        std::memcpy(out->data.data() + b * stride, rows[b]->data.data(), stride * sizeof(float));
    }
    if (shadow) {
        out->shadow.resize(out->data.size());
        for (size_t b = 0; b < rows.size(); ++b) {
            const auto rs = widen(rows[b]);
            std::copy(rs.begin(), rs.end(), out->shadow.begin() + b * stride);
        }
    }
    g.record("stack_rows", rows, out, [out, rows, stride]() {
        for (size_t b = 0; b < rows.size(); ++b) {
            if (!rows[b]->requires_grad) continue;
            for (size_t i = 0; i < stride; ++i) {
                rows[b]->grad[i] += out->grad[b * stride + i];
            }
        }
    });
    return out;
}

TensorPtr add(Graph& g, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        throw dim_error("add shape mismatch: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    }
    auto out = out_like(g, a->shape, {a, b});
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
    if (any_shadow({a, b})) {
        const auto as = widen(a);
        const auto bs = widen(b);
        out->shadow.resize(out->data.size());
        for (size_t i = 0; i < out->data.size(); ++i) out->shadow[i] = as[i] + bs[i];
    }
    g.record("add", {a, b}, out, [=]() {
        if (a->requires_grad) {
            for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
        }
        if (b->requires_grad) {
            for (size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += out->grad[i];
        }
    });
    return out;
}

TensorPtr sub(Graph& g, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        throw dim_error("sub shape mismatch: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    }
    auto out = out_like(g, a->shape, {a, b});
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] - b->data[i];
    if (any_shadow({a, b})) {
        const auto as = widen(a);
        const auto bs = widen(b);
        out->shadow.resize(out->data.size());
        for (size_t i = 0; i < out->data.size(); ++i) out->shadow[i] = as[i] - bs[i];
    }
    g.record("sub", {a, b}, out, [=]() {
        if (a->requires_grad) {
            for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
        }
        if (b->requires_grad) {
            for (size_t i = 0; i < out->grad.size(); ++i) b->grad[i] -= out->grad[i];
        }
    });
    return out;
}

TensorPtr scale(Graph& g, const TensorPtr& x, float c) {
    auto out = out_like(g, x->shape, {x});
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = x->data[i] * c;
    if (x->has_shadow()) {
        out->shadow.resize(out->data.size());
        for (size_t i = 0; i < out->data.size(); ++i) out->shadow[i] = x->shadow[i] * c;
    }
    g.record("scale", {x}, out, [=]() {
        if (!x->requires_grad) return;
        for (size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += c * out->grad[i];
    });
    return out;
}

TensorPtr add_const(Graph& g, const TensorPtr& x, float c) {
    auto out = out_like(g, x->shape, {x});
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = x->data[i] + c;
    if (x->has_shadow()) {
        out->shadow.resize(out->data.size());
        for (size_t i = 0; i < out->data.size(); ++i) out->shadow[i] = x->shadow[i] + c;
    }
    g.record("add_const", {x}, out, [=]() {
        if (!x->requires_grad) return;
        for (size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += out->grad[i];
    });
    return out;
}

TensorPtr sum_squares(Graph& g, const TensorPtr& x) {
    auto out = out_like(g, {1}, {x});
    double acc = 0.0;
    for (float v : x->data) acc += static_cast<double>(v) * static_cast<double>(v);
    out->data[0] = static_cast<float>(acc);
    if (x->has_shadow()) {
        double sacc = 0.0;
        for (double v : x->shadow) sacc += v * v;
        out->shadow.assign(1, sacc);
    }
    g.record("sum_squares", {x}, out, [=]() {
        if (!x->requires_grad) return;
        const float gv = out->grad[0];
        for (size_t i = 0; i < x->data.size(); ++i) x->grad[i] += 2.0f * x->data[i] * gv;
    });
    return out;
}

TensorPtr sqrt_stable(Graph& g, const TensorPtr& x, float stabilizer) {
    if (!x->is_scalar()) {
        throw dim_error("sqrt_stable expects a scalar, got " + shape_str(x->shape));
    }
    auto out = out_like(g, {1}, {x});
    out->data[0] = static_cast<float>(
        std::sqrt(static_cast<double>(x->data[0]) + static_cast<double>(stabilizer)));
    if (x->has_shadow()) {
        out->shadow.assign(1, std::sqrt(x->shadow[0] + static_cast<double>(stabilizer)));
    }
    g.record("sqrt_stable", {x}, out, [=]() {
        if (!x->requires_grad) return;
        const float root = std::sqrt(x->data[0] + stabilizer);
        x->grad[0] += out->grad[0] * 0.5f / root;
    });
    return out;
}

}  // namespace stylesiam::ops
