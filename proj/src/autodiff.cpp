#include "techembed/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "techembed/error.hpp"

namespace techembed {

void Parameter::zero_grad() {
    if (grad.same_shape(value)) {
        grad.fill(0.0);
    } else {
        grad = Matrix(value.rows(), value.cols());
    }
}

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::record(Matrix value, bool needs_grad, std::function<void(Tape&, std::size_t)> backward) {
    const bool keep = grad_enabled_ && needs_grad;
    nodes_.push_back({std::move(value), Matrix(), keep, keep ? std::move(backward) : nullptr});
    return {this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

namespace {

Matrix& param_grad(Parameter& p) {
    if (!p.grad.same_shape(p.value)) p.grad = Matrix(p.value.rows(), p.value.cols());
    return p.grad;
}

bool needs(const Tape& t, Var v) { return t.needs_grad_of(v.id); }

void check_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw Error("autodiff: operands recorded on different tapes");
}

}  // namespace

Var Tape::param(Parameter& p) {
    return record(p.value, p.trainable, [&p](Tape& t, std::size_t id) {
        add_inplace(param_grad(p), t.grad_of(id));
    });
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
    auto& node = nodes_[id];
    if (node.grad.empty()) {
        node.grad = g;
    } else {
        add_inplace(node.grad, g);
    }
}

Matrix& Tape::grad_buffer(std::size_t id) {
    auto& node = nodes_[id];
    if (node.grad.empty()) node.grad = Matrix(node.value.rows(), node.value.cols());
    return node.grad;
}

void Tape::backward(Var root, const Matrix& seed) {
    if (!grad_enabled_) throw Error("backward() on a tape without gradients");
    auto& r = nodes_[root.id];
    if (seed.empty()) {
        r.grad = Matrix(r.value.rows(), r.value.cols(), 1.0);
    } else {
        if (!seed.same_shape(r.value)) throw DimensionError("backward seed shape mismatch");
        r.grad = seed;
    }
    for (std::size_t i = root.id + 1; i-- > 0;) {
        auto& node = nodes_[i];
        if (node.backward && !node.grad.empty()) node.backward(*this, i);
    }
}

namespace ad {

Var embed(Tape& t, Parameter& table, std::span<const std::uint32_t> ids) {
    const std::size_t d = table.value.cols();
    Matrix out(ids.size(), d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= table.value.rows()) {
            throw DimensionError("token id " + std::to_string(ids[i]) + " outside embedding table of " +
                                 std::to_string(table.value.rows()) + " rows");
        }
        const auto src = table.value.row(ids[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    std::vector<std::uint32_t> kept(ids.begin(), ids.end());
    return t.record(std::move(out), table.trainable, [&table, kept](Tape& tp, std::size_t id) {
        auto& g = param_grad(table);
        const auto& go = tp.grad_of(id);
        for (std::size_t i = 0; i < kept.size(); ++i) {
            auto dst = g.row(kept[i]);
            const auto src = go.row(i);
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
    });
}

Var rows_of(Tape& t, Parameter& p) { return t.param(p); }

Var concat_rows(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const auto& va = a.value();
    const auto& vb = b.value();
    if (va.cols() != vb.cols()) throw DimensionError("concat_rows: column mismatch");
    Matrix out(va.rows() + vb.rows(), va.cols());
    std::copy(va.values().begin(), va.values().end(), out.values().begin());
    std::copy(vb.values().begin(), vb.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(va.size()));
    const std::size_t ra = va.rows();
    return t.record(std::move(out), needs(t, a) || needs(t, b), [a, b, ra](Tape& tp, std::size_t id) {
        const auto& g = tp.grad_of(id);
        const std::size_t c = g.cols();
        if (tp.needs_grad_of(a.id)) {
            auto& ga = tp.grad_buffer(a.id);
            for (std::size_t i = 0; i < ra * c; ++i) ga.data()[i] += g.data()[i];
        }
        if (tp.needs_grad_of(b.id)) {
            auto& gb = tp.grad_buffer(b.id);
            for (std::size_t i = 0; i < gb.size(); ++i) gb.data()[i] += g.data()[ra * c + i];
        }
    });
}

Var stack_rows(std::span<const Var> rows) {
    if (rows.empty()) throw DimensionError("stack_rows: no rows");
    Tape& t = *rows[0].tape;
    const std::size_t d = rows[0].value().cols();
    Matrix out(rows.size(), d);
    bool any = false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        check_same_tape(rows[0], rows[i]);
        const auto& v = rows[i].value();
        if (v.rows() != 1 || v.cols() != d) throw DimensionError("stack_rows: expected 1 x d rows");
        std::copy(v.values().begin(), v.values().end(), out.row(i).begin());
        any = any || needs(t, rows[i]);
    }
    std::vector<Var> kept(rows.begin(), rows.end());
    return t.record(std::move(out), any, [kept](Tape& tp, std::size_t id) {
        const auto& g = tp.grad_of(id);
        for (std::size_t i = 0; i < kept.size(); ++i) {
            if (!tp.needs_grad_of(kept[i].id)) continue;
            auto& gi = tp.grad_buffer(kept[i].id);
            const auto src = g.row(i);
            for (std::size_t j = 0; j < src.size(); ++j) gi.data()[j] += src[j];
        }
    });
}

Var add(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    Matrix out = a.value();
    add_inplace(out, b.value());
    return t.record(std::move(out), needs(t, a) || needs(t, b), [a, b](Tape& tp, std::size_t id) {
        const auto& g = tp.grad_of(id);
        if (tp.needs_grad_of(a.id)) add_inplace(tp.grad_buffer(a.id), g);
        if (tp.needs_grad_of(b.id)) add_inplace(tp.grad_buffer(b.id), g);
    });
}

Var add_const(Var a, const Matrix& c) {
    Tape& t = *a.tape;
    Matrix out = a.value();
    add_inplace(out, c);
    return t.record(std::move(out), needs(t, a), [a](Tape& tp, std::size_t id) {
        add_inplace(tp.grad_buffer(a.id), tp.grad_of(id));
    });
}

Var scale(Var a, double s) {
    Tape& t = *a.tape;
    Matrix out = a.value();
    for (auto& x : out.values()) x *= s;
    return t.record(std::move(out), needs(t, a), [a, s](Tape& tp, std::size_t id) {
        const auto& g = tp.grad_of(id);
        auto& ga = tp.grad_buffer(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += s * g.data()[i];
    });
}

Var linear(Var x, Parameter& w, Parameter& b) {
    Tape& t = *x.tape;
    const auto& vx = x.value();
    if (vx.cols() != w.value.rows() || b.value.rows() != 1 || b.value.cols() != w.value.cols()) {
        throw DimensionError("linear: input " + vx.shape_string() + " weight " +
                             w.value.shape_string() + " bias " + b.value.shape_string());
    }
    Matrix out;
    matmul(vx, w.value, out);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += b.value(0, j);
    }
    const bool want = needs(t, x) || w.trainable || b.trainable;
    return t.record(std::move(out), want, [x, &w, &b](Tape& tp, std::size_t id) {
        const auto& g = tp.grad_of(id);
        if (tp.needs_grad_of(x.id)) matmul_nt_acc(g, w.value, tp.grad_buffer(x.id));
        if (w.trainable) matmul_tn_acc(tp.value_of(x.id), g, param_grad(w));
        if (b.trainable) {
            auto& gb = param_grad(b);
            for (std::size_t i = 0; i < g.rows(); ++i) {
                const auto r = g.row(i);
                for (std::size_t j = 0; j < r.size(); ++j) gb(0, j) += r[j];
            }
        }
    });
}

Var layer_norm(Var x, Parameter& gain, Parameter& bias, double eps) {
    Tape& t = *x.tape;
    const auto& vx = x.value();
    const std::size_t n = vx.rows(), d = vx.cols();
    if (gain.value.cols() != d || bias.value.cols() != d) throw DimensionError("layer_norm: width mismatch");
    Matrix xhat(n, d), out(n, d);
    std::vector<double> inv_sigma(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = vx.row(i);
        double mu = 0.0;
        for (double v : r) mu += v;
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (double v : r) var += (v - mu) * (v - mu);
        var /= static_cast<double>(d);
        inv_sigma[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat(i, j) = (r[j] - mu) * inv_sigma[i];
            out(i, j) = gain.value(0, j) * xhat(i, j) + bias.value(0, j);
        }
    }
    const bool want = needs(t, x) || gain.trainable || bias.trainable;
    return t.record(std::move(out), want,
                    [x, &gain, &bias, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](
                        Tape& tp, std::size_t id) {
        const auto& g = tp.grad_of(id);
        const std::size_t rows = g.rows(), cols = g.cols();
        if (gain.trainable || bias.trainable) {
            auto& gg = param_grad(gain);
            auto& gb = param_grad(bias);
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < cols; ++j) {
                    if (gain.trainable) gg(0, j) += g(i, j) * xhat(i, j);
                    if (bias.trainable) gb(0, j) += g(i, j);
                }
            }
        }
        if (!tp.needs_grad_of(x.id)) return;
        auto& gx = tp.grad_buffer(x.id);
        std::vector<double> dxhat(cols);
        for (std::size_t i = 0; i < rows; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
                dxhat[j] = g(i, j) * gain.value(0, j);
                mean_d += dxhat[j];
                mean_dx += dxhat[j] * xhat(i, j);
            }
            mean_d /= static_cast<double>(cols);
            mean_dx /= static_cast<double>(cols);
            for (std::size_t j = 0; j < cols; ++j) {
                gx(i, j) += inv_sigma[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
            }
        }
    });
}

Var gelu(Var x) {
    Tape& t = *x.tape;
    Matrix out = x.value();
    for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    return t.record(std::move(out), needs(t, x), [x](Tape& tp, std::size_t id) {
        const auto& g = tp.grad_of(id);
        const auto& vx = tp.value_of(x.id);
        auto& gx = tp.grad_buffer(x.id);
        constexpr double kInvSqrt2Pi = 0.3989422804014327;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = vx.data()[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            gx.data()[i] += g.data()[i] * (cdf + v * pdf);
        }
    });
}

Var multi_head_attention(Var q, Var k, Var v, std::size_t heads) {
    check_same_tape(q, k);
    check_same_tape(q, v);
    Tape& t = *q.tape;
    const auto& vq = q.value();
    const auto& vk = k.value();
    const auto& vv = v.value();
    const std::size_t n = vq.rows(), d = vq.cols();
    if (!vq.same_shape(vk) || !vq.same_shape(vv)) throw DimensionError("attention: q/k/v shape mismatch");
    if (heads == 0 || d % heads != 0) throw DimensionError("attention: width not divisible by heads");
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<Matrix> probs(heads, Matrix(n, n));
    Matrix out(n, d);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        auto& p = probs[h];
        for (std::size_t i = 0; i < n; ++i) {
            const double* qi = vq.data() + i * d + off;
            double mx = -INFINITY;
            for (std::size_t j = 0; j < n; ++j) {
                const double* kj = vk.data() + j * d + off;
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                s *= inv_sqrt;
                p(i, j) = s;
                mx = std::max(mx, s);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                p(i, j) = std::exp(p(i, j) - mx);
                z += p(i, j);
            }
            double* oi = out.data() + i * d + off;
            for (std::size_t j = 0; j < n; ++j) {
                p(i, j) /= z;
                const double pij = p(i, j);
                const double* vj = vv.data() + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) oi[c] += pij * vj[c];
            }
        }
    }
    const bool want = needs(t, q) || needs(t, k) || needs(t, v);
    return t.record(std::move(out), want, [q, k, v, heads, dh, inv_sqrt, probs = std::move(probs)](
                                              Tape& tp, std::size_t id) {
        const auto& g = tp.grad_of(id);
        const auto& vq2 = tp.value_of(q.id);
        const auto& vk2 = tp.value_of(k.id);
        const auto& vv2 = tp.value_of(v.id);
        const std::size_t rows = g.rows(), width = g.cols();
        Matrix& gq = tp.grad_buffer(q.id);
        Matrix& gk = tp.grad_buffer(k.id);
        Matrix& gv = tp.grad_buffer(v.id);
        std::vector<double> dp(rows);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            const auto& p = probs[h];
            for (std::size_t i = 0; i < rows; ++i) {
                const double* gi = g.data() + i * width + off;
                double row_dot = 0.0;
                for (std::size_t j = 0; j < rows; ++j) {
                    const double* vj = vv2.data() + j * width + off;
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
                    dp[j] = s;
                    row_dot += s * p(i, j);
                    // dV_j += p_ij * dO_i
                    double* gvj = gv.data() + j * width + off;
                    const double pij = p(i, j);
                    for (std::size_t c = 0; c < dh; ++c) gvj[c] += pij * gi[c];
                }
                const double* qi = vq2.data() + i * width + off;
                double* gqi = gq.data() + i * width + off;
                for (std::size_t j = 0; j < rows; ++j) {
                    const double ds = p(i, j) * (dp[j] - row_dot) * inv_sqrt;
                    if (ds == 0.0) continue;
                    const double* kj = vk2.data() + j * width + off;
                    double* gkj = gk.data() + j * width + off;
                    for (std::size_t c = 0; c < dh; ++c) {
                        gqi[c] += ds * kj[c];
                        gkj[c] += ds * qi[c];
                    }
                }
            }
        }
    });
}

Var mean_rows(Var x, std::size_t from) {
    Tape& t = *x.tape;
    const auto& vx = x.value();
    if (from >= vx.rows()) throw DimensionError("mean_rows: no rows to pool");
    const std::size_t count = vx.rows() - from;
    Matrix out(1, vx.cols());
    for (std::size_t i = from; i < vx.rows(); ++i) {
        const auto r = vx.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) out(0, j) += r[j];
    }
    const double inv = 1.0 / static_cast<double>(count);
    for (auto& v : out.values()) v *= inv;
    return t.record(std::move(out), needs(t, x), [x, from, inv](Tape& tp, std::size_t id) {
        const auto& g = tp.grad_of(id);
        auto& gx = tp.grad_buffer(x.id);
        for (std::size_t i = from; i < gx.rows(); ++i) {
            auto r = gx.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) r[j] += g(0, j) * inv;
        }
    });
}

Var l2_normalize_rows(Var x) {
    Tape& t = *x.tape;
    const auto& vx = x.value();
    Matrix out = vx;
    std::vector<double> norms(vx.rows());
    for (std::size_t i = 0; i < vx.rows(); ++i) {
        const double nrm = std::sqrt(dot(vx.row(i), vx.row(i)));
        if (!(nrm > 0.0)) throw Error("l2_normalize: zero or non-finite vector");
        norms[i] = nrm;
        for (auto& v : out.row(i)) v /= nrm;
    }
    return t.record(std::move(out), needs(t, x), [x, norms = std::move(norms)](Tape& tp, std::size_t id) {
        const auto& g = tp.grad_of(id);
        const auto& y = tp.value_of(id);
        auto& gx = tp.grad_buffer(x.id);
        for (std::size_t i = 0; i < g.rows(); ++i) {
            const double yg = dot(y.row(i), g.row(i));
            for (std::size_t j = 0; j < g.cols(); ++j) {
                gx(i, j) += (g(i, j) - y(i, j) * yg) / norms[i];
            }
        }
    });
}

Var matmul_nt(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    Matrix out(a.value().rows(), b.value().rows());
    matmul_nt_acc(a.value(), b.value(), out);
    return t.record(std::move(out), needs(t, a) || needs(t, b), [a, b](Tape& tp, std::size_t id) {
        const auto& g = tp.grad_of(id);
        if (tp.needs_grad_of(a.id)) matmul_acc(g, tp.value_of(b.id), tp.grad_buffer(a.id));
        if (tp.needs_grad_of(b.id)) matmul_tn_acc(g, tp.value_of(a.id), tp.grad_buffer(b.id));
    });
}

Var softmax_cross_entropy_diagonal(Var logits) {
    Tape& t = *logits.tape;
    const auto& s = logits.value();
    const std::size_t n = s.rows(), m = s.cols();
    if (n == 0 || m < n) throw DimensionError("cross entropy: need at least as many columns as rows");
    Matrix probs(n, m);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, s(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            probs(i, j) = std::exp(s(i, j) - mx);
            z += probs(i, j);
        }
        for (std::size_t j = 0; j < m; ++j) probs(i, j) /= z;
        loss += (mx + std::log(z)) - s(i, i);
    }
    loss /= static_cast<double>(n);
    Matrix out(1, 1, loss);
    return t.record(std::move(out), needs(t, logits),
                    [logits, probs = std::move(probs)](Tape& tp, std::size_t id) {
        const double g = tp.grad_of(id)(0, 0);
        auto& gs = tp.grad_buffer(logits.id);
        const double inv_n = 1.0 / static_cast<double>(probs.rows());
        for (std::size_t i = 0; i < probs.rows(); ++i) {
            for (std::size_t j = 0; j < probs.cols(); ++j) {
                gs(i, j) += g * inv_n * (probs(i, j) - (i == j ? 1.0 : 0.0));
            }
        }
    });
}

}  // namespace ad
}  // namespace techembed
