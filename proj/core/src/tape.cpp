#include "muscl/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace muscl {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::leaf(Tensor value) {
    require_finite(value, "leaf");
    nodes_.push_back({std::move(value), nullptr});
    int id = static_cast<int>(nodes_.size()) - 1;
    leaves_.push_back(id);
    return {this, id};
}

Var Tape::constant(Tensor value) {
    require_finite(value, "constant");
    nodes_.push_back({std::move(value), nullptr});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, BackFn back, const char* op) {
    require_finite(value, op);
    nodes_.push_back({std::move(value), std::move(back)});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

std::vector<Tensor> Tape::backward(const Var& out) {
    if (out.tape != this) throw std::runtime_error("backward: output is not on this tape");
    if (out.id < 0 || out.id >= static_cast<int>(nodes_.size()))
        throw std::runtime_error("backward: invalid output node");
    const Tensor& ov = nodes_[out.id].value;
    if (ov.size() != 1)
        throw std::runtime_error("backward: output of shape " + shape_str(ov.shape()) + " is not scalar");

    std::vector<Tensor> adj(nodes_.size());
    adj[out.id] = Tensor(ov.shape(), {1.0});
    for (int i = out.id; i >= 0; --i) {
        if (adj[i].empty() || !nodes_[i].back) continue;
        nodes_[i].back(adj[i], adj);
    }
    std::vector<Tensor> grads;
    grads.reserve(leaves_.size());
    for (int id : leaves_) {
        if (adj[id].empty())
            grads.push_back(Tensor(nodes_[id].value.shape()));
        else
            grads.push_back(std::move(adj[id]));
    }
    return grads;
}

void accumulate(std::vector<Tensor>& adj, int id, const Tensor& g) {
    if (adj[id].empty()) {
        adj[id] = g;
    } else {
        Tensor& a = adj[id];
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += g[i];
    }
}

namespace {

Tape* same_tape(Var a, Var b, const char* op) {
    if (a.tape != b.tape)
        throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
    return a.tape;
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

Tensor sum_to_scalar_shape(const Tensor& g, const std::vector<std::size_t>& shape) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i];
    Tensor out(shape);
    out[0] = s;
    return out;
}

// Elementwise binary op with scalar broadcasting on either side.
template <typename FwdFn, typename BackAFn, typename BackBFn>
Var binary_op(Var a, Var b, const char* op, FwdFn fwd, BackAFn back_a, BackBFn back_b) {
    Tape* t = same_tape(a, b, op);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    bool a_scalar = av.is_scalar() && !av.same_shape(bv);
    bool b_scalar = bv.is_scalar() && !av.same_shape(bv);
    if (!av.same_shape(bv) && !a_scalar && !b_scalar) shape_error(op, av, bv);

    const Tensor& big = a_scalar ? bv : av;
    Tensor out(big.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = fwd(a_scalar ? av[0] : av[i], b_scalar ? bv[0] : bv[i]);

    int aid = a.id, bid = b.id;
    auto back = [t, aid, bid, a_scalar, b_scalar, back_a, back_b](const Tensor& g,
                                                                 std::vector<Tensor>& adj) {
        const Tensor& av = t->value(aid);
        const Tensor& bv = t->value(bid);
        Tensor ga(g.shape());
        Tensor gb(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
            double x = a_scalar ? av[0] : av[i];
            double y = b_scalar ? bv[0] : bv[i];
            ga[i] = back_a(g[i], x, y);
            gb[i] = back_b(g[i], x, y);
        }
        accumulate(adj, aid, a_scalar ? sum_to_scalar_shape(ga, av.shape()) : ga);
        accumulate(adj, bid, b_scalar ? sum_to_scalar_shape(gb, bv.shape()) : gb);
    };
    return t->record(std::move(out), back, op);
}

// Elementwise unary op.
template <typename FwdFn, typename BackFn>
Var unary_op(Var a, const char* op, FwdFn fwd, BackFn back_fn) {
    Tape* t = a.tape;
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
    int aid = a.id;
    auto back = [t, aid, back_fn](const Tensor& g, std::vector<Tensor>& adj) {
        const Tensor& av = t->value(aid);
        Tensor ga(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = back_fn(g[i], av[i]);
        accumulate(adj, aid, ga);
    };
    return t->record(std::move(out), back, op);
}

}  // namespace

Var add(Var a, Var b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Var sub(Var a, Var b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Var mul(Var a, Var b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

Var div(Var a, Var b) {
    return binary_op(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double g, double, double y) { return g / y; },
        [](double g, double x, double y) { return -g * x / (y * y); });
}

Var neg(Var a) {
    return unary_op(a, "neg", [](double x) { return -x; }, [](double g, double) { return -g; });
}

Var add_scalar(Var a, double c) {
    return unary_op(a, "add_scalar", [c](double x) { return x + c; },
                    [](double g, double) { return g; });
}

Var mul_scalar(Var a, double c) {
    return unary_op(a, "mul_scalar", [c](double x) { return x * c; },
                    [c](double g, double) { return g * c; });
}

Var relu(Var a) {
    return unary_op(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double g, double x) { return x > 0.0 ? g : 0.0; });
}

Var sigmoid(Var a) {
    return unary_op(a, "sigmoid",
                    [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                                   : std::exp(x) / (1.0 + std::exp(x)); },
                    [](double g, double x) {
                        double y = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                            : std::exp(x) / (1.0 + std::exp(x));
                        return g * y * (1.0 - y);
                    });
}

Var exp_op(Var a) {
    return unary_op(a, "exp", [](double x) { return std::exp(x); },
                    [](double g, double x) { return g * std::exp(x); });
}

Var log_op(Var a) {
    return unary_op(a, "log", [](double x) { return std::log(x); },
                    [](double g, double x) { return g / x; });
}

Var sqrt_op(Var a) {
    return unary_op(a, "sqrt", [](double x) { return std::sqrt(x); },
                    [](double g, double x) { return g / (2.0 * std::sqrt(x)); });
}

Var abs_op(Var a) {
    return unary_op(a, "abs", [](double x) { return std::fabs(x); },
                    [](double g, double x) { return x > 0.0 ? g : (x < 0.0 ? -g : 0.0); });
}

Var clamp_min(Var a, double lo) {
    return unary_op(a, "clamp_min", [lo](double x) { return x > lo ? x : lo; },
                    [lo](double g, double x) { return x >= lo ? g : 0.0; });
}

Var sum(Var a) {
    Tape* t = a.tape;
    const Tensor& av = a.value();
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
    int aid = a.id;
    auto back = [t, aid](const Tensor& g, std::vector<Tensor>& adj) {
        accumulate(adj, aid, Tensor::full(t->value(aid).shape(), g[0]));
    };
    return t->record(Tensor::scalar(s), back, "sum");
}

Var mean(Var a) {
    std::size_t n = a.value().size();
    return mul_scalar(sum(a), 1.0 / static_cast<double>(n));
}

Var reshape(Var a, std::vector<std::size_t> shape) {
    Tape* t = a.tape;
    const Tensor& av = a.value();
    if (shape_product(shape) != av.size())
        throw std::invalid_argument("reshape: " + shape_str(av.shape()) + " -> " + shape_str(shape) +
                                    " changes element count");
    Tensor out(shape, std::vector<double>(av.data(), av.data() + av.size()));
    int aid = a.id;
    auto back = [t, aid](const Tensor& g, std::vector<Tensor>& adj) {
        const Tensor& av = t->value(aid);
        accumulate(adj, aid, Tensor(av.shape(), std::vector<double>(g.data(), g.data() + g.size())));
    };
    return t->record(std::move(out), back, "reshape");
}

Var matmul(Var a, Var b) {
    Tape* t = same_tape(a, b, "matmul");
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != 2 || B.rank() != 2 || A.shape()[1] != B.shape()[0]) shape_error("matmul", A, B);
    std::size_t m = A.shape()[0], k = A.shape()[1], n = B.shape()[1];
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            double av = A.at(i, p);
            for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * B.at(p, j);
        }
    int aid = a.id, bid = b.id;
    auto back = [t, aid, bid, m, k, n](const Tensor& g, std::vector<Tensor>& adj) {
        const Tensor& A = t->value(aid);
        const Tensor& B = t->value(bid);
        Tensor ga({m, k});
        Tensor gb({k, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double gv = g.at(i, j);
                for (std::size_t p = 0; p < k; ++p) {
                    ga.at(i, p) += gv * B.at(p, j);
                    gb.at(p, j) += gv * A.at(i, p);
                }
            }
        accumulate(adj, aid, ga);
        accumulate(adj, bid, gb);
    };
    return t->record(std::move(out), back, "matmul");
}

Var matmul_nt(Var a, Var b) {
    Tape* t = same_tape(a, b, "matmul_nt");
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != 2 || B.rank() != 2 || A.shape()[1] != B.shape()[1]) shape_error("matmul_nt", A, B);
    std::size_t m = A.shape()[0], k = A.shape()[1], n = B.shape()[0];
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += A.at(i, p) * B.at(j, p);
            out.at(i, j) = s;
        }
    int aid = a.id, bid = b.id;
    auto back = [t, aid, bid, m, k, n](const Tensor& g, std::vector<Tensor>& adj) {
        const Tensor& A = t->value(aid);
        const Tensor& B = t->value(bid);
        Tensor ga({m, k});
        Tensor gb({n, k});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double gv = g.at(i, j);
                for (std::size_t p = 0; p < k; ++p) {
                    ga.at(i, p) += gv * B.at(j, p);
                    gb.at(j, p) += gv * A.at(i, p);
                }
            }
        accumulate(adj, aid, ga);
        accumulate(adj, bid, gb);
    };
    return t->record(std::move(out), back, "matmul_nt");
}

Var matvec(Var w, Var x) {
    Tape* t = same_tape(w, x, "matvec");
    const Tensor& W = w.value();
    const Tensor& X = x.value();
    if (W.rank() != 2 || X.rank() != 1 || W.shape()[1] != X.shape()[0]) shape_error("matvec", W, X);
    std::size_t m = W.shape()[0], n = W.shape()[1];
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += W.at(i, j) * X[j];
        out[i] = s;
    }
    int wid = w.id, xid = x.id;
    auto back = [t, wid, xid, m, n](const Tensor& g, std::vector<Tensor>& adj) {
        const Tensor& W = t->value(wid);
        const Tensor& X = t->value(xid);
        Tensor gw({m, n});
        Tensor gx({n});
        for (std::size_t i = 0; i < m; ++i) {
            double gv = g[i];
            for (std::size_t j = 0; j < n; ++j) {
                gw.at(i, j) = gv * X[j];
                gx[j] += gv * W.at(i, j);
            }
        }
        accumulate(adj, wid, gw);
        accumulate(adj, xid, gx);
    };
    return t->record(std::move(out), back, "matvec");
}

Var add_rowvec(Var m, Var v) {
    Tape* t = same_tape(m, v, "add_rowvec");
    const Tensor& M = m.value();
    const Tensor& V = v.value();
    if (M.rank() != 2 || V.rank() != 1 || M.shape()[1] != V.shape()[0]) shape_error("add_rowvec", M, V);
    std::size_t r = M.shape()[0], c = M.shape()[1];
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) = M.at(i, j) + V[j];
    int mid = m.id, vid = v.id;
    auto back = [mid, vid, r, c](const Tensor& g, std::vector<Tensor>& adj) {
        Tensor gv({c});
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gv[j] += g.at(i, j);
        accumulate(adj, mid, g);
        accumulate(adj, vid, gv);
    };
    return t->record(std::move(out), back, "add_rowvec");
}

Var row(Var m, std::size_t i) {
    Tape* t = m.tape;
    const Tensor& M = m.value();
    if (M.rank() != 2 || i >= M.shape()[0])
        throw std::invalid_argument("row: index " + std::to_string(i) + " out of range for " +
                                    shape_str(M.shape()));
    std::size_t r = M.shape()[0], c = M.shape()[1];
    Tensor out({c}, std::vector<double>(M.data() + i * c, M.data() + (i + 1) * c));
    int mid = m.id;
    auto back = [mid, i, r, c](const Tensor& g, std::vector<Tensor>& adj) {
        Tensor gm({r, c});
        for (std::size_t j = 0; j < c; ++j) gm.at(i, j) = g[j];
        accumulate(adj, mid, gm);
    };
    return t->record(std::move(out), back, "row");
}

Var element(Var v, std::size_t i) {
    Tape* t = v.tape;
    const Tensor& V = v.value();
    if (i >= V.size())
        throw std::invalid_argument("element: index " + std::to_string(i) + " out of range for " +
                                    shape_str(V.shape()));
    int vid = v.id;
    auto back = [t, vid, i](const Tensor& g, std::vector<Tensor>& adj) {
        Tensor gv(t->value(vid).shape());
        gv[i] = g[0];
        accumulate(adj, vid, gv);
    };
    return t->record(Tensor::scalar(V[i]), back, "element");
}

Var slice(Var v, std::size_t start, std::size_t len) {
    Tape* t = v.tape;
    const Tensor& V = v.value();
    if (V.rank() != 1 || start + len > V.size())
        throw std::invalid_argument("slice: [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") out of range for " +
                                    shape_str(V.shape()));
    Tensor out({len}, std::vector<double>(V.data() + start, V.data() + start + len));
    int vid = v.id;
    auto back = [t, vid, start, len](const Tensor& g, std::vector<Tensor>& adj) {
        Tensor gv(t->value(vid).shape());
        for (std::size_t i = 0; i < len; ++i) gv[start + i] = g[i];
        accumulate(adj, vid, gv);
    };
    return t->record(std::move(out), back, "slice");
}

Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    Tape* t = parts[0].tape;
    std::size_t total = 0;
    std::vector<int> ids;
    std::vector<std::size_t> lens;
    for (const Var& p : parts) {
        same_tape(parts[0], p, "concat");
        if (p.value().rank() != 1)
            throw std::invalid_argument("concat: expected 1-D input, got " +
                                        shape_str(p.value().shape()));
        ids.push_back(p.id);
        lens.push_back(p.value().size());
        total += p.value().size();
    }
    Tensor out({total});
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& pv = p.value();
        for (std::size_t i = 0; i < pv.size(); ++i) out[off + i] = pv[i];
        off += pv.size();
    }
    auto back = [ids, lens](const Tensor& g, std::vector<Tensor>& adj) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            Tensor gp({lens[k]});
            for (std::size_t i = 0; i < lens[k]; ++i) gp[i] = g[off + i];
            accumulate(adj, ids[k], gp);
            off += lens[k];
        }
    };
    return t->record(std::move(out), back, "concat");
}

Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
    Tape* t = rows[0].tape;
    std::size_t n = rows[0].value().size();
    std::vector<int> ids;
    for (const Var& r : rows) {
        same_tape(rows[0], r, "stack_rows");
        if (r.value().rank() != 1 || r.value().size() != n)
            shape_error("stack_rows", rows[0].value(), r.value());
        ids.push_back(r.id);
    }
    std::size_t m = rows.size();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = rows[i].value()[j];
    auto back = [ids, n](const Tensor& g, std::vector<Tensor>& adj) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            Tensor gr({n});
            for (std::size_t j = 0; j < n; ++j) gr[j] = g.at(i, j);
            accumulate(adj, ids[i], gr);
        }
    };
    return t->record(std::move(out), back, "stack_rows");
}

Var pad2d(Var x, std::size_t p) {
    Tape* t = x.tape;
    const Tensor& X = x.value();
    if (X.rank() != 3)
        throw std::invalid_argument("pad2d: expected [C,H,W], got " + shape_str(X.shape()));
    std::size_t C = X.shape()[0], H = X.shape()[1], W = X.shape()[2];
    std::size_t Ho = H + 2 * p, Wo = W + 2 * p;
    Tensor out({C, Ho, Wo});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w)
                out[(c * Ho + h + p) * Wo + w + p] = X[(c * H + h) * W + w];
    int xid = x.id;
    auto back = [xid, C, H, W, p, Ho, Wo](const Tensor& g, std::vector<Tensor>& adj) {
        Tensor gx({C, H, W});
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w)
                    gx[(c * H + h) * W + w] = g[(c * Ho + h + p) * Wo + w + p];
        accumulate(adj, xid, gx);
    };
    return t->record(std::move(out), back, "pad2d");
}

Var conv2d(Var x, Var w, Var b) {
    Tape* t = same_tape(x, w, "conv2d");
    same_tape(x, b, "conv2d");
    const Tensor& X = x.value();
    const Tensor& K = w.value();
    const Tensor& B = b.value();
    if (X.rank() != 3 || K.rank() != 4 || X.shape()[0] != K.shape()[1]) shape_error("conv2d", X, K);
    std::size_t Ci = X.shape()[0], H = X.shape()[1], W = X.shape()[2];
    std::size_t Co = K.shape()[0], kh = K.shape()[2], kw = K.shape()[3];
    if (B.rank() != 1 || B.shape()[0] != Co) shape_error("conv2d(bias)", K, B);
    if (H < kh || W < kw)
        throw std::invalid_argument("conv2d: input " + shape_str(X.shape()) +
                                    " smaller than kernel " + shape_str(K.shape()));
    std::size_t Ho = H - kh + 1, Wo = W - kw + 1;
    Tensor out({Co, Ho, Wo});
    for (std::size_t co = 0; co < Co; ++co) {
        double bias = B[co];
        for (std::size_t ho = 0; ho < Ho; ++ho)
            for (std::size_t wo = 0; wo < Wo; ++wo) out[(co * Ho + ho) * Wo + wo] = bias;
        for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t i = 0; i < kh; ++i)
                for (std::size_t j = 0; j < kw; ++j) {
                    double kv = K[((co * Ci + ci) * kh + i) * kw + j];
                    const double* xr = X.data() + (ci * H + i) * W + j;
                    double* orow = out.data() + co * Ho * Wo;
                    for (std::size_t ho = 0; ho < Ho; ++ho) {
                        const double* xp = xr + ho * W;
                        double* op = orow + ho * Wo;
                        for (std::size_t wo = 0; wo < Wo; ++wo) op[wo] += kv * xp[wo];
                    }
                }
    }
    int xid = x.id, wid = w.id, bid = b.id;
    auto back = [t, xid, wid, bid, Ci, H, W, Co, kh, kw, Ho, Wo](const Tensor& g,
                                                                std::vector<Tensor>& adj) {
        const Tensor& X = t->value(xid);
        const Tensor& K = t->value(wid);
        Tensor gx({Ci, H, W});
        Tensor gk({Co, Ci, kh, kw});
        Tensor gb({Co});
        for (std::size_t co = 0; co < Co; ++co) {
            const double* grow = g.data() + co * Ho * Wo;
            double s = 0.0;
            for (std::size_t i = 0; i < Ho * Wo; ++i) s += grow[i];
            gb[co] = s;
            for (std::size_t ci = 0; ci < Ci; ++ci)
                for (std::size_t i = 0; i < kh; ++i)
                    for (std::size_t j = 0; j < kw; ++j) {
                        double kv = K[((co * Ci + ci) * kh + i) * kw + j];
                        double acc = 0.0;
                        const double* xr = X.data() + (ci * H + i) * W + j;
                        double* gxr = gx.data() + (ci * H + i) * W + j;
                        for (std::size_t ho = 0; ho < Ho; ++ho) {
                            const double* gp = grow + ho * Wo;
                            const double* xp = xr + ho * W;
                            double* gxp = gxr + ho * W;
                            for (std::size_t wo = 0; wo < Wo; ++wo) {
                                acc += gp[wo] * xp[wo];
                                gxp[wo] += gp[wo] * kv;
                            }
                        }
                        gk[((co * Ci + ci) * kh + i) * kw + j] = acc;
                    }
        }
        accumulate(adj, xid, gx);
        accumulate(adj, wid, gk);
        accumulate(adj, bid, gb);
    };
    return t->record(std::move(out), back, "conv2d");
}

Var mean_pool2(Var x) {
    Tape* t = x.tape;
    const Tensor& X = x.value();
    if (X.rank() != 3)
        throw std::invalid_argument("mean_pool2: expected [C,H,W], got " + shape_str(X.shape()));
    std::size_t C = X.shape()[0], H = X.shape()[1], W = X.shape()[2];
    std::size_t Ho = H / 2, Wo = W / 2;
    if (Ho == 0 || Wo == 0)
        throw std::invalid_argument("mean_pool2: input " + shape_str(X.shape()) +
                                    " too small to pool");
    Tensor out({C, Ho, Wo});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < Ho; ++h)
            for (std::size_t w = 0; w < Wo; ++w) {
                const double* p = X.data() + (c * H + 2 * h) * W + 2 * w;
                out[(c * Ho + h) * Wo + w] = 0.25 * (p[0] + p[1] + p[W] + p[W + 1]);
            }
    int xid = x.id;
    auto back = [xid, C, H, W, Ho, Wo](const Tensor& g, std::vector<Tensor>& adj) {
        Tensor gx({C, H, W});
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t h = 0; h < Ho; ++h)
                for (std::size_t w = 0; w < Wo; ++w) {
                    double gv = 0.25 * g[(c * Ho + h) * Wo + w];
                    double* p = gx.data() + (c * H + 2 * h) * W + 2 * w;
                    p[0] += gv;
                    p[1] += gv;
                    p[W] += gv;
                    p[W + 1] += gv;
                }
        accumulate(adj, xid, gx);
    };
    return t->record(std::move(out), back, "mean_pool2");
}

Var global_mean_pool(Var x) {
    Tape* t = x.tape;
    const Tensor& X = x.value();
    if (X.rank() != 3)
        throw std::invalid_argument("global_mean_pool: expected [C,H,W], got " +
                                    shape_str(X.shape()));
    std::size_t C = X.shape()[0], HW = X.shape()[1] * X.shape()[2];
    Tensor out({C});
    for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        const double* p = X.data() + c * HW;
        for (std::size_t i = 0; i < HW; ++i) s += p[i];
        out[c] = s / static_cast<double>(HW);
    }
    int xid = x.id;
    std::size_t Hd = X.shape()[1], Wd = X.shape()[2];
    auto back = [xid, C, Hd, Wd, HW](const Tensor& g, std::vector<Tensor>& adj) {
        Tensor gx({C, Hd, Wd});
        for (std::size_t c = 0; c < C; ++c) {
            double gv = g[c] / static_cast<double>(HW);
            double* p = gx.data() + c * HW;
            for (std::size_t i = 0; i < HW; ++i) p[i] = gv;
        }
        accumulate(adj, xid, gx);
    };
    return t->record(std::move(out), back, "global_mean_pool");
}

Var normalize_rows(Var z, double eps) {
    Tape* t = z.tape;
    const Tensor& Z = z.value();
    if (Z.rank() != 2)
        throw std::invalid_argument("normalize_rows: expected 2-D, got " + shape_str(Z.shape()));
    std::size_t r = Z.shape()[0], c = Z.shape()[1];
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < c; ++j) n2 += Z.at(i, j) * Z.at(i, j);
        double denom = std::max(std::sqrt(n2), eps);
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) = Z.at(i, j) / denom;
    }
    int zid = z.id;
    auto back = [t, zid, r, c, eps](const Tensor& g, std::vector<Tensor>& adj) {
        const Tensor& Z = t->value(zid);
        Tensor gz({r, c});
        for (std::size_t i = 0; i < r; ++i) {
            double n2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) n2 += Z.at(i, j) * Z.at(i, j);
            double norm = std::sqrt(n2);
            if (norm >= eps) {
                // d(z/||z||)/dz = (I - uu^T)/||z||, u = z/||z||. The trailing
                // 1/||z|| is unbounded as rows collapse toward zero; one such
                // row would dominate the whole batch gradient and (under bare
                // SGD) destroy the parameters in a single step. The direction
                // is kept exact and only that prefactor is floored.
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += g.at(i, j) * Z.at(i, j) / norm;
                double scale = std::max(norm, kGradNormFloor);
                for (std::size_t j = 0; j < c; ++j)
                    gz.at(i, j) = (g.at(i, j) - dot * Z.at(i, j) / norm) / scale;
            } else {
                // Fully degenerate row (e.g. a dead sample encoding to exactly
                // 0): no direction, no gradient.
                for (std::size_t j = 0; j < c; ++j) gz.at(i, j) = 0.0;
            }
        }
        accumulate(adj, zid, gz);
    };
    return t->record(std::move(out), back, "normalize_rows");
}

}  // namespace muscl
