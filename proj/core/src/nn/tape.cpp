#include "dmldroid/nn/tape.hpp"

#include <algorithm>
#include <cmath>

namespace dmldroid::nn {

double bce_logit_loss(double z, double y) {
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

double bce_logit_grad(double z, double y) {
    const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    return s - y;
}

Tape::Tape(ParamStore* store, std::uint64_t dropout_seed)
    : store_(store), rng_(dropout_seed) {}

Tape::Value Tape::push(Matrix val) {
    Node n;
    n.val = std::move(val);
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::node(Value v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        throw DimensionError("invalid tape value handle");
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Value v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        throw DimensionError("invalid tape value handle");
    return nodes_[static_cast<std::size_t>(v.id)];
}

Matrix& Tape::grad_ref(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_alloc) {
        n.grad = Matrix(n.val.rows(), n.val.cols());
        n.grad_alloc = true;
    }
    return n.grad;
}

bool Tape::has_grad(int id) const {
    return nodes_[static_cast<std::size_t>(id)].grad_alloc;
}

Tape::Value Tape::input(Matrix m) { return push(std::move(m)); }

Tape::Value Tape::param(const std::string& name) {
    if (!store_) throw ConfigError("tape has no bound parameter store");
    Value v = push(store_->value(name));
    node(v).param_name = name;
    return v;
}

const Matrix& Tape::value(Value v) const { return node(v).val; }

const Matrix& Tape::grad(Value v) {
    node(v);
    return grad_ref(v.id);
}

double Tape::scalar(Value v) const {
    const Matrix& m = node(v).val;
    if (m.rows() != 1 || m.cols() != 1)
        throw DimensionError("scalar() on non-scalar value " + m.shape_str());
    return m(0, 0);
}

Tape::Value Tape::matmul(Value a, Value b) {
    Value out = push(nn::matmul(node(a).val, node(b).val));
    node(out).back = [this, a = a.id, b = b.id, o = out.id] {
        const Matrix& g = nodes_[o].grad;
        grad_ref(a) += nn::matmul_nt(g, nodes_[b].val);
        grad_ref(b) += nn::matmul_tn(nodes_[a].val, g);
    };
    return out;
}

Tape::Value Tape::matmul_nt(Value a, Value b) {
    Value out = push(nn::matmul_nt(node(a).val, node(b).val));
    node(out).back = [this, a = a.id, b = b.id, o = out.id] {
        const Matrix& g = nodes_[o].grad;
        grad_ref(a) += nn::matmul(g, nodes_[b].val);
        grad_ref(b) += nn::matmul_tn(g, nodes_[a].val);
    };
    return out;
}

Tape::Value Tape::add(Value a, Value b) {
    Value out = push(node(a).val + node(b).val);
    node(out).back = [this, a = a.id, b = b.id, o = out.id] {
        grad_ref(a) += nodes_[o].grad;
        grad_ref(b) += nodes_[o].grad;
    };
    return out;
}

Tape::Value Tape::sub(Value a, Value b) {
    Value out = push(node(a).val - node(b).val);
    node(out).back = [this, a = a.id, b = b.id, o = out.id] {
        grad_ref(a) += nodes_[o].grad;
        grad_ref(b) -= nodes_[o].grad;
    };
    return out;
}

Tape::Value Tape::mul(Value a, Value b) {
    const Matrix& va = node(a).val;
    const Matrix& vb = node(b).val;
    if (va.rows() != vb.rows() || va.cols() != vb.cols())
        throw DimensionError("elementwise mul shape mismatch: " + va.shape_str() + " vs " + vb.shape_str());
    Matrix m(va.rows(), va.cols());
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = va.data()[i] * vb.data()[i];
    Value out = push(std::move(m));
    node(out).back = [this, a = a.id, b = b.id, o = out.id] {
        const Matrix& g = nodes_[o].grad;
        Matrix& ga = grad_ref(a);
        Matrix& gb = grad_ref(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.data()[i] += g.data()[i] * nodes_[b].val.data()[i];
            gb.data()[i] += g.data()[i] * nodes_[a].val.data()[i];
        }
    };
    return out;
}

Tape::Value Tape::scale(Value a, double s) {
    Value out = push(node(a).val * s);
    node(out).back = [this, a = a.id, o = out.id, s] {
        Matrix& ga = grad_ref(a);
        const Matrix& g = nodes_[o].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * s;
    };
    return out;
}

Tape::Value Tape::add_const(Value a, double c) {
    Matrix m = node(a).val;
    for (double& v : m.raw()) v += c;
    Value out = push(std::move(m));
    node(out).back = [this, a = a.id, o = out.id] { grad_ref(a) += nodes_[o].grad; };
    return out;
}

Tape::Value Tape::add_rowvec(Value a, Value row) {
    const Matrix& va = node(a).val;
    const Matrix& vr = node(row).val;
    if (vr.rows() != 1 || vr.cols() != va.cols())
        throw DimensionError("add_rowvec shape mismatch: " + va.shape_str() + " + " + vr.shape_str());
    Matrix m = va;
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) += vr(0, c);
    Value out = push(std::move(m));
    node(out).back = [this, a = a.id, row = row.id, o = out.id] {
        const Matrix& g = nodes_[o].grad;
        grad_ref(a) += g;
        Matrix& gr = grad_ref(row);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c);
    };
    return out;
}

Tape::Value Tape::row_scale(Value a, Value col) {
    const Matrix& va = node(a).val;
    const Matrix& vc = node(col).val;
    if (vc.cols() != 1 || vc.rows() != va.rows())
        throw DimensionError("row_scale shape mismatch: " + va.shape_str() + " * " + vc.shape_str());
    Matrix m = va;
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) *= vc(r, 0);
    Value out = push(std::move(m));
    node(out).back = [this, a = a.id, col = col.id, o = out.id] {
        const Matrix& g = nodes_[o].grad;
        const Matrix& va = nodes_[a].val;
        const Matrix& vc = nodes_[col].val;
        Matrix& ga = grad_ref(a);
        Matrix& gc = grad_ref(col);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) {
                ga(r, c) += g(r, c) * vc(r, 0);
                acc += g(r, c) * va(r, c);
            }
            gc(r, 0) += acc;
        }
    };
    return out;
}

Tape::Value Tape::relu(Value a) {
    Matrix m = node(a).val;
    for (double& v : m.raw()) v = std::max(v, 0.0);
    Value out = push(std::move(m));
    node(out).back = [this, a = a.id, o = out.id] {
        const Matrix& g = nodes_[o].grad;
        const Matrix& x = nodes_[a].val;
        Matrix& ga = grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x.data()[i] > 0.0) ga.data()[i] += g.data()[i];
    };
    return out;
}

Tape::Value Tape::sigmoid(Value a) {
    Matrix m = node(a).val;
    for (double& v : m.raw())
        v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    Value out = push(std::move(m));
    node(out).back = [this, a = a.id, o = out.id] {
        const Matrix& g = nodes_[o].grad;
        const Matrix& s = nodes_[o].val;
        Matrix& ga = grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            ga.data()[i] += g.data()[i] * s.data()[i] * (1.0 - s.data()[i]);
    };
    return out;
}

Tape::Value Tape::softmax_rows(Value a) {
    Matrix m = node(a).val;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double mx = m(r, 0);
        for (std::size_t c = 1; c < m.cols(); ++c) mx = std::max(mx, m(r, c));
        double z = 0.0;
        for (std::size_t c = 0; c < m.cols(); ++c) {
            m(r, c) = std::exp(m(r, c) - mx);
            z += m(r, c);
        }
        for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) /= z;
    }
    Value out = push(std::move(m));
    node(out).back = [this, a = a.id, o = out.id] {
        const Matrix& g = nodes_[o].grad;
        const Matrix& y = nodes_[o].val;
        Matrix& ga = grad_ref(a);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * y(r, c);
            for (std::size_t c = 0; c < g.cols(); ++c)
                ga(r, c) += y(r, c) * (g(r, c) - dot);
        }
    };
    return out;
}

Tape::Value Tape::concat_cols(Value a, Value b) { return concat_cols(std::vector<Value>{a, b}); }

Tape::Value Tape::concat_cols(const std::vector<Value>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols of zero parts");
    const std::size_t rows = node(parts[0]).val.rows();
    std::size_t cols = 0;
    for (Value p : parts) {
        if (node(p).val.rows() != rows)
            throw DimensionError("concat_cols row mismatch: " + node(parts[0]).val.shape_str() +
                                 " vs " + node(p).val.shape_str());
        cols += node(p).val.cols();
    }
    Matrix m(rows, cols);
    std::size_t off = 0;
    for (Value p : parts) {
        const Matrix& v = node(p).val;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < v.cols(); ++c) m(r, off + c) = v(r, c);
        off += v.cols();
    }
    std::vector<int> ids;
    for (Value p : parts) ids.push_back(p.id);
    Value out = push(std::move(m));
    node(out).back = [this, ids, o = out.id] {
        const Matrix& g = nodes_[o].grad;
        std::size_t off = 0;
        for (int id : ids) {
            Matrix& gp = grad_ref(id);
            for (std::size_t r = 0; r < gp.rows(); ++r)
                for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += g(r, off + c);
            off += gp.cols();
        }
    };
    return out;
}

Tape::Value Tape::concat_rows(Value a, Value b) { return concat_rows(std::vector<Value>{a, b}); }

Tape::Value Tape::concat_rows(const std::vector<Value>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows of zero parts");
    const std::size_t cols = node(parts[0]).val.cols();
    std::size_t rows = 0;
    for (Value p : parts) {
        if (node(p).val.cols() != cols)
            throw DimensionError("concat_rows col mismatch: " + node(parts[0]).val.shape_str() +
                                 " vs " + node(p).val.shape_str());
        rows += node(p).val.rows();
    }
    Matrix m(rows, cols);
    std::size_t off = 0;
    for (Value p : parts) {
        const Matrix& v = node(p).val;
        std::copy(v.raw().begin(), v.raw().end(), m.data() + off * cols);
        off += v.rows();
    }
    std::vector<int> ids;
    for (Value p : parts) ids.push_back(p.id);
    Value out = push(std::move(m));
    node(out).back = [this, ids, o = out.id] {
        const Matrix& g = nodes_[o].grad;
        std::size_t off = 0;
        for (int id : ids) {
            Matrix& gp = grad_ref(id);
            for (std::size_t r = 0; r < gp.rows(); ++r)
                for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += g(off + r, c);
            off += gp.rows();
        }
    };
    return out;
}

Tape::Value Tape::slice_cols(Value a, std::size_t c0, std::size_t c1) {
    const Matrix& va = node(a).val;
    if (c0 >= c1 || c1 > va.cols())
        throw DimensionError("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                             ") out of range for " + va.shape_str());
    Matrix m(va.rows(), c1 - c0);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = va(r, c0 + c);
    Value out = push(std::move(m));
    node(out).back = [this, a = a.id, o = out.id, c0] {
        const Matrix& g = nodes_[o].grad;
        Matrix& ga = grad_ref(a);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c0 + c) += g(r, c);
    };
    return out;
}

Tape::Value Tape::slice_rows(Value a, std::size_t r0, std::size_t r1) {
    const Matrix& va = node(a).val;
    if (r0 >= r1 || r1 > va.rows())
        throw DimensionError("slice_rows [" + std::to_string(r0) + "," + std::to_string(r1) +
                             ") out of range for " + va.shape_str());
    Matrix m(r1 - r0, va.cols());
    std::copy(va.data() + r0 * va.cols(), va.data() + r1 * va.cols(), m.data());
    Value out = push(std::move(m));
    node(out).back = [this, a = a.id, o = out.id, r0] {
        const Matrix& g = nodes_[o].grad;
        Matrix& ga = grad_ref(a);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) ga(r0 + r, c) += g(r, c);
    };
    return out;
}

Tape::Value Tape::sum_all(Value a) {
    double s = 0.0;
    for (double v : node(a).val.raw()) s += v;
    Matrix m(1, 1);
    m(0, 0) = s;
    Value out = push(std::move(m));
    node(out).back = [this, a = a.id, o = out.id] {
        const double g = nodes_[o].grad(0, 0);
        Matrix& ga = grad_ref(a);
        for (double& v : ga.raw()) v += g;
    };
    return out;
}

Tape::Value Tape::embed_rows(Value table, const std::vector<std::size_t>& ids) {
    const Matrix& vt = node(table).val;
    Matrix m(ids.size(), vt.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= vt.rows())
            throw DimensionError("embedding id " + std::to_string(ids[i]) +
                                 " out of range for table " + vt.shape_str());
        for (std::size_t c = 0; c < vt.cols(); ++c) m(i, c) = vt(ids[i], c);
    }
    Value out = push(std::move(m));
    node(out).back = [this, table = table.id, ids, o = out.id] {
        const Matrix& g = nodes_[o].grad;
        Matrix& gt = grad_ref(table);
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t c = 0; c < g.cols(); ++c) gt(ids[i], c) += g(i, c);
    };
    return out;
}

namespace {

Matrix im2col3x3(const Matrix& img, std::size_t H, std::size_t W, std::size_t Cin) {
    const std::size_t OH = H - 2, OW = W - 2, B = img.rows();
    Matrix P(B * OH * OW, 9 * Cin);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < OH; ++y)
            for (std::size_t x = 0; x < OW; ++x) {
                const std::size_t row = (b * OH + y) * OW + x;
                for (std::size_t dy = 0; dy < 3; ++dy)
                    for (std::size_t dx = 0; dx < 3; ++dx)
                        for (std::size_t c = 0; c < Cin; ++c)
                            P(row, (dy * 3 + dx) * Cin + c) =
                                img(b, ((y + dy) * W + (x + dx)) * Cin + c);
            }
    return P;
}

}  // namespace

Tape::Value Tape::conv2d(Value img, Value w, Value bias,
                         std::size_t H, std::size_t W, std::size_t Cin, std::size_t Cout) {
    const Matrix& vimg = node(img).val;
    const Matrix& vw = node(w).val;
    const Matrix& vb = node(bias).val;
    if (H < 3 || W < 3)
        throw DimensionError("conv2d input " + std::to_string(H) + "x" + std::to_string(W) +
                             " smaller than 3x3 kernel");
    if (vimg.cols() != H * W * Cin)
        throw DimensionError("conv2d image row length " + std::to_string(vimg.cols()) +
                             " != H*W*Cin = " + std::to_string(H * W * Cin));
    if (vw.rows() != 9 * Cin || vw.cols() != Cout)
        throw DimensionError("conv2d weight " + vw.shape_str() + " != (" +
                             std::to_string(9 * Cin) + "x" + std::to_string(Cout) + ")");
    if (vb.rows() != 1 || vb.cols() != Cout)
        throw DimensionError("conv2d bias " + vb.shape_str() + " != (1x" + std::to_string(Cout) + ")");

    const std::size_t B = vimg.rows(), OH = H - 2, OW = W - 2;
    Matrix P = im2col3x3(vimg, H, W, Cin);
    Matrix O2 = nn::matmul(P, vw);
    for (std::size_t r = 0; r < O2.rows(); ++r)
        for (std::size_t c = 0; c < Cout; ++c) O2(r, c) += vb(0, c);
    Matrix out(B, OH * OW * Cout);
    out.raw() = std::move(O2.raw());
    Value v = push(std::move(out));
    node(v).back = [this, img = img.id, w = w.id, bias = bias.id, o = v.id, H, W, Cin, Cout] {
        const std::size_t OH = H - 2, OW = W - 2;
        const Matrix& gout = nodes_[o].grad;
        const std::size_t B = gout.rows();
        Matrix dO2(B * OH * OW, Cout);
        dO2.raw() = gout.raw();

        Matrix P = im2col3x3(nodes_[img].val, H, W, Cin);
        grad_ref(w) += nn::matmul_tn(P, dO2);

        Matrix& gb = grad_ref(bias);
        for (std::size_t r = 0; r < dO2.rows(); ++r)
            for (std::size_t c = 0; c < Cout; ++c) gb(0, c) += dO2(r, c);

        Matrix dP = nn::matmul_nt(dO2, nodes_[w].val);
        Matrix& gimg = grad_ref(img);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t y = 0; y < OH; ++y)
                for (std::size_t x = 0; x < OW; ++x) {
                    const std::size_t row = (b * OH + y) * OW + x;
                    for (std::size_t dy = 0; dy < 3; ++dy)
                        for (std::size_t dx = 0; dx < 3; ++dx)
                            for (std::size_t c = 0; c < Cin; ++c)
                                gimg(b, ((y + dy) * W + (x + dx)) * Cin + c) +=
                                    dP(row, (dy * 3 + dx) * Cin + c);
                }
    };
    return v;
}

Tape::Value Tape::maxpool2(Value a, std::size_t H, std::size_t W, std::size_t C) {
    const Matrix& va = node(a).val;
    if (H < 2 || W < 2)
        throw DimensionError("maxpool2 input " + std::to_string(H) + "x" + std::to_string(W) +
                             " smaller than 2x2 window");
    if (va.cols() != H * W * C)
        throw DimensionError("maxpool2 image row length " + std::to_string(va.cols()) +
                             " != H*W*C = " + std::to_string(H * W * C));
    const std::size_t B = va.rows(), H2 = H / 2, W2 = W / 2;
    Matrix m(B, H2 * W2 * C);
    std::vector<std::uint32_t> arg(B * H2 * W2 * C);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < H2; ++y)
            for (std::size_t x = 0; x < W2; ++x)
                for (std::size_t c = 0; c < C; ++c) {
                    double best = -1e300;
                    std::uint32_t best_at = 0;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = ((2 * y + dy) * W + (2 * x + dx)) * C + c;
                            if (va(b, idx) > best) {
                                best = va(b, idx);
                                best_at = static_cast<std::uint32_t>(idx);
                            }
                        }
                    const std::size_t oi = (y * W2 + x) * C + c;
                    m(b, oi) = best;
                    arg[b * H2 * W2 * C + oi] = best_at;
                }
    Value out = push(std::move(m));
    node(out).back = [this, a = a.id, o = out.id, arg = std::move(arg)] {
        const Matrix& g = nodes_[o].grad;
        Matrix& ga = grad_ref(a);
        const std::size_t per = g.cols();
        for (std::size_t b = 0; b < g.rows(); ++b)
            for (std::size_t i = 0; i < per; ++i)
                ga(b, arg[b * per + i]) += g(b, i);
    };
    return out;
}

Tape::Value Tape::batchnorm(Value x, const std::string& prefix, bool training,
                            double momentum, double eps) {
    if (!store_) throw ConfigError("batchnorm requires a bound parameter store");
    const std::size_t B = node(x).val.rows(), C = node(x).val.cols();
    if (B == 0) throw DimensionError("batchnorm on empty batch");
    if (!store_->has(prefix + ".gamma")) {
        store_->create_fill(prefix + ".gamma", 1, C, 1.0, true);
        store_->create_fill(prefix + ".beta", 1, C, 0.0, true);
        store_->create_fill(prefix + ".running_mean", 1, C, 0.0, false);
        store_->create_fill(prefix + ".running_var", 1, C, 1.0, false);
    }
    // param() pushes nodes; take references only after both pushes.
    Value gamma = param(prefix + ".gamma");
    Value beta = param(prefix + ".beta");
    const Matrix& vx = node(x).val;
    const Matrix& vg = node(gamma).val;
    const Matrix& vb = node(beta).val;
    if (vg.cols() != C)
        throw DimensionError("batchnorm width " + std::to_string(C) + " != existing " +
                             prefix + ".gamma width " + std::to_string(vg.cols()));

    std::vector<double> mean(C), inv_std(C);
    if (training) {
        std::vector<double> var(C);
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t b = 0; b < B; ++b) s += vx(b, c);
            mean[c] = s / static_cast<double>(B);
            double sv = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double d = vx(b, c) - mean[c];
                sv += d * d;
            }
            var[c] = sv / static_cast<double>(B);
            inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
        }
        Matrix& rm = store_->value(prefix + ".running_mean");
        Matrix& rv = store_->value(prefix + ".running_var");
        for (std::size_t c = 0; c < C; ++c) {
            const double unbiased = B > 1 ? var[c] * static_cast<double>(B) / static_cast<double>(B - 1)
                                          : var[c];
            rm(0, c) += momentum * (mean[c] - rm(0, c));
            rv(0, c) += momentum * (unbiased - rv(0, c));
        }
    } else {
        const Matrix& rm = store_->value(prefix + ".running_mean");
        const Matrix& rv = store_->value(prefix + ".running_var");
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = rm(0, c);
            inv_std[c] = 1.0 / std::sqrt(rv(0, c) + eps);
        }
    }

    Matrix m(B, C);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            m(b, c) = vg(0, c) * (vx(b, c) - mean[c]) * inv_std[c] + vb(0, c);
    Value out = push(std::move(m));
    node(out).back = [this, x = x.id, gamma = gamma.id, beta = beta.id, o = out.id,
                      mean = std::move(mean), inv_std = std::move(inv_std), training] {
        const Matrix& g = nodes_[o].grad;
        const Matrix& vx = nodes_[x].val;
        const Matrix& vg = nodes_[gamma].val;
        Matrix& gx = grad_ref(x);
        Matrix& gg = grad_ref(gamma);
        Matrix& gb = grad_ref(beta);
        const std::size_t B = vx.rows(), C = vx.cols();
        for (std::size_t c = 0; c < C; ++c) {
            double sum_dxh = 0.0, sum_dxh_xh = 0.0, sum_g = 0.0, sum_g_xh = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double xh = (vx(b, c) - mean[c]) * inv_std[c];
                const double dxh = g(b, c) * vg(0, c);
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh;
                sum_g += g(b, c);
                sum_g_xh += g(b, c) * xh;
            }
            gg(0, c) += sum_g_xh;
            gb(0, c) += sum_g;
            if (training) {
                const double m1 = sum_dxh / static_cast<double>(B);
                const double m2 = sum_dxh_xh / static_cast<double>(B);
                for (std::size_t b = 0; b < B; ++b) {
                    const double xh = (vx(b, c) - mean[c]) * inv_std[c];
                    const double dxh = g(b, c) * vg(0, c);
                    gx(b, c) += inv_std[c] * (dxh - m1 - xh * m2);
                }
            } else {
                for (std::size_t b = 0; b < B; ++b)
                    gx(b, c) += g(b, c) * vg(0, c) * inv_std[c];
            }
        }
    };
    return out;
}

Tape::Value Tape::layernorm(Value x, Value gamma, Value beta, double eps) {
    const Matrix& vx = node(x).val;
    const Matrix& vg = node(gamma).val;
    const Matrix& vb = node(beta).val;
    const std::size_t B = vx.rows(), C = vx.cols();
    if (vg.rows() != 1 || vg.cols() != C || vb.rows() != 1 || vb.cols() != C)
        throw DimensionError("layernorm scale/shift must be 1x" + std::to_string(C) +
                             ", got " + vg.shape_str() + " and " + vb.shape_str());
    std::vector<double> mu(B), inv_std(B);
    Matrix m(B, C);
    for (std::size_t b = 0; b < B; ++b) {
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += vx(b, c);
        mu[b] = s / static_cast<double>(C);
        double sv = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            const double d = vx(b, c) - mu[b];
            sv += d * d;
        }
        inv_std[b] = 1.0 / std::sqrt(sv / static_cast<double>(C) + eps);
        for (std::size_t c = 0; c < C; ++c)
            m(b, c) = vg(0, c) * (vx(b, c) - mu[b]) * inv_std[b] + vb(0, c);
    }
    Value out = push(std::move(m));
    node(out).back = [this, x = x.id, gamma = gamma.id, beta = beta.id, o = out.id,
                      mu = std::move(mu), inv_std = std::move(inv_std)] {
        const Matrix& g = nodes_[o].grad;
        const Matrix& vx = nodes_[x].val;
        const Matrix& vg = nodes_[gamma].val;
        Matrix& gx = grad_ref(x);
        Matrix& gg = grad_ref(gamma);
        Matrix& gb = grad_ref(beta);
        const std::size_t B = vx.rows(), C = vx.cols();
        for (std::size_t b = 0; b < B; ++b) {
            double sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                const double xh = (vx(b, c) - mu[b]) * inv_std[b];
                const double dxh = g(b, c) * vg(0, c);
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh;
                gg(0, c) += g(b, c) * xh;
                gb(0, c) += g(b, c);
            }
            const double m1 = sum_dxh / static_cast<double>(C);
            const double m2 = sum_dxh_xh / static_cast<double>(C);
            for (std::size_t c = 0; c < C; ++c) {
                const double xh = (vx(b, c) - mu[b]) * inv_std[b];
                const double dxh = g(b, c) * vg(0, c);
                gx(b, c) += inv_std[b] * (dxh - m1 - xh * m2);
            }
        }
    };
    return out;
}

Tape::Value Tape::dropout(Value a, double p, bool training) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0,1)");
    if (!training || p == 0.0) return a;
    const Matrix& va = node(a).val;
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(va.size());
    for (double& v : mask) v = rng_.bernoulli(p) ? 0.0 : keep_scale;
    Matrix m = va;
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= mask[i];
    Value out = push(std::move(m));
    node(out).back = [this, a = a.id, o = out.id, mask = std::move(mask)] {
        const Matrix& g = nodes_[o].grad;
        Matrix& ga = grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * mask[i];
    };
    return out;
}

Tape::Value Tape::bce_with_logits(Value logits, const std::vector<double>& labels) {
    const Matrix& vz = node(logits).val;
    if (vz.cols() != 1 || vz.rows() != labels.size())
        throw DimensionError("bce_with_logits wants " + std::to_string(labels.size()) +
                             "x1 logits, got " + vz.shape_str());
    const std::size_t B = labels.size();
    if (B == 0) throw DimensionError("bce_with_logits on empty batch");
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const double z = vz(b, 0);
        if (!std::isfinite(z)) throw NumericError("non-finite logit at row " + std::to_string(b));
        const double y = labels[b];
        if (y != 0.0 && y != 1.0)
            throw DataError("label at row " + std::to_string(b) + " is not 0/1");
        loss += bce_logit_loss(z, y);
    }
    Matrix m(1, 1);
    m(0, 0) = loss / static_cast<double>(B);
    Value out = push(std::move(m));
    node(out).back = [this, logits = logits.id, o = out.id, labels] {
        const double g = nodes_[o].grad(0, 0) / static_cast<double>(labels.size());
        const Matrix& vz = nodes_[logits].val;
        Matrix& gz = grad_ref(logits);
        for (std::size_t b = 0; b < labels.size(); ++b)
            gz(b, 0) += g * bce_logit_grad(vz(b, 0), labels[b]);
    };
    return out;
}

void Tape::backward(Value root) {
    const Matrix& vr = node(root).val;
    if (vr.rows() != 1 || vr.cols() != 1)
        throw DimensionError("backward root must be scalar, got " + vr.shape_str());
    grad_ref(root.id)(0, 0) += 1.0;
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.back && n.grad_alloc) n.back();
    }
    if (store_) {
        for (Node& n : nodes_) {
            if (!n.param_name.empty() && n.grad_alloc)
                store_->entry(n.param_name).grad += n.grad;
        }
    }
}

}  // namespace dmldroid::nn
