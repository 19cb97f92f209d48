#include "textlearn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace textlearn {

namespace {

constexpr double kGeluCoef = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / 3.141592653589793238462643383279502884);

void require_2d(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a 2D tensor, got " + t.shape_string());
}

}  // namespace

Tensor matmul_value(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner extents differ: " + a.shape_string() + " vs " + b.shape_string());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c({m, n});
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* cd = c.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t r = 0; r < k; ++r) {
            const double av = ad[i * k + r];
            if (av == 0.0) continue;
            const double* brow = bd + r * n;
            double* crow = cd + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor transpose_value(const Tensor& a) {
    require_2d(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor t({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

double gelu_value(double x) {
    const double u = kSqrt2OverPi * (x + kGeluCoef * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
    const double u = kSqrt2OverPi * (x + kGeluCoef * x * x * x);
    const double t = std::tanh(u);
    const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoef * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

void softmax_rows_inplace(Tensor& t, std::size_t axis) {
    if (axis >= t.rank()) throw ValueError("softmax: axis out of range");
    // Decompose the index space into (outer, axis, inner) strides.
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= t.extent(i);
    for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.extent(i);
    const std::size_t len = t.extent(axis);
    double* d = t.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            double* base = d + o * len * inner + in;
            double mx = base[0];
            for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, base[k * inner]);
            double denom = 0.0;
            for (std::size_t k = 0; k < len; ++k) {
                const double e = std::exp(base[k * inner] - mx);
                base[k * inner] = e;
                denom += e;
            }
            for (std::size_t k = 0; k < len; ++k) base[k * inner] /= denom;
        }
    }
}

void Tape::check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) {
        throw NumericError(std::string(op) + ": produced a non-finite value");
    }
}

Tape::Var Tape::make_node(Tensor value, bool needs_grad, Parameter* param) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    node.param = param;
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buffer(std::uint32_t id) {
    Node& n = nodes_[id];
    if (!n.grad_live) {
        n.grad = Tensor::zeros(n.value.shape());
        n.grad_live = true;
    }
    return n.grad;
}

const Tensor& Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (!n.grad_live) {
        Node& m = const_cast<Node&>(n);
        m.grad = Tensor::zeros(n.value.shape());
        m.grad_live = true;
    }
    return n.grad;
}

Tape::Var Tape::input(Tensor value) { return make_node(std::move(value), false); }

Tape::Var Tape::param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var{it->second};
    Var v = make_node(p.value, p.trainable, &p);
    param_nodes_.emplace(&p, v.id);
    return v;
}

Tape::Var Tape::matmul(Var a, Var b) {
    Tensor out = matmul_value(nodes_[a.id].value, nodes_[b.id].value);
    check_finite(out, "matmul");
    const bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, b, c] {
            const Tensor& og = grad_buffer(c.id);
            if (nodes_[a.id].needs_grad) {
                // dA = dC . B^T
                Tensor da = matmul_value(og, transpose_value(nodes_[b.id].value));
                Tensor& ga = grad_buffer(a.id);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += da[i];
            }
            if (nodes_[b.id].needs_grad) {
                // dB = A^T . dC
                Tensor db = matmul_value(transpose_value(nodes_[a.id].value), og);
                Tensor& gb = grad_buffer(b.id);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += db[i];
            }
        });
    }
    return c;
}

Tape::Var Tape::add(Var a, Var b) {
    const Tensor& av = nodes_[a.id].value;
    const Tensor& bv = nodes_[b.id].value;
    if (!av.same_shape(bv)) {
        throw ShapeError("add: shape mismatch: " + av.shape_string() + " vs " + bv.shape_string());
    }
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    check_finite(out, "add");
    const bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, b, c] {
            const Tensor& og = grad_buffer(c.id);
            for (Var in : {a, b}) {
                if (!nodes_[in.id].needs_grad) continue;
                Tensor& g = grad_buffer(in.id);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i];
            }
        });
    }
    return c;
}

Tape::Var Tape::add_row(Var a, Var row) {
    const Tensor& av = nodes_[a.id].value;
    const Tensor& rv = nodes_[row.id].value;
    require_2d(av, "add_row");
    if (rv.rank() != 1 || rv.size() != av.cols()) {
        throw ShapeError("add_row: row vector length must equal matrix columns");
    }
    const std::size_t m = av.rows(), n = av.cols();
    Tensor out = av;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) += rv[j];
    check_finite(out, "add_row");
    const bool ng = nodes_[a.id].needs_grad || nodes_[row.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, row, c, m, n] {
            const Tensor& og = grad_buffer(c.id);
            if (nodes_[a.id].needs_grad) {
                Tensor& g = grad_buffer(a.id);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i];
            }
            if (nodes_[row.id].needs_grad) {
                Tensor& g = grad_buffer(row.id);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) g[j] += og[i * n + j];
            }
        });
    }
    return c;
}

Tape::Var Tape::multiply(Var a, Var b) {
    const Tensor& av = nodes_[a.id].value;
    const Tensor& bv = nodes_[b.id].value;
    if (!av.same_shape(bv)) {
        throw ShapeError("multiply: shape mismatch: " + av.shape_string() + " vs " + bv.shape_string());
    }
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    check_finite(out, "multiply");
    const bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, b, c] {
            const Tensor& og = grad_buffer(c.id);
            if (nodes_[a.id].needs_grad) {
                Tensor& g = grad_buffer(a.id);
                const Tensor& bv2 = nodes_[b.id].value;
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i] * bv2[i];
            }
            if (nodes_[b.id].needs_grad) {
                Tensor& g = grad_buffer(b.id);
                const Tensor& av2 = nodes_[a.id].value;
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i] * av2[i];
            }
        });
    }
    return c;
}

Tape::Var Tape::scale(Var a, double factor) {
    Tensor out = nodes_[a.id].value;
    for (double& x : out.data()) x *= factor;
    check_finite(out, "scale");
    const bool ng = nodes_[a.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, c, factor] {
            const Tensor& og = grad_buffer(c.id);
            Tensor& g = grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i] * factor;
        });
    }
    return c;
}

Tape::Var Tape::transpose(Var a) {
    Tensor out = transpose_value(nodes_[a.id].value);
    const bool ng = nodes_[a.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, c] {
            Tensor gt = transpose_value(grad_buffer(c.id));
            Tensor& g = grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gt[i];
        });
    }
    return c;
}

Tape::Var Tape::reshape(Var a, std::vector<std::size_t> shape) {
    const Tensor& av = nodes_[a.id].value;
    Tensor out(std::move(shape), av.data());
    const bool ng = nodes_[a.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, c] {
            const Tensor& og = grad_buffer(c.id);
            Tensor& g = grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i];
        });
    }
    return c;
}

Tape::Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ValueError("concat_cols: no inputs");
    const std::size_t m = nodes_[parts[0].id].value.rows();
    std::size_t total = 0;
    bool ng = false;
    for (Var p : parts) {
        const Tensor& v = nodes_[p.id].value;
        require_2d(v, "concat_cols");
        if (v.rows() != m) throw ShapeError("concat_cols: row counts differ");
        total += v.cols();
        ng = ng || nodes_[p.id].needs_grad;
    }
    Tensor out({m, total});
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& v = nodes_[p.id].value;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < v.cols(); ++j) out.at(i, off + j) = v.at(i, j);
        off += v.cols();
    }
    Var c = make_node(std::move(out), ng);
    if (ng) {
        std::vector<Var> ins = parts;
        record([this, ins, c, m, total] {
            const Tensor& og = grad_buffer(c.id);
            std::size_t off2 = 0;
            for (Var p : ins) {
                const std::size_t w = nodes_[p.id].value.cols();
                if (nodes_[p.id].needs_grad) {
                    Tensor& g = grad_buffer(p.id);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j) g.at(i, j) += og[i * total + off2 + j];
                }
                off2 += w;
            }
        });
    }
    return c;
}

Tape::Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ValueError("concat_rows: no inputs");
    const std::size_t n = nodes_[parts[0].id].value.cols();
    std::size_t total = 0;
    bool ng = false;
    for (Var p : parts) {
        const Tensor& v = nodes_[p.id].value;
        require_2d(v, "concat_rows");
        if (v.cols() != n) throw ShapeError("concat_rows: column counts differ");
        total += v.rows();
        ng = ng || nodes_[p.id].needs_grad;
    }
    Tensor out({total, n});
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& v = nodes_[p.id].value;
        std::copy(v.data().begin(), v.data().end(), out.data().begin() + off * n);
        off += v.rows();
    }
    Var c = make_node(std::move(out), ng);
    if (ng) {
        std::vector<Var> ins = parts;
        record([this, ins, c, n] {
            const Tensor& og = grad_buffer(c.id);
            std::size_t off2 = 0;
            for (Var p : ins) {
                const std::size_t r = nodes_[p.id].value.rows();
                if (nodes_[p.id].needs_grad) {
                    Tensor& g = grad_buffer(p.id);
                    for (std::size_t i = 0; i < r * n; ++i) g[i] += og[off2 * n + i];
                }
                off2 += r;
            }
        });
    }
    return c;
}

Tape::Var Tape::slice_cols(Var a, std::size_t begin, std::size_t count) {
    const Tensor& av = nodes_[a.id].value;
    require_2d(av, "slice_cols");
    if (begin + count > av.cols() || count == 0) throw ShapeError("slice_cols: range out of bounds");
    const std::size_t m = av.rows();
    Tensor out({m, count});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) out.at(i, j) = av.at(i, begin + j);
    const bool ng = nodes_[a.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, c, begin, count, m] {
            const Tensor& og = grad_buffer(c.id);
            Tensor& g = grad_buffer(a.id);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < count; ++j) g.at(i, begin + j) += og[i * count + j];
        });
    }
    return c;
}

Tape::Var Tape::select_rows(Var a, std::vector<std::size_t> rows) {
    const Tensor& av = nodes_[a.id].value;
    require_2d(av, "select_rows");
    const std::size_t n = av.cols();
    for (std::size_t r : rows) {
        if (r >= av.rows()) throw IndexError("select_rows: row index out of range");
    }
    Tensor out({rows.size(), n});
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = av.at(rows[i], j);
    const bool ng = nodes_[a.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, c, rows = std::move(rows), n] {
            const Tensor& og = grad_buffer(c.id);
            Tensor& g = grad_buffer(a.id);
            for (std::size_t i = 0; i < rows.size(); ++i)
                for (std::size_t j = 0; j < n; ++j) g.at(rows[i], j) += og[i * n + j];
        });
    }
    return c;
}

Tape::Var Tape::sum(Var a) {
    const Tensor& av = nodes_[a.id].value;
    double s = 0.0;
    for (double x : av.data()) s += x;
    Tensor out = Tensor::scalar(s);
    check_finite(out, "sum");
    const bool ng = nodes_[a.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, c] {
            const double og = grad_buffer(c.id)[0];
            Tensor& g = grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += og;
        });
    }
    return c;
}

Tape::Var Tape::mean(Var a) {
    const Tensor& av = nodes_[a.id].value;
    const double inv = 1.0 / static_cast<double>(av.size());
    double s = 0.0;
    for (double x : av.data()) s += x;
    Tensor out = Tensor::scalar(s * inv);
    check_finite(out, "mean");
    const bool ng = nodes_[a.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, c, inv] {
            const double og = grad_buffer(c.id)[0] * inv;
            Tensor& g = grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += og;
        });
    }
    return c;
}

Tape::Var Tape::relu(Var a) {
    Tensor out = nodes_[a.id].value;
    for (double& x : out.data()) x = x > 0.0 ? x : 0.0;
    const bool ng = nodes_[a.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, c] {
            const Tensor& og = grad_buffer(c.id);
            const Tensor& av = nodes_[a.id].value;
            Tensor& g = grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += av[i] > 0.0 ? og[i] : 0.0;
        });
    }
    return c;
}

Tape::Var Tape::gelu(Var a) {
    Tensor out = nodes_[a.id].value;
    for (double& x : out.data()) x = gelu_value(x);
    check_finite(out, "gelu");
    const bool ng = nodes_[a.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, c] {
            const Tensor& og = grad_buffer(c.id);
            const Tensor& av = nodes_[a.id].value;
            Tensor& g = grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i] * gelu_derivative(av[i]);
        });
    }
    return c;
}

Tape::Var Tape::sigmoid(Var a) {
    Tensor out = nodes_[a.id].value;
    for (double& x : out.data()) x = 1.0 / (1.0 + std::exp(-x));
    check_finite(out, "sigmoid");
    const bool ng = nodes_[a.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, c] {
            const Tensor& og = grad_buffer(c.id);
            const Tensor& ov = nodes_[c.id].value;
            Tensor& g = grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i] * ov[i] * (1.0 - ov[i]);
        });
    }
    return c;
}

Tape::Var Tape::tanh(Var a) {
    Tensor out = nodes_[a.id].value;
    for (double& x : out.data()) x = std::tanh(x);
    check_finite(out, "tanh");
    const bool ng = nodes_[a.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, c] {
            const Tensor& og = grad_buffer(c.id);
            const Tensor& ov = nodes_[c.id].value;
            Tensor& g = grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i] * (1.0 - ov[i] * ov[i]);
        });
    }
    return c;
}

Tape::Var Tape::softmax(Var a, std::size_t axis) {
    Tensor out = nodes_[a.id].value;
    softmax_rows_inplace(out, axis);
    check_finite(out, "softmax");
    const bool ng = nodes_[a.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, a, c, axis] {
            const Tensor& og = grad_buffer(c.id);
            const Tensor& ov = nodes_[c.id].value;
            Tensor& g = grad_buffer(a.id);
            // dx_k = y_k * (dy_k - sum_j dy_j y_j) along the softmax axis.
            std::size_t outer = 1, inner = 1;
            for (std::size_t i = 0; i < ov.rank(); ++i) {
                if (i < axis) outer *= ov.extent(i);
                if (i > axis) inner *= ov.extent(i);
            }
            const std::size_t len = ov.extent(axis);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < len; ++k) dot += og[base + k * inner] * ov[base + k * inner];
                    for (std::size_t k = 0; k < len; ++k) {
                        const std::size_t idx = base + k * inner;
                        g[idx] += ov[idx] * (og[idx] - dot);
                    }
                }
            }
        });
    }
    return c;
}

Tape::Var Tape::layer_norm(Var x, Var gain, Var bias, double epsilon) {
    const Tensor& xv = nodes_[x.id].value;
    const Tensor& gv = nodes_[gain.id].value;
    const Tensor& bv = nodes_[bias.id].value;
    const std::size_t n = xv.shape().back();
    if (gv.size() != n || bv.size() != n) {
        throw ShapeError("layer_norm: gain/bias length must equal the last extent");
    }
    const std::size_t rows = xv.size() / n;
    Tensor out(xv.shape());
    std::vector<double> inv_sigma(rows), means(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data().data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xr[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + epsilon);
        means[r] = mu;
        inv_sigma[r] = inv;
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = (xr[j] - mu) * inv * gv[j] + bv[j];
    }
    check_finite(out, "layer_norm");
    const bool ng = nodes_[x.id].needs_grad || nodes_[gain.id].needs_grad || nodes_[bias.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, x, gain, bias, c, n, rows, inv_sigma = std::move(inv_sigma), means = std::move(means)] {
            const Tensor& og = grad_buffer(c.id);
            const Tensor& xv2 = nodes_[x.id].value;
            const Tensor& gv2 = nodes_[gain.id].value;
            const bool want_x = nodes_[x.id].needs_grad;
            const bool want_gain = nodes_[gain.id].needs_grad;
            const bool want_bias = nodes_[bias.id].needs_grad;
            for (std::size_t r = 0; r < rows; ++r) {
                const double inv = inv_sigma[r];
                const double mu = means[r];
                const double* xr = xv2.data().data() + r * n;
                const double* gr = og.data().data() + r * n;
                if (want_gain) {
                    Tensor& gg = grad_buffer(gain.id);
                    for (std::size_t j = 0; j < n; ++j) gg[j] += gr[j] * (xr[j] - mu) * inv;
                }
                if (want_bias) {
                    Tensor& gb = grad_buffer(bias.id);
                    for (std::size_t j = 0; j < n; ++j) gb[j] += gr[j];
                }
                if (want_x) {
                    // With h_j = gain_j * dy_j: dx = inv * (h - mean(h) - xhat * mean(h*xhat)).
                    Tensor& gx = grad_buffer(x.id);
                    double mean_h = 0.0, mean_hx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double h = gv2[j] * gr[j];
                        const double xhat = (xr[j] - mu) * inv;
                        mean_h += h;
                        mean_hx += h * xhat;
                    }
                    mean_h /= static_cast<double>(n);
                    mean_hx /= static_cast<double>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const double h = gv2[j] * gr[j];
                        const double xhat = (xr[j] - mu) * inv;
                        gx[r * n + j] += inv * (h - mean_h - xhat * mean_hx);
                    }
                }
            }
        });
    }
    return c;
}

Tape::Var Tape::dropout(Var x, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ValueError("dropout: p must be in [0, 1)");
    const Tensor& xv = nodes_[x.id].value;
    if (!training || p == 0.0) {
        // Evaluation mode (or p = 0) is the identity.
        Var c = make_node(xv, nodes_[x.id].needs_grad);
        if (nodes_[x.id].needs_grad) {
            record([this, x, c] {
                const Tensor& og = grad_buffer(c.id);
                Tensor& g = grad_buffer(x.id);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i];
            });
        }
        return c;
    }
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(xv.size());
    Tensor out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
        out[i] *= mask[i];
    }
    const bool ng = nodes_[x.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, x, c, mask = std::move(mask)] {
            const Tensor& og = grad_buffer(c.id);
            Tensor& g = grad_buffer(x.id);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i] * mask[i];
        });
    }
    return c;
}

Tape::Var Tape::cross_entropy(Var logits, const std::vector<int>& targets, int ignore_index) {
    const Tensor& lv = nodes_[logits.id].value;
    require_2d(lv, "cross_entropy");
    const std::size_t n = lv.rows(), classes = lv.cols();
    if (targets.size() != n) throw ShapeError("cross_entropy: one target per row required");
    std::size_t used = 0;
    double total = 0.0;
    // log-softmax per row evaluated directly for stability
    std::vector<double> log_probs;  // retained for backward (row-major, used rows only logically)
    log_probs.resize(n * classes);
    for (std::size_t i = 0; i < n; ++i) {
        const int t = targets[i];
        if (t == ignore_index) continue;
        if (t < 0 || static_cast<std::size_t>(t) >= classes) {
            throw IndexError("cross_entropy: target out of range at row " + std::to_string(i));
        }
        const double* row = lv.data().data() + i * classes;
        double mx = row[0];
        for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < classes; ++j) denom += std::exp(row[j] - mx);
        const double log_denom = std::log(denom);
        for (std::size_t j = 0; j < classes; ++j) log_probs[i * classes + j] = row[j] - mx - log_denom;
        total -= log_probs[i * classes + static_cast<std::size_t>(t)];
        ++used;
    }
    if (used == 0) throw ContractError("cross_entropy: all rows ignored, loss undefined");
    Tensor out = Tensor::scalar(total / static_cast<double>(used));
    check_finite(out, "cross_entropy");
    const bool ng = nodes_[logits.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, logits, c, targets, ignore_index, used, classes, n,
                log_probs = std::move(log_probs)] {
            const double og = grad_buffer(c.id)[0] / static_cast<double>(used);
            Tensor& g = grad_buffer(logits.id);
            for (std::size_t i = 0; i < n; ++i) {
                const int t = targets[i];
                if (t == ignore_index) continue;
                for (std::size_t j = 0; j < classes; ++j) {
                    double p = std::exp(log_probs[i * classes + j]);
                    if (j == static_cast<std::size_t>(t)) p -= 1.0;
                    g[i * classes + j] += og * p;
                }
            }
        });
    }
    return c;
}

Tape::Var Tape::embedding_lookup(Var table, const std::vector<int>& ids) {
    const Tensor& tv = nodes_[table.id].value;
    require_2d(tv, "embedding_lookup");
    const std::size_t u = tv.rows(), h = tv.cols();
    Tensor out({ids.size(), h});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= u) {
            throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) + " out of range [0, " +
                             std::to_string(u) + ")");
        }
        const double* src = tv.data().data() + static_cast<std::size_t>(ids[i]) * h;
        std::copy(src, src + h, out.data().begin() + i * h);
    }
    const bool ng = nodes_[table.id].needs_grad;
    Var c = make_node(std::move(out), ng);
    if (ng) {
        record([this, table, c, ids, h] {
            const Tensor& og = grad_buffer(c.id);
            Tensor& g = grad_buffer(table.id);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                double* dst = g.data().data() + static_cast<std::size_t>(ids[i]) * h;
                const double* src = og.data().data() + i * h;
                for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
            }
        });
    }
    return c;
}

Tape::Var Tape::custom(const std::vector<Var>& inputs, Tensor output,
                       std::function<void(const CustomCtx&)> backward_fn) {
    check_finite(output, "custom");
    bool ng = false;
    for (Var in : inputs) ng = ng || nodes_[in.id].needs_grad;
    Var c = make_node(std::move(output), ng);
    if (ng) {
        record([this, inputs, c, backward_fn = std::move(backward_fn)] {
            CustomCtx ctx;
            ctx.input_values.reserve(inputs.size());
            ctx.input_grads.reserve(inputs.size());
            for (Var in : inputs) {
                ctx.input_values.push_back(&nodes_[in.id].value);
                ctx.input_grads.push_back(nodes_[in.id].needs_grad ? &grad_buffer(in.id) : nullptr);
            }
            ctx.out_value = &nodes_[c.id].value;
            ctx.out_grad = &grad_buffer(c.id);
            backward_fn(ctx);
        });
    }
    return c;
}

void Tape::backward(Var loss) {
    const Node& ln = nodes_[loss.id];
    if (ln.value.size() != 1) {
        throw ContractError("backward: loss must be a scalar, got " + ln.value.shape_string());
    }
    // Node buffers are scratch per pass; parameter gradients persist and
    // accumulate across calls (mini-batch summation), so a second backward
    // without zeroing exactly doubles them.
    for (Node& n : nodes_) {
        if (n.grad_live) std::fill(n.grad.data().begin(), n.grad.data().end(), 0.0);
    }
    grad_buffer(loss.id)[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
    for (const auto& [param, id] : param_nodes_) {
        if (!param->trainable) continue;
        const Node& node = nodes_[id];
        if (!node.grad_live) continue;
        for (std::size_t i = 0; i < param->grad.size(); ++i) param->grad[i] += node.grad[i];
    }
}

}  // namespace textlearn
