#include "viewset/graph.hpp"

#include "viewset/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace viewset {

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

void Parameter::zero_grad() { grad.fill(0.0); }

Graph::Graph(bool grad_enabled) : grad_enabled_(grad_enabled) {}

Val Graph::push(Tensor value, bool requires_grad, std::function<void()> back, Parameter* bound) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    if (n.requires_grad) {
        n.grad = Tensor(n.value.shape());
        n.back = std::move(back);
    }
    n.bound = bound;
    nodes_.push_back(std::move(n));
    return Val{nodes_.size() - 1};
}

Graph::Node& Graph::node(Val v) {
    if (v.id >= nodes_.size()) throw StateError("graph handle out of range");
    return nodes_[v.id];
}

const Graph::Node& Graph::node(Val v) const {
    if (v.id >= nodes_.size()) throw StateError("graph handle out of range");
    return nodes_[v.id];
}

void Graph::check_open(const char* op) const {
    if (consumed_)
        throw StateError(std::string(op) + ": tape already consumed by backward");
}

Val Graph::constant(Tensor t) {
    check_open("constant");
    t.ensure_finite("constant");
    return push(std::move(t), false, nullptr);
}

Val Graph::param(Parameter& p) {
    check_open("param");
    p.value.ensure_finite("param");
    return push(p.value, true, nullptr, &p);
}

const Tensor& Graph::value(Val v) const { return node(v).value; }

const Tensor& Graph::grad(Val v) const {
    const Node& n = node(v);
    if (!n.requires_grad) throw StateError("grad requested for a non-differentiable node");
    return n.grad;
}

namespace {

void add_into(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

} // namespace

Val Graph::matmul(Val a, Val b) {
    check_open("matmul");
    Tensor out = viewset::matmul(node(a).value, node(b).value);
    bool rg = node(a).requires_grad || node(b).requires_grad;
    Val v = push(std::move(out), rg, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, a, b, v] {
            const Tensor& g = nodes_[v.id].grad;
            if (nodes_[a.id].requires_grad)
                add_into(nodes_[a.id].grad, viewset::matmul(g, viewset::transpose(nodes_[b.id].value)));
            if (nodes_[b.id].requires_grad)
                add_into(nodes_[b.id].grad, viewset::matmul(viewset::transpose(nodes_[a.id].value), g));
        };
    }
    return v;
}

Val Graph::attend(Val a, Val x) {
    check_open("attend");
    Tensor out = viewset::matmul_canonical(node(a).value, node(x).value);
    bool rg = node(a).requires_grad || node(x).requires_grad;
    Val v = push(std::move(out), rg, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, a, x, v] {
            const Tensor& g = nodes_[v.id].grad;
            if (nodes_[a.id].requires_grad)
                add_into(nodes_[a.id].grad, viewset::matmul(g, viewset::transpose(nodes_[x.id].value)));
            if (nodes_[x.id].requires_grad)
                add_into(nodes_[x.id].grad, viewset::matmul(viewset::transpose(nodes_[a.id].value), g));
        };
    }
    return v;
}

Val Graph::transpose(Val a) {
    check_open("transpose");
    Val v = push(viewset::transpose(node(a).value), node(a).requires_grad, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, a, v] {
            add_into(nodes_[a.id].grad, viewset::transpose(nodes_[v.id].grad));
        };
    }
    return v;
}

Val Graph::add(Val a, Val b) {
    check_open("add");
    Tensor out = viewset::add(node(a).value, node(b).value);
    bool rg = node(a).requires_grad || node(b).requires_grad;
    Val v = push(std::move(out), rg, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, a, b, v] {
            const Tensor& g = nodes_[v.id].grad;
            if (nodes_[a.id].requires_grad) add_into(nodes_[a.id].grad, g);
            if (nodes_[b.id].requires_grad) add_into(nodes_[b.id].grad, g);
        };
    }
    return v;
}

Val Graph::scale(Val a, double c) {
    check_open("scale");
    Val v = push(viewset::scale(node(a).value, c), node(a).requires_grad, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, a, v, c] {
            add_into(nodes_[a.id].grad, viewset::scale(nodes_[v.id].grad, c));
        };
    }
    return v;
}

Val Graph::add_row_bias(Val a, Val bias) {
    check_open("add_row_bias");
    Tensor out = viewset::add_row_bias(node(a).value, node(bias).value);
    bool rg = node(a).requires_grad || node(bias).requires_grad;
    Val v = push(std::move(out), rg, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, a, bias, v] {
            const Tensor& g = nodes_[v.id].grad;
            if (nodes_[a.id].requires_grad) add_into(nodes_[a.id].grad, g);
            if (nodes_[bias.id].requires_grad) {
                Tensor& db = nodes_[bias.id].grad;
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) db[j] += g.at(i, j);
            }
        };
    }
    return v;
}

Val Graph::softmax_rows(Val x) {
    check_open("softmax_rows");
    Tensor out = viewset::softmax_rows(node(x).value);
    Val v = push(std::move(out), node(x).requires_grad, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, x, v] {
            const Tensor& s = nodes_[v.id].value;
            const Tensor& g = nodes_[v.id].grad;
            Tensor& dx = nodes_[x.id].grad;
            for (std::size_t i = 0; i < s.rows(); ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < s.cols(); ++j) dot += g.at(i, j) * s.at(i, j);
                for (std::size_t j = 0; j < s.cols(); ++j)
                    dx.at(i, j) += s.at(i, j) * (g.at(i, j) - dot);
            }
        };
    }
    return v;
}

Val Graph::layer_norm(Val x, Val gain, Val bias, double eps) {
    check_open("layer_norm");
    const Tensor& xv = node(x).value;
    const Tensor& gv = node(gain).value;
    const Tensor& bv = node(bias).value;
    std::size_t m = xv.rows(), n = xv.cols();
    if (gv.size() != n || bv.size() != n)
        throw DimensionError("layer_norm: gain/bias size does not match columns");

    Tensor xhat({m, n});
    std::vector<double> inv(m);
    for (std::size_t i = 0; i < m; ++i) {
        auto r = xv.row(i);
        double mean = 0.0;
        for (double vv : r) mean += vv;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double vv : r) var += (vv - mean) * (vv - mean);
        var /= static_cast<double>(n);
        inv[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) xhat.at(i, j) = (r[j] - mean) * inv[i];
    }
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = gv[j] * xhat.at(i, j) + bv[j];
    out.ensure_finite("layer_norm");

    bool rg = node(x).requires_grad || node(gain).requires_grad || node(bias).requires_grad;
    Val v = push(std::move(out), rg, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, x, gain, bias, v, xhat = std::move(xhat), inv = std::move(inv)] {
            const Tensor& g = nodes_[v.id].grad;
            const Tensor& gv2 = nodes_[gain.id].value;
            std::size_t m2 = g.rows(), n2 = g.cols();
            if (nodes_[gain.id].requires_grad) {
                Tensor& dg = nodes_[gain.id].grad;
                for (std::size_t i = 0; i < m2; ++i)
                    for (std::size_t j = 0; j < n2; ++j) dg[j] += g.at(i, j) * xhat.at(i, j);
            }
            if (nodes_[bias.id].requires_grad) {
                Tensor& db = nodes_[bias.id].grad;
                for (std::size_t i = 0; i < m2; ++i)
                    for (std::size_t j = 0; j < n2; ++j) db[j] += g.at(i, j);
            }
            if (nodes_[x.id].requires_grad) {
                Tensor& dx = nodes_[x.id].grad;
                std::vector<double> dxhat(n2);
                for (std::size_t i = 0; i < m2; ++i) {
                    double sum1 = 0.0, sum2 = 0.0;
                    for (std::size_t j = 0; j < n2; ++j) {
                        dxhat[j] = g.at(i, j) * gv2[j];
                        sum1 += dxhat[j];
                        sum2 += dxhat[j] * xhat.at(i, j);
                    }
                    double nn = static_cast<double>(n2);
                    for (std::size_t j = 0; j < n2; ++j)
                        dx.at(i, j) +=
                            inv[i] / nn * (nn * dxhat[j] - sum1 - xhat.at(i, j) * sum2);
                }
            }
        };
    }
    return v;
}

Val Graph::relu(Val x) {
    check_open("relu");
    Val v = push(viewset::relu(node(x).value), node(x).requires_grad, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, x, v] {
            const Tensor& xin = nodes_[x.id].value;
            const Tensor& g = nodes_[v.id].grad;
            Tensor& dx = nodes_[x.id].grad;
            for (std::size_t i = 0; i < xin.size(); ++i)
                if (xin[i] > 0.0) dx[i] += g[i];
        };
    }
    return v;
}

Val Graph::gelu(Val x) {
    check_open("gelu");
    Val v = push(viewset::gelu(node(x).value), node(x).requires_grad, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, x, v] {
            const Tensor& xin = nodes_[x.id].value;
            const Tensor& g = nodes_[v.id].grad;
            Tensor& dx = nodes_[x.id].grad;
            for (std::size_t i = 0; i < xin.size(); ++i) dx[i] += g[i] * gelu_derivative(xin[i]);
        };
    }
    return v;
}

Val Graph::dropout(Val x, double rate, Rng& rng) {
    check_open("dropout");
    if (rate < 0.0 || rate >= 1.0)
        throw InputError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    const Tensor& xv = node(x).value;
    Tensor mask(xv.shape());
    double keep = 1.0 - rate;
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.uniform01() >= rate ? 1.0 / keep : 0.0;
    Tensor out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    Val v = push(std::move(out), node(x).requires_grad, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, x, v, mask = std::move(mask)] {
            const Tensor& g = nodes_[v.id].grad;
            Tensor& dx = nodes_[x.id].grad;
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * mask[i];
        };
    }
    return v;
}

Val Graph::slice_rows(Val a, std::size_t lo, std::size_t hi) {
    check_open("slice_rows");
    const Tensor& av = node(a).value;
    if (lo >= hi || hi > av.rows())
        throw DimensionError("slice_rows: bad range [" + std::to_string(lo) + ", " +
                             std::to_string(hi) + ") for " + av.shape_str());
    Tensor out({hi - lo, av.cols()});
    for (std::size_t i = lo; i < hi; ++i) {
        auto src = av.row(i);
        std::copy(src.begin(), src.end(), out.row(i - lo).begin());
    }
    Val v = push(std::move(out), node(a).requires_grad, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, a, v, lo] {
            const Tensor& g = nodes_[v.id].grad;
            Tensor& da = nodes_[a.id].grad;
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) da.at(i + lo, j) += g.at(i, j);
        };
    }
    return v;
}

Val Graph::slice_cols(Val a, std::size_t lo, std::size_t hi) {
    check_open("slice_cols");
    const Tensor& av = node(a).value;
    if (lo >= hi || hi > av.cols())
        throw DimensionError("slice_cols: bad range [" + std::to_string(lo) + ", " +
                             std::to_string(hi) + ") for " + av.shape_str());
    Tensor out({av.rows(), hi - lo});
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = lo; j < hi; ++j) out.at(i, j - lo) = av.at(i, j);
    Val v = push(std::move(out), node(a).requires_grad, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, a, v, lo] {
            const Tensor& g = nodes_[v.id].grad;
            Tensor& da = nodes_[a.id].grad;
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) da.at(i, j + lo) += g.at(i, j);
        };
    }
    return v;
}

Val Graph::concat_rows(const std::vector<Val>& vs) {
    check_open("concat_rows");
    if (vs.empty()) throw DimensionError("concat_rows: nothing to concatenate");
    std::size_t cols = node(vs[0]).value.cols(), rows = 0;
    bool rg = false;
    for (Val v : vs) {
        if (node(v).value.cols() != cols) throw DimensionError("concat_rows: column mismatch");
        rows += node(v).value.rows();
        rg = rg || node(v).requires_grad;
    }
    Tensor out({rows, cols});
    std::size_t r = 0;
    for (Val v : vs)
        for (std::size_t i = 0; i < node(v).value.rows(); ++i, ++r) {
            auto src = node(v).value.row(i);
            std::copy(src.begin(), src.end(), out.row(r).begin());
        }
    Val o = push(std::move(out), rg, nullptr);
    if (node(o).requires_grad) {
        node(o).back = [this, vs, o] {
            const Tensor& g = nodes_[o.id].grad;
            std::size_t r2 = 0;
            for (Val v : vs) {
                std::size_t vr = nodes_[v.id].value.rows();
                if (nodes_[v.id].requires_grad) {
                    Tensor& dv = nodes_[v.id].grad;
                    for (std::size_t i = 0; i < vr; ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j)
                            dv.at(i, j) += g.at(r2 + i, j);
                }
                r2 += vr;
            }
        };
    }
    return o;
}

Val Graph::concat_cols(const std::vector<Val>& vs) {
    check_open("concat_cols");
    if (vs.empty()) throw DimensionError("concat_cols: nothing to concatenate");
    std::size_t rows = node(vs[0]).value.rows(), cols = 0;
    bool rg = false;
    for (Val v : vs) {
        if (node(v).value.rows() != rows) throw DimensionError("concat_cols: row mismatch");
        cols += node(v).value.cols();
        rg = rg || node(v).requires_grad;
    }
    Tensor out({rows, cols});
    std::size_t c = 0;
    for (Val v : vs) {
        const Tensor& t = node(v).value;
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < t.cols(); ++j) out.at(i, c + j) = t.at(i, j);
        c += t.cols();
    }
    Val o = push(std::move(out), rg, nullptr);
    if (node(o).requires_grad) {
        node(o).back = [this, vs, o] {
            const Tensor& g = nodes_[o.id].grad;
            std::size_t c2 = 0;
            for (Val v : vs) {
                std::size_t vc = nodes_[v.id].value.cols();
                if (nodes_[v.id].requires_grad) {
                    Tensor& dv = nodes_[v.id].grad;
                    for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < vc; ++j) dv.at(i, j) += g.at(i, c2 + j);
                }
                c2 += vc;
            }
        };
    }
    return o;
}

Val Graph::reshape(Val a, Shape shape) {
    check_open("reshape");
    Tensor out(std::move(shape), node(a).value.data());
    Val v = push(std::move(out), node(a).requires_grad, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, a, v] {
            const Tensor& g = nodes_[v.id].grad;
            Tensor& da = nodes_[a.id].grad;
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        };
    }
    return v;
}

Val Graph::mean_rows(Val x) {
    check_open("mean_rows");
    const Tensor& xv = node(x).value;
    std::size_t m = xv.rows(), n = xv.cols();
    Tensor out({1, n});
    std::vector<double> col(m);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < m; ++i) col[i] = xv.at(i, j);
        out.at(0, j) = canonical_sum(col) / static_cast<double>(m);
    }
    out.ensure_finite("mean_rows");
    Val v = push(std::move(out), node(x).requires_grad, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, x, v, m] {
            const Tensor& g = nodes_[v.id].grad;
            Tensor& dx = nodes_[x.id].grad;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < g.cols(); ++j)
                    dx.at(i, j) += g.at(0, j) / static_cast<double>(m);
        };
    }
    return v;
}

Val Graph::max_rows(Val x) {
    check_open("max_rows");
    const Tensor& xv = node(x).value;
    std::size_t m = xv.rows(), n = xv.cols();
    Tensor out({1, n});
    std::vector<std::size_t> arg(n, 0);
    for (std::size_t j = 0; j < n; ++j) {
        double best = xv.at(0, j);
        for (std::size_t i = 1; i < m; ++i)
            if (xv.at(i, j) > best) { // strict: ties go to the lowest row index
                best = xv.at(i, j);
                arg[j] = i;
            }
        out.at(0, j) = best;
    }
    Val v = push(std::move(out), node(x).requires_grad, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, x, v, arg = std::move(arg)] {
            const Tensor& g = nodes_[v.id].grad;
            Tensor& dx = nodes_[x.id].grad;
            for (std::size_t j = 0; j < g.cols(); ++j) dx.at(arg[j], j) += g.at(0, j);
        };
    }
    return v;
}

Val Graph::sum_all(Val x) {
    check_open("sum_all");
    const Tensor& xv = node(x).value;
    Tensor out = Tensor::scalar(canonical_sum(xv.data()));
    out.ensure_finite("sum_all");
    Val v = push(std::move(out), node(x).requires_grad, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, x, v] {
            double g = nodes_[v.id].grad[0];
            Tensor& dx = nodes_[x.id].grad;
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
        };
    }
    return v;
}

Val Graph::sum_squares(Val x) {
    check_open("sum_squares");
    const Tensor& xv = node(x).value;
    std::vector<double> sq(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) sq[i] = xv[i] * xv[i];
    Tensor out = Tensor::scalar(canonical_sum(sq));
    out.ensure_finite("sum_squares");
    Val v = push(std::move(out), node(x).requires_grad, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, x, v] {
            double g = nodes_[v.id].grad[0];
            const Tensor& xin = nodes_[x.id].value;
            Tensor& dx = nodes_[x.id].grad;
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += 2.0 * xin[i] * g;
        };
    }
    return v;
}

Val Graph::cross_entropy_smoothed(Val logits, std::size_t label, double smoothing) {
    check_open("cross_entropy_smoothed");
    const Tensor& lv = node(logits).value;
    if (lv.rows() != 1) throw DimensionError("cross_entropy_smoothed: logits must be one row");
    std::size_t k = lv.cols();
    if (label >= k) throw InputError("cross_entropy_smoothed: label out of range");
    if (smoothing < 0.0 || smoothing >= 1.0)
        throw InputError("cross_entropy_smoothed: smoothing must lie in [0, 1)");
    if (smoothing > 0.0 && k < 2)
        throw InputError("cross_entropy_smoothed: smoothing needs at least 2 classes");

    std::vector<double> target(k, smoothing > 0.0 ? smoothing / static_cast<double>(k - 1) : 0.0);
    target[label] = 1.0 - smoothing;

    auto r = lv.row(0);
    double mx = *std::max_element(r.begin(), r.end());
    std::vector<double> ex(k);
    for (std::size_t j = 0; j < k; ++j) ex[j] = std::exp(r[j] - mx);
    double lse = mx + std::log(canonical_sum(ex));
    double dot = 0.0;
    for (std::size_t j = 0; j < k; ++j) dot += target[j] * r[j];
    Tensor out = Tensor::scalar(lse - dot);
    out.ensure_finite("cross_entropy_smoothed");

    Val v = push(std::move(out), node(logits).requires_grad, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, logits, v, target = std::move(target)] {
            double g = nodes_[v.id].grad[0];
            const Tensor& lin = nodes_[logits.id].value;
            Tensor p = viewset::softmax_rows(lin);
            Tensor& dl = nodes_[logits.id].grad;
            for (std::size_t j = 0; j < target.size(); ++j)
                dl.at(0, j) += (p.at(0, j) - target[j]) * g;
        };
    }
    return v;
}

Val Graph::conv2d(Val x, Val kernels, Val bias, std::size_t stride, std::size_t pad) {
    check_open("conv2d");
    Tensor out = viewset::conv2d(node(x).value, node(kernels).value, node(bias).value, stride, pad);
    bool rg = node(x).requires_grad || node(kernels).requires_grad || node(bias).requires_grad;
    Val v = push(std::move(out), rg, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, x, kernels, bias, v, stride, pad] {
            const Tensor& g = nodes_[v.id].grad;
            const Tensor& xv = nodes_[x.id].value;
            const Tensor& kv = nodes_[kernels.id].value;
            std::size_t c_in = xv.extent(0), h = xv.extent(1), w = xv.extent(2);
            std::size_t c_out = kv.extent(0), k = kv.extent(2);
            std::size_t ho = g.extent(1), wo = g.extent(2);
            bool need_x = nodes_[x.id].requires_grad;
            bool need_k = nodes_[kernels.id].requires_grad;
            bool need_b = nodes_[bias.id].requires_grad;
            Tensor* dx = need_x ? &nodes_[x.id].grad : nullptr;
            Tensor* dk = need_k ? &nodes_[kernels.id].grad : nullptr;
            Tensor* db = need_b ? &nodes_[bias.id].grad : nullptr;
            for (std::size_t co = 0; co < c_out; ++co)
                for (std::size_t oy = 0; oy < ho; ++oy)
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        double gv = g.at3(co, oy, ox);
                        if (db) (*db)[co] += gv;
                        if (gv == 0.0 || (!dx && !dk)) continue;
                        for (std::size_t ci = 0; ci < c_in; ++ci)
                            for (std::size_t ky = 0; ky < k; ++ky) {
                                long long iy = static_cast<long long>(oy * stride + ky) -
                                               static_cast<long long>(pad);
                                if (iy < 0 || iy >= static_cast<long long>(h)) continue;
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    long long ix = static_cast<long long>(ox * stride + kx) -
                                                   static_cast<long long>(pad);
                                    if (ix < 0 || ix >= static_cast<long long>(w)) continue;
                                    auto yy = static_cast<std::size_t>(iy);
                                    auto xx2 = static_cast<std::size_t>(ix);
                                    std::size_t kidx = ((co * c_in + ci) * k + ky) * k + kx;
                                    if (dk) (*dk)[kidx] += gv * xv.at3(ci, yy, xx2);
                                    if (dx) dx->at3(ci, yy, xx2) += gv * kv[kidx];
                                }
                            }
                    }
        };
    }
    return v;
}

Val Graph::max_pool2d(Val x, std::size_t k, std::size_t stride, std::size_t pad) {
    check_open("max_pool2d");
    std::vector<std::size_t> idx;
    Tensor out = viewset::max_pool2d(node(x).value, k, stride, pad,
                                     node(x).requires_grad ? &idx : nullptr);
    Val v = push(std::move(out), node(x).requires_grad, nullptr);
    if (node(v).requires_grad) {
        node(v).back = [this, x, v, idx = std::move(idx)] {
            const Tensor& g = nodes_[v.id].grad;
            Tensor& dx = nodes_[x.id].grad;
            for (std::size_t o = 0; o < g.size(); ++o) dx[idx[o]] += g[o];
        };
    }
    return v;
}

Val Graph::batch_norm2d(Val x, Val gain, Val bias, Tensor& running_mean, Tensor& running_var,
                        double momentum, double eps) {
    check_open("batch_norm2d");
    const Tensor& xv = node(x).value;
    if (xv.rank() != 3) throw DimensionError("batch_norm2d: input must be rank 3");
    std::size_t c = xv.extent(0), h = xv.extent(1), w = xv.extent(2);
    std::size_t m = h * w;
    if (node(gain).value.size() != c || node(bias).value.size() != c ||
        running_mean.size() != c || running_var.size() != c)
        throw DimensionError("batch_norm2d: per-channel vectors do not match channel count");
    const Tensor& gv = node(gain).value;
    const Tensor& bv = node(bias).value;

    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    std::vector<double> inv(c);

    if (training) {
        for (std::size_t ci = 0; ci < c; ++ci) {
            double mean = 0.0;
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx) mean += xv.at3(ci, y, xx);
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx) {
                    double d = xv.at3(ci, y, xx) - mean;
                    var += d * d;
                }
            var /= static_cast<double>(m);
            inv[ci] = 1.0 / std::sqrt(var + eps);
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx) {
                    double xh = (xv.at3(ci, y, xx) - mean) * inv[ci];
                    xhat.at3(ci, y, xx) = xh;
                    out.at3(ci, y, xx) = gv[ci] * xh + bv[ci];
                }
            double var_running = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1)
                                       : var;
            running_mean[ci] = (1.0 - momentum) * running_mean[ci] + momentum * mean;
            running_var[ci] = (1.0 - momentum) * running_var[ci] + momentum * var_running;
        }
    } else {
        for (std::size_t ci = 0; ci < c; ++ci) {
            inv[ci] = 1.0 / std::sqrt(running_var[ci] + eps);
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx) {
                    double xh = (xv.at3(ci, y, xx) - running_mean[ci]) * inv[ci];
                    xhat.at3(ci, y, xx) = xh;
                    out.at3(ci, y, xx) = gv[ci] * xh + bv[ci];
                }
        }
    }
    out.ensure_finite("batch_norm2d");

    bool rg = node(x).requires_grad || node(gain).requires_grad || node(bias).requires_grad;
    Val v = push(std::move(out), rg, nullptr);
    if (node(v).requires_grad) {
        bool spatial_stats = training;
        node(v).back = [this, x, gain, bias, v, xhat = std::move(xhat), inv = std::move(inv),
                        spatial_stats] {
            const Tensor& g = nodes_[v.id].grad;
            const Tensor& gv2 = nodes_[gain.id].value;
            std::size_t c2 = g.extent(0), h2 = g.extent(1), w2 = g.extent(2);
            double m2 = static_cast<double>(h2 * w2);
            for (std::size_t ci = 0; ci < c2; ++ci) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (std::size_t y = 0; y < h2; ++y)
                    for (std::size_t xx = 0; xx < w2; ++xx) {
                        sum_g += g.at3(ci, y, xx);
                        sum_gx += g.at3(ci, y, xx) * xhat.at3(ci, y, xx);
                    }
                if (nodes_[gain.id].requires_grad) nodes_[gain.id].grad[ci] += sum_gx;
                if (nodes_[bias.id].requires_grad) nodes_[bias.id].grad[ci] += sum_g;
                if (nodes_[x.id].requires_grad) {
                    Tensor& dx = nodes_[x.id].grad;
                    for (std::size_t y = 0; y < h2; ++y)
                        for (std::size_t xx = 0; xx < w2; ++xx) {
                            double dxh = g.at3(ci, y, xx) * gv2[ci];
                            if (spatial_stats) {
                                dx.at3(ci, y, xx) +=
                                    inv[ci] / m2 *
                                    (m2 * dxh - gv2[ci] * sum_g -
                                     xhat.at3(ci, y, xx) * gv2[ci] * sum_gx);
                            } else {
                                dx.at3(ci, y, xx) += dxh * inv[ci];
                            }
                        }
                }
            }
        };
    }
    return v;
}

void Graph::backward(Val loss) {
    if (!grad_enabled_) throw StateError("backward called on a gradient-disabled graph");
    check_open("backward");
    Node& ln = node(loss);
    if (ln.value.size() != 1)
        throw ContractError("backward requires a scalar loss, got shape " + ln.value.shape_str());
    if (!ln.requires_grad)
        throw ContractError("backward: loss does not depend on any parameter");

    ln.grad.fill(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.back) n.back();
    }
    for (Node& n : nodes_) {
        if (n.bound) add_into(n.bound->grad, n.grad);
        n.back = nullptr;
    }
    consumed_ = true;
}

double grad_check(const std::function<double(bool)>& build, std::vector<Parameter*> params,
                  double step, const std::function<void()>& post_backward) {
    if (step <= 0.0) throw InputError("grad_check: step must be positive");
    if (params.empty()) throw InputError("grad_check: no parameters to check");

    double base1 = build(false);
    double base2 = build(false);
    if (std::memcmp(&base1, &base2, sizeof(double)) != 0)
        throw DeterminismError("grad_check: closure is not deterministic (baseline losses differ)");

    for (Parameter* p : params) p->zero_grad();
    build(true);
    if (post_backward) post_backward();

    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->grad);

    double max_err = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& v = params[pi]->value;
        for (std::size_t i = 0; i < v.size(); ++i) {
            double orig = v[i];
            v[i] = orig + step;
            double lp = build(false);
            v[i] = orig - step;
            double lm = build(false);
            v[i] = orig;
            double numeric = (lp - lm) / (2.0 * step);
            double a = analytic[pi][i];
            double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

} // namespace viewset
