#include "framecast/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace framecast::ad {

namespace {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatrixRM>;
using CMapM = Eigen::Map<const MatrixRM>;

[[noreturn]] void shape_error(const char* op, const Tensor& a) {
    throw std::invalid_argument(std::string(op) + ": unexpected shape " +
                                Tensor::shape_str(a.shape()));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    Tensor::shape_str(a.shape()) + " vs " +
                                    Tensor::shape_str(b.shape()));
    }
}

Tensor& grad_ref(Tape& t, int id) { return t.node(id).grad; }

Var wrap(Tape& t, int id) { return Var(&t, id); }

}  // namespace

Var Tape::constant(Tensor value) {
    return Var(this, add_node(std::move(value), {}, nullptr));
}

Var Tape::param(Param& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var(this, it->second);
    const int id = add_node(p.value, {}, nullptr);
    param_nodes_.emplace(&p, id);
    return Var(this, id);
}

int Tape::add_node(Tensor value, std::vector<int> parents,
                   std::function<void(Tape&, int)> backward) {
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(parents), std::move(backward)});
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::backward(Var root) {
    if (root.tape() != this) throw std::logic_error("backward: root from another tape");
    if (value(root).size() != 1) throw std::logic_error("backward: root must be scalar");
    for (auto& n : nodes_) n.grad = Tensor(n.value.shape());
    nodes_[static_cast<size_t>(root.id())].grad[0] = 1.0;
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
        auto& n = nodes_[static_cast<size_t>(id)];
        if (n.backward) n.backward(*this, id);
    }
}

Tensor Tape::grad_of(const Param& p) const {
    auto it = param_nodes_.find(&p);
    if (it == param_nodes_.end()) return Tensor(p.value.shape());
    const Tensor& g = nodes_[static_cast<size_t>(it->second)].grad;
    return g.empty() ? Tensor(p.value.shape()) : g;
}

// ---- elementwise ------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Var unary_op(const char* /*name*/, Var a, Fwd fwd, Bwd bwd) {
    Tape& t = *a.tape();
    const Tensor& av = t.value(a);
    Tensor out(av.shape());
    for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    const int pid = a.id();
    const int id = t.add_node(std::move(out), {pid}, [pid, bwd](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        const Tensor& x = tp.node(pid).value;
        const Tensor& y = tp.node(self).value;
        Tensor& pg = grad_ref(tp, pid);
        for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * bwd(x[i], y[i]);
    });
    return wrap(t, id);
}

}  // namespace

Var add(Var a, Var b) {
    Tape& t = *a.tape();
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_same_shape("add", av, bv);
    Tensor out(av.shape());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    const int pa = a.id(), pb = b.id();
    const int id = t.add_node(std::move(out), {pa, pb}, [pa, pb](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        Tensor& ga = grad_ref(tp, pa);
        Tensor& gb = grad_ref(tp, pb);
        for (size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
    return wrap(t, id);
}

Var sub(Var a, Var b) {
    Tape& t = *a.tape();
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_same_shape("sub", av, bv);
    Tensor out(av.shape());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    const int pa = a.id(), pb = b.id();
    const int id = t.add_node(std::move(out), {pa, pb}, [pa, pb](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        Tensor& ga = grad_ref(tp, pa);
        Tensor& gb = grad_ref(tp, pb);
        for (size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
    return wrap(t, id);
}

Var mul(Var a, Var b) {
    Tape& t = *a.tape();
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_same_shape("mul", av, bv);
    Tensor out(av.shape());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    const int pa = a.id(), pb = b.id();
    const int id = t.add_node(std::move(out), {pa, pb}, [pa, pb](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        const Tensor& x = tp.node(pa).value;
        const Tensor& y = tp.node(pb).value;
        Tensor& ga = grad_ref(tp, pa);
        Tensor& gb = grad_ref(tp, pb);
        for (size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * y[i];
            gb[i] += g[i] * x[i];
        }
    });
    return wrap(t, id);
}

Var affine(Var a, double s, double c) {
    return unary_op("affine", a, [s, c](double x) { return s * x + c; },
                    [s](double, double) { return s; });
}

Var leaky_relu(Var a, double negative_slope) {
    return unary_op(
        "leaky_relu", a,
        [negative_slope](double x) { return x > 0.0 ? x : negative_slope * x; },
        [negative_slope](double x, double) { return x > 0.0 ? 1.0 : negative_slope; });
}

Var relu(Var a) { return leaky_relu(a, 0.0); }

Var sigmoid(Var a) {
    return unary_op(
        "sigmoid", a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh_(Var a) {
    return unary_op("tanh", a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

Var abs_(Var a) {
    return unary_op("abs", a, [](double x) { return std::abs(x); },
                    [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var log_clamped(Var a, double eps) {
    return unary_op(
        "log_clamped", a,
        [eps](double x) { return std::log(x > eps ? x : eps); },
        [eps](double x, double) { return x > eps ? 1.0 / x : 0.0; });
}

Var stop_gradient(Var a) {
    Tape& t = *a.tape();
    return wrap(t, t.add_node(t.value(a), {}, nullptr));
}

// ---- shape --------------------------------------------------------------------

Var reshape(Var a, std::vector<int> shape) {
    Tape& t = *a.tape();
    Tensor out = t.value(a).reshaped(shape);
    const int pid = a.id();
    const int id = t.add_node(std::move(out), {pid}, [pid](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        Tensor& pg = grad_ref(tp, pid);
        for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    });
    return wrap(t, id);
}

Var concat_cols(Var a, Var b) {
    Tape& t = *a.tape();
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0)) {
        shape_error("concat_cols", av);
    }
    const int n = av.dim(0), wa = av.dim(1), wb = bv.dim(1);
    Tensor out({n, wa + wb});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < wa; ++j) out.at(i, j) = av.at(i, j);
        for (int j = 0; j < wb; ++j) out.at(i, wa + j) = bv.at(i, j);
    }
    const int pa = a.id(), pb = b.id();
    const int id =
        t.add_node(std::move(out), {pa, pb}, [pa, pb, n, wa, wb](Tape& tp, int self) {
            const Tensor& g = tp.node(self).grad;
            Tensor& ga = grad_ref(tp, pa);
            Tensor& gb = grad_ref(tp, pb);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < wa; ++j) ga.at(i, j) += g.at(i, j);
                for (int j = 0; j < wb; ++j) gb.at(i, j) += g.at(i, wa + j);
            }
        });
    return wrap(t, id);
}

Var slice_cols(Var a, int start, int len) {
    Tape& t = *a.tape();
    const Tensor& av = t.value(a);
    if (av.rank() != 2 || start < 0 || start + len > av.dim(1)) shape_error("slice_cols", av);
    const int n = av.dim(0);
    Tensor out({n, len});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < len; ++j) out.at(i, j) = av.at(i, start + j);
    }
    const int pid = a.id();
    const int id = t.add_node(std::move(out), {pid}, [pid, start, len, n](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        Tensor& pg = grad_ref(tp, pid);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < len; ++j) pg.at(i, start + j) += g.at(i, j);
        }
    });
    return wrap(t, id);
}

Var gather_rows(Var a, std::vector<int> rows) {
    Tape& t = *a.tape();
    const Tensor& av = t.value(a);
    if (av.rank() != 2) shape_error("gather_rows", av);
    const int d = av.dim(1);
    Tensor out({static_cast<int>(rows.size()), d});
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= av.dim(0)) shape_error("gather_rows", av);
        for (int j = 0; j < d; ++j) out.at(static_cast<int>(i), j) = av.at(rows[i], j);
    }
    const int pid = a.id();
    const int id = t.add_node(std::move(out), {pid},
                              [pid, rows = std::move(rows), d](Tape& tp, int self) {
                                  const Tensor& g = tp.node(self).grad;
                                  Tensor& pg = grad_ref(tp, pid);
                                  for (size_t i = 0; i < rows.size(); ++i) {
                                      for (int j = 0; j < d; ++j) {
                                          pg.at(rows[i], j) += g.at(static_cast<int>(i), j);
                                      }
                                  }
                              });
    return wrap(t, id);
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
    Tape& t = *parts[0].tape();
    const int d = t.value(parts[0]).dim(1);
    int total = 0;
    std::vector<int> ids;
    for (const Var& p : parts) {
        const Tensor& pv = t.value(p);
        if (pv.rank() != 2 || pv.dim(1) != d) shape_error("concat_rows", pv);
        total += pv.dim(0);
        ids.push_back(p.id());
    }
    Tensor out({total, d});
    int row = 0;
    for (const Var& p : parts) {
        const Tensor& pv = t.value(p);
        for (int i = 0; i < pv.dim(0); ++i, ++row) {
            for (int j = 0; j < d; ++j) out.at(row, j) = pv.at(i, j);
        }
    }
    const int id =
        t.add_node(std::move(out), ids, [ids, d](Tape& tp, int self) {
            const Tensor& g = tp.node(self).grad;
            int row = 0;
            for (int pid : ids) {
                Tensor& pg = grad_ref(tp, pid);
                for (int i = 0; i < pg.dim(0); ++i, ++row) {
                    for (int j = 0; j < d; ++j) pg.at(i, j) += g.at(row, j);
                }
            }
        });
    return wrap(t, id);
}

// ---- linear algebra --------------------------------------------------------------

Var matmul(Var a, Var b) {
    Tape& t = *a.tape();
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        throw std::invalid_argument("matmul: incompatible shapes " +
                                    Tensor::shape_str(av.shape()) + " x " +
                                    Tensor::shape_str(bv.shape()));
    }
    const int n = av.dim(0), k = av.dim(1), m = bv.dim(1);
    Tensor out({n, m});
    MapM(out.data(), n, m) = CMapM(av.data(), n, k) * CMapM(bv.data(), k, m);
    const int pa = a.id(), pb = b.id();
    const int id = t.add_node(std::move(out), {pa, pb}, [pa, pb, n, k, m](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        const Tensor& x = tp.node(pa).value;
        const Tensor& y = tp.node(pb).value;
        MapM(grad_ref(tp, pa).data(), n, k) += CMapM(g.data(), n, m) * CMapM(y.data(), k, m).transpose();
        MapM(grad_ref(tp, pb).data(), k, m) += CMapM(x.data(), n, k).transpose() * CMapM(g.data(), n, m);
    });
    return wrap(t, id);
}

Var linear(Var x, Var weight, Var bias) {
    Tape& t = *x.tape();
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(weight);
    const Tensor& bv = t.value(bias);
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0) || bv.size() != static_cast<size_t>(wv.dim(1))) {
        throw std::invalid_argument("linear: incompatible shapes");
    }
    const int n = xv.dim(0), a = xv.dim(1), b = wv.dim(1);
    Tensor out({n, b});
    MapM o(out.data(), n, b);
    o = CMapM(xv.data(), n, a) * CMapM(wv.data(), a, b);
    o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data(), b);
    const int px = x.id(), pw = weight.id(), pbias = bias.id();
    const int id = t.add_node(std::move(out), {px, pw, pbias},
                              [px, pw, pbias, n, a, b](Tape& tp, int self) {
                                  const Tensor& g = tp.node(self).grad;
                                  const Tensor& xval = tp.node(px).value;
                                  const Tensor& wval = tp.node(pw).value;
                                  CMapM gm(g.data(), n, b);
                                  MapM(grad_ref(tp, px).data(), n, a) +=
                                      gm * CMapM(wval.data(), a, b).transpose();
                                  MapM(grad_ref(tp, pw).data(), a, b) +=
                                      CMapM(xval.data(), n, a).transpose() * gm;
                                  Eigen::Map<Eigen::RowVectorXd>(grad_ref(tp, pbias).data(), b) +=
                                      gm.colwise().sum();
                              });
    return wrap(t, id);
}

// ---- reductions --------------------------------------------------------------------

Var sum(Var a) {
    Tape& t = *a.tape();
    const Tensor& av = t.value(a);
    double s = 0.0;
    for (size_t i = 0; i < av.size(); ++i) s += av[i];
    const int pid = a.id();
    const int id = t.add_node(Tensor::scalar(s), {pid}, [pid](Tape& tp, int self) {
        const double g = tp.node(self).grad[0];
        Tensor& pg = grad_ref(tp, pid);
        for (size_t i = 0; i < pg.size(); ++i) pg[i] += g;
    });
    return wrap(t, id);
}

Var mean(Var a) {
    Tape& t = *a.tape();
    const Tensor& av = t.value(a);
    const double inv = 1.0 / static_cast<double>(av.size());
    double s = 0.0;
    for (size_t i = 0; i < av.size(); ++i) s += av[i];
    const int pid = a.id();
    const int id = t.add_node(Tensor::scalar(s * inv), {pid}, [pid, inv](Tape& tp, int self) {
        const double g = tp.node(self).grad[0] * inv;
        Tensor& pg = grad_ref(tp, pid);
        for (size_t i = 0; i < pg.size(); ++i) pg[i] += g;
    });
    return wrap(t, id);
}

Var row_norm(Var a, double eps) {
    Tape& t = *a.tape();
    const Tensor& av = t.value(a);
    if (av.rank() != 2) shape_error("row_norm", av);
    const int n = av.dim(0), d = av.dim(1);
    Tensor out({n, 1});
    for (int i = 0; i < n; ++i) {
        double s = eps;
        for (int j = 0; j < d; ++j) s += av.at(i, j) * av.at(i, j);
        out.at(i, 0) = std::sqrt(s);
    }
    const int pid = a.id();
    const int id = t.add_node(std::move(out), {pid}, [pid, n, d](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        const Tensor& x = tp.node(pid).value;
        const Tensor& r = tp.node(self).value;
        Tensor& pg = grad_ref(tp, pid);
        for (int i = 0; i < n; ++i) {
            const double scale = g.at(i, 0) / r.at(i, 0);
            for (int j = 0; j < d; ++j) pg.at(i, j) += scale * x.at(i, j);
        }
    });
    return wrap(t, id);
}

// ---- convolution ---------------------------------------------------------------------

namespace {

// col has C*K*K rows and OH*OW columns; geometry follows a conv that maps
// (C,H,W) to (OH,OW) patches.
void im2col(const double* im, int c_count, int h, int w, int k, int stride, int pad, int oh,
            int ow, double* col) {
    const int cols = oh * ow;
    for (int c = 0; c < c_count; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* dst = col + (static_cast<size_t>(c) * k * k + ky * k + kx) * cols;
                for (int oy = 0; oy < oh; ++oy) {
                    const int sy = oy * stride - pad + ky;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int sx = ox * stride - pad + kx;
                        dst[oy * ow + ox] =
                            (sy >= 0 && sy < h && sx >= 0 && sx < w)
                                ? im[(static_cast<size_t>(c) * h + sy) * w + sx]
                                : 0.0;
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: accumulates into im.
void col2im(const double* col, int c_count, int h, int w, int k, int stride, int pad, int oh,
            int ow, double* im) {
    const int cols = oh * ow;
    for (int c = 0; c < c_count; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* src = col + (static_cast<size_t>(c) * k * k + ky * k + kx) * cols;
                for (int oy = 0; oy < oh; ++oy) {
                    const int sy = oy * stride - pad + ky;
                    if (sy < 0 || sy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int sx = ox * stride - pad + kx;
                        if (sx < 0 || sx >= w) continue;
                        im[(static_cast<size_t>(c) * h + sy) * w + sx] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(Var x, Var kernel, Var bias, int stride, int pad) {
    Tape& t = *x.tape();
    const Tensor& xv = t.value(x);
    const Tensor& kv = t.value(kernel);
    const Tensor& bv = t.value(bias);
    if (xv.rank() != 4 || kv.rank() != 4 || xv.dim(1) != kv.dim(1) || kv.dim(2) != kv.dim(3) ||
        bv.size() != static_cast<size_t>(kv.dim(0))) {
        throw std::invalid_argument("conv2d: incompatible shapes");
    }
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int f = kv.dim(0), k = kv.dim(2);
    const int oh = conv_out_size(h, k, stride, pad), ow = conv_out_size(w, k, stride, pad);
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: output would be empty");

    Tensor out({n, f, oh, ow});
    const int patch = c * k * k, cols = oh * ow;
    std::vector<double> col(static_cast<size_t>(patch) * cols);
    CMapM kmat(kv.data(), f, patch);
    for (int i = 0; i < n; ++i) {
        im2col(xv.data() + static_cast<size_t>(i) * c * h * w, c, h, w, k, stride, pad, oh, ow,
               col.data());
        MapM om(out.data() + static_cast<size_t>(i) * f * cols, f, cols);
        om = kmat * CMapM(col.data(), patch, cols);
        om.colwise() += Eigen::Map<const Eigen::VectorXd>(bv.data(), f);
    }
    const int px = x.id(), pk = kernel.id(), pb = bias.id();
    const int id = t.add_node(
        std::move(out), {px, pk, pb},
        [px, pk, pb, n, c, h, w, f, k, stride, pad, oh, ow](Tape& tp, int self) {
            const Tensor& g = tp.node(self).grad;
            const Tensor& xval = tp.node(px).value;
            const Tensor& kval = tp.node(pk).value;
            Tensor& gx = grad_ref(tp, px);
            Tensor& gk = grad_ref(tp, pk);
            Tensor& gb = grad_ref(tp, pb);
            const int patch = c * k * k, cols = oh * ow;
            std::vector<double> col(static_cast<size_t>(patch) * cols);
            std::vector<double> dcol(static_cast<size_t>(patch) * cols);
            CMapM kmat(kval.data(), f, patch);
            MapM gkmat(gk.data(), f, patch);
            Eigen::Map<Eigen::VectorXd> gbv(gb.data(), f);
            for (int i = 0; i < n; ++i) {
                CMapM gm(g.data() + static_cast<size_t>(i) * f * cols, f, cols);
                im2col(xval.data() + static_cast<size_t>(i) * c * h * w, c, h, w, k, stride, pad,
                       oh, ow, col.data());
                gkmat += gm * CMapM(col.data(), patch, cols).transpose();
                gbv += gm.rowwise().sum();
                MapM(dcol.data(), patch, cols) = kmat.transpose() * gm;
                col2im(dcol.data(), c, h, w, k, stride, pad, oh, ow,
                       gx.data() + static_cast<size_t>(i) * c * h * w);
            }
        });
    return wrap(t, id);
}

Var conv2d_transpose(Var x, Var kernel, Var bias, int stride, int pad, int out_h, int out_w) {
    Tape& t = *x.tape();
    const Tensor& xv = t.value(x);
    const Tensor& kv = t.value(kernel);
    const Tensor& bv = t.value(bias);
    // kernel: (C_in, F, K, K); the adjoint conv maps (F,out_h,out_w) -> (C_in,h,w).
    if (xv.rank() != 4 || kv.rank() != 4 || xv.dim(1) != kv.dim(0) || kv.dim(2) != kv.dim(3) ||
        bv.size() != static_cast<size_t>(kv.dim(1))) {
        throw std::invalid_argument("conv2d_transpose: incompatible shapes");
    }
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int f = kv.dim(1), k = kv.dim(2);
    if (conv_out_size(out_h, k, stride, pad) != h || conv_out_size(out_w, k, stride, pad) != w) {
        throw std::invalid_argument("conv2d_transpose: output size incompatible with input");
    }

    Tensor out({n, f, out_h, out_w});
    const int patch = f * k * k, cols = h * w;
    std::vector<double> col(static_cast<size_t>(patch) * cols);
    CMapM kmat(kv.data(), c, patch);
    for (int i = 0; i < n; ++i) {
        MapM(col.data(), patch, cols) =
            kmat.transpose() * CMapM(xv.data() + static_cast<size_t>(i) * c * cols, c, cols);
        double* oi = out.data() + static_cast<size_t>(i) * f * out_h * out_w;
        col2im(col.data(), f, out_h, out_w, k, stride, pad, h, w, oi);
        for (int ch = 0; ch < f; ++ch) {
            const double b = bv[static_cast<size_t>(ch)];
            double* p = oi + static_cast<size_t>(ch) * out_h * out_w;
            for (int j = 0; j < out_h * out_w; ++j) p[j] += b;
        }
    }
    const int px = x.id(), pk = kernel.id(), pb = bias.id();
    const int id = t.add_node(
        std::move(out), {px, pk, pb},
        [px, pk, pb, n, c, h, w, f, k, stride, pad, out_h, out_w](Tape& tp, int self) {
            const Tensor& g = tp.node(self).grad;
            const Tensor& xval = tp.node(px).value;
            const Tensor& kval = tp.node(pk).value;
            Tensor& gx = grad_ref(tp, px);
            Tensor& gk = grad_ref(tp, pk);
            Tensor& gb = grad_ref(tp, pb);
            const int patch = f * k * k, cols = h * w;
            std::vector<double> gcol(static_cast<size_t>(patch) * cols);
            CMapM kmat(kval.data(), c, patch);
            MapM gkmat(gk.data(), c, patch);
            for (int i = 0; i < n; ++i) {
                const double* gi = g.data() + static_cast<size_t>(i) * f * out_h * out_w;
                im2col(gi, f, out_h, out_w, k, stride, pad, h, w, gcol.data());
                CMapM gcolm(gcol.data(), patch, cols);
                MapM(gx.data() + static_cast<size_t>(i) * c * cols, c, cols) += kmat * gcolm;
                gkmat += CMapM(xval.data() + static_cast<size_t>(i) * c * cols, c, cols) *
                         gcolm.transpose();
                for (int ch = 0; ch < f; ++ch) {
                    double s = 0.0;
                    const double* p = gi + static_cast<size_t>(ch) * out_h * out_w;
                    for (int j = 0; j < out_h * out_w; ++j) s += p[j];
                    gb[static_cast<size_t>(ch)] += s;
                }
            }
        });
    return wrap(t, id);
}

Var upsample_nearest(Var x, int out_h, int out_w) {
    Tape& t = *x.tape();
    const Tensor& xv = t.value(x);
    if (xv.rank() != 4) throw std::invalid_argument("upsample_nearest: want NCHW input");
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (out_h < h || out_w < w) {
        throw std::invalid_argument("upsample_nearest: target smaller than input");
    }
    Tensor out({n, c, out_h, out_w});
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            const double* src = xv.data() + (static_cast<size_t>(i) * c + ch) * h * w;
            double* dst = out.data() + (static_cast<size_t>(i) * c + ch) * out_h * out_w;
            for (int oy = 0; oy < out_h; ++oy) {
                const int sy = oy * h / out_h;
                for (int ox = 0; ox < out_w; ++ox) {
                    const int sx = ox * w / out_w;
                    dst[oy * out_w + ox] = src[sy * w + sx];
                }
            }
        }
    }
    const int pid = x.id();
    const int id = t.add_node(
        std::move(out), {pid}, [pid, n, c, h, w, out_h, out_w](Tape& tp, int self) {
            const Tensor& g = tp.node(self).grad;
            Tensor& pg = grad_ref(tp, pid);
            for (int i = 0; i < n; ++i) {
                for (int ch = 0; ch < c; ++ch) {
                    const double* src = g.data() + (static_cast<size_t>(i) * c + ch) * out_h * out_w;
                    double* dst = pg.data() + (static_cast<size_t>(i) * c + ch) * h * w;
                    for (int oy = 0; oy < out_h; ++oy) {
                        const int sy = oy * h / out_h;
                        for (int ox = 0; ox < out_w; ++ox) {
                            dst[sy * w + ox * w / out_w] += src[oy * out_w + ox];
                        }
                    }
                }
            }
        });
    return wrap(t, id);
}

Var instance_norm(Var x, Var gamma, Var beta, double eps) {
    Tape& t = *x.tape();
    const Tensor& xv = t.value(x);
    const Tensor& gv = t.value(gamma);
    const Tensor& bv = t.value(beta);
    if (xv.rank() != 4 || gv.size() != static_cast<size_t>(xv.dim(1)) || !gv.same_shape(bv)) {
        throw std::invalid_argument("instance_norm: incompatible shapes");
    }
    const int n = xv.dim(0), c = xv.dim(1), m = xv.dim(2) * xv.dim(3);
    Tensor out(xv.shape());
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            const double* src = xv.data() + (static_cast<size_t>(i) * c + ch) * m;
            double* dst = out.data() + (static_cast<size_t>(i) * c + ch) * m;
            double mu = 0.0;
            for (int j = 0; j < m; ++j) mu += src[j];
            mu /= m;
            double var = 0.0;
            for (int j = 0; j < m; ++j) var += (src[j] - mu) * (src[j] - mu);
            var /= m;
            const double inv = 1.0 / std::sqrt(var + eps);
            const double gscale = gv[static_cast<size_t>(ch)];
            const double bshift = bv[static_cast<size_t>(ch)];
            for (int j = 0; j < m; ++j) dst[j] = (src[j] - mu) * inv * gscale + bshift;
        }
    }
    const int px = x.id(), pg = gamma.id(), pb = beta.id();
    const int id = t.add_node(
        std::move(out), {px, pg, pb}, [px, pg, pb, n, c, m, eps](Tape& tp, int self) {
            const Tensor& g = tp.node(self).grad;
            const Tensor& xval = tp.node(px).value;
            const Tensor& gammav = tp.node(pg).value;
            Tensor& gx = grad_ref(tp, px);
            Tensor& ggamma = grad_ref(tp, pg);
            Tensor& gbeta = grad_ref(tp, pb);
            for (int i = 0; i < n; ++i) {
                for (int ch = 0; ch < c; ++ch) {
                    const size_t base = (static_cast<size_t>(i) * c + ch) * m;
                    const double* src = xval.data() + base;
                    const double* gg = g.data() + base;
                    double mu = 0.0;
                    for (int j = 0; j < m; ++j) mu += src[j];
                    mu /= m;
                    double var = 0.0;
                    for (int j = 0; j < m; ++j) var += (src[j] - mu) * (src[j] - mu);
                    var /= m;
                    const double inv = 1.0 / std::sqrt(var + eps);
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (int j = 0; j < m; ++j) {
                        const double xhat = (src[j] - mu) * inv;
                        sum_g += gg[j];
                        sum_gx += gg[j] * xhat;
                    }
                    ggamma[static_cast<size_t>(ch)] += sum_gx;
                    gbeta[static_cast<size_t>(ch)] += sum_g;
                    const double gscale = gammav[static_cast<size_t>(ch)] * inv;
                    const double mg = sum_g / m, mgx = sum_gx / m;
                    double* dst = gx.data() + base;
                    for (int j = 0; j < m; ++j) {
                        const double xhat = (src[j] - mu) * inv;
                        dst[j] += gscale * (gg[j] - mg - xhat * mgx);
                    }
                }
            }
        });
    return wrap(t, id);
}

}  // namespace framecast::ad
