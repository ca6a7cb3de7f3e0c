#include "nfad/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "nfad/linalg.hpp"

namespace nfad {

namespace {

std::atomic<uint64_t> g_next_id{1};
thread_local int t_no_grad_depth = 0;
thread_local std::string t_layer_label;

bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

// c[m,n] += a[m,k] @ b[k,n]
void mm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m,k] += a[m,n] @ b[k,n]^T
void mm_nt_acc(const double* a, const double* b, double* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * n;
        double* ci = c + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double* bp = b + static_cast<size_t>(p) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += ai[j] * bp[j];
            ci[p] += acc;
        }
    }
}

// c[k,n] += a[m,k]^T @ b[m,n]
void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        const double* bi = b + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            double av = ai[p];
            if (av == 0.0) continue;
            double* cp = c + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

void require(bool ok, const char* msg) {
    if (!ok) throw ShapeError(msg);
}

} // namespace

int64_t shape_size(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

NoGradGuard::NoGradGuard() { ++t_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --t_no_grad_depth; }
bool grad_enabled() { return t_no_grad_depth == 0; }

LayerScope::LayerScope(std::string name) : prev_(t_layer_label) { t_layer_label = std::move(name); }
LayerScope::~LayerScope() { t_layer_label = prev_; }

Tensor make_node(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                 std::function<void(TensorNode&)> backprop, const char* op) {
    auto n = std::make_shared<TensorNode>();
    if (shape_size(shape) != static_cast<int64_t>(value.size()))
        throw ShapeError(std::string(op) + ": shape/data mismatch");
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    n->label = t_layer_label.empty() ? std::string(op) : t_layer_label + "/" + op;
    bool rg = false;
    if (t_no_grad_depth == 0) {
        for (const auto& t : inputs) {
            if (t.defined() && t.requires_grad()) {
                rg = true;
                break;
            }
        }
    }
    if (rg) {
        n->requires_grad = true;
        n->inputs.reserve(inputs.size());
        for (const auto& t : inputs) n->inputs.push_back(t.node_ptr());
        n->backprop = std::move(backprop);
    }
    return Tensor(n);
}

Tensor Tensor::constant(Shape shape, std::vector<double> value) {
    return make_node(std::move(shape), std::move(value), {}, {}, "const");
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::zeros(const Shape& shape) {
    return constant(shape, std::vector<double>(shape_size(shape), 0.0));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> value) {
    Tensor t = make_node(std::move(shape), std::move(value), {}, {}, "param");
    t.node_->requires_grad = true;
    return t;
}

std::vector<double>& Tensor::mutable_value() {
    if (node_->backprop) throw Error("mutable_value: only leaf tensors may be mutated");
    return node_->value;
}

const std::vector<double>& Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item: tensor is not a scalar");
    return node_->value[0];
}

void Tensor::check_finite() const {
    if (!all_finite(node_->value)) throw NonFiniteActivation(node_->label);
}

// ---- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "add: shape mismatch");
    std::vector<double> v(a.size());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
    return make_node(a.shape(), std::move(v), {a, b},
                     [](TensorNode& n) {
                         auto& ia = *n.inputs[0];
                         auto& ib = *n.inputs[1];
                         if (ia.requires_grad) {
                             ia.ensure_grad();
                             for (size_t i = 0; i < n.grad.size(); ++i) ia.grad[i] += n.grad[i];
                         }
                         if (ib.requires_grad) {
                             ib.ensure_grad();
                             for (size_t i = 0; i < n.grad.size(); ++i) ib.grad[i] += n.grad[i];
                         }
                     },
                     "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "sub: shape mismatch");
    std::vector<double> v(a.size());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
    return make_node(a.shape(), std::move(v), {a, b},
                     [](TensorNode& n) {
                         auto& ia = *n.inputs[0];
                         auto& ib = *n.inputs[1];
                         if (ia.requires_grad) {
                             ia.ensure_grad();
                             for (size_t i = 0; i < n.grad.size(); ++i) ia.grad[i] += n.grad[i];
                         }
                         if (ib.requires_grad) {
                             ib.ensure_grad();
                             for (size_t i = 0; i < n.grad.size(); ++i) ib.grad[i] -= n.grad[i];
                         }
                     },
                     "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "mul: shape mismatch");
    std::vector<double> v(a.size());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
    return make_node(a.shape(), std::move(v), {a, b},
                     [](TensorNode& n) {
                         auto& ia = *n.inputs[0];
                         auto& ib = *n.inputs[1];
                         if (ia.requires_grad) {
                             ia.ensure_grad();
                             for (size_t i = 0; i < n.grad.size(); ++i) ia.grad[i] += n.grad[i] * ib.value[i];
                         }
                         if (ib.requires_grad) {
                             ib.ensure_grad();
                             for (size_t i = 0; i < n.grad.size(); ++i) ib.grad[i] += n.grad[i] * ia.value[i];
                         }
                     },
                     "mul");
}

Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> v(a.size());
    const auto& av = a.value();
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] + c;
    return make_node(a.shape(), std::move(v), {a},
                     [](TensorNode& n) {
                         auto& ia = *n.inputs[0];
                         if (!ia.requires_grad) return;
                         ia.ensure_grad();
                         for (size_t i = 0; i < n.grad.size(); ++i) ia.grad[i] += n.grad[i];
                     },
                     "add_scalar");
}

Tensor mul_scalar(const Tensor& a, double c) {
    std::vector<double> v(a.size());
    const auto& av = a.value();
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] * c;
    return make_node(a.shape(), std::move(v), {a},
                     [c](TensorNode& n) {
                         auto& ia = *n.inputs[0];
                         if (!ia.requires_grad) return;
                         ia.ensure_grad();
                         for (size_t i = 0; i < n.grad.size(); ++i) ia.grad[i] += n.grad[i] * c;
                     },
                     "mul_scalar");
}

Tensor add_broadcast(const Tensor& a, const Tensor& s) {
    require(s.size() == 1, "add_broadcast: s must be one element");
    std::vector<double> v(a.size());
    const auto& av = a.value();
    double sv = s.value()[0];
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] + sv;
    return make_node(a.shape(), std::move(v), {a, s},
                     [](TensorNode& n) {
                         auto& ia = *n.inputs[0];
                         auto& is = *n.inputs[1];
                         if (ia.requires_grad) {
                             ia.ensure_grad();
                             for (size_t i = 0; i < n.grad.size(); ++i) ia.grad[i] += n.grad[i];
                         }
                         if (is.requires_grad) {
                             is.ensure_grad();
                             double acc = 0.0;
                             for (double g : n.grad) acc += g;
                             is.grad[0] += acc;
                         }
                     },
                     "add_broadcast");
}

// ---- unary ---------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd, const char* op) {
    std::vector<double> v(a.size());
    const auto& av = a.value();
    for (size_t i = 0; i < v.size(); ++i) v[i] = fwd(av[i]);
    std::vector<double> saved = v; // output values, for derivative reuse
    return make_node(a.shape(), std::move(v), {a},
                     [bwd, saved = std::move(saved)](TensorNode& n) {
                         auto& ia = *n.inputs[0];
                         if (!ia.requires_grad) return;
                         ia.ensure_grad();
                         for (size_t i = 0; i < n.grad.size(); ++i)
                             ia.grad[i] += n.grad[i] * bwd(ia.value[i], saved[i]);
                     },
                     op);
}

} // namespace

Tensor tanh(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; }, "tanh");
}

Tensor relu(const Tensor& a) {
    return unary_op(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

Tensor exp(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::exp(x); },
        [](double, double y) { return y; }, "exp");
}

Tensor log(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; }, "log");
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

// ---- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2, "matmul: rank-2 tensors required");
    int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
    require(k == k2, "matmul: inner dimension mismatch");
    std::vector<double> v(static_cast<size_t>(m) * n, 0.0);
    mm_acc(a.value().data(), b.value().data(), v.data(), m, k, n);
    return make_node({m, n}, std::move(v), {a, b},
                     [m, k, n](TensorNode& node) {
                         auto& ia = *node.inputs[0];
                         auto& ib = *node.inputs[1];
                         if (ia.requires_grad) {
                             ia.ensure_grad();
                             mm_nt_acc(node.grad.data(), ib.value.data(), ia.grad.data(), m, n, k);
                         }
                         if (ib.requires_grad) {
                             ib.ensure_grad();
                             mm_tn_acc(ia.value.data(), node.grad.data(), ib.grad.data(), m, k, n);
                         }
                     },
                     "matmul");
}

Tensor masked_matmul(const Tensor& x, const Tensor& w, const Tensor& mask) {
    require(x.shape().size() == 2 && w.shape().size() == 2, "masked_matmul: rank-2 tensors required");
    require(w.shape() == mask.shape(), "masked_matmul: mask shape mismatch");
    int m = x.shape()[0], k = x.shape()[1], n = w.shape()[1];
    require(k == w.shape()[0], "masked_matmul: inner dimension mismatch");
    std::vector<double> wm(w.size());
    const auto& wv = w.value();
    const auto& mv = mask.value();
    for (size_t i = 0; i < wm.size(); ++i) wm[i] = wv[i] * mv[i];
    std::vector<double> v(static_cast<size_t>(m) * n, 0.0);
    mm_acc(x.value().data(), wm.data(), v.data(), m, k, n);
    return make_node({m, n}, std::move(v), {x, w, mask},
                     [m, k, n](TensorNode& node) {
                         auto& ix = *node.inputs[0];
                         auto& iw = *node.inputs[1];
                         auto& im = *node.inputs[2];
                         if (ix.requires_grad) {
                             std::vector<double> wm(iw.value.size());
                             for (size_t i = 0; i < wm.size(); ++i) wm[i] = iw.value[i] * im.value[i];
                             ix.ensure_grad();
                             mm_nt_acc(node.grad.data(), wm.data(), ix.grad.data(), m, n, k);
                         }
                         if (iw.requires_grad) {
                             std::vector<double> dw(iw.value.size(), 0.0);
                             mm_tn_acc(ix.value.data(), node.grad.data(), dw.data(), m, k, n);
                             iw.ensure_grad();
                             for (size_t i = 0; i < dw.size(); ++i) iw.grad[i] += dw[i] * im.value[i];
                         }
                     },
                     "masked_matmul");
}

Tensor bias_add(const Tensor& x, const Tensor& b) {
    require(x.shape().size() == 2 && b.shape().size() == 1, "bias_add: [m,n] and [n] required");
    int m = x.shape()[0], n = x.shape()[1];
    require(b.shape()[0] == n, "bias_add: width mismatch");
    std::vector<double> v(x.value());
    const auto& bv = b.value();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) v[static_cast<size_t>(i) * n + j] += bv[j];
    return make_node({m, n}, std::move(v), {x, b},
                     [m, n](TensorNode& node) {
                         auto& ix = *node.inputs[0];
                         auto& ib = *node.inputs[1];
                         if (ix.requires_grad) {
                             ix.ensure_grad();
                             for (size_t i = 0; i < node.grad.size(); ++i) ix.grad[i] += node.grad[i];
                         }
                         if (ib.requires_grad) {
                             ib.ensure_grad();
                             for (int i = 0; i < m; ++i)
                                 for (int j = 0; j < n; ++j)
                                     ib.grad[j] += node.grad[static_cast<size_t>(i) * n + j];
                         }
                     },
                     "bias_add");
}

// ---- convolution ---------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x.shape().size() == 4 && w.shape().size() == 4, "conv2d: NCHW input and OCHW kernel required");
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    int O = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    require(w.shape()[1] == C, "conv2d: channel mismatch");
    require(kh % 2 == 1 && kw % 2 == 1, "conv2d: odd kernel sizes required");
    require(b.shape().size() == 1 && b.shape()[0] == O, "conv2d: bias per output channel");
    int ph = kh / 2, pw = kw / 2;
    auto xin = [=](const std::vector<double>& xv, int bb, int c, int i, int j) -> double {
        if (i < 0 || i >= H || j < 0 || j >= W) return 0.0;
        return xv[((static_cast<size_t>(bb) * C + c) * H + i) * W + j];
    };
    std::vector<double> v(static_cast<size_t>(B) * O * H * W, 0.0);
    const auto& xv = x.value();
    const auto& wv = w.value();
    const auto& bv = b.value();
    for (int bb = 0; bb < B; ++bb)
        for (int o = 0; o < O; ++o)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    double acc = bv[o];
                    for (int c = 0; c < C; ++c)
                        for (int u = 0; u < kh; ++u)
                            for (int vv = 0; vv < kw; ++vv)
                                acc += wv[((static_cast<size_t>(o) * C + c) * kh + u) * kw + vv] *
                                       xin(xv, bb, c, i + u - ph, j + vv - pw);
                    v[((static_cast<size_t>(bb) * O + o) * H + i) * W + j] = acc;
                }
    return make_node({B, O, H, W}, std::move(v), {x, w, b},
                     [B, C, H, W, O, kh, kw, ph, pw](TensorNode& node) {
                         auto& ix = *node.inputs[0];
                         auto& iw = *node.inputs[1];
                         auto& ib = *node.inputs[2];
                         const auto& g = node.grad;
                         auto xidx = [=](int bb, int c, int i, int j) {
                             return ((static_cast<size_t>(bb) * C + c) * H + i) * W + j;
                         };
                         auto gidx = [=](int bb, int o, int i, int j) {
                             return ((static_cast<size_t>(bb) * O + o) * H + i) * W + j;
                         };
                         auto widx = [=](int o, int c, int u, int vv) {
                             return ((static_cast<size_t>(o) * C + c) * kh + u) * kw + vv;
                         };
                         if (ix.requires_grad) ix.ensure_grad();
                         if (iw.requires_grad) iw.ensure_grad();
                         if (ib.requires_grad) ib.ensure_grad();
                         for (int bb = 0; bb < B; ++bb)
                             for (int o = 0; o < O; ++o)
                                 for (int i = 0; i < H; ++i)
                                     for (int j = 0; j < W; ++j) {
                                         double gv = g[gidx(bb, o, i, j)];
                                         if (gv == 0.0) continue;
                                         if (ib.requires_grad) ib.grad[o] += gv;
                                         for (int c = 0; c < C; ++c)
                                             for (int u = 0; u < kh; ++u) {
                                                 int ii = i + u - ph;
                                                 if (ii < 0 || ii >= H) continue;
                                                 for (int vv = 0; vv < kw; ++vv) {
                                                     int jj = j + vv - pw;
                                                     if (jj < 0 || jj >= W) continue;
                                                     if (iw.requires_grad)
                                                         iw.grad[widx(o, c, u, vv)] += gv * ix.value[xidx(bb, c, ii, jj)];
                                                     if (ix.requires_grad)
                                                         ix.grad[xidx(bb, c, ii, jj)] += gv * iw.value[widx(o, c, u, vv)];
                                                 }
                                             }
                                     }
                     },
                     "conv2d");
}

Tensor channel_mix(const Tensor& x, const Tensor& w) {
    require(x.shape().size() == 4, "channel_mix: NCHW input required");
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    require(w.shape().size() == 2 && w.shape()[0] == C && w.shape()[1] == C, "channel_mix: CxC matrix required");
    int S = H * W;
    std::vector<double> v(x.value().size(), 0.0);
    const auto& xv = x.value();
    const auto& wv = w.value();
    for (int bb = 0; bb < B; ++bb) {
        const double* xb = xv.data() + static_cast<size_t>(bb) * C * S;
        double* yb = v.data() + static_cast<size_t>(bb) * C * S;
        mm_acc(wv.data(), xb, yb, C, C, S);
    }
    return make_node(x.shape(), std::move(v), {x, w},
                     [B, C, S](TensorNode& node) {
                         auto& ix = *node.inputs[0];
                         auto& iw = *node.inputs[1];
                         if (ix.requires_grad) {
                             ix.ensure_grad();
                             for (int bb = 0; bb < B; ++bb) {
                                 const double* gb = node.grad.data() + static_cast<size_t>(bb) * C * S;
                                 double* dxb = ix.grad.data() + static_cast<size_t>(bb) * C * S;
                                 mm_tn_acc(iw.value.data(), gb, dxb, C, C, S);
                             }
                         }
                         if (iw.requires_grad) {
                             iw.ensure_grad();
                             for (int bb = 0; bb < B; ++bb) {
                                 const double* gb = node.grad.data() + static_cast<size_t>(bb) * C * S;
                                 const double* xb = ix.value.data() + static_cast<size_t>(bb) * C * S;
                                 mm_nt_acc(gb, xb, iw.grad.data(), C, S, C);
                             }
                         }
                     },
                     "channel_mix");
}

Tensor logdet_abs(const Tensor& w) {
    require(w.shape().size() == 2 && w.shape()[0] == w.shape()[1], "logdet_abs: square matrix required");
    int n = w.shape()[0];
    Lu lu(n, w.value());
    double ld = lu.log_abs_det();
    return make_node({1}, {ld}, {w},
                     [n](TensorNode& node) {
                         auto& iw = *node.inputs[0];
                         if (!iw.requires_grad) return;
                         Lu lu(n, iw.value);
                         std::vector<double> inv = lu.inverse();
                         iw.ensure_grad();
                         double g = node.grad[0];
                         // d log|det W| / dW = W^{-T}
                         for (int i = 0; i < n; ++i)
                             for (int j = 0; j < n; ++j)
                                 iw.grad[static_cast<size_t>(i) * n + j] += g * inv[static_cast<size_t>(j) * n + i];
                     },
                     "logdet_abs");
}

// ---- reductions ----------------------------------------------------------

Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    for (double x : a.value()) acc += x;
    return make_node({1}, {acc}, {a},
                     [](TensorNode& node) {
                         auto& ia = *node.inputs[0];
                         if (!ia.requires_grad) return;
                         ia.ensure_grad();
                         double g = node.grad[0];
                         for (auto& gi : ia.grad) gi += g;
                     },
                     "sum_all");
}

Tensor mean_all(const Tensor& a) {
    if (a.size() == 0) throw EmptyBatchError("mean_all: empty tensor");
    double acc = 0.0;
    for (double x : a.value()) acc += x;
    double inv_n = 1.0 / static_cast<double>(a.size());
    return make_node({1}, {acc * inv_n}, {a},
                     [inv_n](TensorNode& node) {
                         auto& ia = *node.inputs[0];
                         if (!ia.requires_grad) return;
                         ia.ensure_grad();
                         double g = node.grad[0] * inv_n;
                         for (auto& gi : ia.grad) gi += g;
                     },
                     "mean_all");
}

Tensor sum_rows(const Tensor& a) {
    require(!a.shape().empty(), "sum_rows: rank >= 1 required");
    int rows = a.shape()[0];
    int64_t cols = a.size() / rows;
    std::vector<double> v(rows, 0.0);
    const auto& av = a.value();
    for (int r = 0; r < rows; ++r) {
        double acc = 0.0;
        const double* p = av.data() + static_cast<size_t>(r) * cols;
        for (int64_t j = 0; j < cols; ++j) acc += p[j];
        v[r] = acc;
    }
    return make_node({rows}, std::move(v), {a},
                     [rows, cols](TensorNode& node) {
                         auto& ia = *node.inputs[0];
                         if (!ia.requires_grad) return;
                         ia.ensure_grad();
                         for (int r = 0; r < rows; ++r) {
                             double g = node.grad[r];
                             double* p = ia.grad.data() + static_cast<size_t>(r) * cols;
                             for (int64_t j = 0; j < cols; ++j) p[j] += g;
                         }
                     },
                     "sum_rows");
}

// ---- affine scale-shift ---------------------------------------------------

Tensor affine_rows(const Tensor& x, const Tensor& s, const Tensor& b) {
    require(x.shape().size() == 2, "affine_rows: [B,D] input required");
    int B = x.shape()[0], D = x.shape()[1];
    require(s.shape().size() == 1 && s.shape()[0] == D, "affine_rows: scale shape");
    require(b.shape().size() == 1 && b.shape()[0] == D, "affine_rows: bias shape");
    std::vector<double> v(x.size());
    const auto& xv = x.value();
    const auto& sv = s.value();
    const auto& bv = b.value();
    for (int r = 0; r < B; ++r)
        for (int j = 0; j < D; ++j) {
            size_t i = static_cast<size_t>(r) * D + j;
            v[i] = xv[i] * sv[j] + bv[j];
        }
    return make_node(x.shape(), std::move(v), {x, s, b},
                     [B, D](TensorNode& node) {
                         auto& ix = *node.inputs[0];
                         auto& is = *node.inputs[1];
                         auto& ib = *node.inputs[2];
                         if (ix.requires_grad) ix.ensure_grad();
                         if (is.requires_grad) is.ensure_grad();
                         if (ib.requires_grad) ib.ensure_grad();
                         for (int r = 0; r < B; ++r)
                             for (int j = 0; j < D; ++j) {
                                 size_t i = static_cast<size_t>(r) * D + j;
                                 double g = node.grad[i];
                                 if (ix.requires_grad) ix.grad[i] += g * is.value[j];
                                 if (is.requires_grad) is.grad[j] += g * ix.value[i];
                                 if (ib.requires_grad) ib.grad[j] += g;
                             }
                     },
                     "affine_rows");
}

Tensor affine_channels(const Tensor& x, const Tensor& s, const Tensor& b) {
    require(x.shape().size() == 4, "affine_channels: NCHW input required");
    int B = x.shape()[0], C = x.shape()[1], S = x.shape()[2] * x.shape()[3];
    require(s.shape().size() == 1 && s.shape()[0] == C, "affine_channels: scale shape");
    require(b.shape().size() == 1 && b.shape()[0] == C, "affine_channels: bias shape");
    std::vector<double> v(x.size());
    const auto& xv = x.value();
    const auto& sv = s.value();
    const auto& bv = b.value();
    for (int bb = 0; bb < B; ++bb)
        for (int c = 0; c < C; ++c) {
            size_t base = (static_cast<size_t>(bb) * C + c) * S;
            for (int k = 0; k < S; ++k) v[base + k] = xv[base + k] * sv[c] + bv[c];
        }
    return make_node(x.shape(), std::move(v), {x, s, b},
                     [B, C, S](TensorNode& node) {
                         auto& ix = *node.inputs[0];
                         auto& is = *node.inputs[1];
                         auto& ib = *node.inputs[2];
                         if (ix.requires_grad) ix.ensure_grad();
                         if (is.requires_grad) is.ensure_grad();
                         if (ib.requires_grad) ib.ensure_grad();
                         for (int bb = 0; bb < B; ++bb)
                             for (int c = 0; c < C; ++c) {
                                 size_t base = (static_cast<size_t>(bb) * C + c) * S;
                                 for (int k = 0; k < S; ++k) {
                                     double g = node.grad[base + k];
                                     if (ix.requires_grad) ix.grad[base + k] += g * is.value[c];
                                     if (is.requires_grad) is.grad[c] += g * ix.value[base + k];
                                     if (ib.requires_grad) ib.grad[c] += g;
                                 }
                             }
                     },
                     "affine_channels");
}

// ---- slicing / layout ----------------------------------------------------

Tensor slice_cols(const Tensor& x, int c0, int c1) {
    require(x.shape().size() == 2, "slice_cols: [B,D] input required");
    int B = x.shape()[0], D = x.shape()[1];
    require(0 <= c0 && c0 < c1 && c1 <= D, "slice_cols: bad range");
    int w = c1 - c0;
    std::vector<double> v(static_cast<size_t>(B) * w);
    const auto& xv = x.value();
    for (int r = 0; r < B; ++r)
        for (int j = 0; j < w; ++j) v[static_cast<size_t>(r) * w + j] = xv[static_cast<size_t>(r) * D + c0 + j];
    return make_node({B, w}, std::move(v), {x},
                     [B, D, c0, w](TensorNode& node) {
                         auto& ix = *node.inputs[0];
                         if (!ix.requires_grad) return;
                         ix.ensure_grad();
                         for (int r = 0; r < B; ++r)
                             for (int j = 0; j < w; ++j)
                                 ix.grad[static_cast<size_t>(r) * D + c0 + j] += node.grad[static_cast<size_t>(r) * w + j];
                     },
                     "slice_cols");
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[0] == b.shape()[0],
            "concat_cols: row counts must match");
    int B = a.shape()[0], Da = a.shape()[1], Db = b.shape()[1];
    int D = Da + Db;
    std::vector<double> v(static_cast<size_t>(B) * D);
    const auto& avv = a.value();
    const auto& bvv = b.value();
    for (int r = 0; r < B; ++r) {
        std::copy_n(avv.data() + static_cast<size_t>(r) * Da, Da, v.data() + static_cast<size_t>(r) * D);
        std::copy_n(bvv.data() + static_cast<size_t>(r) * Db, Db, v.data() + static_cast<size_t>(r) * D + Da);
    }
    return make_node({B, D}, std::move(v), {a, b},
                     [B, Da, Db, D](TensorNode& node) {
                         auto& ia = *node.inputs[0];
                         auto& ib = *node.inputs[1];
                         if (ia.requires_grad) {
                             ia.ensure_grad();
                             for (int r = 0; r < B; ++r)
                                 for (int j = 0; j < Da; ++j)
                                     ia.grad[static_cast<size_t>(r) * Da + j] += node.grad[static_cast<size_t>(r) * D + j];
                         }
                         if (ib.requires_grad) {
                             ib.ensure_grad();
                             for (int r = 0; r < B; ++r)
                                 for (int j = 0; j < Db; ++j)
                                     ib.grad[static_cast<size_t>(r) * Db + j] += node.grad[static_cast<size_t>(r) * D + Da + j];
                         }
                     },
                     "concat_cols");
}

Tensor slice_channels(const Tensor& x, int c0, int c1) {
    require(x.shape().size() == 4, "slice_channels: NCHW input required");
    int B = x.shape()[0], C = x.shape()[1], S = x.shape()[2] * x.shape()[3];
    require(0 <= c0 && c0 < c1 && c1 <= C, "slice_channels: bad range");
    int w = c1 - c0;
    std::vector<double> v(static_cast<size_t>(B) * w * S);
    const auto& xv = x.value();
    for (int bb = 0; bb < B; ++bb)
        for (int c = 0; c < w; ++c)
            std::copy_n(xv.data() + ((static_cast<size_t>(bb) * C + c0 + c) * S), S,
                        v.data() + ((static_cast<size_t>(bb) * w + c) * S));
    return make_node({B, w, x.shape()[2], x.shape()[3]}, std::move(v), {x},
                     [B, C, S, c0, w](TensorNode& node) {
                         auto& ix = *node.inputs[0];
                         if (!ix.requires_grad) return;
                         ix.ensure_grad();
                         for (int bb = 0; bb < B; ++bb)
                             for (int c = 0; c < w; ++c) {
                                 const double* g = node.grad.data() + ((static_cast<size_t>(bb) * w + c) * S);
                                 double* dst = ix.grad.data() + ((static_cast<size_t>(bb) * C + c0 + c) * S);
                                 for (int k = 0; k < S; ++k) dst[k] += g[k];
                             }
                     },
                     "slice_channels");
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require(a.shape().size() == 4 && b.shape().size() == 4, "concat_channels: NCHW inputs required");
    require(a.shape()[0] == b.shape()[0] && a.shape()[2] == b.shape()[2] && a.shape()[3] == b.shape()[3],
            "concat_channels: spatial dims must match");
    int B = a.shape()[0], Ca = a.shape()[1], Cb = b.shape()[1], S = a.shape()[2] * a.shape()[3];
    int C = Ca + Cb;
    std::vector<double> v(static_cast<size_t>(B) * C * S);
    const auto& avv = a.value();
    const auto& bvv = b.value();
    for (int bb = 0; bb < B; ++bb) {
        std::copy_n(avv.data() + static_cast<size_t>(bb) * Ca * S, static_cast<size_t>(Ca) * S,
                    v.data() + static_cast<size_t>(bb) * C * S);
        std::copy_n(bvv.data() + static_cast<size_t>(bb) * Cb * S, static_cast<size_t>(Cb) * S,
                    v.data() + static_cast<size_t>(bb) * C * S + static_cast<size_t>(Ca) * S);
    }
    return make_node({B, C, a.shape()[2], a.shape()[3]}, std::move(v), {a, b},
                     [B, Ca, Cb, C, S](TensorNode& node) {
                         auto& ia = *node.inputs[0];
                         auto& ib = *node.inputs[1];
                         if (ia.requires_grad) {
                             ia.ensure_grad();
                             for (int bb = 0; bb < B; ++bb) {
                                 const double* g = node.grad.data() + static_cast<size_t>(bb) * C * S;
                                 double* dst = ia.grad.data() + static_cast<size_t>(bb) * Ca * S;
                                 for (size_t k = 0; k < static_cast<size_t>(Ca) * S; ++k) dst[k] += g[k];
                             }
                         }
                         if (ib.requires_grad) {
                             ib.ensure_grad();
                             for (int bb = 0; bb < B; ++bb) {
                                 const double* g = node.grad.data() + static_cast<size_t>(bb) * C * S + static_cast<size_t>(Ca) * S;
                                 double* dst = ib.grad.data() + static_cast<size_t>(bb) * Cb * S;
                                 for (size_t k = 0; k < static_cast<size_t>(Cb) * S; ++k) dst[k] += g[k];
                             }
                         }
                     },
                     "concat_channels");
}

namespace {

// index maps shared by squeeze2/unsqueeze2: out[b, c*4+di*2+dj, i, j] = in[b, c, 2i+di, 2j+dj]
void squeeze_map(int B, int C, int H, int W, const std::vector<double>& in, std::vector<double>& out, bool forward) {
    int Ho = H / 2, Wo = W / 2;
    for (int bb = 0; bb < B; ++bb)
        for (int c = 0; c < C; ++c)
            for (int di = 0; di < 2; ++di)
                for (int dj = 0; dj < 2; ++dj)
                    for (int i = 0; i < Ho; ++i)
                        for (int j = 0; j < Wo; ++j) {
                            size_t oi = ((static_cast<size_t>(bb) * C * 4 + (c * 4 + di * 2 + dj)) * Ho + i) * Wo + j;
                            size_t ii = ((static_cast<size_t>(bb) * C + c) * H + 2 * i + di) * W + 2 * j + dj;
                            if (forward)
                                out[oi] = in[ii];
                            else
                                out[ii] = in[oi];
                        }
}

} // namespace

Tensor squeeze2(const Tensor& x) {
    require(x.shape().size() == 4, "squeeze2: NCHW input required");
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    require(H % 2 == 0 && W % 2 == 0, "squeeze2: spatial dims must be even");
    std::vector<double> v(x.value().size());
    squeeze_map(B, C, H, W, x.value(), v, true);
    return make_node({B, 4 * C, H / 2, W / 2}, std::move(v), {x},
                     [B, C, H, W](TensorNode& node) {
                         auto& ix = *node.inputs[0];
                         if (!ix.requires_grad) return;
                         ix.ensure_grad();
                         std::vector<double> tmp(node.grad.size());
                         squeeze_map(B, C, H, W, node.grad, tmp, false);
                         for (size_t i = 0; i < tmp.size(); ++i) ix.grad[i] += tmp[i];
                     },
                     "squeeze2");
}

Tensor unsqueeze2(const Tensor& x) {
    require(x.shape().size() == 4, "unsqueeze2: NCHW input required");
    int B = x.shape()[0], C4 = x.shape()[1], Ho = x.shape()[2], Wo = x.shape()[3];
    require(C4 % 4 == 0, "unsqueeze2: channels must be divisible by 4");
    int C = C4 / 4, H = Ho * 2, W = Wo * 2;
    std::vector<double> v(x.value().size());
    squeeze_map(B, C, H, W, x.value(), v, false);
    return make_node({B, C, H, W}, std::move(v), {x},
                     [B, C, H, W](TensorNode& node) {
                         auto& ix = *node.inputs[0];
                         if (!ix.requires_grad) return;
                         ix.ensure_grad();
                         std::vector<double> tmp(node.grad.size());
                         squeeze_map(B, C, H, W, node.grad, tmp, true);
                         for (size_t i = 0; i < tmp.size(); ++i) ix.grad[i] += tmp[i];
                     },
                     "unsqueeze2");
}

Tensor reshape(const Tensor& x, Shape shape) {
    require(shape_size(shape) == x.size(), "reshape: element count mismatch");
    std::vector<double> v(x.value());
    return make_node(std::move(shape), std::move(v), {x},
                     [](TensorNode& node) {
                         auto& ix = *node.inputs[0];
                         if (!ix.requires_grad) return;
                         ix.ensure_grad();
                         for (size_t i = 0; i < node.grad.size(); ++i) ix.grad[i] += node.grad[i];
                     },
                     "reshape");
}

// ---- backward sweep ------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) throw ShapeError("backward: loss must be a scalar tensor");
    if (!loss.requires_grad()) return;

    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<TensorNode*> stack{loss.node()};
    seen.insert(loss.node());
    while (!stack.empty()) {
        TensorNode* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& in : n->inputs) {
            if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
        }
    }
    // Reverse creation order is a valid topological order: every op's
    // inputs were created before it.
    std::sort(order.begin(), order.end(), [](TensorNode* a, TensorNode* b) { return a->id > b->id; });

    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;

    for (TensorNode* n : order) {
        n->ensure_grad();
        if (!all_finite(n->grad)) throw NonFiniteGradient(n->label);
        if (n->backprop) n->backprop(*n);
    }
}

} // namespace nfad
