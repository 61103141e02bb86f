#include "faceswap/autodiff.hpp"

#include "faceswap/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace fswap::ad {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

Shape broadcast_shape(const Shape& a, const Shape& b) {
    auto dim = [&](int x, int y) {
        if (x == y || y == 1) return x;
        if (x == 1) return y;
        throw ShapeMismatch("cannot broadcast " + a.str() + " with " + b.str());
    };
    return Shape{dim(a.n, b.n), dim(a.c, b.c), dim(a.h, b.h), dim(a.w, b.w)};
}

// Strides of `s` viewed inside the broadcast shape; broadcast axes get stride 0.
std::array<Eigen::Index, 4> broadcast_strides(const Shape& s) {
    const Eigen::Index sw = 1;
    const Eigen::Index sh = s.w;
    const Eigen::Index sc = Eigen::Index(s.h) * s.w;
    const Eigen::Index sn = sc * s.c;
    return {s.n == 1 ? 0 : sn, s.c == 1 ? 0 : sc, s.h == 1 ? 0 : sh, s.w == 1 ? 0 : sw};
}

// Calls fn(out_index, a_index, b_index) over the broadcast shape.
template <typename Fn>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
    const auto sa = broadcast_strides(a);
    const auto sb = broadcast_strides(b);
    Eigen::Index o = 0;
    for (int n = 0; n < out.n; ++n)
        for (int c = 0; c < out.c; ++c)
            for (int y = 0; y < out.h; ++y) {
                Eigen::Index ia = n * sa[0] + c * sa[1] + y * sa[2];
                Eigen::Index ib = n * sb[0] + c * sb[1] + y * sb[2];
                for (int x = 0; x < out.w; ++x, ++o) fn(o, ia + x * sa[3], ib + x * sb[3]);
            }
}

template <typename Scalar, typename Forward, typename GradA, typename GradB>
Tensor<Scalar> broadcast_binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b, Forward forward, GradA grad_a,
                                GradB grad_b) {
    const Shape out = broadcast_shape(a.shape(), b.shape());
    Buffer<Scalar> value(out.size());
    const auto& av = a.value();
    const auto& bv = b.value();
    if (a.shape() == b.shape()) {
        for (Eigen::Index i = 0; i < value.size(); ++i) value(i) = forward(av(i), bv(i));
    } else {
        for_each_broadcast(out, a.shape(), b.shape(),
                           [&](Eigen::Index o, Eigen::Index ia, Eigen::Index ib) { value(o) = forward(av(ia), bv(ib)); });
    }
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    return make_result<Scalar>(out, std::move(value), {a, b}, [=](Node<Scalar>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        const auto& va = pa.value;
        const auto& vb = pb.value;
        Buffer<Scalar>* ga = pa.requires_grad ? &pa.grad_buffer() : nullptr;
        Buffer<Scalar>* gb = pb.requires_grad ? &pb.grad_buffer() : nullptr;
        for_each_broadcast(self.shape, sa, sb, [&](Eigen::Index o, Eigen::Index ia, Eigen::Index ib) {
            if (ga) (*ga)(ia) += grad_a(g(o), va(ia), vb(ib));
            if (gb) (*gb)(ib) += grad_b(g(o), va(ia), vb(ib));
        });
    });
}

template <typename Scalar, typename Forward, typename Derivative>
Tensor<Scalar> unary(const Tensor<Scalar>& a, Forward forward, Derivative derivative) {
    Buffer<Scalar> value = a.value().unaryExpr(forward);
    return make_result<Scalar>(a.shape(), value, {a}, [=](Node<Scalar>& self) {
        auto& p = *self.parents[0];
        auto& g = p.grad_buffer();
        for (Eigen::Index i = 0; i < g.size(); ++i) g(i) += self.grad(i) * derivative(p.value(i), self.value(i));
    });
}

template <typename Scalar>
std::vector<Node<Scalar>*> topo_sort(Node<Scalar>* root) {
    std::vector<Node<Scalar>*> order;
    std::unordered_set<Node<Scalar>*> visited;
    // Iterative post-order DFS; graphs can be deep enough to matter for recursion.
    std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<Scalar>* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

} // namespace

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(const Shape& shape, bool requires_grad) {
    return constant(shape, Scalar(0), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::constant(const Shape& shape, Scalar fill, bool requires_grad) {
    return from(shape, Buffer<Scalar>::Constant(shape.size(), fill), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from(const Shape& shape, Buffer<Scalar> values, bool requires_grad) {
    if (values.size() != shape.size())
        throw ShapeMismatch("buffer of " + std::to_string(values.size()) + " values for shape " + shape.str());
    auto node = std::make_shared<NodeType>();
    node->shape = shape;
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

template <typename Scalar>
Scalar Tensor<Scalar>::at(int n, int c, int y, int x) const {
    const Shape& s = shape();
    return value()(((Eigen::Index(n) * s.c + c) * s.h + y) * s.w + x);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
    return from(shape(), value(), false);
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
    node_->grad = Buffer<Scalar>::Zero(node_->value.size());
}

template <typename Scalar>
void Tensor<Scalar>::backward() {
    if (!node_->requires_grad) return;
    if (node_->value.size() != 1) throw ShapeMismatch("backward() needs a scalar, got " + shape().str());
    auto order = topo_sort(node_.get());
    // Intermediate gradients start from zero on every pass; leaves accumulate.
    for (auto* n : order)
        if (n->backward) n->grad = Buffer<Scalar>::Zero(n->value.size());
    node_->grad_buffer()(0) += Scalar(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<Scalar>* n = *it;
        if (n->backward) n->backward(*n);
    }
}

template <typename Scalar>
Tensor<Scalar> make_result(const Shape& shape, Buffer<Scalar> value, std::vector<Tensor<Scalar>> inputs,
                           std::function<void(Node<Scalar>&)> backward) {
    auto node = std::make_shared<Node<Scalar>>();
    node->shape = shape;
    node->value = std::move(value);
    for (const auto& in : inputs) node->requires_grad = node->requires_grad || in.requires_grad();
    if (node->requires_grad) {
        node->parents.reserve(inputs.size());
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Tensor<Scalar>(std::move(node));
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    return broadcast_binary(
        a, b, [](Scalar x, Scalar y) { return x + y; }, [](Scalar g, Scalar, Scalar) { return g; },
        [](Scalar g, Scalar, Scalar) { return g; });
}

template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    return broadcast_binary(
        a, b, [](Scalar x, Scalar y) { return x - y; }, [](Scalar g, Scalar, Scalar) { return g; },
        [](Scalar g, Scalar, Scalar) { return -g; });
}

template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    return broadcast_binary(
        a, b, [](Scalar x, Scalar y) { return x * y; }, [](Scalar g, Scalar, Scalar y) { return g * y; },
        [](Scalar g, Scalar x, Scalar) { return g * x; });
}

template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a) {
    return a * Scalar(-1);
}

template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, Scalar s) {
    return unary(a, [s](Scalar x) { return x * s; }, [s](Scalar, Scalar) { return s; });
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, Scalar s) {
    return unary(a, [s](Scalar x) { return x + s; }, [](Scalar, Scalar) { return Scalar(1); });
}

template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& a) {
    return unary(a, [](Scalar x) { return x * x; }, [](Scalar x, Scalar) { return Scalar(2) * x; });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
    return unary(
        a, [](Scalar x) { return x > 0 ? x : Scalar(0); }, [](Scalar x, Scalar) { return x > 0 ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& a, Scalar slope) {
    return unary(
        a, [slope](Scalar x) { return x > 0 ? x : slope * x; },
        [slope](Scalar x, Scalar) { return x > 0 ? Scalar(1) : slope; });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a) {
    return unary(
        a, [](Scalar x) { return Scalar(1) / (Scalar(1) + std::exp(-x)); },
        [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& a) {
    return unary(a, [](Scalar x) { return std::tanh(x); }, [](Scalar, Scalar y) { return Scalar(1) - y * y; });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
    Buffer<Scalar> value = Buffer<Scalar>::Constant(1, a.value().sum());
    return make_result<Scalar>(Shape{}, value, {a}, [](Node<Scalar>& self) {
        self.parents[0]->grad_buffer() += self.grad(0);
    });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
    return sum(a) * (Scalar(1) / Scalar(a.shape().size()));
}

template <typename Scalar>
Tensor<Scalar> sample_mean(const Tensor<Scalar>& a) {
    const Shape s = a.shape();
    const Eigen::Index per = s.sample();
    Buffer<Scalar> value(s.n);
    for (int n = 0; n < s.n; ++n) value(n) = a.value().segment(n * per, per).sum() / Scalar(per);
    return make_result<Scalar>(Shape{s.n, 1, 1, 1}, value, {a}, [per](Node<Scalar>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (Eigen::Index n = 0; n < self.grad.size(); ++n) g.segment(n * per, per) += self.grad(n) / Scalar(per);
    });
}

template <typename Scalar>
Tensor<Scalar> channel_sum(const Tensor<Scalar>& a) {
    const Shape s = a.shape();
    const Eigen::Index plane = s.plane();
    Buffer<Scalar> value = Buffer<Scalar>::Zero(Eigen::Index(s.n) * plane);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            value.segment(n * plane, plane) += a.value().segment((Eigen::Index(n) * s.c + c) * plane, plane);
    return make_result<Scalar>(Shape{s.n, 1, s.h, s.w}, value, {a}, [s, plane](Node<Scalar>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                g.segment((Eigen::Index(n) * s.c + c) * plane, plane) += self.grad.segment(n * plane, plane);
    });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, const Shape& shape) {
    if (shape.size() != a.shape().size())
        throw ShapeMismatch("reshape " + a.shape().str() + " -> " + shape.str());
    return make_result<Scalar>(shape, a.value(), {a}, [](Node<Scalar>& self) {
        self.parents[0]->grad_buffer() += self.grad;
    });
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
        throw ShapeMismatch("concat_channels " + sa.str() + " with " + sb.str());
    const Shape out{sa.n, sa.c + sb.c, sa.h, sa.w};
    const Eigen::Index na = sa.sample();
    const Eigen::Index nb = sb.sample();
    Buffer<Scalar> value(out.size());
    for (int n = 0; n < sa.n; ++n) {
        value.segment(n * (na + nb), na) = a.value().segment(n * na, na);
        value.segment(n * (na + nb) + na, nb) = b.value().segment(n * nb, nb);
    }
    return make_result<Scalar>(out, value, {a, b}, [na, nb](Node<Scalar>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const Eigen::Index samples = self.shape.n;
        for (Eigen::Index n = 0; n < samples; ++n) {
            if (pa.requires_grad) pa.grad_buffer().segment(n * na, na) += self.grad.segment(n * (na + nb), na);
            if (pb.requires_grad) pb.grad_buffer().segment(n * nb, nb) += self.grad.segment(n * (na + nb) + na, nb);
        }
    });
}

template <typename Scalar>
Tensor<Scalar> select_sample(const Tensor<Scalar>& a, int n) {
    const Shape s = a.shape();
    if (n < 0 || n >= s.n) throw ShapeMismatch("sample index " + std::to_string(n) + " of " + s.str());
    const Eigen::Index per = s.sample();
    return make_result<Scalar>(Shape{1, s.c, s.h, s.w}, a.value().segment(n * per, per), {a},
                               [n, per](Node<Scalar>& self) {
                                   self.parents[0]->grad_buffer().segment(n * per, per) += self.grad;
                               });
}

template <typename Scalar>
Tensor<Scalar> stack_samples(const std::vector<Tensor<Scalar>>& samples) {
    if (samples.empty()) throw ShapeMismatch("stack_samples of nothing");
    const Shape s0 = samples.front().shape();
    Shape out = s0;
    out.n = 0;
    for (const auto& t : samples) {
        const Shape s = t.shape();
        if (s.c != s0.c || s.h != s0.h || s.w != s0.w) throw ShapeMismatch("stack_samples " + s0.str() + " vs " + s.str());
        out.n += s.n;
    }
    Buffer<Scalar> value(out.size());
    Eigen::Index offset = 0;
    for (const auto& t : samples) {
        value.segment(offset, t.value().size()) = t.value();
        offset += t.value().size();
    }
    return make_result<Scalar>(out, value, samples, [](Node<Scalar>& self) {
        Eigen::Index off = 0;
        for (auto& p : self.parents) {
            const Eigen::Index len = p->value.size();
            if (p->requires_grad) p->grad_buffer() += self.grad.segment(off, len);
            off += len;
        }
    });
}

namespace {

struct ConvGeometry {
    int in_c, in_h, in_w, k, stride, pad, out_h, out_w;
};

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, RowMatrix<Scalar>& cols) {
    cols.resize(Eigen::Index(g.in_c) * g.k * g.k, Eigen::Index(g.out_h) * g.out_w);
    for (int c = 0; c < g.in_c; ++c)
        for (int ky = 0; ky < g.k; ++ky)
            for (int kx = 0; kx < g.k; ++kx) {
                Scalar* row = cols.row((Eigen::Index(c) * g.k + ky) * g.k + kx).data();
                const Scalar* plane = x + Eigen::Index(c) * g.in_h * g.in_w;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    Scalar* dst = row + Eigen::Index(oy) * g.out_w;
                    if (iy < 0 || iy >= g.in_h) {
                        std::fill(dst, dst + g.out_w, Scalar(0));
                        continue;
                    }
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        dst[ox] = (ix >= 0 && ix < g.in_w) ? plane[Eigen::Index(iy) * g.in_w + ix] : Scalar(0);
                    }
                }
            }
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* dx) {
    for (int c = 0; c < g.in_c; ++c)
        for (int ky = 0; ky < g.k; ++ky)
            for (int kx = 0; kx < g.k; ++kx) {
                const Scalar* row = cols.row((Eigen::Index(c) * g.k + ky) * g.k + kx).data();
                Scalar* plane = dx + Eigen::Index(c) * g.in_h * g.in_w;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.in_h) continue;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.in_w) plane[Eigen::Index(iy) * g.in_w + ix] += row[Eigen::Index(oy) * g.out_w + ox];
                    }
                }
            }
}

} // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias, int stride,
                      int padding) {
    const Shape sx = x.shape();
    const Shape sw = weight.shape();
    if (sw.c != sx.c || sw.h != sw.w)
        throw ShapeMismatch("conv2d input " + sx.str() + " with weight " + sw.str());
    if (bias.shape().size() != sw.n) throw ShapeMismatch("conv2d bias " + bias.shape().str());
    ConvGeometry g{sx.c, sx.h, sx.w, sw.h, stride, padding, 0, 0};
    g.out_h = (sx.h + 2 * padding - sw.h) / stride + 1;
    g.out_w = (sx.w + 2 * padding - sw.w) / stride + 1;
    if (g.out_h <= 0 || g.out_w <= 0) throw ShapeMismatch("conv2d output empty for input " + sx.str());
    const Shape out{sx.n, sw.n, g.out_h, g.out_w};
    const Eigen::Index out_plane = out.plane();
    const Eigen::Index kdim = Eigen::Index(sw.c) * sw.h * sw.w;

    Buffer<Scalar> value(out.size());
    ConstMatrixMap<Scalar> wm(weight.value().data(), sw.n, kdim);
    RowMatrix<Scalar> cols;
    for (int n = 0; n < sx.n; ++n) {
        im2col(x.value().data() + n * sx.sample(), g, cols);
        MatrixMap<Scalar> om(value.data() + n * out.sample(), sw.n, out_plane);
        om.noalias() = wm * cols;
        om.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.value().data(), sw.n);
    }

    return make_result<Scalar>(out, std::move(value), {x, weight, bias}, [g, sx, sw, out, kdim](Node<Scalar>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        const Eigen::Index out_plane = out.plane();
        ConstMatrixMap<Scalar> wm(pw.value.data(), sw.n, kdim);
        RowMatrix<Scalar> cols;
        RowMatrix<Scalar> dcols;
        for (int n = 0; n < sx.n; ++n) {
            ConstMatrixMap<Scalar> gm(self.grad.data() + n * out.sample(), sw.n, out_plane);
            if (pw.requires_grad) {
                im2col(px.value.data() + n * sx.sample(), g, cols);
                MatrixMap<Scalar> gw(pw.grad_buffer().data(), sw.n, kdim);
                gw.noalias() += gm * cols.transpose();
            }
            if (pb.requires_grad) {
                Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> gb(pb.grad_buffer().data(), sw.n);
                gb += gm.rowwise().sum();
            }
            if (px.requires_grad) {
                dcols.noalias() = wm.transpose() * gm;
                col2im(dcols, g, px.grad_buffer().data() + n * sx.sample());
            }
        }
    });
}

template <typename Scalar>
Tensor<Scalar> upsample_nearest2x(const Tensor<Scalar>& x) {
    const Shape s = x.shape();
    const Shape out{s.n, s.c, s.h * 2, s.w * 2};
    Buffer<Scalar> value(out.size());
    const Eigen::Index planes = Eigen::Index(s.n) * s.c;
    for (Eigen::Index p = 0; p < planes; ++p)
        for (int y = 0; y < out.h; ++y)
            for (int xo = 0; xo < out.w; ++xo)
                value((p * out.h + y) * out.w + xo) = x.value()((p * s.h + y / 2) * s.w + xo / 2);
    return make_result<Scalar>(out, value, {x}, [s, out, planes](Node<Scalar>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (Eigen::Index p = 0; p < planes; ++p)
            for (int y = 0; y < out.h; ++y)
                for (int xo = 0; xo < out.w; ++xo)
                    g((p * s.h + y / 2) * s.w + xo / 2) += self.grad((p * out.h + y) * out.w + xo);
    });
}

template <typename Scalar>
Tensor<Scalar> avg_pool(const Tensor<Scalar>& x, int factor) {
    const Shape s = x.shape();
    if (factor < 1 || s.h % factor != 0 || s.w % factor != 0)
        throw ShapeMismatch("avg_pool factor " + std::to_string(factor) + " on " + s.str());
    const Shape out{s.n, s.c, s.h / factor, s.w / factor};
    const Eigen::Index planes = Eigen::Index(s.n) * s.c;
    const Scalar inv = Scalar(1) / Scalar(factor * factor);
    Buffer<Scalar> value = Buffer<Scalar>::Zero(out.size());
    for (Eigen::Index p = 0; p < planes; ++p)
        for (int y = 0; y < s.h; ++y)
            for (int xi = 0; xi < s.w; ++xi)
                value((p * out.h + y / factor) * out.w + xi / factor) += x.value()((p * s.h + y) * s.w + xi);
    value *= inv;
    return make_result<Scalar>(out, value, {x}, [s, out, planes, factor, inv](Node<Scalar>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (Eigen::Index p = 0; p < planes; ++p)
            for (int y = 0; y < s.h; ++y)
                for (int xi = 0; xi < s.w; ++xi)
                    g((p * s.h + y) * s.w + xi) += inv * self.grad((p * out.h + y / factor) * out.w + xi / factor);
    });
}

template <typename Scalar>
Tensor<Scalar> instance_norm(const Tensor<Scalar>& x, Scalar eps) {
    const Shape s = x.shape();
    const Eigen::Index plane = s.plane();
    const Eigen::Index planes = Eigen::Index(s.n) * s.c;
    Buffer<Scalar> value(s.size());
    Buffer<Scalar> inv_std(planes);
    for (Eigen::Index p = 0; p < planes; ++p) {
        auto seg = x.value().segment(p * plane, plane);
        const Scalar mu = seg.mean();
        const Scalar var = (seg - mu).square().mean();
        inv_std(p) = Scalar(1) / std::sqrt(var + eps);
        value.segment(p * plane, plane) = (seg - mu) * inv_std(p);
    }
    return make_result<Scalar>(s, value, {x}, [plane, planes, inv_std](Node<Scalar>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (Eigen::Index p = 0; p < planes; ++p) {
            auto dy = self.grad.segment(p * plane, plane);
            auto y = self.value.segment(p * plane, plane);
            const Scalar mean_dy = dy.mean();
            const Scalar mean_dy_y = (dy * y).mean();
            g.segment(p * plane, plane) += inv_std(p) * (dy - mean_dy - y * mean_dy_y);
        }
    });
}

template <typename Scalar>
Tensor<Scalar> l2_normalize(const Tensor<Scalar>& x, Scalar eps) {
    const Shape s = x.shape();
    const Eigen::Index per = s.sample();
    Buffer<Scalar> value(s.size());
    Buffer<Scalar> norms(s.n);
    for (int n = 0; n < s.n; ++n) {
        auto seg = x.value().segment(n * per, per);
        norms(n) = std::max(std::sqrt(seg.square().sum()), eps);
        value.segment(n * per, per) = seg / norms(n);
    }
    return make_result<Scalar>(s, value, {x}, [per, norms](Node<Scalar>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (Eigen::Index n = 0; n < norms.size(); ++n) {
            auto dy = self.grad.segment(n * per, per);
            auto y = self.value.segment(n * per, per);
            g.segment(n * per, per) += (dy - y * (dy * y).sum()) / norms(n);
        }
    });
}

template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, const std::vector<int>& labels) {
    const Shape s = logits.shape();
    const int k = int(s.sample());
    if (int(labels.size()) != s.n) throw ShapeMismatch("cross_entropy labels for " + s.str());
    Buffer<Scalar> probs(s.size());
    Scalar loss = 0;
    for (int n = 0; n < s.n; ++n) {
        auto row = logits.value().segment(Eigen::Index(n) * k, k);
        const Scalar peak = row.maxCoeff();
        auto p = probs.segment(Eigen::Index(n) * k, k);
        p = (row - peak).exp();
        const Scalar z = p.sum();
        p /= z;
        const int label = labels[std::size_t(n)];
        if (label < 0 || label >= k) throw ShapeMismatch("label out of range");
        loss -= (row(label) - peak) - std::log(z);
    }
    loss /= Scalar(s.n);
    return make_result<Scalar>(Shape{}, Buffer<Scalar>::Constant(1, loss), {logits},
                               [probs, labels, k](Node<Scalar>& self) {
                                   auto& g = self.parents[0]->grad_buffer();
                                   const Scalar scale = self.grad(0) / Scalar(labels.size());
                                   for (std::size_t n = 0; n < labels.size(); ++n) {
                                       auto gs = g.segment(Eigen::Index(n) * k, k);
                                       gs += scale * probs.segment(Eigen::Index(n) * k, k);
                                       gs(labels[n]) -= scale;
                                   }
                               });
}

namespace {

struct BilinearTap {
    int i0, i1;
    double w1;
};

// Sample positions for resizing `len` pixels starting at `start` to `out`
// samples, clamped to the crop.
std::vector<BilinearTap> resize_taps(int start, int len, int out) {
    std::vector<BilinearTap> taps(out);
    const double scale = double(len) / double(out);
    for (int o = 0; o < out; ++o) {
        double pos = (o + 0.5) * scale - 0.5;
        pos = std::clamp(pos, 0.0, double(len - 1));
        const int i0 = static_cast<int>(std::floor(pos));
        const int i1 = std::min(i0 + 1, len - 1);
        taps[o] = BilinearTap{start + i0, start + i1, pos - i0};
    }
    return taps;
}

} // namespace

template <typename Scalar>
Tensor<Scalar> crop_resize(const Tensor<Scalar>& x, int n, const PixelBox& box, int out_h, int out_w) {
    const Shape s = x.shape();
    if (n < 0 || n >= s.n || box.x0 < 0 || box.y0 < 0 || box.x1 > s.w || box.y1 > s.h || box.x1 <= box.x0 ||
        box.y1 <= box.y0 || out_h < 1 || out_w < 1)
        throw ShapeMismatch("crop_resize box outside " + s.str());
    const auto ty = resize_taps(box.y0, box.y1 - box.y0, out_h);
    const auto tx = resize_taps(box.x0, box.x1 - box.x0, out_w);
    const Shape out{1, s.c, out_h, out_w};
    Buffer<Scalar> value(out.size());
    auto in_index = [s, n](int c, int y, int xx) { return ((Eigen::Index(n) * s.c + c) * s.h + y) * s.w + xx; };
    const auto& v = x.value();
    for (int c = 0; c < s.c; ++c)
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) {
                const auto& a = ty[oy];
                const auto& b = tx[ox];
                const Scalar wy = Scalar(a.w1), wx = Scalar(b.w1);
                value((Eigen::Index(c) * out_h + oy) * out_w + ox) =
                    (1 - wy) * ((1 - wx) * v(in_index(c, a.i0, b.i0)) + wx * v(in_index(c, a.i0, b.i1))) +
                    wy * ((1 - wx) * v(in_index(c, a.i1, b.i0)) + wx * v(in_index(c, a.i1, b.i1)));
            }
    return make_result<Scalar>(out, value, {x}, [=](Node<Scalar>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (int c = 0; c < s.c; ++c)
            for (int oy = 0; oy < out_h; ++oy)
                for (int ox = 0; ox < out_w; ++ox) {
                    const auto& a = ty[oy];
                    const auto& b = tx[ox];
                    const Scalar wy = Scalar(a.w1), wx = Scalar(b.w1);
                    const Scalar go = self.grad((Eigen::Index(c) * out_h + oy) * out_w + ox);
                    g(in_index(c, a.i0, b.i0)) += go * (1 - wy) * (1 - wx);
                    g(in_index(c, a.i0, b.i1)) += go * (1 - wy) * wx;
                    g(in_index(c, a.i1, b.i0)) += go * wy * (1 - wx);
                    g(in_index(c, a.i1, b.i1)) += go * wy * wx;
                }
    });
}

#define FSWAP_INSTANTIATE(S)                                                                                       \
    template class Tensor<S>;                                                                                      \
    template Tensor<S> make_result<S>(const Shape&, Buffer<S>, std::vector<Tensor<S>>,                             \
                                      std::function<void(Node<S>&)>);                                              \
    template Tensor<S> operator+(const Tensor<S>&, const Tensor<S>&);                                              \
    template Tensor<S> operator-(const Tensor<S>&, const Tensor<S>&);                                              \
    template Tensor<S> operator*(const Tensor<S>&, const Tensor<S>&);                                              \
    template Tensor<S> operator-(const Tensor<S>&);                                                                \
    template Tensor<S> operator*(const Tensor<S>&, S);                                                             \
    template Tensor<S> operator+(const Tensor<S>&, S);                                                             \
    template Tensor<S> square(const Tensor<S>&);                                                                   \
    template Tensor<S> relu(const Tensor<S>&);                                                                     \
    template Tensor<S> leaky_relu(const Tensor<S>&, S);                                                            \
    template Tensor<S> sigmoid(const Tensor<S>&);                                                                  \
    template Tensor<S> tanh(const Tensor<S>&);                                                                     \
    template Tensor<S> sum(const Tensor<S>&);                                                                      \
    template Tensor<S> mean(const Tensor<S>&);                                                                     \
    template Tensor<S> sample_mean(const Tensor<S>&);                                                              \
    template Tensor<S> channel_sum(const Tensor<S>&);                                                              \
    template Tensor<S> reshape(const Tensor<S>&, const Shape&);                                                    \
    template Tensor<S> concat_channels(const Tensor<S>&, const Tensor<S>&);                                        \
    template Tensor<S> select_sample(const Tensor<S>&, int);                                                       \
    template Tensor<S> stack_samples(const std::vector<Tensor<S>>&);                                               \
    template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int);                     \
    template Tensor<S> upsample_nearest2x(const Tensor<S>&);                                                       \
    template Tensor<S> avg_pool(const Tensor<S>&, int);                                                            \
    template Tensor<S> instance_norm(const Tensor<S>&, S);                                                         \
    template Tensor<S> l2_normalize(const Tensor<S>&, S);                                                          \
    template Tensor<S> cross_entropy(const Tensor<S>&, const std::vector<int>&);                                   \
    template Tensor<S> crop_resize(const Tensor<S>&, int, const PixelBox&, int, int);

FSWAP_INSTANTIATE(float)
FSWAP_INSTANTIATE(double)

#undef FSWAP_INSTANTIATE

} // namespace fswap::ad
