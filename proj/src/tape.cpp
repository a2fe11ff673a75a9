#include <algorithm>
#include <cmath>

#include "qmarl/nn.hpp"

namespace qmarl::nn {

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.size() + l.b.size();
    return n;
}

bool Network::same_shape(const Network& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (!layers[i].same_shape(o.layers[i])) return false;
    return true;
}

bool Network::finite() const {
    for (const auto& l : layers) {
        for (double x : l.w)
            if (!std::isfinite(x)) return false;
        for (double x : l.b)
            if (!std::isfinite(x)) return false;
    }
    return true;
}

void Network::set_zero() {
    for (auto& l : layers) {
        std::fill(l.w.begin(), l.w.end(), 0.0);
        std::fill(l.b.begin(), l.b.end(), 0.0);
    }
}

Network zeros_like(const Network& n) {
    Network z;
    z.layers.reserve(n.layers.size());
    for (const auto& l : n.layers) z.layers.emplace_back(l.in, l.out);
    return z;
}

void add_scaled(Network& dst, const Network& src, double scale) {
    if (!dst.same_shape(src)) throw ShapeError("add_scaled: network shapes differ");
    for (std::size_t i = 0; i < dst.layers.size(); ++i) {
        auto& d = dst.layers[i];
        const auto& s = src.layers[i];
        for (std::size_t k = 0; k < d.w.size(); ++k) d.w[k] += scale * s.w[k];
        for (std::size_t k = 0; k < d.b.size(); ++k) d.b[k] += scale * s.b[k];
    }
}

void xavier_init(Network& n, Rng& rng) {
    for (auto& l : n.layers) {
        const double limit = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
        for (double& x : l.w) x = (2.0 * unit_real(rng) - 1.0) * limit;
        std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    ++n.version;
}

std::vector<double> h_lin(std::span<const double> x, const Layer& p) {
    if (x.size() != static_cast<std::size_t>(p.in)) throw ShapeError("h_lin: input length does not match layer");
    std::vector<double> y(p.b);
    for (int r = 0; r < p.out; ++r) {
        const double* row = p.w.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(p.in);
        double acc = 0.0;
        for (int c = 0; c < p.in; ++c) acc += row[c] * x[static_cast<std::size_t>(c)];
        y[static_cast<std::size_t>(r)] += acc;
    }
    return y;
}

std::vector<double> h_rel(std::span<const double> x, const Layer& p) {
    auto y = h_lin(x, p);
    for (double& v : y) v = std::max(0.0, v);
    return y;
}

// ---------------------------------------------------------------------------

void Tape::reset(const Network& params) {
    params_ = &params;
    version_ = params.version;
    nodes_.clear();
    values_.clear();
    lists_.clear();
}

Tape::Ref Tape::push(Op op, bool needs_grad, std::size_t size, std::uint32_t a, std::uint32_t b) {
    Node n{op, needs_grad, static_cast<std::uint32_t>(values_.size()), static_cast<std::uint32_t>(size), a, b};
    values_.resize(values_.size() + size, 0.0);
    nodes_.push_back(n);
    return static_cast<Ref>(nodes_.size() - 1);
}

std::span<const double> Tape::value(Ref r) const {
    const auto& n = nodes_[r];
    return {values_.data() + n.offset, n.size};
}

Tape::Ref Tape::input(std::span<const double> values) {
    const Ref r = push(Op::Input, false, values.size(), 0, 0);
    std::copy(values.begin(), values.end(), data(r));
    return r;
}

Tape::Ref Tape::affine(std::size_t layer, Ref x) {
    if (params_ == nullptr || layer >= params_->layers.size()) throw ShapeError("affine: unknown layer");
    const Layer& p = params_->layers[layer];
    if (nodes_[x].size != static_cast<std::uint32_t>(p.in)) throw ShapeError("affine: input length does not match layer");
    const Ref r = push(Op::Affine, true, static_cast<std::size_t>(p.out), x, static_cast<std::uint32_t>(layer));
    const double* xv = values_.data() + nodes_[x].offset;
    double* y = data(r);
    const auto in = static_cast<std::size_t>(p.in);
    for (std::size_t o = 0; o < static_cast<std::size_t>(p.out); ++o) {
        const double* row = p.w.data() + o * in;
        double acc = 0.0;
        for (std::size_t c = 0; c < in; ++c) acc += row[c] * xv[c];
        y[o] = acc + p.b[o];
    }
    return r;
}

Tape::Ref Tape::relu(Ref x) {
    const Ref r = push(Op::Relu, nodes_[x].needs_grad, nodes_[x].size, x, 0);
    const double* xv = values_.data() + nodes_[x].offset;
    double* y = data(r);
    for (std::size_t i = 0; i < nodes_[r].size; ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    return r;
}

Tape::Ref Tape::mul(Ref a, Ref b) {
    if (nodes_[a].size != nodes_[b].size) throw ShapeError("mul: length mismatch");
    const Ref r = push(Op::Mul, nodes_[a].needs_grad || nodes_[b].needs_grad, nodes_[a].size, a, b);
    const double* av = values_.data() + nodes_[a].offset;
    const double* bv = values_.data() + nodes_[b].offset;
    double* y = data(r);
    for (std::size_t i = 0; i < nodes_[r].size; ++i) y[i] = av[i] * bv[i];
    return r;
}

Tape::Ref Tape::add(Ref a, Ref b) {
    if (nodes_[a].size != nodes_[b].size) throw ShapeError("add: length mismatch");
    const Ref r = push(Op::Add, nodes_[a].needs_grad || nodes_[b].needs_grad, nodes_[a].size, a, b);
    const double* av = values_.data() + nodes_[a].offset;
    const double* bv = values_.data() + nodes_[b].offset;
    double* y = data(r);
    for (std::size_t i = 0; i < nodes_[r].size; ++i) y[i] = av[i] + bv[i];
    return r;
}

Tape::Ref Tape::sum(std::span<const Ref> terms, std::size_t dim) {
    bool needs = false;
    for (Ref t : terms) {
        if (nodes_[t].size != dim) throw ShapeError("sum: length mismatch");
        needs = needs || nodes_[t].needs_grad;
    }
    const auto list_start = static_cast<std::uint32_t>(lists_.size());
    lists_.insert(lists_.end(), terms.begin(), terms.end());
    const Ref r = push(Op::Sum, needs, dim, list_start, static_cast<std::uint32_t>(terms.size()));
    double* y = data(r);
    for (Ref t : terms) {
        const double* tv = values_.data() + nodes_[t].offset;
        for (std::size_t i = 0; i < dim; ++i) y[i] += tv[i];
    }
    return r;
}

Tape::Ref Tape::concat(std::span<const Ref> parts) {
    std::size_t total = 0;
    bool needs = false;
    for (Ref p : parts) {
        total += nodes_[p].size;
        needs = needs || nodes_[p].needs_grad;
    }
    const auto list_start = static_cast<std::uint32_t>(lists_.size());
    lists_.insert(lists_.end(), parts.begin(), parts.end());
    const Ref r = push(Op::Concat, needs, total, list_start, static_cast<std::uint32_t>(parts.size()));
    std::size_t at = 0;
    for (Ref p : parts) {
        const auto& n = nodes_[p];
        std::copy_n(values_.data() + n.offset, n.size, values_.data() + nodes_[r].offset + at);
        at += n.size;
    }
    return r;
}

void Tape::backward(std::span<const Seed> seeds, Network& grads) const {
    if (params_ == nullptr) throw StaleTrace("backward on an unbound tape");
    if (params_->version != version_) throw StaleTrace("parameters changed since the forward pass");
    if (!grads.same_shape(*params_)) throw ShapeError("backward: gradient shape does not match parameters");

    grads_.assign(values_.size(), 0.0);
    for (const auto& s : seeds) {
        const auto& n = nodes_.at(s.node);
        if (s.grad.size() != n.size) throw ShapeError("backward: seed length mismatch");
        for (std::size_t i = 0; i < n.size; ++i) grads_[n.offset + i] += s.grad[i];
    }

    for (std::size_t k = nodes_.size(); k-- > 0;) {
        const Node& n = nodes_[k];
        if (!n.needs_grad) continue;
        const double* gy = grads_.data() + n.offset;
        switch (n.op) {
            case Op::Input:
                break;
            case Op::Affine: {
                const Node& x = nodes_[n.a];
                const Layer& p = params_->layers[n.b];
                Layer& g = grads.layers[n.b];
                const double* xv = values_.data() + x.offset;
                const auto in = static_cast<std::size_t>(p.in);
                double* gx = x.needs_grad ? grads_.data() + x.offset : nullptr;
                for (std::size_t o = 0; o < n.size; ++o) {
                    const double go = gy[o];
                    if (go == 0.0) continue;
                    g.b[o] += go;
                    double* grow = g.w.data() + o * in;
                    for (std::size_t c = 0; c < in; ++c) grow[c] += go * xv[c];
                    if (gx != nullptr) {
                        const double* row = p.w.data() + o * in;
                        for (std::size_t c = 0; c < in; ++c) gx[c] += go * row[c];
                    }
                }
                break;
            }
            case Op::Relu: {
                const Node& x = nodes_[n.a];
                const double* y = values_.data() + n.offset;
                double* gx = grads_.data() + x.offset;
                for (std::size_t i = 0; i < n.size; ++i)
                    if (y[i] > 0.0) gx[i] += gy[i];
                break;
            }
            case Op::Mul: {
                const Node& a = nodes_[n.a];
                const Node& b = nodes_[n.b];
                const double* av = values_.data() + a.offset;
                const double* bv = values_.data() + b.offset;
                if (a.needs_grad)
                    for (std::size_t i = 0; i < n.size; ++i) grads_[a.offset + i] += gy[i] * bv[i];
                if (b.needs_grad)
                    for (std::size_t i = 0; i < n.size; ++i) grads_[b.offset + i] += gy[i] * av[i];
                break;
            }
            case Op::Add: {
                const Node& a = nodes_[n.a];
                const Node& b = nodes_[n.b];
                if (a.needs_grad)
                    for (std::size_t i = 0; i < n.size; ++i) grads_[a.offset + i] += gy[i];
                if (b.needs_grad)
                    for (std::size_t i = 0; i < n.size; ++i) grads_[b.offset + i] += gy[i];
                break;
            }
            case Op::Sum: {
                for (std::uint32_t t = 0; t < n.b; ++t) {
                    const Node& term = nodes_[lists_[n.a + t]];
                    if (!term.needs_grad) continue;
                    for (std::size_t i = 0; i < n.size; ++i) grads_[term.offset + i] += gy[i];
                }
                break;
            }
            case Op::Concat: {
                std::size_t at = 0;
                for (std::uint32_t t = 0; t < n.b; ++t) {
                    const Node& part = nodes_[lists_[n.a + t]];
                    if (part.needs_grad)
                        for (std::size_t i = 0; i < part.size; ++i) grads_[part.offset + i] += gy[at + i];
                    at += part.size;
                }
                break;
            }
        }
    }
}

}  // namespace qmarl::nn
