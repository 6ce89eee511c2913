#include "atlas/nn/autodiff.hpp"

#include "atlas/nn/params.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace atlas::nn {

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::parameter(Parameter& p) {
    if (auto it = bound_params_.find(&p); it != bound_params_.end()) {
        return Var(this, it->second);
    }
    Var v;
    if (p.frozen) {
        v = constant(p.value());
    } else {
        Parameter* ptr = &p;
        v = record(p.value(), true, [ptr](Tape&, const Matrix& g) { ptr->grad() += g; });
    }
    bound_params_.emplace(&p, v.id());
    return v;
}

Var Tape::lookup(LookupTable& table, int index, bool trainable) {
    if (index < 0 || index >= table.size()) {
        throw std::out_of_range("lookup index " + std::to_string(index) + " outside table " + table.name());
    }
    Matrix v = table.value().col(index);
    if (!trainable || table.frozen) {
        return constant(std::move(v));
    }
    LookupTable* ptr = &table;
    return record(std::move(v), true, [ptr, index](Tape&, const Matrix& g) {
        auto [it, inserted] = ptr->grad().try_emplace(index, g.col(0));
        if (!inserted) {
            it->second += g.col(0);
        }
    });
}

Var Tape::record(Matrix value, bool needs_grad, Backward backward) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    if (needs_grad) {
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(int id, const Matrix& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) {
        return;
    }
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

void Tape::backward(const Var& loss) {
    if (loss.tape() != this || loss.value().size() != 1) {
        throw std::invalid_argument("backward() expects a scalar recorded on this tape");
    }
    for (auto& n : nodes_) {
        n.grad.resize(0, 0);
    }
    accumulate(loss.id(), Matrix::Ones(1, 1));
    for (size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.size() == 0 || !n.backward) {
            continue;
        }
        n.backward(*this, n.grad);
    }
}

namespace {

Tape& tape_of(const Var& a) {
    assert(a.valid());
    return *a.tape();
}

bool any_grad(std::span<const Var> xs) {
    for (const auto& x : xs) {
        if (x.tape()->needs_grad(x.id())) {
            return true;
        }
    }
    return false;
}

bool any_grad(const Var& a) { return a.tape()->needs_grad(a.id()); }
bool any_grad(const Var& a, const Var& b) { return any_grad(a) || any_grad(b); }

} // namespace

Var add(const Var& a, const Var& b) {
    Tape& t = tape_of(a);
    int ia = a.id();
    int ib = b.id();
    return t.record(a.value() + b.value(), any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var sub(const Var& a, const Var& b) {
    Tape& t = tape_of(a);
    int ia = a.id();
    int ib = b.id();
    return t.record(a.value() - b.value(), any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, -g);
    });
}

Var negate(const Var& a) { return scale(a, -1.0); }

Var cmul(const Var& a, const Var& b) {
    Tape& t = tape_of(a);
    int ia = a.id();
    int ib = b.id();
    return t.record(a.value().cwiseProduct(b.value()), any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
        t.accumulate(ia, g.cwiseProduct(t.value(ib)));
        t.accumulate(ib, g.cwiseProduct(t.value(ia)));
    });
}

Var scale(const Var& a, double s) {
    Tape& t = tape_of(a);
    int ia = a.id();
    return t.record(a.value() * s, any_grad(a), [ia, s](Tape& t, const Matrix& g) { t.accumulate(ia, g * s); });
}

Var add_scalar(const Var& a, double s) {
    Tape& t = tape_of(a);
    int ia = a.id();
    Matrix v = a.value().array() + s;
    return t.record(std::move(v), any_grad(a), [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g); });
}

Var matmul(const Var& a, const Var& b) {
    Tape& t = tape_of(a);
    int ia = a.id();
    int ib = b.id();
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul shape mismatch");
    }
    return t.record(a.value() * b.value(), any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
        if (t.needs_grad(ia)) {
            t.accumulate(ia, g * t.value(ib).transpose());
        }
        if (t.needs_grad(ib)) {
            t.accumulate(ib, t.value(ia).transpose() * g);
        }
    });
}

Var matmul_tn(const Var& a, const Var& b) {
    Tape& t = tape_of(a);
    int ia = a.id();
    int ib = b.id();
    if (a.rows() != b.rows()) {
        throw std::invalid_argument("matmul_tn shape mismatch");
    }
    return t.record(a.value().transpose() * b.value(), any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
        if (t.needs_grad(ia)) {
            t.accumulate(ia, t.value(ib) * g.transpose());
        }
        if (t.needs_grad(ib)) {
            t.accumulate(ib, t.value(ia) * g);
        }
    });
}

Var sigmoid(const Var& a) {
    Tape& t = tape_of(a);
    int ia = a.id();
    Matrix v = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    if (!any_grad(a)) {
        return t.constant(std::move(v));
    }
    Matrix y = v;
    return t.record(std::move(v), true, [ia, y = std::move(y)](Tape& t, const Matrix& g) {
        t.accumulate(ia, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
    });
}

Var tanh(const Var& a) {
    Tape& t = tape_of(a);
    int ia = a.id();
    Matrix v = a.value().array().tanh();
    if (!any_grad(a)) {
        return t.constant(std::move(v));
    }
    Matrix y = v;
    return t.record(std::move(v), true, [ia, y = std::move(y)](Tape& t, const Matrix& g) {
        t.accumulate(ia, g.cwiseProduct((1.0 - y.array().square()).matrix()));
    });
}

Var relu(const Var& a) {
    Tape& t = tape_of(a);
    int ia = a.id();
    Matrix v = a.value().cwiseMax(0.0);
    return t.record(std::move(v), any_grad(a), [ia](Tape& t, const Matrix& g) {
        Matrix mask = (t.value(ia).array() > 0.0).cast<double>();
        t.accumulate(ia, g.cwiseProduct(mask));
    });
}

Var log(const Var& a) {
    Tape& t = tape_of(a);
    int ia = a.id();
    return t.record(a.value().array().log(), any_grad(a), [ia](Tape& t, const Matrix& g) {
        t.accumulate(ia, g.cwiseQuotient(t.value(ia)));
    });
}

Var exp(const Var& a) {
    Tape& t = tape_of(a);
    int ia = a.id();
    Matrix v = a.value().array().exp();
    Matrix y = v;
    return t.record(std::move(v), any_grad(a),
                    [ia, y = std::move(y)](Tape& t, const Matrix& g) { t.accumulate(ia, g.cwiseProduct(y)); });
}

Var sum(const Var& a) {
    Tape& t = tape_of(a);
    int ia = a.id();
    Eigen::Index r = a.rows();
    Eigen::Index c = a.cols();
    return t.record(Matrix::Constant(1, 1, a.value().sum()), any_grad(a), [ia, r, c](Tape& t, const Matrix& g) {
        t.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
    });
}

Var sum(std::span<const Var> xs) {
    if (xs.empty()) {
        throw std::invalid_argument("sum of empty list");
    }
    Tape& t = tape_of(xs.front());
    Matrix v = xs.front().value();
    for (size_t i = 1; i < xs.size(); ++i) {
        v += xs[i].value();
    }
    std::vector<int> ids;
    ids.reserve(xs.size());
    for (const auto& x : xs) {
        ids.push_back(x.id());
    }
    return t.record(std::move(v), any_grad(xs), [ids = std::move(ids)](Tape& t, const Matrix& g) {
        for (int id : ids) {
            t.accumulate(id, g);
        }
    });
}

Var mean(std::span<const Var> xs) { return scale(sum(xs), 1.0 / static_cast<double>(xs.size())); }

Var dot(const Var& a, const Var& b) { return matmul_tn(a, b); }

Var concat(std::span<const Var> xs) {
    if (xs.empty()) {
        throw std::invalid_argument("concat of empty list");
    }
    Tape& t = tape_of(xs.front());
    Eigen::Index rows = 0;
    Eigen::Index cols = xs.front().cols();
    for (const auto& x : xs) {
        if (x.cols() != cols) {
            throw std::invalid_argument("concat column mismatch");
        }
        rows += x.rows();
    }
    Matrix v(rows, cols);
    std::vector<std::pair<int, Eigen::Index>> parts;
    Eigen::Index at = 0;
    for (const auto& x : xs) {
        v.middleRows(at, x.rows()) = x.value();
        parts.emplace_back(x.id(), x.rows());
        at += x.rows();
    }
    return t.record(std::move(v), any_grad(xs), [parts = std::move(parts)](Tape& t, const Matrix& g) {
        Eigen::Index at = 0;
        for (auto [id, n] : parts) {
            if (t.needs_grad(id)) {
                t.accumulate(id, g.middleRows(at, n));
            }
            at += n;
        }
    });
}

Var concat(const Var& a, const Var& b) {
    const Var xs[2] = {a, b};
    return concat(std::span<const Var>(xs, 2));
}

Var hstack(std::span<const Var> xs) {
    if (xs.empty()) {
        throw std::invalid_argument("hstack of empty list");
    }
    Tape& t = tape_of(xs.front());
    Eigen::Index rows = xs.front().rows();
    Matrix v(rows, static_cast<Eigen::Index>(xs.size()));
    std::vector<int> ids;
    for (size_t j = 0; j < xs.size(); ++j) {
        if (xs[j].rows() != rows || xs[j].cols() != 1) {
            throw std::invalid_argument("hstack expects equal-length column vectors");
        }
        v.col(static_cast<Eigen::Index>(j)) = xs[j].value().col(0);
        ids.push_back(xs[j].id());
    }
    return t.record(std::move(v), any_grad(xs), [ids = std::move(ids)](Tape& t, const Matrix& g) {
        for (size_t j = 0; j < ids.size(); ++j) {
            if (t.needs_grad(ids[j])) {
                t.accumulate(ids[j], g.col(static_cast<Eigen::Index>(j)));
            }
        }
    });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
    Tape& t = tape_of(a);
    int ia = a.id();
    Eigen::Index r = a.rows();
    Eigen::Index c = a.cols();
    return t.record(a.value().middleRows(start, count), any_grad(a), [ia, r, c, start, count](Tape& t, const Matrix& g) {
        Matrix full = Matrix::Zero(r, c);
        full.middleRows(start, count) = g;
        t.accumulate(ia, full);
    });
}

Var column(const Var& a, Eigen::Index j) {
    Tape& t = tape_of(a);
    int ia = a.id();
    Eigen::Index r = a.rows();
    Eigen::Index c = a.cols();
    return t.record(a.value().col(j), any_grad(a), [ia, r, c, j](Tape& t, const Matrix& g) {
        Matrix full = Matrix::Zero(r, c);
        full.col(j) = g.col(0);
        t.accumulate(ia, full);
    });
}

Var softmax(const Var& a) {
    Tape& t = tape_of(a);
    int ia = a.id();
    Vector x = a.value().col(0);
    Vector y = (x.array() - x.maxCoeff()).exp();
    y /= y.sum();
    Vector yc = y;
    return t.record(std::move(y), any_grad(a), [ia, yc = std::move(yc)](Tape& t, const Matrix& g) {
        double inner = yc.dot(g.col(0));
        Vector gx = yc.cwiseProduct((g.col(0).array() - inner).matrix());
        t.accumulate(ia, gx);
    });
}

Var log_softmax(const Var& a) {
    Tape& t = tape_of(a);
    int ia = a.id();
    Vector x = a.value().col(0);
    double m = x.maxCoeff();
    double lse = m + std::log((x.array() - m).exp().sum());
    Vector y = x.array() - lse;
    Vector p = y.array().exp();
    return t.record(std::move(y), any_grad(a), [ia, p = std::move(p)](Tape& t, const Matrix& g) {
        double total = g.col(0).sum();
        t.accumulate(ia, g.col(0) - p * total);
    });
}

Var pick(const Var& a, Eigen::Index i) {
    Tape& t = tape_of(a);
    int ia = a.id();
    Eigen::Index r = a.rows();
    return t.record(Matrix::Constant(1, 1, a.value()(i, 0)), any_grad(a), [ia, r, i](Tape& t, const Matrix& g) {
        Matrix full = Matrix::Zero(r, 1);
        full(i, 0) = g(0, 0);
        t.accumulate(ia, full);
    });
}

Var straight_through(const Var& soft, Eigen::Index index) {
    Tape& t = tape_of(soft);
    int is = soft.id();
    Matrix hard = Matrix::Zero(soft.rows(), 1);
    hard(index, 0) = 1.0;
    return t.record(std::move(hard), any_grad(soft), [is](Tape& t, const Matrix& g) { t.accumulate(is, g); });
}

Var dropout(const Var& a, double rate, std::mt19937_64& rng) {
    if (rate <= 0.0) {
        return a;
    }
    std::bernoulli_distribution keep(1.0 - rate);
    Matrix mask(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
    }
    return cmul(a, a.tape()->constant(std::move(mask)));
}

} // namespace atlas::nn
