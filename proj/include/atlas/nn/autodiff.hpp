#pragma once

#include <Eigen/Dense>

#include <functional>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

namespace atlas::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Tape;
class Parameter;
class LookupTable;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
public:
    Var() = default;

    const Matrix& value() const;
    const Matrix& grad() const;
    double scalar() const { return value()(0, 0); }
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    bool valid() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Reverse-mode autodiff tape. Nodes are appended in topological order by
/// construction, so backward() is a single reverse sweep.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Matrix&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var constant(double value);
    /// Binds a parameter; repeated calls return the same node.
    Var parameter(Parameter& p);
    /// One column of a lookup table. When `trainable` is false the value is
    /// copied in as a constant and the table receives no gradient.
    Var lookup(LookupTable& table, int index, bool trainable = true);

    /// Records an op. `backward` receives the upstream gradient of the result
    /// and must call accumulate() on its inputs. Skipped when no input needs
    /// gradients.
    Var record(Matrix value, bool needs_grad, Backward backward);

    void backward(const Var& loss);
    void accumulate(int id, const Matrix& g);

    const Matrix& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Matrix& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        Backward backward;
    };
    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, int> bound_params_;
};

// Elementwise and linear algebra ops. Shapes follow Eigen conventions; column
// vectors are n x 1 matrices.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var cmul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
/// a^T * b
Var matmul_tn(const Var& a, const Var& b);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var log(const Var& a);
Var exp(const Var& a);
Var sum(const Var& a);
Var sum(std::span<const Var> xs);
Var mean(std::span<const Var> xs);
Var dot(const Var& a, const Var& b);
/// Vertical concatenation of column vectors (or matrices with equal cols).
Var concat(std::span<const Var> xs);
Var concat(const Var& a, const Var& b);
/// Horizontal stacking of equally sized column vectors into a matrix.
Var hstack(std::span<const Var> xs);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var column(const Var& a, Eigen::Index j);
Var softmax(const Var& a);
Var log_softmax(const Var& a);
Var pick(const Var& a, Eigen::Index i);
Var negate(const Var& a);

/// Forward value is the exact one-hot at `index`; the backward pass routes the
/// upstream gradient unchanged into `soft`.
Var straight_through(const Var& soft, Eigen::Index index);

/// Inverted dropout with a fixed mask drawn from `rng`. Identity when rate is 0.
Var dropout(const Var& a, double rate, std::mt19937_64& rng);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return matmul(a, b); }

} // namespace atlas::nn
