#pragma once

#include "atlas/nn/autodiff.hpp"
#include "atlas/nn/params.hpp"

#include <random>
#include <string>
#include <vector>

namespace atlas::nn {

/// Row index of the largest entry of column 0; ties go to the lowest index.
Eigen::Index argmax_lowest(const Matrix& v);

/// y = W x (+ b)
class Linear {
public:
    Linear() = default;
    Linear(ParameterSet& ps, const std::string& name, Eigen::Index in, Eigen::Index out, bool bias,
           std::mt19937_64& rng);

    Var operator()(Tape& tape, const Var& x) const;
    Eigen::Index in_dim() const { return weight_->value().cols(); }
    Eigen::Index out_dim() const { return weight_->value().rows(); }
    Parameter& weight() { return *weight_; }

private:
    Parameter* weight_ = nullptr;
    Parameter* bias_ = nullptr;
};

/// Single GRU cell with stacked gate matrices (update, reset, candidate).
class GruCell {
public:
    GruCell() = default;
    GruCell(ParameterSet& ps, const std::string& name, Eigen::Index input, Eigen::Index hidden, std::mt19937_64& rng);

    Var step(Tape& tape, const Var& x, const Var& h) const;
    Var zero_state(Tape& tape) const { return tape.constant(Matrix::Zero(hidden_, 1)); }
    Eigen::Index hidden() const { return hidden_; }
    Eigen::Index input() const { return input_; }

private:
    Parameter* w_ = nullptr;  // 3H x I
    Parameter* u_ = nullptr;  // 3H x H
    Parameter* bw_ = nullptr; // 3H
    Parameter* bu_ = nullptr; // 3H
    Eigen::Index input_ = 0;
    Eigen::Index hidden_ = 0;
};

struct Encoding {
    std::vector<Var> states; // per position, [fwd; bwd]
    Var final;               // [fwd at last; bwd at first]
    Var mean;                // average of states
};

/// One-layer bidirectional GRU. Empty input encodes to zeros.
class BiGruEncoder {
public:
    BiGruEncoder() = default;
    BiGruEncoder(ParameterSet& ps, const std::string& name, Eigen::Index input, Eigen::Index hidden,
                 std::mt19937_64& rng);

    Encoding encode(Tape& tape, std::span<const Var> inputs) const;
    Eigen::Index output_dim() const { return 2 * fwd_.hidden(); }

private:
    GruCell fwd_;
    GruCell bwd_;
};

} // namespace atlas::nn
