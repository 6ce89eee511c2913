#pragma once

#include "atlas/nn/autodiff.hpp"

#include <deque>
#include <filesystem>
#include <map>
#include <random>
#include <string>

namespace atlas::nn {

class Parameter {
public:
    Parameter(std::string name, Matrix value)
        : name_(std::move(name)), value_(std::move(value)), grad_(Matrix::Zero(value_.rows(), value_.cols())) {}

    const std::string& name() const { return name_; }
    Matrix& value() { return value_; }
    const Matrix& value() const { return value_; }
    Matrix& grad() { return grad_; }
    const Matrix& grad() const { return grad_; }
    void zero_grad() { grad_.setZero(); }

    bool frozen = false;

private:
    std::string name_;
    Matrix value_;
    Matrix grad_;
};

/// Embedding table stored column-major: column i is the vector of entry i.
/// Gradients are sparse so that only touched entries are updated.
class LookupTable {
public:
    LookupTable(std::string name, Matrix value) : name_(std::move(name)), value_(std::move(value)) {}

    const std::string& name() const { return name_; }
    Matrix& value() { return value_; }
    const Matrix& value() const { return value_; }
    Eigen::Index dim() const { return value_.rows(); }
    Eigen::Index size() const { return value_.cols(); }

    std::map<int, Vector>& grad() { return grad_; }
    const std::map<int, Vector>& grad() const { return grad_; }
    void zero_grad() { grad_.clear(); }

    bool frozen = false;

private:
    std::string name_;
    Matrix value_;
    std::map<int, Vector> grad_;
};

/// Owns every trainable tensor of a model. Addresses are stable for the
/// lifetime of the set, so layers keep raw pointers into it.
class ParameterSet {
public:
    ParameterSet() = default;
    ParameterSet(const ParameterSet&) = delete;
    ParameterSet& operator=(const ParameterSet&) = delete;
    // Moving keeps element addresses: deque storage is transferred, not copied.
    ParameterSet(ParameterSet&&) = default;
    ParameterSet& operator=(ParameterSet&&) = default;

    /// Uniform(-scale, scale) init; scale 0 gives zeros.
    Parameter& add(const std::string& name, Eigen::Index rows, Eigen::Index cols, double scale,
                   std::mt19937_64& rng);
    LookupTable& add_table(const std::string& name, Eigen::Index dim, Eigen::Index count, double scale,
                           std::mt19937_64& rng);

    Parameter* find(const std::string& name);
    LookupTable* find_table(const std::string& name);

    std::deque<Parameter>& parameters() { return params_; }
    const std::deque<Parameter>& parameters() const { return params_; }
    std::deque<LookupTable>& tables() { return tables_; }
    const std::deque<LookupTable>& tables() const { return tables_; }

    void zero_grad();
    /// False when any accumulated gradient holds a NaN or infinity.
    bool grads_finite() const;
    size_t count() const;

    /// Binary format: magic, version, then (name, rows, cols, doubles) records.
    void save(const std::filesystem::path& path) const;
    /// Loads into already-declared tensors; names and shapes must match.
    void load(const std::filesystem::path& path);
    /// SHA-256 over names, shapes and raw values.
    std::string digest() const;

private:
    std::deque<Parameter> params_;
    std::deque<LookupTable> tables_;
};

} // namespace atlas::nn
