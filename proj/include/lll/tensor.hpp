#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lll {

using Shape = std::vector<int>;

inline long numel(const Shape& shape) {
    long n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

template <class... Parts>
std::string str(const Parts&... parts) {
    std::ostringstream os;
    (os << ... << parts);
    return os.str();
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

/// Dense real-valued array. `grad` stays empty until a backward pass (or
/// ensure_grad) allocates it. `node_id` is the handle assigned when the
/// tensor is registered as a parameter on the active tape, -1 otherwise.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    int node_id = -1;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel(shape) != static_cast<long>(data.size()))
            throw std::invalid_argument(detail::str("tensor: shape ", shape_str(shape),
                                                    " does not match data length ", data.size()));
        for (int dim : shape)
            if (dim <= 0)
                throw std::invalid_argument("tensor: nonpositive dimension in " + shape_str(shape));
    }

    static Tensor zeros(Shape s) {
        auto n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
    }

    static Tensor full(Shape s, double v) {
        auto n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), v));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    long size() const { return static_cast<long>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    }
};

inline void check_finite(std::span<const double> xs, const std::string& what) {
    for (double x : xs)
        if (!std::isfinite(x))
            throw std::runtime_error("non-finite value in " + what);
}

}  // namespace lll
