#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lindit {

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};
struct GeometryError : std::runtime_error {
    explicit GeometryError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

// Dense row-major array. Shape checks are explicit in every op; the only
// broadcasting supported anywhere is scalar-vs-tensor and row-vector-vs-matrix.
template <class T>
struct Ten {
    Shape shape;
    std::vector<T> data;

    Ten() = default;
    explicit Ten(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
    Ten(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != data.size())
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    T& at(std::size_t i) { return data[i]; }
    const T& at(std::size_t i) const { return data[i]; }

    // 2-D accessors (rows x cols, row-major)
    std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
    std::size_t cols() const { return shape.size() == 2 ? shape[1] : numel(); }
    T& at(std::size_t r, std::size_t c) { return data[index2(r, c)]; }
    const T& at(std::size_t r, std::size_t c) const { return data[index2(r, c)]; }

    std::size_t index2(std::size_t r, std::size_t c) const {
        std::size_t i = r * shape[1] + c;
        if (r >= shape[0] || c >= shape[1])
            throw DimensionError("index (" + std::to_string(r) + "," + std::to_string(c) +
                                 ") out of range for shape " + shape_str(shape));
        return i;
    }

    bool same_shape(const Ten& o) const { return shape == o.shape; }

    static Ten zeros(Shape s) { return Ten(std::move(s)); }
    static Ten full(Shape s, T v) {
        Ten t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Ten scalar(T v) { return Ten({1}, {v}); }
};

using Tensor = Ten<double>;
using TensorF = Ten<float>;

template <class T>
inline void check_same_shape(const Ten<T>& a, const Ten<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                             " vs " + shape_str(b.shape));
}

template <class T>
inline void check_finite(const Ten<T>& t, const char* where) {
    for (auto v : t.data)
        if (!std::isfinite(v)) throw NumericError(std::string(where) + ": non-finite value");
}

}  // namespace lindit
