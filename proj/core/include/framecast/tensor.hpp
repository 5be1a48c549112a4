#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace framecast {

// Dense row-major N-d array of doubles. Shapes used throughout:
//   (H, W)          single grayscale frame
//   (C, H, W)       flow image / multichannel frame
//   (N, C, H, W)    network activations
//   (N, D)          feature batches
//   (1, 1)          scalars (loss values)
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), 0.0);
    }

    Tensor(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_)) {
            throw std::invalid_argument("tensor: data size does not match shape");
        }
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static Tensor scalar(double v) { return full({1, 1}, v); }

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    double& at(int i, int j) {
        assert(rank() == 2);
        return data_[static_cast<size_t>(i) * dim(1) + j];
    }
    double at(int i, int j) const {
        assert(rank() == 2);
        return data_[static_cast<size_t>(i) * dim(1) + j];
    }

    double& at(int n, int c, int y, int x) {
        assert(rank() == 4);
        return data_[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }
    double at(int n, int c, int y, int x) const {
        assert(rank() == 4);
        return data_[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }

    double item() const {
        if (size() != 1) throw std::logic_error("tensor: item() on non-scalar");
        return data_[0];
    }

    Tensor reshaped(std::vector<int> shape) const {
        if (count(shape) != size()) throw std::invalid_argument("tensor: reshape size mismatch");
        return Tensor(std::move(shape), data_);
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    double min() const {
        double m = data_.empty() ? 0.0 : data_[0];
        for (double v : data_) m = std::min(m, v);
        return m;
    }
    double max() const {
        double m = data_.empty() ? 0.0 : data_[0];
        for (double v : data_) m = std::max(m, v);
        return m;
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::string out = "(";
        for (size_t i = 0; i < s.size(); ++i) {
            out += std::to_string(s[i]);
            if (i + 1 < s.size()) out += ",";
        }
        return out + ")";
    }

    static size_t count(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= static_cast<size_t>(d);
        }
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) return false;
    }
    return true;
}

}  // namespace framecast
