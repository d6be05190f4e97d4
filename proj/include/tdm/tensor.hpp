#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdm {

// Dense row-major tensor of doubles. Rank is dynamic; most code uses
// rank 1 (vectors), rank 2 (token/projection matrices) or rank 3 (C,H,W).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}
    Tensor(std::vector<int> s, double fill) : shape(std::move(s)), data(numel_of(shape), fill) {}

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }

    double& at(int i) { return data[static_cast<std::size_t>(i)]; }
    double at(int i) const { return data[static_cast<std::size_t>(i)]; }

    double& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
    double at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }

    double& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(double s);

    std::string shape_str() const;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

// C = A(m x k) * B(k x n), plain dense matmul.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

double dot(const Tensor& a, const Tensor& b);
double norm2(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace tdm
