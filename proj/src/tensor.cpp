#include "tdm/tensor.hpp"

#include <cmath>
#include <sstream>

namespace tdm {

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
    }
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor& Tensor::operator+=(const Tensor& o) {
    check_same_shape(*this, o, "tensor add");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
    check_same_shape(*this, o, "tensor sub");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data) v *= s;
    return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
        throw std::invalid_argument("matmul: incompatible shapes " + a.shape_str() + " x " +
                                    b.shape_str());
    }
    const int m = a.shape[0], k = a.shape[1], n = b.shape[0] ? b.shape[1] : 0;
    Tensor c({m, n});
    for (int i = 0; i < m; ++i) {
        const double* arow = &a.data[static_cast<std::size_t>(i) * k];
        double* crow = &c.data[static_cast<std::size_t>(i) * n];
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = &b.data[static_cast<std::size_t>(kk) * n];
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) throw std::invalid_argument("transpose2d: rank 2 required");
    Tensor t({a.shape[1], a.shape[0]});
    for (int i = 0; i < a.shape[0]; ++i)
        for (int j = 0; j < a.shape[1]; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

double dot(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace tdm
