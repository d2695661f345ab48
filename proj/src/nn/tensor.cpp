#include "segvae/nn/tensor.hpp"

#include <algorithm>
#include <stdexcept>

namespace segvae::nn {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) {
            throw std::invalid_argument("negative tensor dimension");
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_numel(shape)) {
        throw std::invalid_argument("tensor data size does not match shape " + shape_string(shape));
    }
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

}  // namespace segvae::nn
