#include "fdsm/tensor.hpp"

#include "fdsm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace fdsm {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    if (std::find(shape_.begin(), shape_.end(), std::size_t{0}) != shape_.end()) {
        throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape_));
    }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("shape " + shape_to_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
    }
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_to_string(shape_));
    }
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
    }
}

namespace {

template <class Op>
Tensor zip(const Tensor& a, const Tensor& b, const char* what, Op op) {
    require_same_shape(a, b, what);
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
    return out;
}

} // namespace

Tensor operator+(const Tensor& a, const Tensor& b) {
    return zip(a, b, "add", std::plus<>{});
}
Tensor operator-(const Tensor& a, const Tensor& b) {
    return zip(a, b, "subtract", std::minus<>{});
}
Tensor operator*(const Tensor& a, const Tensor& b) {
    return zip(a, b, "multiply", std::multiplies<>{});
}
Tensor operator*(double s, const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
    return out;
}

double sum(const Tensor& a) {
    return std::accumulate(a.data().begin(), a.data().end(), 0.0);
}

double sum_squares(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) throw ShapeError("stack of zero tensors");
    Shape shape = items.front().shape();
    std::vector<double> data;
    data.reserve(items.size() * items.front().size());
    for (const auto& t : items) {
        if (t.shape() != shape) throw ShapeError("stack: inconsistent shapes");
        data.insert(data.end(), t.data().begin(), t.data().end());
    }
    shape.insert(shape.begin(), items.size());
    return Tensor(std::move(shape), std::move(data));
}

Tensor unstack(const Tensor& batch, std::size_t index) {
    if (batch.rank() < 2 || index >= batch.dim(0)) {
        throw ShapeError("unstack: index out of range for " + shape_to_string(batch.shape()));
    }
    Shape shape(batch.shape().begin() + 1, batch.shape().end());
    const std::size_t n = shape_size(shape);
    auto first = batch.data().begin() + static_cast<std::ptrdiff_t>(index * n);
    return Tensor(std::move(shape), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
}

void ParameterSet::add(std::string name, Tensor value) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
}

Tensor& ParameterSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return entries_[it->second].second;
}

const Tensor& ParameterSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return entries_[it->second].second;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
}

ParameterSet ParameterSet::zeros_like() const {
    ParameterSet out;
    for (const auto& [name, t] : entries_) out.add(name, Tensor(t.shape()));
    return out;
}

} // namespace fdsm
