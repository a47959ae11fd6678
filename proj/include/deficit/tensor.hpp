// Dense f64 tensors with tape-based reverse-mode differentiation.
//
// Tensors are cheap handles onto shared storage; operations build their
// result eagerly and, when any input carries gradients, push one backward
// closure onto the Tape. Replaying the tape in reverse accumulates exact
// gradients into every tensor that requires them.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace deficit {

using Shape = std::vector<std::size_t>;

namespace detail {

struct TensorData {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty unless requires_grad
    bool requires_grad = false;
};

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ' ';
        os << s[i];
    }
    os << ']';
    return os.str();
}

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
        : data_(std::make_shared<detail::TensorData>()) {
        for (auto d : shape) {
            if (d == 0) throw std::invalid_argument("Tensor: zero dimension in shape " + detail::shape_str(shape));
        }
        data_->shape = std::move(shape);
        data_->values.assign(detail::shape_numel(data_->shape), 0.0);
        data_->requires_grad = requires_grad;
        if (requires_grad) data_->grad.assign(data_->values.size(), 0.0);
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        Tensor t(Shape{1}, requires_grad);
        t.data_->values[0] = v;
        return t;
    }

    static Tensor from_vector(std::vector<double> v, bool requires_grad = false) {
        Tensor t(Shape{v.size()}, requires_grad);
        t.data_->values = std::move(v);
        return t;
    }

    static Tensor from_matrix(std::size_t rows, std::size_t cols, std::vector<double> v,
                              bool requires_grad = false) {
        if (v.size() != rows * cols)
            throw std::invalid_argument("Tensor::from_matrix: value count does not match rows*cols");
        Tensor t(Shape{rows, cols}, requires_grad);
        t.data_->values = std::move(v);
        return t;
    }

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return data_->shape; }
    std::size_t rank() const { return data_->shape.size(); }
    std::size_t size() const { return data_->values.size(); }
    bool requires_grad() const { return data_->requires_grad; }
    bool has_grad() const { return !data_->grad.empty(); }

    double* data() { return data_->values.data(); }
    const double* data() const { return data_->values.data(); }
    std::vector<double>& values() { return data_->values; }
    const std::vector<double>& values() const { return data_->values; }

    double* grad() { return data_->grad.data(); }
    const double* grad() const { return data_->grad.data(); }
    std::vector<double>& grad_values() { return data_->grad; }
    const std::vector<double>& grad_values() const { return data_->grad; }

    double operator[](std::size_t i) const { return data_->values[i]; }
    double& operator[](std::size_t i) { return data_->values[i]; }

    /// Value of a single-element tensor.
    double item() const {
        if (size() != 1)
            throw std::invalid_argument("Tensor::item: tensor has shape " + detail::shape_str(shape()));
        return data_->values[0];
    }

    void set_requires_grad(bool on) {
        data_->requires_grad = on;
        if (on && data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
        if (!on) data_->grad.clear();
    }

    void zero_grad() {
        std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
    }

    void fill(double v) { std::fill(data_->values.begin(), data_->values.end(), v); }

    /// Deep copy; gradients are not copied.
    Tensor clone() const {
        Tensor t(shape(), requires_grad());
        t.data_->values = data_->values;
        return t;
    }

    std::shared_ptr<detail::TensorData> storage() const { return data_; }

private:
    std::shared_ptr<detail::TensorData> data_;
};

/// Ordered record of backward rules for one forward pass. Nodes are appended
/// in execution order; backward() replays them once, in reverse.
class Tape {
public:
    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

    std::size_t size() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
    /// requires_grad tensor reachable from the recorded operations.
    void backward(Tensor& loss) {
        if (loss.size() != 1)
            throw std::invalid_argument("Tape::backward: loss must be scalar, got shape " +
                                        detail::shape_str(loss.shape()));
        if (!loss.requires_grad())
            throw std::invalid_argument("Tape::backward: loss does not require gradients");
        loss.grad()[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> nodes_;
};

enum class Elementwise { add, sub, mul };
enum class Activation { sigmoid, tanh, softmax };

namespace detail {

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

inline Tensor make_output(Shape shape, bool requires_grad) {
    return Tensor(std::move(shape), requires_grad);
}

using Data = std::shared_ptr<TensorData>;

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Tensor elementwise(Tape& tape, Elementwise op, const Tensor& a, const Tensor& b) {
    detail::check_same_shape("elementwise", a, b);
    const bool needs = a.requires_grad() || b.requires_grad();
    Tensor out = detail::make_output(a.shape(), needs);
    const std::size_t n = a.size();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    switch (op) {
        case Elementwise::add:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
            break;
        case Elementwise::sub:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
            break;
        case Elementwise::mul:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
            break;
    }
    if (needs) {
        detail::Data da = a.storage(), db = b.storage(), dy = out.storage();
        tape.record([op, da, db, dy] {
            const std::size_t m = dy->values.size();
            const double* g = dy->grad.data();
            switch (op) {
                case Elementwise::add:
                    if (da->requires_grad)
                        for (std::size_t i = 0; i < m; ++i) da->grad[i] += g[i];
                    if (db->requires_grad)
                        for (std::size_t i = 0; i < m; ++i) db->grad[i] += g[i];
                    break;
                case Elementwise::sub:
                    if (da->requires_grad)
                        for (std::size_t i = 0; i < m; ++i) da->grad[i] += g[i];
                    if (db->requires_grad)
                        for (std::size_t i = 0; i < m; ++i) db->grad[i] -= g[i];
                    break;
                case Elementwise::mul:
                    if (da->requires_grad)
                        for (std::size_t i = 0; i < m; ++i) da->grad[i] += g[i] * db->values[i];
                    if (db->requires_grad)
                        for (std::size_t i = 0; i < m; ++i) db->grad[i] += g[i] * da->values[i];
                    break;
            }
        });
    }
    return out;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) { return elementwise(tape, Elementwise::add, a, b); }
inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) { return elementwise(tape, Elementwise::sub, a, b); }
inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) { return elementwise(tape, Elementwise::mul, a, b); }

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// (r x k)·(k x c) -> (r x c); also accepts a 1-D right operand of length k
/// and returns a length-r vector.
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2)
        throw std::invalid_argument("matmul: left operand must be 2-D, got " + detail::shape_str(a.shape()));
    const bool vec = b.rank() == 1;
    if (!vec && b.rank() != 2)
        throw std::invalid_argument("matmul: right operand must be 1-D or 2-D, got " + detail::shape_str(b.shape()));
    const std::size_t r = a.shape()[0];
    const std::size_t k = a.shape()[1];
    const std::size_t bk = vec ? b.shape()[0] : b.shape()[0];
    const std::size_t c = vec ? 1 : b.shape()[1];
    if (k != bk)
        throw std::invalid_argument("matmul: shape mismatch: " + detail::shape_str(a.shape()) + " x " +
                                    detail::shape_str(b.shape()));
    const bool needs = a.requires_grad() || b.requires_grad();
    Tensor out = detail::make_output(vec ? Shape{r} : Shape{r, c}, needs);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += pa[i * k + t] * pb[t * c + j];
            po[i * c + j] = acc;
        }
    }
    if (needs) {
        detail::Data da = a.storage(), db = b.storage(), dy = out.storage();
        tape.record([da, db, dy, r, k, c] {
            const double* g = dy->grad.data();
            if (da->requires_grad) {
                // dL/da = dL/dy · b^T
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t t = 0; t < k; ++t) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < c; ++j) acc += g[i * c + j] * db->values[t * c + j];
                        da->grad[i * k + t] += acc;
                    }
            }
            if (db->requires_grad) {
                // dL/db = a^T · dL/dy
                for (std::size_t t = 0; t < k; ++t)
                    for (std::size_t j = 0; j < c; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < r; ++i) acc += da->values[i * k + t] * g[i * c + j];
                        db->grad[t * c + j] += acc;
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

namespace detail {

inline double sigmoid_val(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

inline Tensor activation(Tape& tape, Activation op, const Tensor& x) {
    const bool needs = x.requires_grad();
    Tensor out = detail::make_output(x.shape(), needs);
    const std::size_t n = x.size();
    const double* px = x.data();
    double* po = out.data();
    switch (op) {
        case Activation::sigmoid:
            for (std::size_t i = 0; i < n; ++i) po[i] = detail::sigmoid_val(px[i]);
            break;
        case Activation::tanh:
            for (std::size_t i = 0; i < n; ++i) po[i] = std::tanh(px[i]);
            break;
        case Activation::softmax: {
            // Applied over the last axis, stabilized by max subtraction.
            const std::size_t cols = x.shape().back();
            const std::size_t rows = n / cols;
            for (std::size_t rI = 0; rI < rows; ++rI) {
                const double* row = px + rI * cols;
                double* orow = po + rI * cols;
                double mx = row[0];
                for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
                double denom = 0.0;
                for (std::size_t j = 0; j < cols; ++j) {
                    orow[j] = std::exp(row[j] - mx);
                    denom += orow[j];
                }
                for (std::size_t j = 0; j < cols; ++j) orow[j] /= denom;
            }
            break;
        }
    }
    if (needs) {
        detail::Data dx = x.storage(), dy = out.storage();
        tape.record([op, dx, dy] {
            const std::size_t m = dy->values.size();
            const double* g = dy->grad.data();
            const double* y = dy->values.data();
            switch (op) {
                case Activation::sigmoid:
                    for (std::size_t i = 0; i < m; ++i) dx->grad[i] += g[i] * y[i] * (1.0 - y[i]);
                    break;
                case Activation::tanh:
                    for (std::size_t i = 0; i < m; ++i) dx->grad[i] += g[i] * (1.0 - y[i] * y[i]);
                    break;
                case Activation::softmax: {
                    const std::size_t cols = dy->shape.back();
                    const std::size_t rows = m / cols;
                    for (std::size_t rI = 0; rI < rows; ++rI) {
                        const double* yr = y + rI * cols;
                        const double* gr = g + rI * cols;
                        double dot = 0.0;
                        for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
                        for (std::size_t j = 0; j < cols; ++j)
                            dx->grad[rI * cols + j] += yr[j] * (gr[j] - dot);
                    }
                    break;
                }
            }
        });
    }
    return out;
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) { return activation(tape, Activation::sigmoid, x); }
inline Tensor tanh(Tape& tape, const Tensor& x) { return activation(tape, Activation::tanh, x); }
inline Tensor softmax(Tape& tape, const Tensor& x) { return activation(tape, Activation::softmax, x); }

// ---------------------------------------------------------------------------
// concat
// ---------------------------------------------------------------------------

/// Concatenates 1-D or 2-D tensors along `axis`. All non-concat dimensions
/// must agree.
inline Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis = 0) {
    if (parts.empty()) throw std::invalid_argument("concat: empty tensor list");
    const std::size_t rank = parts.front().rank();
    if (rank > 2) throw std::invalid_argument("concat: only 1-D and 2-D tensors supported");
    if (axis >= rank) throw std::invalid_argument("concat: axis out of range");
    Shape out_shape = parts.front().shape();
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const Shape& s = parts[i].shape();
        if (s.size() != rank)
            throw std::invalid_argument("concat: rank mismatch: " + detail::shape_str(parts.front().shape()) +
                                        " vs " + detail::shape_str(s));
        for (std::size_t d = 0; d < rank; ++d) {
            if (d == axis) continue;
            if (s[d] != out_shape[d])
                throw std::invalid_argument("concat: shape mismatch off axis: " +
                                            detail::shape_str(parts.front().shape()) + " vs " +
                                            detail::shape_str(s));
        }
        out_shape[axis] += s[axis];
    }
    bool needs = false;
    for (const auto& p : parts) needs = needs || p.requires_grad();
    Tensor out = detail::make_output(out_shape, needs);

    // Row-major copy; for axis 1 each part contributes a column block.
    const std::size_t rows = rank == 2 ? out_shape[0] : 1;
    const std::size_t out_cols = rank == 2 ? out_shape[1] : out_shape[0];
    std::size_t offset = 0;  // along the concat axis, in columns or rows
    std::vector<std::size_t> offsets(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
        offsets[i] = offset;
        const Tensor& p = parts[i];
        const std::size_t p_rows = rank == 2 ? p.shape()[0] : 1;
        const std::size_t p_cols = rank == 2 ? p.shape()[1] : p.shape()[0];
        if (axis == 0 && rank <= 1) {
            std::copy(p.data(), p.data() + p_cols, out.data() + offset);
            offset += p_cols;
        } else if (axis == 0) {
            std::copy(p.data(), p.data() + p_rows * p_cols, out.data() + offset * out_cols);
            offset += p_rows;
        } else {
            for (std::size_t rI = 0; rI < rows; ++rI)
                std::copy(p.data() + rI * p_cols, p.data() + (rI + 1) * p_cols,
                          out.data() + rI * out_cols + offset);
            offset += p_cols;
        }
    }
    if (needs) {
        std::vector<detail::Data> ins;
        ins.reserve(parts.size());
        for (const auto& p : parts) ins.push_back(p.storage());
        detail::Data dy = out.storage();
        tape.record([ins, offsets, dy, axis, rank, rows, out_cols] {
            const double* g = dy->grad.data();
            for (std::size_t i = 0; i < ins.size(); ++i) {
                const detail::Data& in = ins[i];
                if (!in->requires_grad) continue;
                const std::size_t p_rows = rank == 2 ? in->shape[0] : 1;
                const std::size_t p_cols = rank == 2 ? in->shape[1] : in->shape[0];
                if (axis == 0 && rank <= 1) {
                    for (std::size_t j = 0; j < p_cols; ++j) in->grad[j] += g[offsets[i] + j];
                } else if (axis == 0) {
                    const double* gs = g + offsets[i] * out_cols;
                    for (std::size_t j = 0; j < p_rows * p_cols; ++j) in->grad[j] += gs[j];
                } else {
                    for (std::size_t rI = 0; rI < rows; ++rI)
                        for (std::size_t j = 0; j < p_cols; ++j)
                            in->grad[rI * p_cols + j] += g[rI * out_cols + offsets[i] + j];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

/// Row `row` of a 2-D table as a 1-D tensor (embedding lookup).
inline Tensor lookup_row(Tape& tape, const Tensor& table, std::size_t row) {
    if (table.rank() != 2)
        throw std::invalid_argument("lookup_row: table must be 2-D, got " + detail::shape_str(table.shape()));
    const std::size_t rows = table.shape()[0];
    const std::size_t cols = table.shape()[1];
    if (row >= rows)
        throw std::invalid_argument("lookup_row: row " + std::to_string(row) + " out of range for " +
                                    detail::shape_str(table.shape()));
    const bool needs = table.requires_grad();
    Tensor out = detail::make_output(Shape{cols}, needs);
    std::copy(table.data() + row * cols, table.data() + (row + 1) * cols, out.data());
    if (needs) {
        detail::Data dt = table.storage(), dy = out.storage();
        tape.record([dt, dy, row, cols] {
            for (std::size_t j = 0; j < cols; ++j) dt->grad[row * cols + j] += dy->grad[j];
        });
    }
    return out;
}

/// Single element of a 1-D tensor as a scalar.
inline Tensor at(Tape& tape, const Tensor& x, std::size_t index) {
    if (x.rank() != 1)
        throw std::invalid_argument("at: tensor must be 1-D, got " + detail::shape_str(x.shape()));
    if (index >= x.size()) throw std::invalid_argument("at: index out of range");
    const bool needs = x.requires_grad();
    Tensor out = detail::make_output(Shape{1}, needs);
    out[0] = x[index];
    if (needs) {
        detail::Data dx = x.storage(), dy = out.storage();
        tape.record([dx, dy, index] { dx->grad[index] += dy->grad[0]; });
    }
    return out;
}

inline Tensor sum(Tape& tape, const Tensor& x) {
    const bool needs = x.requires_grad();
    Tensor out = detail::make_output(Shape{1}, needs);
    out[0] = std::accumulate(x.data(), x.data() + x.size(), 0.0);
    if (needs) {
        detail::Data dx = x.storage(), dy = out.storage();
        tape.record([dx, dy] {
            const double g = dy->grad[0];
            for (auto& gv : dx->grad) gv += g;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// fused affine forms (the network hot path)
// ---------------------------------------------------------------------------

/// W·x + b for a 2-D weight, 1-D input and 1-D bias.
inline Tensor affine(Tape& tape, const Tensor& w, const Tensor& x, const Tensor& b) {
    if (w.rank() != 2 || x.rank() != 1 || b.rank() != 1)
        throw std::invalid_argument("affine: expected 2-D weight, 1-D input, 1-D bias");
    const std::size_t out_dim = w.shape()[0];
    const std::size_t in_dim = w.shape()[1];
    if (x.size() != in_dim || b.size() != out_dim)
        throw std::invalid_argument("affine: shape mismatch: " + detail::shape_str(w.shape()) + " x " +
                                    detail::shape_str(x.shape()) + " + " + detail::shape_str(b.shape()));
    const bool needs = w.requires_grad() || x.requires_grad() || b.requires_grad();
    Tensor out = detail::make_output(Shape{out_dim}, needs);
    const double* pw = w.data();
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out_dim; ++i) {
        double acc = b[i];
        const double* row = pw + i * in_dim;
        for (std::size_t j = 0; j < in_dim; ++j) acc += row[j] * px[j];
        po[i] = acc;
    }
    if (needs) {
        detail::Data dw = w.storage(), dx = x.storage(), db = b.storage(), dy = out.storage();
        tape.record([dw, dx, db, dy, out_dim, in_dim] {
            const double* g = dy->grad.data();
            if (dw->requires_grad)
                for (std::size_t i = 0; i < out_dim; ++i)
                    for (std::size_t j = 0; j < in_dim; ++j) dw->grad[i * in_dim + j] += g[i] * dx->values[j];
            if (dx->requires_grad)
                for (std::size_t i = 0; i < out_dim; ++i)
                    for (std::size_t j = 0; j < in_dim; ++j) dx->grad[j] += g[i] * dw->values[i * in_dim + j];
            if (db->requires_grad)
                for (std::size_t i = 0; i < out_dim; ++i) db->grad[i] += g[i];
        });
    }
    return out;
}

/// W·x + U·y + b, the shape every GRU gate pre-activation takes.
inline Tensor affine2(Tape& tape, const Tensor& w, const Tensor& x, const Tensor& u, const Tensor& y,
                      const Tensor& b) {
    if (w.rank() != 2 || u.rank() != 2 || x.rank() != 1 || y.rank() != 1 || b.rank() != 1)
        throw std::invalid_argument("affine2: expected 2-D weights and 1-D vectors");
    const std::size_t out_dim = w.shape()[0];
    if (u.shape()[0] != out_dim || b.size() != out_dim || w.shape()[1] != x.size() || u.shape()[1] != y.size())
        throw std::invalid_argument("affine2: shape mismatch: " + detail::shape_str(w.shape()) + " x " +
                                    detail::shape_str(x.shape()) + " + " + detail::shape_str(u.shape()) +
                                    " x " + detail::shape_str(y.shape()));
    const std::size_t in_x = x.size();
    const std::size_t in_y = y.size();
    const bool needs = w.requires_grad() || x.requires_grad() || u.requires_grad() || y.requires_grad() ||
                       b.requires_grad();
    Tensor out = detail::make_output(Shape{out_dim}, needs);
    const double* pw = w.data();
    const double* pu = u.data();
    const double* px = x.data();
    const double* py = y.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out_dim; ++i) {
        double acc = b[i];
        const double* wrow = pw + i * in_x;
        for (std::size_t j = 0; j < in_x; ++j) acc += wrow[j] * px[j];
        const double* urow = pu + i * in_y;
        for (std::size_t j = 0; j < in_y; ++j) acc += urow[j] * py[j];
        po[i] = acc;
    }
    if (needs) {
        detail::Data dw = w.storage(), dx = x.storage(), du = u.storage(), dyv = y.storage(),
                     db = b.storage(), dout = out.storage();
        tape.record([dw, dx, du, dyv, db, dout, out_dim, in_x, in_y] {
            const double* g = dout->grad.data();
            if (dw->requires_grad)
                for (std::size_t i = 0; i < out_dim; ++i)
                    for (std::size_t j = 0; j < in_x; ++j) dw->grad[i * in_x + j] += g[i] * dx->values[j];
            if (dx->requires_grad)
                for (std::size_t i = 0; i < out_dim; ++i)
                    for (std::size_t j = 0; j < in_x; ++j) dx->grad[j] += g[i] * dw->values[i * in_x + j];
            if (du->requires_grad)
                for (std::size_t i = 0; i < out_dim; ++i)
                    for (std::size_t j = 0; j < in_y; ++j) du->grad[i * in_y + j] += g[i] * dyv->values[j];
            if (dyv->requires_grad)
                for (std::size_t i = 0; i < out_dim; ++i)
                    for (std::size_t j = 0; j < in_y; ++j) dyv->grad[j] += g[i] * du->values[i * in_y + j];
            if (db->requires_grad)
                for (std::size_t i = 0; i < out_dim; ++i) db->grad[i] += g[i];
        });
    }
    return out;
}

/// (1 - gate) ⊗ a + gate ⊗ b, the GRU state mix.
inline Tensor lerp(Tape& tape, const Tensor& gate, const Tensor& a, const Tensor& b) {
    detail::check_same_shape("lerp", gate, a);
    detail::check_same_shape("lerp", gate, b);
    const bool needs = gate.requires_grad() || a.requires_grad() || b.requires_grad();
    Tensor out = detail::make_output(gate.shape(), needs);
    const std::size_t n = gate.size();
    const double* pg = gate.data();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = (1.0 - pg[i]) * pa[i] + pg[i] * pb[i];
    if (needs) {
        detail::Data dg = gate.storage(), da = a.storage(), db = b.storage(), dy = out.storage();
        tape.record([dg, da, db, dy, n] {
            const double* g = dy->grad.data();
            if (dg->requires_grad)
                for (std::size_t i = 0; i < n; ++i)
                    dg->grad[i] += g[i] * (db->values[i] - da->values[i]);
            if (da->requires_grad)
                for (std::size_t i = 0; i < n; ++i) da->grad[i] += g[i] * (1.0 - dg->values[i]);
            if (db->requires_grad)
                for (std::size_t i = 0; i < n; ++i) db->grad[i] += g[i] * dg->values[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy of per-item probabilities against {0,1} targets.
/// Probabilities are clamped to [kBceEpsilon, 1-kBceEpsilon] before the log;
/// no gradient flows into the target.
inline Tensor bce_loss(Tape& tape, const Tensor& pred, const Tensor& target) {
    if (pred.size() != target.size())
        throw std::invalid_argument("bce_loss: length mismatch: " + detail::shape_str(pred.shape()) +
                                    " vs " + detail::shape_str(target.shape()));
    if (pred.size() == 0) throw std::invalid_argument("bce_loss: empty input");
    const bool needs = pred.requires_grad();
    Tensor out = detail::make_output(Shape{1}, needs);
    const std::size_t n = pred.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = std::clamp(pred[i], kBceEpsilon, 1.0 - kBceEpsilon);
        const double t = target[i];
        acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    out[0] = acc / static_cast<double>(n);
    if (needs) {
        detail::Data dp = pred.storage(), dt = target.storage(), dy = out.storage();
        tape.record([dp, dt, dy, n] {
            const double g = dy->grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double p = dp->values[i];
                if (p <= kBceEpsilon || p >= 1.0 - kBceEpsilon) continue;  // flat in the clamped region
                const double t = dt->values[i];
                dp->grad[i] += g * (-t / p + (1.0 - t) / (1.0 - p));
            }
        });
    }
    return out;
}

/// Mean absolute error; subgradient 0 where pred == target. No gradient
/// flows into the target.
inline Tensor mae_loss(Tape& tape, const Tensor& pred, const Tensor& target) {
    if (pred.size() != target.size())
        throw std::invalid_argument("mae_loss: length mismatch: " + detail::shape_str(pred.shape()) +
                                    " vs " + detail::shape_str(target.shape()));
    if (pred.size() == 0) throw std::invalid_argument("mae_loss: empty input");
    const bool needs = pred.requires_grad();
    Tensor out = detail::make_output(Shape{1}, needs);
    const std::size_t n = pred.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(pred[i] - target[i]);
    out[0] = acc / static_cast<double>(n);
    if (needs) {
        detail::Data dp = pred.storage(), dt = target.storage(), dy = out.storage();
        tape.record([dp, dt, dy, n] {
            const double g = dy->grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double d = dp->values[i] - dt->values[i];
                if (d > 0.0)
                    dp->grad[i] += g;
                else if (d < 0.0)
                    dp->grad[i] -= g;
            }
        });
    }
    return out;
}

/// Frees loss graph plumbing: convenience for callers that just want the
/// gradients of `loss` w.r.t. everything recorded on `tape`.
inline void backward(Tensor& loss, Tape& tape) { tape.backward(loss); }

}  // namespace deficit
