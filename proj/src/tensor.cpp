#include "defend/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_set>

namespace defend {

namespace {

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

// C (m x n) += A (m x k) @ B (k x n)
void mm_nn(int m, int k, int n, const double* a, const double* b, double* c) {
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n * k > 16384)
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<std::size_t>(i) * n;
        const double* arow = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C (m x n) += A (m x k) @ B^T where B is (n x k)
void mm_nt(int m, int k, int n, const double* a, const double* b, double* c) {
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n * k > 16384)
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<std::size_t>(i) * n;
        const double* arow = a + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * k;
            double sum = 0.0;
            for (int p = 0; p < k; ++p) sum += arow[p] * brow[p];
            crow[j] += sum;
        }
    }
}

// C (m x n) += A^T @ B where A is (k x m), B is (k x n)
void mm_tn(int m, int k, int n, const double* a, const double* b, double* c) {
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n * k > 16384)
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<std::size_t>(p) * m + i];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

Tensor make_op_output(int rows, int cols, std::vector<Tensor> parents,
                      std::function<void(TensorImpl&)> backward);

Tensor::Tensor(int rows, int cols) {
    if (rows <= 0 || cols <= 0) throw ShapeError("Tensor: non-positive dimensions");
    impl_ = std::make_shared<TensorImpl>();
    impl_->rows = rows;
    impl_->cols = cols;
    impl_->value.assign(static_cast<std::size_t>(rows) * cols, 0.0);
}

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
    Tensor t(rows, cols);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(int rows, int cols, double value) {
    Tensor t(rows, cols);
    std::fill(t.impl_->value.begin(), t.impl_->value.end(), value);
    return t;
}

Tensor Tensor::randn(int rows, int cols, Rng& rng, double stddev, bool requires_grad) {
    Tensor t(rows, cols);
    for (auto& v : t.impl_->value) v = rng.normal() * stddev;
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::from(std::initializer_list<std::initializer_list<double>> rows) {
    const int r = static_cast<int>(rows.size());
    if (r == 0) throw ShapeError("Tensor::from: empty");
    const int c = static_cast<int>(rows.begin()->size());
    Tensor t(r, c);
    int i = 0;
    for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != c) throw ShapeError("Tensor::from: ragged rows");
        int j = 0;
        for (double v : row) t.at(i, j++) = v;
        ++i;
    }
    return t;
}

Tensor Tensor::scalar(double v) { return full(1, 1, v); }

int Tensor::rows() const { return impl_ ? impl_->rows : 0; }
int Tensor::cols() const { return impl_ ? impl_->cols : 0; }
std::size_t Tensor::size() const { return impl_ ? impl_->value.size() : 0; }

double& Tensor::at(int r, int c) {
    return impl_->value[static_cast<std::size_t>(r) * impl_->cols + c];
}
double Tensor::at(int r, int c) const {
    return impl_->value[static_cast<std::size_t>(r) * impl_->cols + c];
}
double* Tensor::data() { return impl_->value.data(); }
const double* Tensor::data() const { return impl_->value.data(); }

double Tensor::item() const {
    if (size() != 1) throw ShapeError("Tensor::item: not a scalar");
    return impl_->value[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
    check_defined(*this, "set_requires_grad");
    if (impl_->backward_fn) throw ContractError("set_requires_grad: not a leaf");
    impl_->requires_grad = v;
}

double* Tensor::grad() {
    check_defined(*this, "grad");
    impl_->ensure_grad();
    return impl_->grad.data();
}

const double* Tensor::grad_data() const {
    if (!impl_ || impl_->grad.empty()) return nullptr;
    return impl_->grad.data();
}

void Tensor::zero_grad() {
    if (impl_ && !impl_->grad.empty())
        std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    check_defined(*this, "detach");
    auto impl = std::make_shared<TensorImpl>();
    impl->rows = impl_->rows;
    impl->cols = impl_->cols;
    impl->value = impl_->value;  // copy: detached view must not alias the graph
    return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
    check_defined(*this, "clone");
    auto impl = std::make_shared<TensorImpl>();
    impl->rows = impl_->rows;
    impl->cols = impl_->cols;
    impl->value = impl_->value;
    impl->requires_grad = impl_->requires_grad;
    return Tensor(std::move(impl));
}

Tensor make_op_output(int rows, int cols, std::vector<Tensor> parents,
                      std::function<void(TensorImpl&)> backward) {
    Tensor out(rows, cols);
    bool needs = false;
    for (const auto& p : parents)
        if (p.requires_grad()) needs = true;
    if (needs) {
        out.impl_->requires_grad = true;
        out.impl_->parents = std::move(parents);
        out.impl_->backward_fn = std::move(backward);
    }
    return out;
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ShapeError("backward: loss must be 1x1");
    if (!loss.requires_grad()) return;

    // iterative post-order topo sort over the impl graph
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(loss.impl_.get(), 0);
    visited.insert(loss.impl_.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorImpl* parent = node->parents[idx].impl_.get();
            ++idx;
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.impl_->ensure_grad();
    loss.impl_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn) {
            for (auto& p : node->parents)
                if (p.requires_grad()) p.impl_->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError("add: shape mismatch");
    Tensor out = make_op_output(a.rows(), a.cols(), {a, b}, [](TensorImpl& o) {
        for (int p = 0; p < 2; ++p) {
            Tensor& t = o.parents[p];
            if (!t.requires_grad()) continue;
            double* g = t.impl_->grad.data();
            for (std::size_t i = 0; i < o.size(); ++i) g[i] += o.grad[i];
        }
    });
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()[i] = a.data()[i] + b.data()[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError("sub: shape mismatch");
    Tensor out = make_op_output(a.rows(), a.cols(), {a, b}, [](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        Tensor& pb = o.parents[1];
        if (pa.requires_grad()) {
            double* g = pa.impl_->grad.data();
            for (std::size_t i = 0; i < o.size(); ++i) g[i] += o.grad[i];
        }
        if (pb.requires_grad()) {
            double* g = pb.impl_->grad.data();
            for (std::size_t i = 0; i < o.size(); ++i) g[i] -= o.grad[i];
        }
    });
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError("mul: shape mismatch");
    Tensor out = make_op_output(a.rows(), a.cols(), {a, b}, [](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        Tensor& pb = o.parents[1];
        if (pa.requires_grad()) {
            double* g = pa.impl_->grad.data();
            const double* bv = pb.data();
            for (std::size_t i = 0; i < o.size(); ++i) g[i] += o.grad[i] * bv[i];
        }
        if (pb.requires_grad()) {
            double* g = pb.impl_->grad.data();
            const double* av = pa.data();
            for (std::size_t i = 0; i < o.size(); ++i) g[i] += o.grad[i] * av[i];
        }
    });
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()[i] = a.data()[i] * b.data()[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = make_op_output(a.rows(), a.cols(), {a}, [s](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        if (!pa.requires_grad()) return;
        double* g = pa.impl_->grad.data();
        for (std::size_t i = 0; i < o.size(); ++i) g[i] += o.grad[i] * s;
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * s;
    return out;
}

Tensor add_scalar(const Tensor& a, double s) {
    Tensor out = make_op_output(a.rows(), a.cols(), {a}, [](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        if (!pa.requires_grad()) return;
        double* g = pa.impl_->grad.data();
        for (std::size_t i = 0; i < o.size(); ++i) g[i] += o.grad[i];
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + s;
    return out;
}

Tensor gelu(const Tensor& a) {
    // exact erf form; derivative = Phi(x) + x * phi(x)
    Tensor out = make_op_output(a.rows(), a.cols(), {a}, [](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        if (!pa.requires_grad()) return;
        double* g = pa.impl_->grad.data();
        const double* x = pa.data();
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        for (std::size_t i = 0; i < o.size(); ++i) {
            const double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x[i] * x[i]);
            g[i] += o.grad[i] * (cdf + x[i] * pdf);
        }
    });
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.data()[i];
        out.data()[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    return out;
}

// --------------------------------------------------------------------- shape

Tensor transpose(const Tensor& a) {
    const int r = a.rows(), c = a.cols();
    Tensor out = make_op_output(c, r, {a}, [r, c](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        if (!pa.requires_grad()) return;
        double* g = pa.impl_->grad.data();
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < r; ++j)
                g[static_cast<std::size_t>(j) * c + i] +=
                    o.grad[static_cast<std::size_t>(i) * r + j];
    });
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor reshape(const Tensor& a, int rows, int cols) {
    if (static_cast<std::size_t>(rows) * cols != a.size())
        throw ShapeError("reshape: element count mismatch");
    Tensor out = make_op_output(rows, cols, {a}, [](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        if (!pa.requires_grad()) return;
        double* g = pa.impl_->grad.data();
        for (std::size_t i = 0; i < o.size(); ++i) g[i] += o.grad[i];
    });
    std::memcpy(out.data(), a.data(), a.size() * sizeof(double));
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty list");
    const int c = parts[0].cols();
    int total = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw ShapeError("concat_rows: column mismatch");
        total += p.rows();
    }
    Tensor out = make_op_output(total, c, parts, [c](TensorImpl& o) {
        int r0 = 0;
        for (auto& p : o.parents) {
            const int pr = p.rows();
            if (p.requires_grad()) {
                double* g = p.impl_->grad.data();
                const double* og = o.grad.data() + static_cast<std::size_t>(r0) * c;
                for (std::size_t i = 0; i < static_cast<std::size_t>(pr) * c; ++i)
                    g[i] += og[i];
            }
            r0 += pr;
        }
    });
    int r0 = 0;
    for (const auto& p : parts) {
        std::memcpy(out.data() + static_cast<std::size_t>(r0) * c, p.data(),
                    p.size() * sizeof(double));
        r0 += p.rows();
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty list");
    const int r = parts[0].rows();
    int total = 0;
    for (const auto& p : parts) {
        if (p.rows() != r) throw ShapeError("concat_cols: row mismatch");
        total += p.cols();
    }
    Tensor out = make_op_output(r, total, parts, [r, total](TensorImpl& o) {
        int c0 = 0;
        for (auto& p : o.parents) {
            const int pc = p.cols();
            if (p.requires_grad()) {
                double* g = p.impl_->grad.data();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < pc; ++j)
                        g[static_cast<std::size_t>(i) * pc + j] +=
                            o.grad[static_cast<std::size_t>(i) * total + c0 + j];
            }
            c0 += pc;
        }
    });
    int c0 = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < p.cols(); ++j) out.at(i, c0 + j) = p.at(i, j);
        c0 += p.cols();
    }
    return out;
}

Tensor slice_rows(const Tensor& a, int row0, int count) {
    if (row0 < 0 || count <= 0 || row0 + count > a.rows())
        throw ShapeError("slice_rows: out of range");
    const int c = a.cols();
    Tensor out = make_op_output(count, c, {a}, [row0, c](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        if (!pa.requires_grad()) return;
        double* g = pa.impl_->grad.data() + static_cast<std::size_t>(row0) * c;
        for (std::size_t i = 0; i < o.size(); ++i) g[i] += o.grad[i];
    });
    std::memcpy(out.data(), a.data() + static_cast<std::size_t>(row0) * c,
                out.size() * sizeof(double));
    return out;
}

Tensor slice_cols(const Tensor& a, int col0, int count) {
    if (col0 < 0 || count <= 0 || col0 + count > a.cols())
        throw ShapeError("slice_cols: out of range");
    const int r = a.rows(), c = a.cols();
    Tensor out = make_op_output(r, count, {a}, [col0, count, r, c](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        if (!pa.requires_grad()) return;
        double* g = pa.impl_->grad.data();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < count; ++j)
                g[static_cast<std::size_t>(i) * c + col0 + j] +=
                    o.grad[static_cast<std::size_t>(i) * count + j];
    });
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < count; ++j) out.at(i, j) = a.at(i, col0 + j);
    return out;
}

// ------------------------------------------------------------ linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimension mismatch");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = make_op_output(m, n, {a, b}, [m, k, n](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        Tensor& pb = o.parents[1];
        // dA = dO @ B^T ; dB = A^T @ dO
        if (pa.requires_grad())
            mm_nt(m, n, k, o.grad.data(), pb.data(), pa.impl_->grad.data());
        if (pb.requires_grad())
            mm_tn(k, m, n, pa.data(), o.grad.data(), pb.impl_->grad.data());
    });
    mm_nn(m, k, n, a.data(), b.data(), out.data());
    return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols())
        throw ShapeError("add_rowvec: expected 1x" + std::to_string(a.cols()));
    const int r = a.rows(), c = a.cols();
    Tensor out = make_op_output(r, c, {a, row}, [r, c](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        Tensor& pr = o.parents[1];
        if (pa.requires_grad()) {
            double* g = pa.impl_->grad.data();
            for (std::size_t i = 0; i < o.size(); ++i) g[i] += o.grad[i];
        }
        if (pr.requires_grad()) {
            double* g = pr.impl_->grad.data();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    g[j] += o.grad[static_cast<std::size_t>(i) * c + j];
        }
    });
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(i, j) = a.at(i, j) + row.at(0, j);
    return out;
}

// ------------------------------------------------------------------- gathers

Tensor gather_rows(const Tensor& table, const std::vector<int>& indices) {
    if (indices.empty()) throw ShapeError("gather_rows: empty index list");
    const int c = table.cols();
    for (int idx : indices)
        if (idx < 0 || idx >= table.rows())
            throw ContractError("gather_rows: index " + std::to_string(idx) +
                                " out of range [0, " + std::to_string(table.rows()) + ")");
    auto idx_copy = indices;
    Tensor out = make_op_output(
        static_cast<int>(indices.size()), c, {table}, [idx_copy, c](TensorImpl& o) {
            Tensor& pt = o.parents[0];
            if (!pt.requires_grad()) return;
            double* g = pt.impl_->grad.data();
            for (std::size_t i = 0; i < idx_copy.size(); ++i) {
                double* grow = g + static_cast<std::size_t>(idx_copy[i]) * c;
                const double* og = o.grad.data() + i * c;
                for (int j = 0; j < c; ++j) grow[j] += og[j];
            }
        });
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::memcpy(out.data() + i * c,
                    table.data() + static_cast<std::size_t>(indices[i]) * c,
                    static_cast<std::size_t>(c) * sizeof(double));
    return out;
}

Tensor rows_select_cols(const Tensor& a, const std::vector<int>& cols) {
    if (static_cast<int>(cols.size()) != a.rows())
        throw ShapeError("rows_select_cols: need one column index per row");
    for (int cidx : cols)
        if (cidx < 0 || cidx >= a.cols())
            throw ContractError("rows_select_cols: column index out of range");
    auto cols_copy = cols;
    const int c = a.cols();
    Tensor out = make_op_output(
        a.rows(), 1, {a}, [cols_copy, c](TensorImpl& o) {
            Tensor& pa = o.parents[0];
            if (!pa.requires_grad()) return;
            double* g = pa.impl_->grad.data();
            for (std::size_t i = 0; i < cols_copy.size(); ++i)
                g[i * c + cols_copy[i]] += o.grad[i];
        });
    for (int i = 0; i < a.rows(); ++i) out.at(i, 0) = a.at(i, cols[i]);
    return out;
}

// --------------------------------------------------------- rowwise nonlinear

Tensor softmax_rows(const Tensor& a, const Tensor& mask) {
    const int r = a.rows(), c = a.cols();
    if (mask.defined() && (mask.rows() != r || mask.cols() != c))
        throw ShapeError("softmax_rows: mask shape mismatch");
    Tensor out = make_op_output(r, c, {a}, [r, c](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        if (!pa.requires_grad()) return;
        double* g = pa.impl_->grad.data();
        for (int i = 0; i < r; ++i) {
            const double* y = o.value.data() + static_cast<std::size_t>(i) * c;
            const double* dy = o.grad.data() + static_cast<std::size_t>(i) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += dy[j] * y[j];
            double* gi = g + static_cast<std::size_t>(i) * c;
            for (int j = 0; j < c; ++j) gi[j] += (dy[j] - dot) * y[j];
        }
    });
    for (int i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j) {
            double v = a.at(i, j) + (mask.defined() ? mask.at(i, j) : 0.0);
            mx = std::max(mx, v);
        }
        if (!std::isfinite(mx))
            throw NumericError("softmax_rows: row " + std::to_string(i) +
                               " has no finite entry");
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            double v = a.at(i, j) + (mask.defined() ? mask.at(i, j) : 0.0);
            double e = std::exp(v - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < c; ++j) out.at(i, j) /= sum;
    }
    return out;
}

Tensor log_softmax_rows(const Tensor& a) {
    const int r = a.rows(), c = a.cols();
    Tensor out = make_op_output(r, c, {a}, [r, c](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        if (!pa.requires_grad()) return;
        double* g = pa.impl_->grad.data();
        for (int i = 0; i < r; ++i) {
            const double* y = o.value.data() + static_cast<std::size_t>(i) * c;
            const double* dy = o.grad.data() + static_cast<std::size_t>(i) * c;
            double dsum = 0.0;
            for (int j = 0; j < c; ++j) dsum += dy[j];
            double* gi = g + static_cast<std::size_t>(i) * c;
            for (int j = 0; j < c; ++j) gi[j] += dy[j] - std::exp(y[j]) * dsum;
        }
    });
    for (int i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j) mx = std::max(mx, a.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < c; ++j) sum += std::exp(a.at(i, j) - mx);
        const double lse = mx + std::log(sum);
        for (int j = 0; j < c; ++j) out.at(i, j) = a.at(i, j) - lse;
    }
    return out;
}

Tensor lse_rows(const Tensor& a) {
    const int r = a.rows(), c = a.cols();
    Tensor out = make_op_output(r, 1, {a}, [r, c](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        if (!pa.requires_grad()) return;
        double* g = pa.impl_->grad.data();
        const double* x = pa.data();
        for (int i = 0; i < r; ++i) {
            const double lse = o.value[i];
            const double dy = o.grad[i];
            double* gi = g + static_cast<std::size_t>(i) * c;
            const double* xi = x + static_cast<std::size_t>(i) * c;
            for (int j = 0; j < c; ++j) gi[j] += dy * std::exp(xi[j] - lse);
        }
    });
    for (int i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j) mx = std::max(mx, a.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < c; ++j) sum += std::exp(a.at(i, j) - mx);
        out.at(i, 0) = mx + std::log(sum);
    }
    return out;
}

Tensor row_l2_normalize(const Tensor& a) {
    const int r = a.rows(), c = a.cols();
    Tensor out = make_op_output(r, c, {a}, [r, c](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        if (!pa.requires_grad()) return;
        double* g = pa.impl_->grad.data();
        const double* x = pa.data();
        for (int i = 0; i < r; ++i) {
            const double* xi = x + static_cast<std::size_t>(i) * c;
            const double* yi = o.value.data() + static_cast<std::size_t>(i) * c;
            const double* dy = o.grad.data() + static_cast<std::size_t>(i) * c;
            double norm = 0.0;
            for (int j = 0; j < c; ++j) norm += xi[j] * xi[j];
            norm = std::sqrt(norm);
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += dy[j] * yi[j];
            double* gi = g + static_cast<std::size_t>(i) * c;
            for (int j = 0; j < c; ++j) gi[j] += (dy[j] - yi[j] * dot) / norm;
        }
    });
    for (int i = 0; i < r; ++i) {
        double norm = 0.0;
        for (int j = 0; j < c; ++j) norm += a.at(i, j) * a.at(i, j);
        norm = std::sqrt(norm);
        if (norm <= 0.0)
            throw NumericError("row_l2_normalize: zero-norm row " + std::to_string(i));
        for (int j = 0; j < c; ++j) out.at(i, j) = a.at(i, j) / norm;
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    const int r = x.rows(), c = x.cols();
    if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c)
        throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(c));
    Tensor out = make_op_output(r, c, {x, gain, bias}, [r, c, eps](TensorImpl& o) {
        Tensor& px = o.parents[0];
        Tensor& pg = o.parents[1];
        Tensor& pb = o.parents[2];
        const double* xv = px.data();
        const double* gv = pg.data();
        for (int i = 0; i < r; ++i) {
            const double* xi = xv + static_cast<std::size_t>(i) * c;
            const double* dy = o.grad.data() + static_cast<std::size_t>(i) * c;
            double mean = 0.0;
            for (int j = 0; j < c; ++j) mean += xi[j];
            mean /= c;
            double var = 0.0;
            for (int j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
            var /= c;
            const double inv_sigma = 1.0 / std::sqrt(var + eps);
            // xhat_j = (x_j - mean) * inv_sigma
            if (pg.requires_grad()) {
                double* gg = pg.impl_->grad.data();
                for (int j = 0; j < c; ++j)
                    gg[j] += dy[j] * (xi[j] - mean) * inv_sigma;
            }
            if (pb.requires_grad()) {
                double* gb = pb.impl_->grad.data();
                for (int j = 0; j < c; ++j) gb[j] += dy[j];
            }
            if (px.requires_grad()) {
                // dxhat = dy * gain; dx = inv_sigma * (dxhat - mean(dxhat)
                //                                       - xhat * mean(dxhat*xhat))
                double m1 = 0.0, m2 = 0.0;
                for (int j = 0; j < c; ++j) {
                    const double dxh = dy[j] * gv[j];
                    const double xh = (xi[j] - mean) * inv_sigma;
                    m1 += dxh;
                    m2 += dxh * xh;
                }
                m1 /= c;
                m2 /= c;
                double* gx = px.impl_->grad.data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j) {
                    const double dxh = dy[j] * gv[j];
                    const double xh = (xi[j] - mean) * inv_sigma;
                    gx[j] += inv_sigma * (dxh - m1 - xh * m2);
                }
            }
        }
    });
    for (int i = 0; i < r; ++i) {
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += x.at(i, j);
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
        var /= c;
        const double inv_sigma = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < c; ++j)
            out.at(i, j) = gain.at(0, j) * (x.at(i, j) - mean) * inv_sigma + bias.at(0, j);
    }
    return out;
}

// ---------------------------------------------------------------- reductions

Tensor sum_all(const Tensor& a) {
    Tensor out = make_op_output(1, 1, {a}, [](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        if (!pa.requires_grad()) return;
        double* g = pa.impl_->grad.data();
        const double dy = o.grad[0];
        for (std::size_t i = 0; i < pa.size(); ++i) g[i] += dy;
    });
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
    out.at(0, 0) = s;
    return out;
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Tensor mean_rows(const Tensor& a) {
    const int r = a.rows(), c = a.cols();
    Tensor out = make_op_output(1, c, {a}, [r, c](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        if (!pa.requires_grad()) return;
        double* g = pa.impl_->grad.data();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                g[static_cast<std::size_t>(i) * c + j] += o.grad[j] / r;
    });
    for (int j = 0; j < c; ++j) {
        double s = 0.0;
        for (int i = 0; i < r; ++i) s += a.at(i, j);
        out.at(0, j) = s / r;
    }
    return out;
}

Tensor diag(const Tensor& a) {
    if (a.rows() != a.cols()) throw ShapeError("diag: tensor must be square");
    const int n = a.rows();
    Tensor out = make_op_output(n, 1, {a}, [n](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        if (!pa.requires_grad()) return;
        double* g = pa.impl_->grad.data();
        for (int i = 0; i < n; ++i)
            g[static_cast<std::size_t>(i) * n + i] += o.grad[i];
    });
    for (int i = 0; i < n; ++i) out.at(i, 0) = a.at(i, i);
    return out;
}

Tensor dropout(const Tensor& a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must be in [0,1)");
    if (rate == 0.0) return a;
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(a.size());
    for (auto& m : *mask) m = rng.bernoulli(rate) ? 0.0 : 1.0 / keep;
    Tensor out = make_op_output(a.rows(), a.cols(), {a}, [mask](TensorImpl& o) {
        Tensor& pa = o.parents[0];
        if (!pa.requires_grad()) return;
        double* g = pa.impl_->grad.data();
        for (std::size_t i = 0; i < o.size(); ++i) g[i] += o.grad[i] * (*mask)[i];
    });
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()[i] = a.data()[i] * (*mask)[i];
    return out;
}

bool all_finite(const Tensor& a) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(a.data()[i])) return false;
    return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

Tensor& param(ParamMap& map, const std::string& name, int rows, int cols, Rng& rng,
              double stddev) {
    auto it = map.find(name);
    if (it == map.end()) {
        Tensor t = stddev == 0.0 ? Tensor::zeros(rows, cols, true)
                                 : Tensor::randn(rows, cols, rng, stddev, true);
        it = map.emplace(name, std::move(t)).first;
    }
    return it->second;
}

void zero_grads(ParamMap& map) {
    for (auto& [name, t] : map) t.zero_grad();
}

ParamMap clone_params(const ParamMap& src, bool requires_grad) {
    ParamMap out;
    for (const auto& [name, t] : src) {
        Tensor c = t.clone();
        c.set_requires_grad(requires_grad);
        out.emplace(name, std::move(c));
    }
    return out;
}

}  // namespace defend
