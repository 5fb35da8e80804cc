#pragma once

#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "defend/common.hpp"

namespace defend {

struct TensorImpl;

// 2D row-major tensor with reverse-mode autodiff. Copies are shallow
// (shared storage); gradients accumulate on the shared buffer. Everything
// is double precision so finite-difference checks have headroom.
class Tensor {
  public:
    Tensor() = default;
    Tensor(int rows, int cols);  // zero-filled leaf, no grad

    static Tensor zeros(int rows, int cols, bool requires_grad = false);
    static Tensor full(int rows, int cols, double value);
    static Tensor randn(int rows, int cols, Rng& rng, double stddev,
                        bool requires_grad = false);
    static Tensor from(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor scalar(double v);

    bool defined() const { return impl_ != nullptr; }
    int rows() const;
    int cols() const;
    std::size_t size() const;

    double& at(int r, int c);
    double at(int r, int c) const;
    double* data();
    const double* data() const;

    double item() const;  // requires 1x1

    bool requires_grad() const;
    void set_requires_grad(bool v);  // leaves only
    double* grad();                  // allocated lazily, zero-filled
    const double* grad_data() const; // nullptr if never allocated
    void zero_grad();

    Tensor detach() const;  // shares values, drops graph
    Tensor clone() const;   // deep copy of values, fresh leaf

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    std::shared_ptr<TensorImpl> impl_;

  private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    friend Tensor make_op_output(int rows, int cols, std::vector<Tensor> parents,
                                 std::function<void(TensorImpl&)> backward);
};

struct TensorImpl {
    int rows = 0;
    int cols = 0;
    std::vector<double> value;
    std::vector<double> grad;  // empty until requested
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void(TensorImpl&)> backward_fn;

    std::size_t size() const { return value.size(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

// Runs reverse-mode accumulation from a 1x1 loss. Gradients add into the
// grad buffers of every reachable tensor with requires_grad set.
void backward(const Tensor& loss);

// ---- elementwise / scalar ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor gelu(const Tensor& a);

// ---- shape ----
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, int rows, int cols);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int row0, int count);
Tensor slice_cols(const Tensor& a, int col0, int count);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& a, const Tensor& row);  // broadcast 1xC over rows

// ---- gathers ----
Tensor gather_rows(const Tensor& table, const std::vector<int>& indices);
// picks a(i, cols[i]) into an Nx1 column
Tensor rows_select_cols(const Tensor& a, const std::vector<int>& cols);

// ---- rowwise nonlinear ----
// mask, when defined, is added to the logits before the softmax (use -inf
// entries to forbid positions); it is treated as a constant.
Tensor softmax_rows(const Tensor& a, const Tensor& mask = Tensor());
Tensor log_softmax_rows(const Tensor& a);
Tensor lse_rows(const Tensor& a);           // Nx1 log-sum-exp
Tensor row_l2_normalize(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);

// ---- reductions ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mean_rows(const Tensor& a);  // 1xC column means
Tensor diag(const Tensor& a);       // NxN -> Nx1

// ---- regularization ----
Tensor dropout(const Tensor& a, double rate, Rng& rng);

// plain helpers on values (no graph)
bool all_finite(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

using ParamMap = std::map<std::string, Tensor>;

// Creates (or fetches) a named parameter initialized ~N(0, stddev^2).
Tensor& param(ParamMap& map, const std::string& name, int rows, int cols,
              Rng& rng, double stddev = 0.02);
void zero_grads(ParamMap& map);
ParamMap clone_params(const ParamMap& src, bool requires_grad);

}  // namespace defend
