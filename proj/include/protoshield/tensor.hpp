#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "protoshield/common.hpp"

namespace protoshield {

struct TensorImpl {
    std::vector<int64_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward touches it
    bool requires_grad = false;
};

using TensorPtr = std::shared_ptr<TensorImpl>;

// Value-semantics handle onto a shared buffer. Data is written only while a
// tensor is being constructed by an op; afterwards only grad mutates.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(TensorPtr p) : p_(std::move(p)) {}

    static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<int64_t> shape, double value, bool requires_grad = false);
    static Tensor from_vec(std::vector<int64_t> shape, std::vector<double> data,
                           bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return p_ != nullptr; }
    const std::vector<int64_t>& shape() const { return p_->shape; }
    int64_t dim(size_t i) const { return p_->shape[i]; }
    size_t rank() const { return p_->shape.size(); }
    int64_t numel() const { return static_cast<int64_t>(p_->data.size()); }

    double* data() { return p_->data.data(); }
    const double* data() const { return p_->data.data(); }
    std::vector<double>& vec() { return p_->data; }
    const std::vector<double>& vec() const { return p_->data; }

    // Scalar read; errors unless numel() == 1.
    double item() const;

    bool requires_grad() const { return p_->requires_grad; }
    void set_requires_grad(bool v) { p_->requires_grad = v; }

    // Gradient accessors; grad() allocates zeros on first use.
    std::vector<double>& grad();
    bool has_grad() const { return !p_->grad.empty(); }
    void zero_grad();

    Tensor clone() const;
    const TensorPtr& impl() const { return p_; }

    std::string shape_str() const;

private:
    TensorPtr p_;
};

int64_t shape_numel(const std::vector<int64_t>& shape);

// Define-by-run gradient tape. Ops append themselves in execution order,
// which is already topological; backward walks the list in reverse once.
class Tape {
public:
    void record(const Tensor& out, std::function<void()> backward_fn);
    bool owns(const Tensor& t) const { return outputs_.count(t.impl().get()) > 0; }

    // Seeds d(loss)/d(loss) = 1 and accumulates into every requires_grad
    // leaf. loss must be a scalar produced on this tape; second call without
    // reset() is an error.
    void backward(const Tensor& loss);

    void reset();
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        TensorPtr out;
        std::function<void()> backward_fn;
    };
    std::vector<Node> nodes_;
    std::unordered_set<const TensorImpl*> outputs_;
    bool used_ = false;
};

// Every op records onto `tape` when it is non-null and any input requires
// grad; the output then has requires_grad = true.

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

// y = x * W^T + b for row-major batches; W is [out, in], b optional [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape = nullptr);

Tensor conv2d(const Tensor& x, const Tensor& kernels, int stride, int padding,
              Tape* tape = nullptr);
Tensor channel_bias(const Tensor& x, const Tensor& b, Tape* tape = nullptr);

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor add_scalar(const Tensor& a, double s, Tape* tape = nullptr);
Tensor mul_scalar(const Tensor& a, double s, Tape* tape = nullptr);

Tensor relu(const Tensor& x, Tape* tape = nullptr);
// slope is a 1-element tensor shared across all inputs.
Tensor prelu(const Tensor& x, const Tensor& slope, Tape* tape = nullptr);
Tensor tanh_op(const Tensor& x, Tape* tape = nullptr);
Tensor exp_op(const Tensor& x, Tape* tape = nullptr);
Tensor log_op(const Tensor& x, Tape* tape = nullptr);

Tensor max_pool2d(const Tensor& x, Tape* tape = nullptr);  // 2x2, stride 2
Tensor global_avg_pool(const Tensor& x, Tape* tape = nullptr);
Tensor softmax(const Tensor& x, int axis, Tape* tape = nullptr);
Tensor sign(const Tensor& x, Tape* tape = nullptr);  // sign(0)=0; zero backward
Tensor norm_p(const Tensor& x, double p, Tape* tape = nullptr);  // p in {1,2,inf}

Tensor reshape(const Tensor& x, std::vector<int64_t> new_shape, Tape* tape = nullptr);
Tensor sum(const Tensor& x, Tape* tape = nullptr);
Tensor mean(const Tensor& x, Tape* tape = nullptr);

// Plain data helpers, never recorded.
Tensor concat0(const std::vector<Tensor>& parts);
Tensor take_rows(const Tensor& x, const std::vector<int64_t>& rows);
int64_t argmax_row(const double* row, int64_t n);  // ties -> lowest index

void check_finite(const Tensor& t, const char* what);

}  // namespace protoshield
