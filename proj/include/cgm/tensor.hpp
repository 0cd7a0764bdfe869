#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cgm/errors.hpp"

namespace cgm {

// Dense rank-1..3 tensor of doubles with an optional gradient buffer.
// Copying a Tensor copies the handle, not the storage: two copies alias the
// same values and gradient, which is what parameter sharing relies on.

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_size(const Shape& s);

namespace detail {
struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first touched by backward
};
}  // namespace detail

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<double> data, Shape shape, bool requires_grad = false);
    static Tensor scalar(double value);
    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    std::size_t size() const;
    int rows() const;  // rank-2 only
    int cols() const;  // rank-2 only

    double* data();
    const double* data() const;
    double at(int r, int c) const;  // rank-2 convenience
    double value() const;           // scalar read (size-1 tensor)

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool has_grad() const;
    double* grad();
    const double* grad() const;
    void ensure_grad();  // allocate a zero grad buffer if absent
    void zero_grad();

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  private:
    std::shared_ptr<detail::TensorImpl> impl_;
    detail::TensorImpl* ptr() const;
};

// Reverse-mode tape. Constructing a Tape makes it the active tape for the
// current thread; ops record a backward rule when any input requires grad.
// With no active tape (inference) ops are pure value computations.
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();
    void record(std::function<void()> backward_rule);
    std::size_t size() const { return entries_.size(); }

    // Seeds d(loss)/d(loss) = 1, runs every recorded rule in reverse recording
    // order exactly once, then clears the tape.
    void backward(const Tensor& loss);

  private:
    std::vector<std::function<void()>> entries_;
    Tape* previous_ = nullptr;
};

// Runs backward on the active tape.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Ops. Elementwise ops accept any rank; matrix ops are rank-2.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);         // same shape
Tensor add_rowvec(const Tensor& a, const Tensor& b);  // [... x d] + rank-1 [d]
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);     // [m x k] . [k x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a . b^T with b [n x k]

// Softmax over the last axis with max-subtraction. -inf entries are masked to
// exact zeros; a slice with no finite entry throws "empty attention support".
Tensor softmax(const Tensor& x);

// Exact-erf GELU: x * Phi(x).
Tensor gelu(const Tensor& x);

// Per-row normalization over the last axis (eps 1e-5), then affine gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

Tensor sum_all(const Tensor& x);  // -> scalar
Tensor slice_rows(const Tensor& x, int row0, int count);
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor concat_cols(const std::vector<Tensor>& xs);

// Numerically stable -log softmax(logits)[target] for a [1 x d] logits row.
Tensor cross_entropy_logits(const Tensor& logits, int target);

constexpr double kLayerNormEps = 1e-5;
constexpr double kAdamEps = 1e-8;
constexpr double kWeightInitStd = 0.02;  // projection/embedding init, GPT-2 lineage

// Adam with bias correction. Moment buffers are lazily created from the
// parameter list on first use; a later shape change is a contract error.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;
};

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double beta1, double beta2);

// Throws NumericError naming `context` if any element is NaN/Inf.
void check_finite(const Tensor& t, const char* context);

}  // namespace cgm
