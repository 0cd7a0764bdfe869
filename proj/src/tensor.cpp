#include "cgm/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>

namespace cgm {

namespace {

using EigenRowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenRowMat>;
using ConstMatMap = Eigen::Map<const EigenRowMat>;

// C (+)= A . B
void mm_nn(double* c, const double* a, const double* b, int m, int k, int n, bool accumulate) {
    ConstMatMap ma(a, m, k), mb(b, k, n);
    MatMap mc(c, m, n);
    if (accumulate) {
        mc.noalias() += ma * mb;
    } else {
        mc.noalias() = ma * mb;
    }
}

// C (+)= A . B^T, with B stored [n x k]
void mm_nt(double* c, const double* a, const double* b, int m, int k, int n, bool accumulate) {
    ConstMatMap ma(a, m, k), mb(b, n, k);
    MatMap mc(c, m, n);
    if (accumulate) {
        mc.noalias() += ma * mb.transpose();
    } else {
        mc.noalias() = ma * mb.transpose();
    }
}

// C (+)= A^T . B, with A stored [k x m]
void mm_tn(double* c, const double* a, const double* b, int m, int k, int n, bool accumulate) {
    ConstMatMap ma(a, k, m), mb(b, k, n);
    MatMap mc(c, m, n);
    if (accumulate) {
        mc.noalias() += ma.transpose() * mb;
    } else {
        mc.noalias() = ma.transpose() * mb;
    }
}

bool grad_wanted(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void mark_output(Tensor& out, bool wanted) {
    if (wanted) out.set_requires_grad(true);
}

const double kInvSqrt2 = 0.7071067811865475244;
const double kInvSqrt2Pi = 0.3989422804014326779;

double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

namespace {
void validate_shape(const Shape& s) {
    if (s.empty() || s.size() > 3) {
        throw ContractError("tensor rank must be 1..3, got " + shape_str(s));
    }
    for (int d : s) {
        if (d <= 0) throw ContractError("tensor extents must be positive, got " + shape_str(s));
    }
}
}  // namespace

detail::TensorImpl* Tensor::ptr() const {
    if (!impl_) throw ContractError("use of undefined tensor");
    return impl_.get();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    validate_shape(shape);
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl>();
    t.impl_->data.assign(shape_size(shape), 0.0);
    t.impl_->shape = std::move(shape);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.ptr()->data.begin(), t.ptr()->data.end(), value);
    return t;
}

Tensor Tensor::from(std::vector<double> data, Shape shape, bool requires_grad) {
    validate_shape(shape);
    if (data.size() != shape_size(shape)) {
        throw ContractError("data length " + std::to_string(data.size()) +
                            " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value) { return from({value}, {1}); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.ptr()->data) v = dist(rng);
    return t;
}

const Shape& Tensor::shape() const { return ptr()->shape; }
int Tensor::rank() const { return static_cast<int>(ptr()->shape.size()); }
std::size_t Tensor::size() const { return ptr()->data.size(); }

int Tensor::rows() const {
    if (rank() != 2) throw ContractError("rows(): tensor is not rank-2: " + shape_str(shape()));
    return ptr()->shape[0];
}

int Tensor::cols() const {
    if (rank() != 2) throw ContractError("cols(): tensor is not rank-2: " + shape_str(shape()));
    return ptr()->shape[1];
}

double* Tensor::data() { return ptr()->data.data(); }
const double* Tensor::data() const { return ptr()->data.data(); }

double Tensor::at(int r, int c) const {
    if (rank() != 2 || r < 0 || r >= rows() || c < 0 || c >= cols()) {
        throw ContractError("at(): index out of range");
    }
    return ptr()->data[static_cast<std::size_t>(r) * cols() + c];
}

double Tensor::value() const {
    if (size() != 1) throw ContractError("value(): tensor is not scalar: " + shape_str(shape()));
    return ptr()->data[0];
}

bool Tensor::requires_grad() const { return ptr()->requires_grad; }
void Tensor::set_requires_grad(bool on) { ptr()->requires_grad = on; }
bool Tensor::has_grad() const { return !ptr()->grad.empty(); }

double* Tensor::grad() {
    if (!has_grad()) throw ContractError("grad(): no gradient buffer");
    return ptr()->grad.data();
}

const double* Tensor::grad() const {
    if (!has_grad()) throw ContractError("grad(): no gradient buffer");
    return ptr()->grad.data();
}

void Tensor::ensure_grad() {
    detail::TensorImpl* p = ptr();
    if (p->grad.empty()) p->grad.assign(p->data.size(), 0.0);
}

void Tensor::zero_grad() {
    detail::TensorImpl* p = ptr();
    if (!p->grad.empty()) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_rule) {
    entries_.push_back(std::move(backward_rule));
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward(): loss must be scalar, got " + shape_str(loss.shape()));
    }
    Tensor seed = loss;
    seed.ensure_grad();
    seed.grad()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        (*it)();
    }
    entries_.clear();
}

void backward(const Tensor& loss) {
    Tape* t = Tape::active();
    if (!t) throw ContractError("backward(): no active tape");
    t->backward(loss);
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

namespace {

// Most backward rules follow this pattern: skip when the output never received
// gradient (op not on the path to the loss), otherwise accumulate into every
// input that wants gradient.
template <typename Fn>
void record_rule(Tensor out, Fn&& fn) {
    Tape::active()->record([out = std::move(out), fn = std::forward<Fn>(fn)]() {
        if (!out.has_grad()) return;
        fn(out.grad());
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ContractError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];

    if (grad_wanted({&a, &b})) {
        mark_output(out, true);
        record_rule(out, [a, b, n](const double* g) mutable {
            if (a.requires_grad()) {
                a.ensure_grad();
                double* ga = a.grad();
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                double* gb = b.grad();
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
    if (b.rank() != 1) throw ContractError("add_rowvec: bias must be rank-1");
    const int d = b.shape()[0];
    if (a.shape().back() != d) {
        throw ContractError("add_rowvec: last extent of " + shape_str(a.shape()) +
                            " does not match bias " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i % d];

    if (grad_wanted({&a, &b})) {
        mark_output(out, true);
        record_rule(out, [a, b, n, d](const double* g) mutable {
            if (a.requires_grad()) {
                a.ensure_grad();
                double* ga = a.grad();
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                double* gb = b.grad();
                for (std::size_t i = 0; i < n; ++i) gb[i % d] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ContractError("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];

    if (grad_wanted({&a, &b})) {
        mark_output(out, true);
        record_rule(out, [a, b, n](const double* g) mutable {
            if (a.requires_grad()) {
                a.ensure_grad();
                double* ga = a.grad();
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                double* gb = b.grad();
                for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ContractError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];

    if (grad_wanted({&a, &b})) {
        mark_output(out, true);
        record_rule(out, [a, b, n](const double* g) mutable {
            if (a.requires_grad()) {
                a.ensure_grad();
                double* ga = a.grad();
                const double* pb2 = b.data();
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb2[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                double* gb = b.grad();
                const double* pa2 = a.data();
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * pa2[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    const double* pa = a.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * c;

    if (grad_wanted({&a})) {
        mark_output(out, true);
        record_rule(out, [a, c, n](const double* g) mutable {
            a.ensure_grad();
            double* ga = a.grad();
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw ContractError("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    mm_nn(out.data(), a.data(), b.data(), m, k, n, false);

    if (grad_wanted({&a, &b})) {
        mark_output(out, true);
        record_rule(out, [a, b, m, k, n](const double* g) mutable {
            if (a.requires_grad()) {
                a.ensure_grad();
                mm_nt(a.grad(), g, b.data(), m, n, k, true);  // a.grad += g . b^T
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                mm_tn(b.grad(), a.data(), g, k, m, n, true);  // b.grad += a^T . g
            }
        });
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
        throw ContractError("matmul_nt: inner dimensions disagree: " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()) + "^T");
    }
    const int m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out = Tensor::zeros({m, n});
    mm_nt(out.data(), a.data(), b.data(), m, k, n, false);

    if (grad_wanted({&a, &b})) {
        mark_output(out, true);
        record_rule(out, [a, b, m, k, n](const double* g) mutable {
            if (a.requires_grad()) {
                a.ensure_grad();
                mm_nn(a.grad(), g, b.data(), m, n, k, true);  // a.grad += g . b
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                mm_tn(b.grad(), g, a.data(), n, m, k, true);  // b.grad += g^T . a
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x) {
    const int d = x.shape().back();
    const std::size_t rows = x.size() / static_cast<std::size_t>(d);
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        double m = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < d; ++i) {
            if (std::isnan(row[i])) throw NumericError("softmax: NaN input");
            m = std::max(m, row[i]);
        }
        if (std::isinf(m)) {
            if (m < 0) throw ContractError("empty attention support");
            throw NumericError("softmax: +inf input");
        }
        double sum = 0.0;
        double* orow = po + r * d;
        for (int i = 0; i < d; ++i) {
            orow[i] = std::exp(row[i] - m);
            sum += orow[i];
        }
        const double inv = 1.0 / sum;
        for (int i = 0; i < d; ++i) orow[i] *= inv;
    }

    if (grad_wanted({&x})) {
        mark_output(out, true);
        record_rule(out, [x, out, rows, d](const double* g) mutable {
            x.ensure_grad();
            double* gx = x.grad();
            const double* y = out.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g + r * d;
                const double* yr = y + r * d;
                double dot = 0.0;
                for (int i = 0; i < d; ++i) dot += gr[i] * yr[i];
                double* gxr = gx + r * d;
                for (int i = 0; i < d; ++i) gxr[i] += yr[i] * (gr[i] - dot);
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t n = x.size();
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * norm_cdf(px[i]);

    if (grad_wanted({&x})) {
        mark_output(out, true);
        record_rule(out, [x, n](const double* g) mutable {
            x.ensure_grad();
            double* gx = x.grad();
            const double* px2 = x.data();
            for (std::size_t i = 0; i < n; ++i) {
                const double v = px2[i];
                gx[i] += g[i] * (norm_cdf(v) + v * norm_pdf(v));
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    const int d = x.shape().back();
    if (gain.rank() != 1 || gain.shape()[0] != d || bias.rank() != 1 || bias.shape()[0] != d) {
        throw ContractError("layer_norm: gain/bias must be rank-1 of extent " + std::to_string(d));
    }
    const std::size_t rows = x.size() / static_cast<std::size_t>(d);
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data();
    const double* pg = gain.data();
    const double* pb = bias.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        double mean = 0.0;
        for (int i = 0; i < d; ++i) mean += row[i];
        mean /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) {
            const double c = row[i] - mean;
            var += c * c;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        double* orow = po + r * d;
        for (int i = 0; i < d; ++i) orow[i] = (row[i] - mean) * inv * pg[i] + pb[i];
    }

    if (grad_wanted({&x, &gain, &bias})) {
        mark_output(out, true);
        record_rule(out, [x, gain, bias, rows, d](const double* g) mutable {
            const double* px2 = x.data();
            const double* pg2 = gain.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* row = px2 + r * d;
                const double* gr = g + r * d;
                double mean = 0.0;
                for (int i = 0; i < d; ++i) mean += row[i];
                mean /= d;
                double var = 0.0;
                for (int i = 0; i < d; ++i) {
                    const double c = row[i] - mean;
                    var += c * c;
                }
                var /= d;
                const double inv = 1.0 / std::sqrt(var + kLayerNormEps);

                if (gain.requires_grad()) {
                    gain.ensure_grad();
                    double* gg = gain.grad();
                    for (int i = 0; i < d; ++i) gg[i] += gr[i] * (row[i] - mean) * inv;
                }
                if (bias.requires_grad()) {
                    bias.ensure_grad();
                    double* gb = bias.grad();
                    for (int i = 0; i < d; ++i) gb[i] += gr[i];
                }
                if (x.requires_grad()) {
                    x.ensure_grad();
                    double* gx = x.grad() + r * d;
                    // d(out)/d(xhat) = g * gain; fold mean/variance terms.
                    double sum_gh = 0.0, sum_gh_xhat = 0.0;
                    for (int i = 0; i < d; ++i) {
                        const double gh = gr[i] * pg2[i];
                        const double xhat = (row[i] - mean) * inv;
                        sum_gh += gh;
                        sum_gh_xhat += gh * xhat;
                    }
                    for (int i = 0; i < d; ++i) {
                        const double gh = gr[i] * pg2[i];
                        const double xhat = (row[i] - mean) * inv;
                        gx[i] += inv * (gh - sum_gh / d - xhat * sum_gh_xhat / d);
                    }
                }
            }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    const std::size_t n = x.size();
    const double* px = x.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += px[i];
    out.data()[0] = acc;

    if (grad_wanted({&x})) {
        mark_output(out, true);
        record_rule(out, [x, n](const double* g) mutable {
            x.ensure_grad();
            double* gx = x.grad();
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& x, int row0, int count) {
    if (x.rank() != 2) throw ContractError("slice_rows: tensor is not rank-2");
    const int m = x.rows(), d = x.cols();
    if (row0 < 0 || count < 1 || row0 + count > m) {
        throw ContractError("slice_rows: range [" + std::to_string(row0) + ", " +
                            std::to_string(row0 + count) + ") out of " + std::to_string(m) + " rows");
    }
    Tensor out = Tensor::zeros({count, d});
    std::copy_n(x.data() + static_cast<std::size_t>(row0) * d,
                static_cast<std::size_t>(count) * d, out.data());

    if (grad_wanted({&x})) {
        mark_output(out, true);
        record_rule(out, [x, row0, count, d](const double* g) mutable {
            x.ensure_grad();
            double* gx = x.grad() + static_cast<std::size_t>(row0) * d;
            const std::size_t n = static_cast<std::size_t>(count) * d;
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
        });
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("concat_rows: no inputs");
    const int d = xs[0].cols();
    int total = 0;
    bool wanted = false;
    for (const Tensor& t : xs) {
        if (t.rank() != 2 || t.cols() != d) {
            throw ContractError("concat_rows: column mismatch " + shape_str(t.shape()));
        }
        total += t.rows();
        wanted = wanted || t.requires_grad();
    }
    Tensor out = Tensor::zeros({total, d});
    double* po = out.data();
    for (const Tensor& t : xs) {
        std::copy_n(t.data(), t.size(), po);
        po += t.size();
    }

    if (Tape::active() && wanted) {
        mark_output(out, true);
        record_rule(out, [xs, d](const double* g) mutable {
            std::size_t offset = 0;
            for (Tensor& t : xs) {
                const std::size_t n = t.size();
                if (t.requires_grad()) {
                    t.ensure_grad();
                    double* gt = t.grad();
                    for (std::size_t i = 0; i < n; ++i) gt[i] += g[offset + i];
                }
                offset += n;
            }
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("concat_cols: no inputs");
    const int m = xs[0].rows();
    int total = 0;
    bool wanted = false;
    for (const Tensor& t : xs) {
        if (t.rank() != 2 || t.rows() != m) {
            throw ContractError("concat_cols: row mismatch " + shape_str(t.shape()));
        }
        total += t.cols();
        wanted = wanted || t.requires_grad();
    }
    Tensor out = Tensor::zeros({m, total});
    double* po = out.data();
    int col0 = 0;
    for (const Tensor& t : xs) {
        const int c = t.cols();
        const double* pt = t.data();
        for (int r = 0; r < m; ++r) {
            std::copy_n(pt + static_cast<std::size_t>(r) * c, c,
                        po + static_cast<std::size_t>(r) * total + col0);
        }
        col0 += c;
    }

    if (Tape::active() && wanted) {
        mark_output(out, true);
        record_rule(out, [xs, m, total](const double* g) mutable {
            int col0 = 0;
            for (Tensor& t : xs) {
                const int c = t.cols();
                if (t.requires_grad()) {
                    t.ensure_grad();
                    double* gt = t.grad();
                    for (int r = 0; r < m; ++r) {
                        const double* gr = g + static_cast<std::size_t>(r) * total + col0;
                        double* tr = gt + static_cast<std::size_t>(r) * c;
                        for (int i = 0; i < c; ++i) tr[i] += gr[i];
                    }
                }
                col0 += c;
            }
        });
    }
    return out;
}

Tensor cross_entropy_logits(const Tensor& logits, int target) {
    if (logits.rank() != 2 || logits.rows() != 1) {
        throw ContractError("cross_entropy_logits: logits must be [1 x d], got " + shape_str(logits.shape()));
    }
    const int d = logits.cols();
    if (target < 0 || target >= d) {
        throw ContractError("cross_entropy_logits: target " + std::to_string(target) +
                            " out of " + std::to_string(d) + " classes");
    }
    const double* pl = logits.data();
    double m = pl[0];
    for (int i = 1; i < d; ++i) m = std::max(m, pl[i]);
    if (std::isnan(m) || std::isinf(m)) throw NumericError("cross_entropy_logits: non-finite logits");
    double sum = 0.0;
    for (int i = 0; i < d; ++i) sum += std::exp(pl[i] - m);
    const double lse = m + std::log(sum);
    Tensor out = Tensor::scalar(lse - pl[target]);

    if (grad_wanted({&logits})) {
        mark_output(out, true);
        record_rule(out, [logits, target, d, m, sum](const double* g) mutable {
            logits.ensure_grad();
            double* gl = logits.grad();
            const double* pl2 = logits.data();
            for (int i = 0; i < d; ++i) {
                const double p = std::exp(pl2[i] - m) / sum;
                gl[i] += g[0] * (p - (i == target ? 1.0 : 0.0));
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double beta1, double beta2) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].size(), 0.0);
            state.v[i].assign(params[i].size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) {
        throw ContractError("adam_step: parameter count changed");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (state.m[i].size() != p.size()) {
            throw ContractError("adam_step: moment buffer shape mismatch on parameter " + std::to_string(i));
        }
        p.ensure_grad();
        const double* g = p.grad();
        double* m = state.m[i].data();
        double* v = state.v[i].data();
        double* w = p.data();
        const std::size_t n = p.size();
        for (std::size_t j = 0; j < n; ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
        }
        check_finite(p, "adam_step");
    }
}

void check_finite(const Tensor& t, const char* context) {
    const double* p = t.data();
    const std::size_t n = t.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) {
            throw NumericError(std::string(context) + ": non-finite value at element " + std::to_string(i));
        }
    }
}

}  // namespace cgm
