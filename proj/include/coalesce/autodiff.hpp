#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "coalesce/geom.hpp"

namespace coalesce {

enum class Act { None, Relu, LeakyRelu, Sigmoid };

// Dense row-major array with shape.
template <typename T>
struct Arr {
    std::vector<size_t> shape;
    std::vector<T> v;

    Arr() = default;
    explicit Arr(std::vector<size_t> s) : shape(std::move(s)) {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        v.assign(n, T(0));
    }
    Arr(std::vector<size_t> s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        if (n != v.size()) throw std::runtime_error("Arr: data size does not match shape");
    }

    size_t size() const { return v.size(); }
    size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    size_t cols() const { return shape.size() < 2 ? (shape.empty() ? 1 : shape[0]) : shape[1]; }
    T& at(size_t i, size_t j) { return v[i * shape[1] + j]; }
    T at(size_t i, size_t j) const { return v[i * shape[1] + j]; }

    bool same_shape(const Arr& o) const { return shape == o.shape; }
};

template <typename T>
std::string shape_str(const Arr<T>& a) {
    std::string s = "(";
    for (size_t i = 0; i < a.shape.size(); ++i)
        s += (i ? ", " : "") + std::to_string(a.shape[i]);
    return s + ")";
}

// y = alpha * op(A) . op(B) + (accumulate ? y : 0)
void gemm_nn(const float* a, const float* b, float* c, size_t m, size_t k, size_t n, bool acc);
void gemm_nt(const float* a, const float* b, float* c, size_t m, size_t k, size_t n, bool acc);
void gemm_tn(const float* a, const float* b, float* c, size_t m, size_t k, size_t n, bool acc);
void gemm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n, bool acc);
void gemm_nt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n, bool acc);
void gemm_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n, bool acc);

// Reverse-mode tape over dense arrays. Construction order is execution order;
// backward() replays the recorded closures in reverse. Single-threaded per tape.
template <typename T>
class Tape {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Var leaf(Arr<T> value, bool requires_grad) {
        nodes_.push_back({std::move(value), {}, requires_grad, nullptr});
        return {int(nodes_.size()) - 1};
    }
    Var constant(Arr<T> value) { return leaf(std::move(value), false); }
    Var scalar(T value) { return constant(Arr<T>({1}, {value})); }

    // Named parameter leaf, deduplicated: repeated requests in one tape share a
    // node so gradients from every use accumulate together.
    Var param_leaf(const std::string& name, const Arr<T>& value, bool trainable) {
        auto it = params_.find(name);
        if (it != params_.end()) return it->second;
        Var v = leaf(value, trainable);
        params_.emplace(name, v);
        return v;
    }

    // Gradients of every trainable named parameter, keyed by name.
    std::map<std::string, Arr<T>> param_grads() const {
        std::map<std::string, Arr<T>> out;
        for (const auto& [name, var] : params_)
            if (nodes_[var.id].needs_grad) out[name] = nodes_[var.id].grad;
        return out;
    }

    const Arr<T>& val(Var x) const { return nodes_[x.id].value; }
    const Arr<T>& grad(Var x) const { return nodes_[x.id].grad; }
    T scalar_val(Var x) const { return nodes_[x.id].value.v[0]; }

    // ---- elementwise ----
    Var add(Var a, Var b) { return binary_same(a, b, "add", [](T x, T y) { return x + y; },
                                               [](T, T) { return std::pair<T, T>{1, 1}; }); }
    Var sub(Var a, Var b) { return binary_same(a, b, "sub", [](T x, T y) { return x - y; },
                                               [](T, T) { return std::pair<T, T>{1, -1}; }); }
    Var mul(Var a, Var b) {
        return binary_same(a, b, "mul", [](T x, T y) { return x * y; },
                           [](T x, T y) { return std::pair<T, T>{y, x}; });
    }
    Var scale(Var a, T c) {
        return unary(a, [c](T x) { return c * x; }, [c](T, T) { return c; });
    }
    Var add_const(Var a, T c) {
        return unary(a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
    }
    Var relu(Var a) {
        return unary(a, [](T x) { return x > 0 ? x : T(0); },
                     [](T x, T) { return x > 0 ? T(1) : T(0); });
    }
    Var leaky_relu(Var a, T slope = T(0.02)) {
        return unary(a, [slope](T x) { return x > 0 ? x : slope * x; },
                     [slope](T x, T) { return x > 0 ? T(1) : slope; });
    }
    Var sigmoid(Var a) {
        return unary(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
                     [](T, T y) { return y * (T(1) - y); });
    }
    Var exp(Var a) {
        return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
    }
    Var sqrt_op(Var a) {
        return unary(a, [](T x) { return std::sqrt(x); },
                     [](T, T y) { return T(0.5) / (y > T(0) ? y : T(1e-30)); });
    }
    Var abs_op(Var a) {
        return unary(a, [](T x) { return std::abs(x); },
                     [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
    }
    Var square(Var a) {
        return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
    }
    Var reciprocal(Var a) {
        return unary(a, [](T x) { return T(1) / x; }, [](T, T y) { return -y * y; });
    }

    // scalar variable times array: s is a single-element var
    Var mul_scalar(Var a, Var s) {
        const Arr<T>& av = val(a);
        const Arr<T>& sv = val(s);
        if (sv.size() != 1)
            throw std::runtime_error("mul_scalar: scalar operand has shape " + shape_str(sv));
        Arr<T> out = av;
        for (T& x : out.v) x *= sv.v[0];
        return record(std::move(out), {a, s}, [this, a, s](Node& self) {
            const Arr<T>& x = nodes_[a.id].value;
            T scalar = nodes_[s.id].value.v[0];
            for (size_t i = 0; i < x.size(); ++i) {
                if (needs(a)) nodes_[a.id].grad.v[i] += scalar * self.grad.v[i];
                if (needs(s)) nodes_[s.id].grad.v[0] += x.v[i] * self.grad.v[i];
            }
        });
    }

    Var reshape(Var a, std::vector<size_t> new_shape) {
        const Arr<T>& av = val(a);
        size_t n = 1;
        for (size_t d : new_shape) n *= d;
        if (n != av.size())
            throw std::runtime_error("reshape: size mismatch " + shape_str(av));
        Arr<T> out(std::move(new_shape), av.v);
        return record(std::move(out), {a}, [this, a](Node& self) {
            if (!needs(a)) return;
            for (size_t i = 0; i < self.grad.size(); ++i)
                nodes_[a.id].grad.v[i] += self.grad.v[i];
        });
    }

    // contiguous column slice of a 2D array
    Var slice_cols(Var a, size_t start, size_t len) {
        const Arr<T>& av = val(a);
        if (av.shape.size() != 2 || start + len > av.shape[1])
            throw std::runtime_error("slice_cols: range [" + std::to_string(start) + ", " +
                                     std::to_string(start + len) + ") of " + shape_str(av));
        size_t m = av.shape[0], n = av.shape[1];
        Arr<T> out({m, len});
        for (size_t i = 0; i < m; ++i)
            std::copy_n(&av.v[i * n + start], len, &out.v[i * len]);
        return record(std::move(out), {a}, [this, a, start, len, m, n](Node& self) {
            if (!needs(a)) return;
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < len; ++j)
                    nodes_[a.id].grad.v[i * n + start + j] += self.grad.v[i * len + j];
        });
    }

    // bias broadcast over rows: a is (m x n), b is (n)
    Var add_bias(Var a, Var b) {
        const Arr<T>& av = val(a);
        const Arr<T>& bv = val(b);
        if (av.shape.size() != 2 || bv.size() != av.shape[1])
            throw std::runtime_error("add_bias: shapes " + shape_str(av) + " and " + shape_str(bv));
        Arr<T> out = av;
        size_t m = av.shape[0], n = av.shape[1];
#pragma omp parallel for schedule(static) if (m * n > kParThreshold)
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) out.v[i * n + j] += bv.v[j];
        return record(std::move(out), {a, b}, [this, a, b, m, n](Node& self) {
            if (needs(a)) {
                T* g = nodes_[a.id].grad.v.data();
#pragma omp parallel for schedule(static) if (m * n > kParThreshold)
                for (size_t i = 0; i < m * n; ++i) g[i] += self.grad.v[i];
            }
            if (needs(b))
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < n; ++j) nodes_[b.id].grad.v[j] += self.grad.v[i * n + j];
        });
    }

    // fused y = act(x . w + b): one output allocation instead of three
    Var affine_act(Var x, Var w, Var b, Act act) {
        const Arr<T>& xv = val(x);
        const Arr<T>& wv = val(w);
        const Arr<T>& bv = val(b);
        if (xv.shape.size() != 2 || wv.shape.size() != 2 || xv.shape[1] != wv.shape[0] ||
            bv.size() != wv.shape[1])
            throw std::runtime_error("affine_act: incompatible shapes " + shape_str(xv) + " . " +
                                     shape_str(wv) + " + " + shape_str(bv));
        size_t m = xv.shape[0], k = xv.shape[1], n = wv.shape[1];
        Arr<T> out({m, n});
        gemm_nn(xv.v.data(), wv.v.data(), out.v.data(), m, k, n, false);
        const T* bp = bv.v.data();
#pragma omp parallel for schedule(static) if (m * n > kParThreshold)
        for (size_t i = 0; i < m; ++i) {
            T* row = out.v.data() + i * n;
            for (size_t j = 0; j < n; ++j) {
                T z = row[j] + bp[j];
                switch (act) {
                    case Act::Relu: z = z > 0 ? z : T(0); break;
                    case Act::LeakyRelu: z = z > 0 ? z : T(0.02) * z; break;
                    case Act::Sigmoid: z = T(1) / (T(1) + std::exp(-z)); break;
                    case Act::None: break;
                }
                row[j] = z;
            }
        }
        return record(std::move(out), {x, w, b}, [this, x, w, b, act, m, k, n](Node& self) {
            // derivative of the activation from the output value
            Arr<T> gpre({m, n});
#pragma omp parallel for schedule(static) if (m * n > kParThreshold)
            for (size_t i = 0; i < m * n; ++i) {
                T y = self.value.v[i];
                T d;
                switch (act) {
                    case Act::Relu: d = y > 0 ? T(1) : T(0); break;
                    case Act::LeakyRelu: d = y > 0 ? T(1) : T(0.02); break;
                    case Act::Sigmoid: d = y * (T(1) - y); break;
                    default: d = T(1); break;
                }
                gpre.v[i] = d * self.grad.v[i];
            }
            if (needs(x))
                gemm_nt(gpre.v.data(), nodes_[w.id].value.v.data(), nodes_[x.id].grad.v.data(), m,
                        n, k, true);
            if (needs(w))
                gemm_tn(nodes_[x.id].value.v.data(), gpre.v.data(), nodes_[w.id].grad.v.data(), k,
                        m, n, true);
            if (needs(b)) {
                T* gb = nodes_[b.id].grad.v.data();
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < n; ++j) gb[j] += gpre.v[i * n + j];
            }
        });
    }

    Var matmul(Var a, Var b) {
        const Arr<T>& av = val(a);
        const Arr<T>& bv = val(b);
        if (av.shape.size() != 2 || bv.shape.size() != 2 || av.shape[1] != bv.shape[0])
            throw std::runtime_error("matmul: incompatible shapes " + shape_str(av) + " and " +
                                     shape_str(bv));
        size_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
        Arr<T> out({m, n});
        gemm_nn(av.v.data(), bv.v.data(), out.v.data(), m, k, n, false);
        return record(std::move(out), {a, b}, [this, a, b, m, k, n](Node& self) {
            if (needs(a))
                gemm_nt(self.grad.v.data(), nodes_[b.id].value.v.data(), nodes_[a.id].grad.v.data(),
                        m, n, k, true);
            if (needs(b))
                gemm_tn(nodes_[a.id].value.v.data(), self.grad.v.data(), nodes_[b.id].grad.v.data(),
                        k, m, n, true);
        });
    }

    // column-wise concat of 2D arrays with equal row counts
    Var concat_cols(Var a, Var b) {
        const Arr<T>& av = val(a);
        const Arr<T>& bv = val(b);
        if (av.shape.size() != 2 || bv.shape.size() != 2 || av.shape[0] != bv.shape[0])
            throw std::runtime_error("concat_cols: shapes " + shape_str(av) + " and " +
                                     shape_str(bv));
        size_t m = av.shape[0], n1 = av.shape[1], n2 = bv.shape[1];
        Arr<T> out({m, n1 + n2});
#pragma omp parallel for schedule(static) if (m * (n1 + n2) > kParThreshold)
        for (size_t i = 0; i < m; ++i) {
            std::copy_n(&av.v[i * n1], n1, &out.v[i * (n1 + n2)]);
            std::copy_n(&bv.v[i * n2], n2, &out.v[i * (n1 + n2) + n1]);
        }
        return record(std::move(out), {a, b}, [this, a, b, m, n1, n2](Node& self) {
            for (size_t i = 0; i < m; ++i) {
                if (needs(a))
                    for (size_t j = 0; j < n1; ++j)
                        nodes_[a.id].grad.v[i * n1 + j] += self.grad.v[i * (n1 + n2) + j];
                if (needs(b))
                    for (size_t j = 0; j < n2; ++j)
                        nodes_[b.id].grad.v[i * n2 + j] += self.grad.v[i * (n1 + n2) + n1 + j];
            }
        });
    }

    Var concat_rows(Var a, Var b) {
        const Arr<T>& av = val(a);
        const Arr<T>& bv = val(b);
        if (av.shape.size() != 2 || bv.shape.size() != 2 || av.shape[1] != bv.shape[1])
            throw std::runtime_error("concat_rows: shapes " + shape_str(av) + " and " +
                                     shape_str(bv));
        size_t m1 = av.shape[0], m2 = bv.shape[0], n = av.shape[1];
        Arr<T> out({m1 + m2, n});
        std::copy(av.v.begin(), av.v.end(), out.v.begin());
        std::copy(bv.v.begin(), bv.v.end(), out.v.begin() + m1 * n);
        return record(std::move(out), {a, b}, [this, a, b, m1, m2, n](Node& self) {
            if (needs(a))
                for (size_t i = 0; i < m1 * n; ++i) nodes_[a.id].grad.v[i] += self.grad.v[i];
            if (needs(b))
                for (size_t i = 0; i < m2 * n; ++i)
                    nodes_[b.id].grad.v[i] += self.grad.v[m1 * n + i];
        });
    }

    // max over one axis of a 2D array; ties route the gradient to the first index
    Var max_over_axis(Var a, int axis) {
        const Arr<T>& av = val(a);
        if (av.shape.size() != 2) throw std::runtime_error("max_over_axis: need 2D input");
        size_t m = av.shape[0], n = av.shape[1];
        size_t out_n = axis == 0 ? n : m;
        Arr<T> out({out_n});
        auto arg = std::make_shared<std::vector<size_t>>(out_n);
        if (axis == 0) {
            for (size_t j = 0; j < n; ++j) {
                size_t best = 0;
                for (size_t i = 1; i < m; ++i)
                    if (av.v[i * n + j] > av.v[best * n + j]) best = i;
                (*arg)[j] = best;
                out.v[j] = av.v[best * n + j];
            }
        } else {
            for (size_t i = 0; i < m; ++i) {
                size_t best = 0;
                for (size_t j = 1; j < n; ++j)
                    if (av.v[i * n + j] > av.v[i * n + best]) best = j;
                (*arg)[i] = best;
                out.v[i] = av.v[i * n + best];
            }
        }
        return record(std::move(out), {a}, [this, a, arg, axis, n](Node& self) {
            if (!needs(a)) return;
            for (size_t o = 0; o < arg->size(); ++o) {
                size_t flat = axis == 0 ? (*arg)[o] * n + o : o * n + (*arg)[o];
                nodes_[a.id].grad.v[flat] += self.grad.v[o];
            }
        });
    }

    // (g*rows_per_group) x n -> g x n, max within each consecutive row block
    Var group_max(Var a, size_t rows_per_group) {
        const Arr<T>& av = val(a);
        if (av.shape.size() != 2 || av.shape[0] % rows_per_group != 0)
            throw std::runtime_error("group_max: rows " + std::to_string(av.rows()) +
                                     " not divisible by group " + std::to_string(rows_per_group));
        size_t groups = av.shape[0] / rows_per_group, n = av.shape[1];
        Arr<T> out({groups, n});
        auto arg = std::make_shared<std::vector<size_t>>(groups * n);
#pragma omp parallel for schedule(static) if (groups * rows_per_group * n > kParThreshold)
        for (size_t gi = 0; gi < groups; ++gi) {
            for (size_t j = 0; j < n; ++j) {
                size_t best = gi * rows_per_group;
                for (size_t r = 1; r < rows_per_group; ++r) {
                    size_t i = gi * rows_per_group + r;
                    if (av.v[i * n + j] > av.v[best * n + j]) best = i;
                }
                (*arg)[gi * n + j] = best;
                out.v[gi * n + j] = av.v[best * n + j];
            }
        }
        return record(std::move(out), {a}, [this, a, arg, n](Node& self) {
            if (!needs(a)) return;
            for (size_t o = 0; o < arg->size(); ++o)
                nodes_[a.id].grad.v[(*arg)[o] * n + (o % n)] += self.grad.v[o];
        });
    }

    // max over variable-length consecutive row blocks given by offsets
    Var group_max_ragged(Var a, std::vector<size_t> offsets) {
        const Arr<T>& av = val(a);
        if (av.shape.size() != 2 || offsets.size() < 2 || offsets.back() != av.shape[0])
            throw std::runtime_error("group_max_ragged: bad offsets for " + shape_str(av));
        size_t groups = offsets.size() - 1, n = av.shape[1];
        Arr<T> out({groups, n});
        auto arg = std::make_shared<std::vector<size_t>>(groups * n);
        auto offs = std::make_shared<std::vector<size_t>>(std::move(offsets));
#pragma omp parallel for schedule(static) if (av.size() > kParThreshold)
        for (size_t gi = 0; gi < groups; ++gi) {
            size_t lo = (*offs)[gi], hi = (*offs)[gi + 1];
            for (size_t j = 0; j < n; ++j) {
                size_t best = lo;
                for (size_t i = lo + 1; i < hi; ++i)
                    if (av.v[i * n + j] > av.v[best * n + j]) best = i;
                (*arg)[gi * n + j] = best;
                out.v[gi * n + j] = av.v[best * n + j];
            }
        }
        return record(std::move(out), {a}, [this, a, arg, n](Node& self) {
            if (!needs(a)) return;
            for (size_t o = 0; o < arg->size(); ++o)
                nodes_[a.id].grad.v[(*arg)[o] * n + (o % n)] += self.grad.v[o];
        });
    }

    Var sum_over_axis(Var a, int axis) {
        const Arr<T>& av = val(a);
        if (av.shape.size() != 2) throw std::runtime_error("sum_over_axis: need 2D input");
        size_t m = av.shape[0], n = av.shape[1];
        Arr<T> out({axis == 0 ? n : m});
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) out.v[axis == 0 ? j : i] += av.v[i * n + j];
        return record(std::move(out), {a}, [this, a, m, n, axis](Node& self) {
            if (!needs(a)) return;
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j)
                    nodes_[a.id].grad.v[i * n + j] += self.grad.v[axis == 0 ? j : i];
        });
    }

    Var reduce_mean(Var a) {
        const Arr<T>& av = val(a);
        if (av.size() == 0) throw std::runtime_error("reduce_mean: empty input");
        T acc = 0;
        for (T x : av.v) acc += x;
        Arr<T> out({1}, {acc / T(av.size())});
        return record(std::move(out), {a}, [this, a](Node& self) {
            if (!needs(a)) return;
            T g = self.grad.v[0] / T(nodes_[a.id].value.size());
            for (T& gv : nodes_[a.id].grad.v) gv += g;
        });
    }

    Var reduce_sum(Var a) {
        const Arr<T>& av = val(a);
        T acc = 0;
        for (T x : av.v) acc += x;
        Arr<T> out({1}, {acc});
        return record(std::move(out), {a}, [this, a](Node& self) {
            if (!needs(a)) return;
            for (T& gv : nodes_[a.id].grad.v) gv += self.grad.v[0];
        });
    }

    Var gather_rows(Var a, std::vector<int> idx) {
        const Arr<T>& av = val(a);
        if (av.shape.size() != 2) throw std::runtime_error("gather_rows: need 2D input");
        size_t n = av.shape[1];
        for (int i : idx)
            if (i < 0 || size_t(i) >= av.shape[0])
                throw std::runtime_error("gather_rows: index out of range");
        Arr<T> out({idx.size(), n});
        const size_t rows = idx.size();
#pragma omp parallel for schedule(static) if (rows * n > kParThreshold)
        for (size_t i = 0; i < rows; ++i)
            std::copy_n(&av.v[size_t(idx[i]) * n], n, &out.v[i * n]);
        auto ix = std::make_shared<std::vector<int>>(std::move(idx));
        return record(std::move(out), {a}, [this, a, ix, n](Node& self) {
            if (!needs(a)) return;
            for (size_t i = 0; i < ix->size(); ++i)
                for (size_t j = 0; j < n; ++j)
                    nodes_[a.id].grad.v[size_t((*ix)[i]) * n + j] += self.grad.v[i * n + j];
        });
    }

    void backward(Var loss) {
        if (val(loss).size() != 1) throw std::runtime_error("backward: loss must be scalar");
        for (auto& n : nodes_)
            if (n.needs_grad) n.grad = Arr<T>(n.value.shape);
        nodes_[loss.id].grad.v[0] = T(1);
        for (int i = loss.id; i >= 0; --i)
            if (nodes_[i].backward && nodes_[i].needs_grad) nodes_[i].backward(nodes_[i]);
    }

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Arr<T> value;
        Arr<T> grad;
        bool needs_grad = false;
        std::function<void(Node&)> backward;
    };

    bool needs(Var x) const { return nodes_[x.id].needs_grad; }

    std::map<std::string, Var> params_;

    Var record(Arr<T> out, std::initializer_list<Var> parents, std::function<void(Node&)> back) {
        bool need = false;
        for (Var p : parents) need = need || nodes_[p.id].needs_grad;
        nodes_.push_back({std::move(out), {}, need, need ? std::move(back) : nullptr});
        return {int(nodes_.size()) - 1};
    }

    static constexpr size_t kParThreshold = size_t(1) << 16;

    template <typename F, typename DF>
    Var unary(Var a, F f, DF df) {
        Arr<T> out = val(a);
        const size_t count = out.size();
#pragma omp parallel for schedule(static) if (count > kParThreshold)
        for (size_t i = 0; i < count; ++i) out.v[i] = f(out.v[i]);
        return record(std::move(out), {a}, [this, a, df](Node& self) {
            if (!needs(a)) return;
            const Arr<T>& x = nodes_[a.id].value;
            T* g = nodes_[a.id].grad.v.data();
            const size_t n = x.size();
#pragma omp parallel for schedule(static) if (n > kParThreshold)
            for (size_t i = 0; i < n; ++i) g[i] += df(x.v[i], self.value.v[i]) * self.grad.v[i];
        });
    }

    template <typename F, typename DF>
    Var binary_same(Var a, Var b, const char* name, F f, DF df) {
        const Arr<T>& av = val(a);
        const Arr<T>& bv = val(b);
        if (!av.same_shape(bv))
            throw std::runtime_error(std::string(name) + ": shape mismatch " + shape_str(av) +
                                     " vs " + shape_str(bv));
        Arr<T> out = av;
        const size_t count = out.size();
#pragma omp parallel for schedule(static) if (count > kParThreshold)
        for (size_t i = 0; i < count; ++i) out.v[i] = f(av.v[i], bv.v[i]);
        return record(std::move(out), {a, b}, [this, a, b, df](Node& self) {
            const Arr<T>& x = nodes_[a.id].value;
            const Arr<T>& y = nodes_[b.id].value;
            const bool na = needs(a), nb = needs(b);
            T* ga = na ? nodes_[a.id].grad.v.data() : nullptr;
            T* gb = nb ? nodes_[b.id].grad.v.data() : nullptr;
            const size_t n = x.size();
#pragma omp parallel for schedule(static) if (n > kParThreshold)
            for (size_t i = 0; i < n; ++i) {
                auto [da, db] = df(x.v[i], y.v[i]);
                if (na) ga[i] += da * self.grad.v[i];
                if (nb) gb[i] += db * self.grad.v[i];
            }
        });
    }

    std::vector<Node> nodes_;
};

// ---- parameters, Adam, MLP --------------------------------------------------

template <typename T>
struct ParamStore {
    std::map<std::string, Arr<T>> params;  // ordered for determinism

    Arr<T>& at(const std::string& name) {
        auto it = params.find(name);
        if (it == params.end()) throw std::runtime_error("unknown parameter: " + name);
        return it->second;
    }
    const Arr<T>& at(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw std::runtime_error("unknown parameter: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return params.count(name) > 0; }
};

template <typename T>
struct AdamState {
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    int64_t step = 0;
    std::map<std::string, Arr<T>> m1, m2;
};

// Standard bias-corrected Adam update over named parameters.
template <typename T>
void adam_step(ParamStore<T>& store, const std::map<std::string, Arr<T>>& grads,
               AdamState<T>& state) {
    ++state.step;
    T b1t = std::pow(state.beta1, T(state.step));
    T b2t = std::pow(state.beta2, T(state.step));
    for (const auto& [name, g] : grads) {
        Arr<T>& p = store.at(name);
        if (!p.same_shape(g))
            throw std::runtime_error("adam_step: gradient shape mismatch for " + name);
        for (T x : g.v)
            if (!std::isfinite(x))
                throw std::runtime_error("adam_step: non-finite gradient in " + name);
        auto it1 = state.m1.try_emplace(name, Arr<T>(p.shape)).first;
        auto it2 = state.m2.try_emplace(name, Arr<T>(p.shape)).first;
        Arr<T>& m = it1->second;
        Arr<T>& v = it2->second;
        for (size_t i = 0; i < p.size(); ++i) {
            m.v[i] = state.beta1 * m.v[i] + (T(1) - state.beta1) * g.v[i];
            v.v[i] = state.beta2 * v.v[i] + (T(1) - state.beta2) * g.v[i] * g.v[i];
            T mhat = m.v[i] / (T(1) - b1t);
            T vhat = v.v[i] / (T(1) - b2t);
            p.v[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

template <typename T>
typename Tape<T>::Var apply_act(Tape<T>& tape, typename Tape<T>::Var x, Act act) {
    switch (act) {
        case Act::Relu: return tape.relu(x);
        case Act::LeakyRelu: return tape.leaky_relu(x, T(0.02));
        case Act::Sigmoid: return tape.sigmoid(x);
        default: return x;
    }
}

// Xavier-uniform weights, zero biases, parameter names "<prefix>/w<i>", "<prefix>/b<i>".
template <typename T>
void init_mlp(ParamStore<T>& store, const std::string& prefix, const std::vector<size_t>& widths,
              Rng& rng, bool zero_final = false) {
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        size_t fan_in = widths[l], fan_out = widths[l + 1];
        Arr<T> w({fan_in, fan_out});
        T limit = std::sqrt(T(6) / T(fan_in + fan_out));
        bool zero = zero_final && l + 2 == widths.size();
        for (T& x : w.v) x = zero ? T(0) : T(rng.uniform(-double(limit), double(limit)));
        store.params[prefix + "/w" + std::to_string(l)] = std::move(w);
        store.params[prefix + "/b" + std::to_string(l)] = Arr<T>({fan_out});
    }
}

// Affine chain with a hidden activation and a caller-chosen final activation.
template <typename T>
typename Tape<T>::Var mlp_forward(Tape<T>& tape, const std::vector<typename Tape<T>::Var>& weights,
                                  const std::vector<typename Tape<T>::Var>& biases,
                                  typename Tape<T>::Var input, Act hidden, Act final_act) {
    if (weights.size() != biases.size() || weights.empty())
        throw std::runtime_error("mlp_forward: inconsistent layer lists");
    auto x = input;
    for (size_t l = 0; l < weights.size(); ++l) {
        if (tape.val(x).cols() != tape.val(weights[l]).rows())
            throw std::runtime_error("mlp_forward: width mismatch at layer " + std::to_string(l) +
                                     ": input " + shape_str(tape.val(x)) + " vs weight " +
                                     shape_str(tape.val(weights[l])));
        x = tape.affine_act(x, weights[l], biases[l], l + 1 == weights.size() ? final_act : hidden);
    }
    return x;
}

// Convenience: register every "<prefix>/w*" parameter of an MLP as tape leaves.
template <typename T>
struct MlpVars {
    std::vector<typename Tape<T>::Var> w, b;
};

template <typename T>
MlpVars<T> mlp_leaves(Tape<T>& tape, const ParamStore<T>& store, const std::string& prefix,
                      bool trainable) {
    MlpVars<T> out;
    for (int l = 0;; ++l) {
        std::string wn = prefix + "/w" + std::to_string(l);
        if (!store.has(wn)) break;
        std::string bn = prefix + "/b" + std::to_string(l);
        out.w.push_back(tape.param_leaf(wn, store.at(wn), trainable));
        out.b.push_back(tape.param_leaf(bn, store.at(bn), trainable));
    }
    if (out.w.empty()) throw std::runtime_error("mlp_leaves: no layers under " + prefix);
    return out;
}

// ---- checkpoints -------------------------------------------------------------

// Named-tensor archive, magic "CLSC1": per tensor a name, dtype, shape and raw
// little-endian payload.
void save_checkpoint(const std::string& path, const ParamStore<float>& store);
void save_checkpoint(const std::string& path, const ParamStore<double>& store);
void load_checkpoint(const std::string& path, ParamStore<float>& store);
void load_checkpoint(const std::string& path, ParamStore<double>& store);
bool checkpoint_exists(const std::string& path);

using real = float;
using RTape = Tape<real>;
using RVar = Tape<real>::Var;

}  // namespace coalesce
