#include "coalesce/autodiff.hpp"

#include <cstdio>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace coalesce {

// ikj kernel: the j loop vectorizes; each output row is owned by one thread,
// so results do not depend on the thread count.
template <typename T>
static void gemm_nn_impl(const T* a, const T* b, T* c, size_t m, size_t k, size_t n, bool acc) {
    const bool par = m * k * n > size_t(1) << 16;
#pragma omp parallel for schedule(static) if (par)
    for (size_t i = 0; i < m; ++i) {
        T* ci = c + i * n;
        if (!acc) std::memset(ci, 0, n * sizeof(T));
        const T* ai = a + i * k;
        for (size_t l = 0; l < k; ++l) {
            T av = ai[l];
            const T* bl = b + l * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

// c (m x n) = a (m x k) . b^T, b stored (n x k). The transpose of b is
// materialized so the ikj kernel vectorizes; b is weight-sized, so the scratch
// stays small next to the activations.
template <typename T>
static void gemm_nt_impl(const T* a, const T* b, T* c, size_t m, size_t k, size_t n, bool acc) {
    std::vector<T> bt(k * n);
    for (size_t j = 0; j < n; ++j)
        for (size_t l = 0; l < k; ++l) bt[l * n + j] = b[j * k + l];
    gemm_nn_impl(a, bt.data(), c, m, k, n, acc);
}

// c (m x n) = a^T . b (k x n), a stored (k x m)
template <typename T>
static void gemm_tn_impl(const T* a, const T* b, T* c, size_t m, size_t k, size_t n, bool acc) {
    const bool par = m * k * n > size_t(1) << 16;
#pragma omp parallel for schedule(static) if (par)
    for (size_t i = 0; i < m; ++i) {
        T* ci = c + i * n;
        if (!acc) std::memset(ci, 0, n * sizeof(T));
        for (size_t l = 0; l < k; ++l) {
            T av = a[l * m + i];
            const T* bl = b + l * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

void gemm_nn(const float* a, const float* b, float* c, size_t m, size_t k, size_t n, bool acc) {
    gemm_nn_impl(a, b, c, m, k, n, acc);
}
void gemm_nt(const float* a, const float* b, float* c, size_t m, size_t k, size_t n, bool acc) {
    gemm_nt_impl(a, b, c, m, k, n, acc);
}
void gemm_tn(const float* a, const float* b, float* c, size_t m, size_t k, size_t n, bool acc) {
    gemm_tn_impl(a, b, c, m, k, n, acc);
}
void gemm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n, bool acc) {
    gemm_nn_impl(a, b, c, m, k, n, acc);
}
void gemm_nt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n, bool acc) {
    gemm_nt_impl(a, b, c, m, k, n, acc);
}
void gemm_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n, bool acc) {
    gemm_tn_impl(a, b, c, m, k, n, acc);
}

// ---- checkpoint archive -------------------------------------------------------

namespace {

constexpr char kMagic[5] = {'C', 'L', 'S', 'C', '1'};

template <typename T>
constexpr uint8_t dtype_tag() {
    return sizeof(T) == 4 ? 0 : 1;
}

template <typename T>
void save_impl(const std::string& path, const ParamStore<T>& store) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    std::fwrite(kMagic, 1, 5, f);
    uint64_t count = store.params.size();
    std::fwrite(&count, sizeof(count), 1, f);
    for (const auto& [name, arr] : store.params) {
        uint32_t name_len = uint32_t(name.size());
        std::fwrite(&name_len, sizeof(name_len), 1, f);
        std::fwrite(name.data(), 1, name_len, f);
        uint8_t dtype = dtype_tag<T>();
        std::fwrite(&dtype, 1, 1, f);
        uint32_t ndim = uint32_t(arr.shape.size());
        std::fwrite(&ndim, sizeof(ndim), 1, f);
        for (size_t d : arr.shape) {
            uint64_t dim = d;
            std::fwrite(&dim, sizeof(dim), 1, f);
        }
        std::fwrite(arr.v.data(), sizeof(T), arr.v.size(), f);
    }
    std::fclose(f);
}

template <typename T>
void load_impl(const std::string& path, ParamStore<T>& store) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    auto fail = [&](const char* what) {
        std::fclose(f);
        throw std::runtime_error(std::string(what) + ": " + path);
    };
    char magic[5];
    if (std::fread(magic, 1, 5, f) != 5 || std::memcmp(magic, kMagic, 5) != 0)
        fail("bad checkpoint magic");
    uint64_t count = 0;
    if (std::fread(&count, sizeof(count), 1, f) != 1) fail("truncated checkpoint");
    for (uint64_t t = 0; t < count; ++t) {
        uint32_t name_len = 0;
        if (std::fread(&name_len, sizeof(name_len), 1, f) != 1) fail("truncated checkpoint");
        std::string name(name_len, '\0');
        if (std::fread(name.data(), 1, name_len, f) != name_len) fail("truncated checkpoint");
        uint8_t dtype = 0;
        uint32_t ndim = 0;
        if (std::fread(&dtype, 1, 1, f) != 1 || std::fread(&ndim, sizeof(ndim), 1, f) != 1)
            fail("truncated checkpoint");
        std::vector<size_t> shape(ndim);
        size_t total = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            uint64_t dim = 0;
            if (std::fread(&dim, sizeof(dim), 1, f) != 1) fail("truncated checkpoint");
            shape[d] = size_t(dim);
            total *= shape[d];
        }
        Arr<T> arr(shape);
        if (dtype == dtype_tag<T>()) {
            if (std::fread(arr.v.data(), sizeof(T), total, f) != total) fail("truncated checkpoint");
        } else if (dtype == 0) {
            std::vector<float> tmp(total);
            if (std::fread(tmp.data(), sizeof(float), total, f) != total)
                fail("truncated checkpoint");
            for (size_t i = 0; i < total; ++i) arr.v[i] = T(tmp[i]);
        } else {
            std::vector<double> tmp(total);
            if (std::fread(tmp.data(), sizeof(double), total, f) != total)
                fail("truncated checkpoint");
            for (size_t i = 0; i < total; ++i) arr.v[i] = T(tmp[i]);
        }
        store.params[name] = std::move(arr);
    }
    std::fclose(f);
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore<float>& store) {
    save_impl(path, store);
}
void save_checkpoint(const std::string& path, const ParamStore<double>& store) {
    save_impl(path, store);
}
void load_checkpoint(const std::string& path, ParamStore<float>& store) {
    load_impl(path, store);
}
void load_checkpoint(const std::string& path, ParamStore<double>& store) {
    load_impl(path, store);
}
bool checkpoint_exists(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (f) std::fclose(f);
    return f != nullptr;
}

}  // namespace coalesce
