#include "protoshield/blas_backend.hpp"

#include <dlfcn.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

namespace protoshield::blas {
namespace {

// CBLAS ABI constants (fixed by the standard).
constexpr int kRowMajor = 101;
constexpr int kNoTrans = 111;
constexpr int kTrans = 112;

using cblas_dgemm_t = void (*)(int order, int trans_a, int trans_b, int m, int n, int k,
                               double alpha, const double* a, int lda, const double* b,
                               int ldb, double beta, double* c, int ldc);

struct Backend {
    cblas_dgemm_t fn = nullptr;
    std::string name = "builtin";
};

std::vector<std::string> candidate_libs() {
    std::vector<std::string> libs;
    if (const char* env = std::getenv("PROTOSHIELD_BLAS")) libs.push_back(env);
    libs.insert(libs.end(), {"libopenblas.so.0", "libopenblas.so", "libblas.so.3", "libblas.so",
                             "libcblas.so.3", "libcblas.so"});
    // Python wheels often bundle a newer OpenBLAS than the distro ships.
    namespace fs = std::filesystem;
    for (const char* root : {"/usr/local/lib", "/usr/lib"}) {
        std::error_code ec;
        for (auto it = fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied, ec);
             !ec && it != fs::recursive_directory_iterator(); it.increment(ec)) {
            if (it.depth() > 4) {
                it.disable_recursion_pending();
                continue;
            }
            const auto& p = it->path();
            if (p.filename().string().rfind("libscipy_openblas", 0) == 0) libs.push_back(p.string());
        }
    }
    return libs;
}

Backend load_backend() {
    // Old DYNAMIC_ARCH OpenBLAS builds fail to recognize some virtualized
    // CPUs and fall back to a slow generic kernel; pinning the core type
    // before the library initializes restores the vectorized path.
#if defined(__x86_64__)
    if (!std::getenv("OPENBLAS_CORETYPE") && __builtin_cpu_supports("avx512f"))
        setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
#endif
    for (const auto& lib : candidate_libs()) {
        void* h = dlopen(lib.c_str(), RTLD_NOW | RTLD_LOCAL);
        if (!h) continue;
        for (const char* sym : {"cblas_dgemm", "scipy_cblas_dgemm"}) {
            if (auto* fn = reinterpret_cast<cblas_dgemm_t>(dlsym(h, sym)))
                return {fn, "openblas " + lib};
        }
        dlclose(h);
    }
    return {};
}

const Backend& backend() {
    static Backend b = load_backend();
    return b;
}

// Fallback GEMM, blocked for cache locality. Correct but unoptimized.
void builtin_dgemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
                   double alpha, const double* a, int64_t lda, const double* b, int64_t ldb,
                   double beta, double* c, int64_t ldc) {
    auto at = [&](int64_t i, int64_t p) { return trans_a ? a[p * lda + i] : a[i * lda + p]; };
    auto bt = [&](int64_t p, int64_t j) { return trans_b ? b[j * ldb + p] : b[p * ldb + j]; };
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
    constexpr int64_t kBlock = 64;
    for (int64_t i0 = 0; i0 < m; i0 += kBlock)
        for (int64_t p0 = 0; p0 < k; p0 += kBlock)
            for (int64_t j0 = 0; j0 < n; j0 += kBlock) {
                int64_t i1 = std::min(i0 + kBlock, m), p1 = std::min(p0 + kBlock, k),
                        j1 = std::min(j0 + kBlock, n);
                for (int64_t i = i0; i < i1; ++i)
                    for (int64_t p = p0; p < p1; ++p) {
                        double av = alpha * at(i, p);
                        for (int64_t j = j0; j < j1; ++j) c[i * ldc + j] += av * bt(p, j);
                    }
            }
}

}  // namespace

void dgemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
           double alpha, const double* a, int64_t lda, const double* b, int64_t ldb,
           double beta, double* c, int64_t ldc) {
    if (m <= 0 || n <= 0) return;
    const Backend& be = backend();
    if (be.fn) {
        be.fn(kRowMajor, trans_a ? kTrans : kNoTrans, trans_b ? kTrans : kNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
        return;
    }
    builtin_dgemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

const char* backend_name() { return backend().name.c_str(); }

}  // namespace protoshield::blas
