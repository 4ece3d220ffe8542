#pragma once

#include <cstdint>

namespace protoshield::blas {

// Row-major double GEMM: C = alpha * op(A) * op(B) + beta * C.
// Backed by a runtime-loaded BLAS when one is available, otherwise by a
// blocked reference loop. Transpositions are handled by the backend.
void dgemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
           double alpha, const double* a, int64_t lda, const double* b, int64_t ldb,
           double beta, double* c, int64_t ldc);

// Name of the backend actually in use ("openblas <path>" or "builtin").
const char* backend_name();

}  // namespace protoshield::blas
