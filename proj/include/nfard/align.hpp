#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "nfard/error.hpp"
#include "nfard/linalg.hpp"
#include "nfard/matrix.hpp"
#include "nfard/metrics.hpp"

namespace nfard {

/// Least-squares projection h2_i ~ P h1_i between neuron spaces of widths
/// a (source) and b (target), fitted over n shared test samples.
struct Projection {
  Matrix p;  // b x a
  double residual = 0.0;
  std::size_t source_dim = 0;
  std::size_t target_dim = 0;
  std::size_t sample_count = 0;
};

/// P = (H1+ H2)^T, the global minimizer of ||H1 P^T - H2||_F with minimum
/// Frobenius norm. Requires the source to be at least as wide as the target;
/// callers wanting the other direction must swap arguments.
inline Projection fit_projection(const NeuronMatrix& h1, const NeuronMatrix& h2) {
  const Matrix& a = h1.values;
  const Matrix& b = h2.values;
  if (a.rows() != b.rows())
    throw DimensionError("fit_projection: sample counts " + std::to_string(a.rows()) + " vs " +
                         std::to_string(b.rows()));
  if (a.cols() < b.cols())
    throw DimensionError("fit_projection: source width " + std::to_string(a.cols()) +
                         " is narrower than target width " + std::to_string(b.cols()) +
                         "; swap the arguments");
  Matrix w = solve_least_squares(a, b);  // a.cols() x b.cols()
  Projection proj;
  proj.p = transpose(w);
  proj.residual = frobenius_norm(matmul(a, w) - b);
  proj.source_dim = a.cols();
  proj.target_dim = b.cols();
  proj.sample_count = a.rows();
  return proj;
}

/// Aligns two neuron matrices of possibly different widths by projecting the
/// wider onto the narrower (on ties, the first argument is projected onto
/// the second). Output pair has equal widths.
inline std::pair<NeuronMatrix, NeuronMatrix> hetero_align(const NeuronMatrix& hv,
                                                          const NeuronMatrix& hg) {
  if (hv.values.rows() != hg.values.rows())
    throw DimensionError("hetero_align: sample counts " + std::to_string(hv.values.rows()) +
                         " vs " + std::to_string(hg.values.rows()));
  if (hv.values.cols() >= hg.values.cols()) {
    Projection proj = fit_projection(hv, hg);
    NeuronMatrix a = hv;
    a.values = matmul_transb(hv.values, proj.p);
    return {std::move(a), hg};
  }
  Projection proj = fit_projection(hg, hv);
  NeuronMatrix b = hg;
  b.values = matmul_transb(hg.values, proj.p);
  return {hv, std::move(b)};
}

/// Underdetermined fits (fewer than 2a samples for source width a) drive
/// residuals toward zero regardless of model relatedness.
inline bool alignment_underdetermined(std::size_t sample_count, std::size_t source_dim) {
  return sample_count < 2 * source_dim;
}

}  // namespace nfard
