#pragma once

#include "dsct/models.hpp"
#include "dsct/projector.hpp"

#include <vector>

namespace dsct {

// One consensus agent: a data block plus its 1/K share of the prior.
// Holds a column-major mirror of the block for coordinate descent.
class AgentProblem {
  public:
    AgentProblem(const SparseBlock& block, Vec y, Vec d, const VoxelGrid& grid,
                 const PriorParams& prior, Scalar prior_share);

    const SparseBlock& block() const { return *block_; }
    const Vec& y() const { return y_; }
    const Vec& d() const { return d_; }
    const VoxelGrid& grid() const { return grid_; }
    const PriorParams& prior() const { return prior_; }
    Scalar prior_share() const { return prior_share_; }

    // F_k(v) = 1/2 ||y - A v||^2_D + prior_share * R(v) + ||v - anchor||^2 / (2 sigma^2).
    Scalar cost(const Vec& v, const Vec& anchor, Scalar sigma) const;

    // Column view used by the inner solver.
    const std::vector<std::uint64_t>& col_offsets() const { return col_offsets_; }
    const std::vector<Index>& col_rows() const { return col_rows_; }
    const std::vector<Scalar>& col_values() const { return col_values_; }
    const Vec& col_weighted_sq() const { return col_weighted_sq_; } // sum_i d_i A_ij^2

  private:
    const SparseBlock* block_;
    Vec y_;
    Vec d_;
    VoxelGrid grid_;
    PriorParams prior_;
    Scalar prior_share_;
    std::vector<std::uint64_t> col_offsets_;
    std::vector<Index> col_rows_;
    std::vector<Scalar> col_values_;
    Vec col_weighted_sq_;
};

struct ProxOptions {
    int inner_iters = 10;
    Scalar rel_tol = 1e-6;
};

// Approximate minimizer of F_k at the anchor, by iterative coordinate
// descent with a 1-D Newton step on the local surrogate. Starts from
// v_init (warm start) and decreases F_k monotonically; a sweep that
// increases the cost is re-tried with step halving.
Vec proximal_agent_solve(const AgentProblem& agent, const Vec& anchor, const Vec& v_init,
                         Scalar sigma, const ProxOptions& options = {});

struct HistoryRow {
    int iteration = 0;
    Scalar cost = 0.0;
    Scalar max_disagreement = 0.0;
    Scalar wall_time_s = 0.0;
};

// Consensus Equilibrium state: consensus volume X and the per-agent
// V^k, W^k, U^k with the proximal scale sigma and relaxation rho.
struct CEState {
    Vec x;
    std::vector<Vec> v, w, u;
    Scalar sigma = 1.0;
    Scalar rho = 0.8;
    int iteration = 0;
    std::vector<HistoryRow> history;
    bool converged = false;

    void validate() const {
        if (!(sigma > 0)) throw Error(ErrorCategory::config, "sigma must be positive");
        if (!(rho > 0 && rho <= 1)) throw Error(ErrorCategory::config, "rho must be in (0, 1]");
    }
};

// Initializes the consensus state: X = weighted back projection normalized
// by column sums, V^k = W^k = X, U^k = 0. When sigma <= 0 it defaults to
// the sample standard deviation of X.
CEState ce_initialize(const std::vector<AgentProblem>& agents, Scalar sigma, Scalar rho,
                      int threads = 1);

// One CE sweep: (a) V^k = argmin F_k(X + U^k); (b) save W'^k;
// (c) W^k = 2 V^k - X - U^k; (d) W^k = rho W^k + (1 - rho) W'^k;
// (e) X = mean_k W^k; (f) U^k = X - W^k. Appends a history row (cost of
// the joint posterior at the new X, max_k ||V^k - X||_inf).
void ce_iterate(CEState& state, const std::vector<AgentProblem>& agents,
                const ProxOptions& prox_options = {}, int threads = 1);

struct ReconstructOptions {
    Scalar sigma = 0.0; // <= 0: use the initializer's default
    Scalar rho = 0.8;
    Scalar tol = 0.0;   // max_k ||V^k - X||_inf threshold, volume units
    int max_outer = 100;
    ProxOptions prox;
    int threads = 1;
};

struct ReconstructResult {
    Volume volume; // solver units (attenuation unless the data says otherwise)
    CEState state;
};

// Runs CE until max_k ||V^k - X||_inf <= tol or the iteration budget is
// exhausted (then flagged non-converged).
ReconstructResult reconstruct(const std::vector<AgentProblem>& agents, const VoxelGrid& grid,
                              const ReconstructOptions& options);

// Direct solution of the joint quadratic-prior problem (p = q = 2) by the
// normal equations; oracle for CE correctness. Caps at 10^4 unknowns.
Vec direct_solve_small(const std::vector<BlockData>& blocks, const VoxelGrid& grid,
                       const PriorParams& prior);

} // namespace dsct
