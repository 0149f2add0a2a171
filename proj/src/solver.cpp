#include "dsct/solver.hpp"

#include "dsct/threading.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <chrono>
#include <cmath>

namespace dsct {

AgentProblem::AgentProblem(const SparseBlock& block, Vec y, Vec d, const VoxelGrid& grid,
                           const PriorParams& prior, Scalar prior_share)
    : block_(&block), y_(std::move(y)), d_(std::move(d)), grid_(grid), prior_(prior),
      prior_share_(prior_share) {
    if (y_.size() != block.rows || d_.size() != block.rows)
        throw Error(ErrorCategory::dimension, "agent data size mismatch");
    if (grid.size() != block.cols)
        throw Error(ErrorCategory::dimension, "agent grid does not match block columns");
    prior_.validate();

    // Column-major mirror of the CSR block.
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(block.cols) + 1, 0);
    for (std::uint64_t k = 0; k < block.nnz(); ++k) ++counts[block.col_indices[k] + 1];
    col_offsets_.resize(counts.size());
    col_offsets_[0] = 0;
    for (std::size_t j = 1; j < counts.size(); ++j)
        col_offsets_[j] = col_offsets_[j - 1] + counts[j];
    col_rows_.resize(block.nnz());
    col_values_.resize(block.nnz());
    std::vector<std::uint64_t> cursor(col_offsets_.begin(), col_offsets_.end() - 1);
    for (Index i = 0; i < block.rows; ++i) {
        for (std::uint64_t k = block.row_offsets[i]; k < block.row_offsets[i + 1]; ++k) {
            const auto j = block.col_indices[k];
            col_rows_[cursor[j]] = i;
            col_values_[cursor[j]] = block.values[k];
            ++cursor[j];
        }
    }
    col_weighted_sq_ = Vec::Zero(block.cols);
    for (Index j = 0; j < block.cols; ++j) {
        Scalar acc = 0;
        for (std::uint64_t k = col_offsets_[j]; k < col_offsets_[j + 1]; ++k)
            acc += d_[col_rows_[k]] * col_values_[k] * col_values_[k];
        col_weighted_sq_[j] = acc;
    }
}

Scalar AgentProblem::cost(const Vec& v, const Vec& anchor, Scalar sigma) const {
    const Vec r = y_ - forward_project(*block_, v);
    Scalar c = 0.5 * (d_.array() * r.array().square()).sum();
    if (prior_share_ > 0 && prior_.strength > 0) {
        Volume vol{grid_, v, VolumeUnit::attenuation};
        c += prior_share_ * prior_cost(vol, prior_);
    }
    c += (v - anchor).squaredNorm() / (2.0 * sigma * sigma);
    return c;
}

Vec proximal_agent_solve(const AgentProblem& agent, const Vec& anchor, const Vec& v_init,
                         Scalar sigma, const ProxOptions& options) {
    if (!(sigma > 0)) throw Error(ErrorCategory::config, "sigma must be positive");
    const SparseBlock& block = agent.block();
    if (anchor.size() != block.cols || v_init.size() != block.cols)
        throw Error(ErrorCategory::dimension, "anchor size does not match block columns");

    const VoxelGrid& g = agent.grid();
    const auto offsets = neighbor_weights(g);
    const PriorParams& prior = agent.prior();
    const Scalar prior_scale = agent.prior_share() * prior.strength;
    const Scalar inv_sig2 = 1.0 / (sigma * sigma);

    Vec v = v_init;
    Vec r = agent.y() - forward_project(block, v);
    Scalar f_old = agent.cost(v, anchor, sigma);

    for (int sweep = 0; sweep < options.inner_iters; ++sweep) {
        const Vec v_before = v;
        const Vec r_before = r;

        for (int iz = 0; iz < g.n_z; ++iz) {
            for (int iy = 0; iy < g.n_y; ++iy) {
                for (int ix = 0; ix < g.n_x; ++ix) {
                    const Index j = g.index(ix, iy, iz);
                    // Quadratic data term.
                    Scalar theta1 = 0;
                    for (std::uint64_t k = agent.col_offsets()[j]; k < agent.col_offsets()[j + 1];
                         ++k)
                        theta1 -= agent.d()[agent.col_rows()[k]] * agent.col_values()[k] *
                                  r[agent.col_rows()[k]];
                    Scalar theta2 = agent.col_weighted_sq()[j];
                    // Prior surrogate.
                    if (prior_scale > 0) {
                        for (const auto& o : offsets) {
                            const int nx = ix + o.dx, ny = iy + o.dy, nz = iz + o.dz;
                            if (nx < 0 || nx >= g.n_x || ny < 0 || ny >= g.n_y || nz < 0 ||
                                nz >= g.n_z)
                                continue;
                            const Scalar delta = v[j] - v[g.index(nx, ny, nz)];
                            theta1 += 2.0 * prior_scale * o.w * potential_derivative(delta, prior);
                            theta2 += 2.0 * prior_scale * o.w *
                                      potential_surrogate_curvature(delta, prior);
                        }
                    }
                    // Proximal term.
                    theta1 += (v[j] - anchor[j]) * inv_sig2;
                    theta2 += inv_sig2;

                    const Scalar step = -theta1 / theta2;
                    if (step == 0) continue;
                    v[j] += step;
                    for (std::uint64_t k = agent.col_offsets()[j]; k < agent.col_offsets()[j + 1];
                         ++k)
                        r[agent.col_rows()[k]] -= agent.col_values()[k] * step;
                }
            }
        }

        Scalar f_new = agent.cost(v, anchor, sigma);
        if (f_new > f_old) {
            // The surrogate guarantees descent in exact arithmetic; halve the
            // sweep until the cost stops increasing.
            int halvings = 0;
            while (f_new > f_old && halvings < 30) {
                v = 0.5 * (v + v_before);
                r = agent.y() - forward_project(block, v);
                f_new = agent.cost(v, anchor, sigma);
                ++halvings;
            }
            if (f_new > f_old) {
                if (f_new > f_old + 1e-9 * std::abs(f_old))
                    throw Error(ErrorCategory::numeric, "proximal agent diverged");
                v = v_before;
                r = r_before;
                break;
            }
        }
        const Scalar drop = f_old - f_new;
        f_old = f_new;
        if (drop < options.rel_tol * std::max(std::abs(f_old), Scalar(1e-30))) break;
    }
    return v;
}

CEState ce_initialize(const std::vector<AgentProblem>& agents, Scalar sigma, Scalar rho,
                      int threads) {
    if (agents.empty()) throw Error(ErrorCategory::config, "need at least one agent");
    const Index n = agents.front().block().cols;
    for (const auto& a : agents)
        if (a.block().cols != n)
            throw Error(ErrorCategory::dimension, "agents disagree on volume size");

    // X0 = (sum_k A^kT D^k y^k) / (sum_k A^kT D^k A^k 1): exact for data
    // from a constant volume, cheap everywhere else.
    Vec num = Vec::Zero(n);
    Vec den = Vec::Zero(n);
    BackprojectOptions opt;
    opt.threads = threads;
    const Vec ones = Vec::Ones(n);
    for (const auto& a : agents) {
        num += back_project(a.block(), (a.d().array() * a.y().array()).matrix(), opt);
        den += back_project(a.block(), (a.d().array() * forward_project(a.block(), ones, threads).array()).matrix(), opt);
    }
    Vec x0 = Vec::Zero(n);
    for (Index j = 0; j < n; ++j) x0[j] = den[j] > 0 ? num[j] / den[j] : 0.0;

    CEState state;
    state.x = x0;
    state.v.assign(agents.size(), x0);
    state.w.assign(agents.size(), x0);
    state.u.assign(agents.size(), Vec::Zero(n));
    state.rho = rho;
    if (sigma > 0) {
        state.sigma = sigma;
    } else {
        const Scalar mean = x0.mean();
        const Scalar sd = std::sqrt((x0.array() - mean).square().sum() /
                                    std::max<Index>(n - 1, 1));
        state.sigma = sd > 1e-12 ? sd : std::max(x0.cwiseAbs().maxCoeff(), Scalar(1e-6));
    }
    state.validate();
    return state;
}

void ce_iterate(CEState& state, const std::vector<AgentProblem>& agents,
                const ProxOptions& prox_options, int threads) {
    state.validate();
    const auto t_start = std::chrono::steady_clock::now();
    const std::size_t K = agents.size();

    // (a) agents solve in parallel against the frozen consensus snapshot.
    std::vector<std::string> agent_errors(K);
    parallel_for_tasks(static_cast<Index>(K), threads, [&](Index k) {
        try {
            const Vec anchor = state.x + state.u[k];
            state.v[k] = proximal_agent_solve(agents[k], anchor, state.v[k], state.sigma,
                                              prox_options);
        } catch (const std::exception& e) {
            agent_errors[k] = e.what();
        }
    });
    for (std::size_t k = 0; k < K; ++k)
        if (!agent_errors[k].empty())
            throw Error(ErrorCategory::numeric,
                        "agent " + std::to_string(k) + " failed: " + agent_errors[k]);

    // (b)-(d) reflect and relax.
    for (std::size_t k = 0; k < K; ++k) {
        const Vec w_prev = state.w[k];
        state.w[k] = 2.0 * state.v[k] - state.x - state.u[k];
        state.w[k] = state.rho * state.w[k] + (1.0 - state.rho) * w_prev;
    }
    // (e) consensus mean.
    Vec x_new = Vec::Zero(state.x.size());
    for (const auto& w : state.w) x_new += w;
    x_new /= static_cast<Scalar>(K);
    state.x = x_new;
    // (f) input changes.
    for (std::size_t k = 0; k < K; ++k) state.u[k] = state.x - state.w[k];

    ++state.iteration;
    Scalar disagreement = 0;
    for (const auto& v : state.v)
        disagreement = std::max(disagreement, (v - state.x).cwiseAbs().maxCoeff());

    std::vector<BlockData> blocks;
    blocks.reserve(K);
    for (const auto& a : agents) blocks.push_back({&a.block(), &a.y(), &a.d()});
    Volume vol{agents.front().grid(), state.x, VolumeUnit::attenuation};
    const Scalar cost = negative_log_posterior(vol, blocks, agents.front().prior(), threads);

    HistoryRow row;
    row.iteration = state.iteration;
    row.cost = cost;
    row.max_disagreement = disagreement;
    row.wall_time_s =
        std::chrono::duration<Scalar>(std::chrono::steady_clock::now() - t_start).count();
    state.history.push_back(row);
}

ReconstructResult reconstruct(const std::vector<AgentProblem>& agents, const VoxelGrid& grid,
                              const ReconstructOptions& options) {
    if (!(options.tol > 0)) throw Error(ErrorCategory::config, "tolerance must be positive");
    CEState state = ce_initialize(agents, options.sigma, options.rho, options.threads);
    for (int it = 0; it < options.max_outer; ++it) {
        ce_iterate(state, agents, options.prox, options.threads);
        if (state.history.back().max_disagreement <= options.tol) {
            state.converged = true;
            break;
        }
    }
    ReconstructResult result{Volume{grid, state.x, VolumeUnit::attenuation}, std::move(state)};
    return result;
}

Vec direct_solve_small(const std::vector<BlockData>& blocks, const VoxelGrid& grid,
                       const PriorParams& prior) {
    prior.validate();
    if (prior.strength > 0 && (prior.p != 2.0 || prior.q != 2.0))
        throw Error(ErrorCategory::config, "direct solver supports the quadratic prior only");
    const Index n = grid.size();
    if (n > 10000)
        throw Error(ErrorCategory::config, "direct solver capped at 10^4 unknowns");

    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
    Vec b = Vec::Zero(n);
    for (const auto& blk : blocks) {
        const SparseBlock& a = *blk.block;
        if (a.cols != n) throw Error(ErrorCategory::dimension, "block does not match grid");
        for (Index i = 0; i < a.rows; ++i) {
            const Scalar di = (*blk.d)[i];
            if (di == 0) continue;
            for (std::uint64_t k1 = a.row_offsets[i]; k1 < a.row_offsets[i + 1]; ++k1) {
                const Index j1 = a.col_indices[k1];
                const Scalar v1 = di * a.values[k1];
                b[j1] += v1 * (*blk.y)[i];
                for (std::uint64_t k2 = a.row_offsets[i]; k2 < a.row_offsets[i + 1]; ++k2)
                    h(j1, a.col_indices[k2]) += v1 * a.values[k2];
            }
        }
    }
    if (prior.strength > 0) {
        const auto offsets = neighbor_weights(grid);
        const Scalar scale = 2.0 * prior.strength / (prior.c * prior.c);
        for (int iz = 0; iz < grid.n_z; ++iz) {
            for (int iy = 0; iy < grid.n_y; ++iy) {
                for (int ix = 0; ix < grid.n_x; ++ix) {
                    const Index j = grid.index(ix, iy, iz);
                    for (const auto& o : offsets) {
                        const int nx = ix + o.dx, ny = iy + o.dy, nz = iz + o.dz;
                        if (nx < 0 || nx >= grid.n_x || ny < 0 || ny >= grid.n_y || nz < 0 ||
                            nz >= grid.n_z)
                            continue;
                        const Index m = grid.index(nx, ny, nz);
                        h(j, j) += scale * o.w;
                        h(j, m) -= scale * o.w;
                    }
                }
            }
        }
    }

    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    if (ldlt.info() != Eigen::Success)
        throw Error(ErrorCategory::numeric, "normal equations factorization failed");
    Vec x = ldlt.solve(b);
    // One step of iterative refinement, then verify the contract.
    x += ldlt.solve(b - h * x);
    const Scalar rel = (h * x - b).norm() / std::max(b.norm(), Scalar(1e-300));
    if (rel > 1e-10)
        throw Error(ErrorCategory::numeric,
                    "direct solve residual " + std::to_string(rel) + " exceeds 1e-10");
    return x;
}

} // namespace dsct
