#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dsct/models.hpp"
#include "oracles.hpp"

#include <cmath>
#include <random>

using namespace dsct;

namespace {

Volume random_volume(const VoxelGrid& g, Scalar scale, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<Scalar> dist(0.0, scale);
    Volume v = Volume::zero(g);
    for (Index j = 0; j < v.values.size(); ++j) v.values[j] = dist(rng);
    return v;
}

} // namespace

TEST_CASE("weights: unattenuated sample normalizes to one") {
    Vec counts(3);
    counts << 1e5, 5e4, 2e4; // y = 0 gives the largest count
    const WeightDiag w = statistical_weights(counts, 0.0);
    CHECK(w.d[0] == doctest::Approx(1.0));
    CHECK(w.d[1] == doctest::Approx(0.5));
    CHECK(w.clamped == 0);

    Vec y(2);
    y << 0.0, 1.0;
    const WeightDiag ideal = statistical_weights_ideal(y, 1e5);
    CHECK(ideal.d[0] == doctest::Approx(1.0));
    CHECK(ideal.d[1] == doctest::Approx(std::exp(-1.0)));
}

TEST_CASE("weights approach the Poisson inverse-variance limit") {
    const Scalar sigma_e2 = 40.0;
    for (Scalar lambda : {1e3, 1e5, 1e7, 1e9}) {
        Vec counts(1);
        counts << lambda;
        const WeightDiag w = statistical_weights(counts, sigma_e2, 1.0, false);
        CHECK(w.d[0] == doctest::Approx(lambda).epsilon(sigma_e2 / lambda * 2));
    }
}

TEST_CASE("weights clamp nonpositive counts and count them") {
    Vec counts(4);
    counts << 100.0, 0.0, -3.0, 50.0;
    const WeightDiag w = statistical_weights(counts, 0.0, 1.0, false);
    CHECK(w.clamped == 2);
    CHECK(w.d[1] == doctest::Approx(1.0)); // floored to 1 count
}

TEST_CASE("increasing the electronic variance never raises a weight") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<Scalar> count_dist(1.0, 1e6);
    Vec counts(64);
    for (Index i = 0; i < counts.size(); ++i) counts[i] = count_dist(rng);
    for (Scalar s : {0.0, 10.0, 1e3, 1e5}) {
        const WeightDiag lo = statistical_weights(counts, s);
        const WeightDiag hi = statistical_weights(counts, 2.0 * s + 1.0);
        for (Index i = 0; i < counts.size(); ++i) CHECK(hi.d[i] <= lo.d[i] + 1e-12);
    }
}

TEST_CASE("weighted residual variance is flat across attenuation levels") {
    // Monte Carlo: lambda ~ Poisson(i0 exp(-ybar)) + N(0, sigma_e2);
    // Var(ln lambda) should be ~ 1/d with d the weight formula.
    const Scalar i0 = 1e5;
    const Scalar sigma_e2 = 100.0;
    std::mt19937_64 rng(101);
    std::vector<Scalar> ybars = {0.2, 1.0, 2.0, 3.5};
    std::vector<Scalar> products;
    for (Scalar ybar : ybars) {
        const Scalar lambda_bar = i0 * std::exp(-ybar);
        std::poisson_distribution<long long> poisson(lambda_bar);
        std::normal_distribution<Scalar> gauss(0.0, std::sqrt(sigma_e2));
        Scalar sum = 0, sumsq = 0;
        const int n = 10000;
        for (int t = 0; t < n; ++t) {
            const Scalar lambda = std::max<Scalar>(poisson(rng) + gauss(rng), 1.0);
            const Scalar y = std::log(i0 / lambda);
            sum += y;
            sumsq += y * y;
        }
        const Scalar var = sumsq / n - (sum / n) * (sum / n);
        Vec counts(1);
        counts << lambda_bar;
        const WeightDiag w = statistical_weights(counts, sigma_e2, 1.0, false);
        products.push_back(var * w.d[0]);
    }
    for (Scalar p : products) CHECK(p == doctest::Approx(products.front()).epsilon(0.10));
}

TEST_CASE("prior: constant volumes cost nothing") {
    const VoxelGrid g = VoxelGrid::centered(6, 5, 4, 1.0, 2.0);
    Volume v = Volume::zero(g);
    v.values.setConstant(37.0);
    PriorParams params;
    params.strength = 2.5;
    CHECK(prior_cost(v, params) == 0.0);
    CHECK(prior_gradient(v, params).norm() == 0.0);
}

TEST_CASE("prior reduces to a weighted quadratic at p = q = 2") {
    const VoxelGrid g = VoxelGrid::centered(4, 4, 3, 1.0, 1.5);
    const Volume v = random_volume(g, 25.0, 57);
    PriorParams params;
    params.strength = 1.7;
    params.p = 2.0;
    params.q = 2.0;
    params.c = 12.0;
    // rho(delta) = (delta/c)^2 / 2 once p == q.
    const auto offsets = neighbor_weights(g);
    Scalar expect = 0;
    for (int iz = 0; iz < g.n_z; ++iz)
        for (int iy = 0; iy < g.n_y; ++iy)
            for (int ix = 0; ix < g.n_x; ++ix)
                for (const auto& o : offsets) {
                    const int nx = ix + o.dx, ny = iy + o.dy, nz = iz + o.dz;
                    if (nx < 0 || nx >= g.n_x || ny < 0 || ny >= g.n_y || nz < 0 || nz >= g.n_z)
                        continue;
                    const Scalar d =
                        v.values[g.index(ix, iy, iz)] - v.values[g.index(nx, ny, nz)];
                    expect += o.w * d * d / (2.0 * params.c * params.c);
                }
    CHECK(prior_cost(v, params) == doctest::Approx(params.strength * expect).epsilon(1e-12));
}

TEST_CASE("prior gradient matches central finite differences") {
    const VoxelGrid g = VoxelGrid::centered(4, 3, 3, 1.0, 1.0);
    for (auto [p, q] : {std::pair{2.0, 2.0}, std::pair{2.0, 1.2}, std::pair{1.5, 1.2}}) {
        PriorParams params;
        params.strength = 3.0;
        params.p = p;
        params.q = q;
        params.c = 10.0;
        const Volume v = random_volume(g, 30.0, 119 + static_cast<int>(10 * p + q));
        const Vec analytic = prior_gradient(v, params);
        const Vec numeric = oracle::finite_difference_gradient(
            [&](const Vec& x) {
                Volume probe = v;
                probe.values = x;
                return prior_cost(probe, params);
            },
            v.values, 1e-3);
        CHECK((analytic - numeric).norm() <= 1e-5 * numeric.norm());
    }
}

TEST_CASE("prior is convex along random segments") {
    const VoxelGrid g = VoxelGrid::centered(4, 4, 2, 1.0, 1.0);
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<Scalar> t_dist(0.05, 0.95);
    for (auto [p, q] : {std::pair{2.0, 1.2}, std::pair{1.5, 1.2}, std::pair{1.2, 1.0}}) {
        PriorParams params;
        params.strength = 1.0;
        params.p = p;
        params.q = q;
        params.c = 8.0;
        for (int trial = 0; trial < 50; ++trial) {
            const Volume a = random_volume(g, 40.0, 1000 + trial);
            const Volume b = random_volume(g, 40.0, 2000 + trial);
            const Scalar t = t_dist(rng);
            Volume mix = a;
            mix.values = t * a.values + (1.0 - t) * b.values;
            CHECK(prior_cost(mix, params) <=
                  t * prior_cost(a, params) + (1.0 - t) * prior_cost(b, params) + 1e-9);
        }
    }
}

TEST_CASE("prior rejects non-convex exponents") {
    PriorParams params;
    params.p = 2.5;
    CHECK_THROWS_AS(params.validate(), Error);
    params.p = 1.0;
    params.q = 1.2;
    CHECK_THROWS_AS(params.validate(), Error);
}

TEST_CASE("neighborhood weights: 26 entries summing to one") {
    const VoxelGrid g = VoxelGrid::centered(3, 3, 3, 0.7, 1.3);
    const auto offsets = neighbor_weights(g);
    CHECK(offsets.size() == 26);
    Scalar sum = 0;
    for (const auto& o : offsets) {
        CHECK(o.w > 0);
        sum += o.w;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("joint cost: single identity-weight block is half the residual norm") {
    // One voxel, a handful of synthetic rows.
    const VoxelGrid g = VoxelGrid::centered(2, 2, 1, 1.0, 1.0);
    SparseBlock block;
    block.m_c = 2;
    block.m_r = 1;
    block.rows = 4;
    block.cols = g.size();
    block.view_betas = {0.0, 1.0};
    block.view_time_indices = {0, 1};
    block.row_offsets = {0, 2, 4, 6, 8};
    block.col_indices = {0, 1, 2, 3, 0, 2, 1, 3};
    block.values = {1.0, 0.5, 0.25, 1.5, 2.0, 1.0, 0.75, 0.25};

    Vec x(4);
    x << 1.0, -2.0, 3.0, 0.5;
    Vec y(4);
    y << 0.3, 1.2, -0.4, 0.9;
    Vec d = Vec::Ones(4);
    const Vec r = y - forward_project(block, x);

    Volume vol{g, x, VolumeUnit::attenuation};
    PriorParams off;
    off.strength = 0.0;
    const Scalar cost = negative_log_posterior(vol, {{&block, &y, &d}}, off);
    CHECK(cost == doctest::Approx(0.5 * r.squaredNorm()).epsilon(1e-12));

    // The exact solution of consistent data costs zero.
    const Vec y_exact = forward_project(block, x);
    CHECK(negative_log_posterior(vol, {{&block, &y_exact, &d}}, off) ==
          doctest::Approx(0.0).scale(1.0).epsilon(1e-15));

    // Gradient agrees with finite differences (with the prior on).
    PriorParams on;
    on.strength = 0.8;
    on.p = 2.0;
    on.q = 1.2;
    on.c = 5.0;
    const Vec analytic = negative_log_posterior_gradient(vol, {{&block, &y, &d}}, on);
    const Vec numeric = oracle::finite_difference_gradient(
        [&](const Vec& probe) {
            Volume pv{g, probe, VolumeUnit::attenuation};
            return negative_log_posterior(pv, {{&block, &y, &d}}, on);
        },
        x, 1e-5);
    CHECK((analytic - numeric).norm() <= 1e-5 * numeric.norm());

    Vec bad = Vec::Zero(3);
    CHECK_THROWS_AS(negative_log_posterior(vol, {{&block, &bad, &d}}, off), Error);
}

TEST_CASE("joint quadratic cost is strictly convex when the prior is on") {
    const VoxelGrid g = VoxelGrid::centered(3, 3, 1, 1.0, 1.0);
    SparseBlock block;
    block.m_c = 3;
    block.m_r = 1;
    block.rows = 3;
    block.cols = g.size();
    block.view_betas = {0.0};
    block.view_time_indices = {0};
    block.row_offsets = {0, 3, 6, 9};
    block.col_indices = {0, 1, 2, 3, 4, 5, 6, 7, 8};
    block.values = {1.0, 0.2, 0.1, 0.4, 1.1, 0.3, 0.2, 0.5, 0.9};
    Vec d = Vec::Ones(3);
    PriorParams quad;
    quad.strength = 0.5;
    quad.p = 2.0;
    quad.q = 2.0;
    quad.c = 4.0;

    // Hessian action through gradient differences along random directions,
    // including the constant direction the prior alone cannot see.
    std::mt19937_64 rng(5);
    std::normal_distribution<Scalar> dist(0.0, 1.0);
    Vec y = Vec::Zero(3);
    for (int trial = 0; trial < 20; ++trial) {
        Vec z(g.size());
        if (trial == 0)
            z.setConstant(1.0);
        else
            for (Index j = 0; j < z.size(); ++j) z[j] = dist(rng);
        Volume v0{g, Vec::Zero(g.size()), VolumeUnit::attenuation};
        Volume v1{g, z, VolumeUnit::attenuation};
        const Vec g0 = negative_log_posterior_gradient(v0, {{&block, &y, &d}}, quad);
        const Vec g1 = negative_log_posterior_gradient(v1, {{&block, &y, &d}}, quad);
        CHECK((g1 - g0).dot(z) > 0.0);
    }
}

TEST_CASE("unit conversions round trip") {
    const VoxelGrid g = VoxelGrid::centered(2, 2, 2, 1.0, 1.0);
    Volume hu = random_volume(g, 200.0, 33);
    const Volume mu = volume_to_attenuation(hu, 0.02);
    CHECK(mu.unit == VolumeUnit::attenuation);
    const Volume back = volume_to_hounsfield(mu, 0.02);
    CHECK((back.values - hu.values).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(hu_to_attenuation(-1000.0, 0.02) == doctest::Approx(0.0));
    CHECK(hu_to_attenuation(0.0, 0.02) == doctest::Approx(0.02));
}
