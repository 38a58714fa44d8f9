#pragma once

// Independent oracles that never share code with the paths they check:
// central-difference gradients, a one-sided Jacobi SVD for numerical rank,
// the quadratic-decay probe for the first-order surrogate, and the rank
// capacity experiment. Everything here is F64.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "liera/autograd.hpp"
#include "liera/liegroup.hpp"
#include "liera/peft.hpp"
#include "liera/rng.hpp"
#include "liera/tensor.hpp"

namespace liera::verify {

using LossFn = std::function<double(const std::vector<Tensor<double>>&)>;

// Central differences with per-coordinate step h = 1e-5 * max(1, |theta_i|).
inline std::vector<Tensor<double>> finite_diff_grad(const LossFn& f, std::vector<Tensor<double>> params) {
    std::vector<Tensor<double>> grads;
    grads.reserve(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) grads.push_back(zeros<double>(params[p].shape()));
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::uint64_t i = 0; i < params[p].numel(); ++i) {
            const double theta = params[p][i];
            const double h = 1e-5 * std::max(1.0, std::abs(theta));
            params[p][i] = theta + h;
            const double up = f(params);
            params[p][i] = theta - h;
            const double down = f(params);
            params[p][i] = theta;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("finite_diff_grad: non-finite loss at probe point (param " +
                                   std::to_string(p) + ", coord " + std::to_string(i) + ")");
            grads[p][i] = (up - down) / (2.0 * h);
        }
    }
    return grads;
}

struct GradCheckCoord {
    std::string param;
    std::uint64_t index = 0;
    double analytic = 0, numeric = 0, rel_err = 0;
};

struct GradCheckReport {
    std::vector<GradCheckCoord> coords;
    double max_rel_err = 0;
    double tolerance = 1e-4;
    bool pass = false;

    std::size_t n_coords() const { return coords.size(); }
};

inline GradCheckReport compare_grads(const std::vector<std::string>& names,
                                     const std::vector<Tensor<double>>& analytic,
                                     const std::vector<Tensor<double>>& numeric, double tol) {
    GradCheckReport rep;
    rep.tolerance = tol;
    for (std::size_t p = 0; p < analytic.size(); ++p) {
        for (std::uint64_t i = 0; i < analytic[p].numel(); ++i) {
            GradCheckCoord c;
            c.param = names[p];
            c.index = i;
            c.analytic = analytic[p][i];
            c.numeric = numeric[p][i];
            c.rel_err = std::abs(c.analytic - c.numeric) / std::max(1e-8, std::abs(c.numeric));
            rep.max_rel_err = std::max(rep.max_rel_err, c.rel_err);
            rep.coords.push_back(c);
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

// End-to-end gradient check of one adapted layer: input -> lifted weight ->
// frozen projection head -> cross entropy. Only the low-rank factors are
// trainable, exactly as in fine-tuning.
inline GradCheckReport check_adapter_gradients(bool conv_layer, peft::LiftMode mode, std::uint64_t seed,
                                               double tol = 1e-4) {
    Rng rng = Rng::derive(seed, conv_layer ? 1 : 0);

    peft::AttachedAdapter<double> adapter;
    adapter.config.lift_mode = mode;
    adapter.config.rank = 4;
    adapter.config.alpha = 8.0;
    Tensor<double> x;            // network input
    Tensor<double> proj;         // frozen head mapping features to logits
    std::vector<int> labels;

    if (conv_layer) {
        adapter.base = gaussian<double>(Shape{4, 3, 3, 3}, 0.0, 1.0, rng);
        adapter.factors = peft::init_factors<double>(4, 27, 4, 8.0, 0.05, rng);
        x = gaussian<double>(Shape{2, 3, 4, 4}, 0.0, 1.0, rng);
        proj = gaussian<double>(Shape{5, 64}, 0.0, 0.5, rng);
        labels = {1, 3};
    } else {
        adapter.base = gaussian<double>(Shape{16, 12}, 0.0, 1.0, rng);
        adapter.factors = peft::init_factors<double>(16, 12, 4, 8.0, 0.05, rng);
        x = gaussian<double>(Shape{3, 12}, 0.0, 1.0, rng);
        labels = {0, 7, 15};
    }
    // A zero B never moves A's gradient; draw both factors random instead.
    adapter.factors.B = gaussian<double>(adapter.factors.B.shape(), 0.0, 0.05, rng);

    auto run = [&](const Tensor<double>& fa, const Tensor<double>& fb, autograd::GradMap<double>* out_grads,
                   std::vector<std::string>* out_names) {
        autograd::Tape<double> tape;
        autograd::VarId base = tape.var_input(adapter.base);
        autograd::VarId va = tape.var_param(fa);
        autograd::VarId vb = tape.var_param(fb);
        autograd::VarId w = peft::lift_on_tape(tape, base, va, vb, adapter);
        autograd::VarId logits{};
        if (conv_layer) {
            autograd::VarId h = tape.conv2d(tape.var_input(x), w, 1, 1);
            const Shape& hs = tape.val(h).shape();
            h = tape.reshape(h, Shape{hs.dim(0), hs.dim(1) * hs.dim(2) * hs.dim(3)});
            logits = tape.matmul(h, tape.transpose(tape.var_input(proj)));
        } else {
            logits = tape.matmul(tape.var_input(x), tape.transpose(w));
        }
        autograd::VarId loss = tape.softmax_xent(logits, labels);
        if (out_grads) {
            *out_grads = tape.backward(loss);
            out_names->push_back("A");
            out_names->push_back("B");
            std::vector<Tensor<double>> analytic{out_grads->at(va.index), out_grads->at(vb.index)};
            return std::make_pair(tape.val(loss)[0], analytic);
        }
        return std::make_pair(tape.val(loss)[0], std::vector<Tensor<double>>{});
    };

    autograd::GradMap<double> gm;
    std::vector<std::string> names;
    auto [loss0, analytic] = run(adapter.factors.A, adapter.factors.B, &gm, &names);
    (void)loss0;

    const LossFn f = [&](const std::vector<Tensor<double>>& params) {
        return run(params[0], params[1], nullptr, nullptr).first;
    };
    const std::vector<Tensor<double>> numeric =
        finite_diff_grad(f, {adapter.factors.A, adapter.factors.B});

    return compare_grads(names, analytic, numeric, tol);
}

// One-sided Jacobi on columns: rotate column pairs until every pair is
// orthogonal, then singular values are the column norms. Adequate and
// dependency-free at <= 64x64.
inline std::vector<double> svd_small(const Tensor<double>& a) {
    if (a.shape().rank() != 2) throw ShapeError("svd_small: matrix required, got " + a.shape().str());
    const std::int64_t n = a.shape().dim(0), m = a.shape().dim(1);
    if (n > 64 || m > 64) throw ShapeError("svd_small: limited to 64x64 matrices");
    check_finite(a, "svd_small");

    // Column-major working copy.
    std::vector<std::vector<double>> col(static_cast<std::size_t>(m), std::vector<double>(static_cast<std::size_t>(n)));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j) col[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = a.at(i, j);

    const double conv_tol = 1e-14;
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (std::int64_t p = 0; p < m - 1; ++p) {
            for (std::int64_t q = p + 1; q < m; ++q) {
                auto& cp = col[static_cast<std::size_t>(p)];
                auto& cq = col[static_cast<std::size_t>(q)];
                double alpha = 0, beta = 0, gamma = 0;
                for (std::int64_t i = 0; i < n; ++i) {
                    alpha += cp[static_cast<std::size_t>(i)] * cp[static_cast<std::size_t>(i)];
                    beta += cq[static_cast<std::size_t>(i)] * cq[static_cast<std::size_t>(i)];
                    gamma += cp[static_cast<std::size_t>(i)] * cq[static_cast<std::size_t>(i)];
                }
                if (std::abs(gamma) <= conv_tol * std::sqrt(alpha * beta) || gamma == 0.0) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::int64_t i = 0; i < n; ++i) {
                    const double vp = cp[static_cast<std::size_t>(i)];
                    const double vq = cq[static_cast<std::size_t>(i)];
                    cp[static_cast<std::size_t>(i)] = c * vp - s * vq;
                    cq[static_cast<std::size_t>(i)] = s * vp + c * vq;
                }
            }
        }
        if (!rotated) {
            std::vector<double> sv(static_cast<std::size_t>(m));
            for (std::int64_t j = 0; j < m; ++j) {
                double sq = 0;
                for (std::int64_t i = 0; i < n; ++i)
                    sq += col[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] *
                          col[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
                sv[static_cast<std::size_t>(j)] = std::sqrt(sq);
            }
            std::sort(sv.begin(), sv.end(), std::greater<double>());
            return sv;
        }
    }
    throw NumericError("svd_small: no convergence after 60 sweeps");
}

inline int numerical_rank(const Tensor<double>& a, double rel_threshold = 1e-8) {
    const std::vector<double> sv = svd_small(a);
    if (sv.empty() || sv[0] <= 0.0) return 0;
    int rank = 0;
    for (double s : sv)
        if (s > rel_threshold * sv[0]) ++rank;
    return rank;
}

struct TaylorProbe {
    std::vector<double> t;      // probe scales, descending
    std::vector<double> err;    // Frobenius distance exact vs first order
    double slope = 0.0;         // least-squares fit of ln err vs ln t
    bool degenerate = false;    // zero perturbation, nothing to fit
};

// E(t) = |exp(t*delta) - (1 + t*delta)|_F decays quadratically in t; the
// fitted log-log slope should sit near 2.
inline TaylorProbe taylor_decay_probe(const Shape& shape, double base_scale, std::uint64_t seed) {
    if (!(base_scale > 0) || base_scale > 0.5)
        throw NumericError("taylor_decay_probe: base_scale must lie in (0, 0.5]");
    Rng rng(seed);
    Tensor<double> delta = gaussian<double>(shape, 0.0, 1.0, rng);
    const double worst = max_abs(delta);
    if (worst == 0.0) return {{}, {}, 0.0, true};
    delta = scale(delta, base_scale / worst); // max_abs(delta) == base_scale exactly

    TaylorProbe probe;
    for (double t : {1.0, 0.5, 0.25, 0.125}) {
        const Tensor<double> scaled = scale(delta, t);
        const Tensor<double> exact = lie::exp_map(scaled).value;
        const Tensor<double> taylor = lie::taylor_exp(scaled);
        const double e = frobenius_norm(sub(exact, taylor));
        if (e == 0.0) return {{}, {}, 0.0, true};
        probe.t.push_back(t);
        probe.err.push_back(e);
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double k = static_cast<double>(probe.t.size());
    for (std::size_t i = 0; i < probe.t.size(); ++i) {
        const double lx = std::log(probe.t[i]);
        const double ly = std::log(probe.err[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    probe.slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    return probe;
}

struct RankReport {
    int trials = 0;
    double threshold = 1e-8;
    std::vector<int> rank_low;       // numerical_rank(s*A*B) per trial
    std::vector<int> rank_hadamard;  // numerical_rank(W hadamard s*A*B) per trial
    int low_rank_hits = 0;           // trials where rank_low == r
    int full_rank_hits = 0;          // trials where rank_hadamard == min(n, m)
};

// Per trial: Gaussian W (n x m), A (n x r), B (r x m); the low-rank product
// stays at rank r while its Hadamard with W generically reaches min(n, m).
inline RankReport rank_capacity_experiment(std::int64_t n, std::int64_t m, std::int64_t r, int trials,
                                           std::uint64_t seed, double threshold = 1e-8) {
    if (r < 1 || r > std::min(n, m) || std::min(n, m) < 1 || std::max(n, m) > 64)
        throw ShapeError("rank_capacity_experiment: need 1 <= r <= min(n,m) <= 64");
    RankReport rep;
    rep.trials = trials;
    rep.threshold = threshold;
    const double s = 2.0; // alpha = 2r convention
    for (int trial = 0; trial < trials; ++trial) {
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(trial));
        const Tensor<double> w = gaussian<double>(Shape{n, m}, 0.0, 1.0, rng);
        const Tensor<double> a = gaussian<double>(Shape{n, r}, 0.0, 1.0, rng);
        const Tensor<double> b = gaussian<double>(Shape{r, m}, 0.0, 1.0, rng);
        const Tensor<double> low = scale(matmul(a, b), s);
        const int rl = numerical_rank(low, threshold);
        const int rh = numerical_rank(hadamard(w, low), threshold);
        rep.rank_low.push_back(rl);
        rep.rank_hadamard.push_back(rh);
        if (rl == static_cast<int>(r)) ++rep.low_rank_hits;
        if (rh == static_cast<int>(std::min(n, m))) ++rep.full_rank_hits;
    }
    return rep;
}

} // namespace liera::verify
