#pragma once

// The multiplicative group of nowhere-zero tensors under the Hadamard
// product, together with the elementwise exponential map connecting it to
// the flat algebra of unconstrained tensors. Membership is "every entry
// stays away from zero by eps", which keeps reciprocals finite.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "liera/rng.hpp"
#include "liera/tensor.hpp"

namespace liera::lie {

// Entries at or beyond this magnitude indicate a runaway perturbation, not a
// legitimate update; exp would overflow (F32) or produce absurd scales (F64).
template <typename S>
constexpr S exp_guard();
template <>
constexpr float exp_guard<float>() {
    return 88.0f;
}
template <>
constexpr double exp_guard<double>() {
    return 700.0;
}

struct MembershipReport {
    bool ok = true;
    std::uint64_t flat_index = 0;
    double entry = 0.0;

    std::string str() const {
        if (ok) return "member";
        return "entry " + std::to_string(entry) + " at flat index " + std::to_string(flat_index) +
               " is within eps of zero";
    }
};

template <typename S>
MembershipReport check_membership(const Tensor<S>& t, S eps) {
    if (!(eps > S(0))) throw NumericError("check_membership: eps must be positive");
    for (std::uint64_t i = 0; i < t.numel(); ++i) {
        if (!(std::abs(t[i]) > eps)) return {false, i, static_cast<double>(t[i])};
    }
    return {};
}

template <typename S>
struct GroupElement {
    Tensor<S> value;
    S eps;

    explicit GroupElement(Tensor<S> v, S membership = membership_eps<S>())
        : value(std::move(v)), eps(membership) {
        const MembershipReport r = check_membership(value, eps);
        if (!r.ok) throw NumericError("group element rejected: " + r.str());
    }
};

template <typename S>
GroupElement<S> group_identity(const Shape& shape, S eps = membership_eps<S>()) {
    return GroupElement<S>(ones<S>(shape), eps);
}

template <typename S>
GroupElement<S> group_mul(const GroupElement<S>& a, const GroupElement<S>& b) {
    return GroupElement<S>(hadamard(a.value, b.value), a.eps);
}

template <typename S>
GroupElement<S> group_inverse(const GroupElement<S>& a) {
    return GroupElement<S>(reciprocal(a.value, a.eps), a.eps);
}

template <typename S>
GroupElement<S> exp_map(const Tensor<S>& delta, S eps = membership_eps<S>()) {
    const S worst = max_abs(delta);
    if (worst >= exp_guard<S>())
        throw NumericError("exp_map: |entry| = " + std::to_string(worst) +
                           " exceeds the overflow guard; perturbation is far outside the small regime");
    return GroupElement<S>(map_exp(delta), eps);
}

template <typename S>
Tensor<S> log_map(const GroupElement<S>& g) {
    return map_ln(g.value);
}

// First-order surrogate ones + delta. The result is a plain tensor, not a
// GroupElement: entries of delta near -1 push it out of the group, and that
// is reported as an error rather than silently accepted.
template <typename S>
Tensor<S> taylor_exp(const Tensor<S>& delta, S eps = membership_eps<S>()) {
    Tensor<S> out(delta.shape());
    for (std::uint64_t i = 0; i < delta.numel(); ++i) out[i] = S(1) + delta[i];
    const MembershipReport r = check_membership(out, eps);
    if (!r.ok)
        throw NumericError("taylor_exp: result left the group (" + r.str() +
                           "); perturbation too large for the first-order regime");
    return check_finite(out, "taylor_exp");
}

struct AxiomCheck {
    bool pass = false;
    double worst = 0.0; // metric depends on the axiom; see axiom_suite
};

struct AxiomSuiteReport {
    AxiomCheck closure;       // worst = smallest |entry| over all products
    AxiomCheck associativity; // worst = max relative error of (ab)c vs a(bc)
    AxiomCheck identity;      // worst = max abs diff of a*1 vs a (must be 0)
    AxiomCheck inverse;       // worst = max relative error of a*inv(a) vs 1
    int trials = 0;

    bool all_pass() const { return closure.pass && associativity.pass && identity.pass && inverse.pass; }
};

// Draws membership-satisfying tensors (|entry| in (0.5, 1.5], random sign)
// and exercises the four group axioms at the given tolerance.
template <typename S>
AxiomSuiteReport axiom_suite(const Shape& shape, int trials, std::uint64_t seed, S tol,
                             S eps = membership_eps<S>()) {
    if (trials < 1) throw NumericError("axiom_suite: trials must be >= 1");

    auto draw = [&](Rng& rng) {
        Tensor<S> t(shape);
        for (std::uint64_t i = 0; i < t.numel(); ++i) {
            const S mag = S(0.5) + static_cast<S>(rng.next_uniform());
            t[i] = (rng.next_u64() & 1u) ? mag : -mag;
        }
        return GroupElement<S>(std::move(t), eps);
    };

    AxiomSuiteReport rep;
    rep.trials = trials;
    double closure_min = std::numeric_limits<double>::infinity();
    double assoc_worst = 0.0, ident_worst = 0.0, inv_worst = 0.0;
    bool closure_ok = true;

    for (int trial = 0; trial < trials; ++trial) {
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(trial));
        const GroupElement<S> a = draw(rng);
        const GroupElement<S> b = draw(rng);
        const GroupElement<S> c = draw(rng);

        const GroupElement<S> ab = group_mul(a, b);
        closure_min = std::min(closure_min, static_cast<double>(min_abs(ab.value)));
        closure_ok = closure_ok && check_membership(ab.value, eps).ok;

        const Tensor<S> left = group_mul(ab, c).value;
        const Tensor<S> right = group_mul(a, group_mul(b, c)).value;
        for (std::uint64_t i = 0; i < left.numel(); ++i) {
            const double rel = std::abs(static_cast<double>(left[i]) - static_cast<double>(right[i])) /
                               std::max(1e-300, std::abs(static_cast<double>(right[i])));
            assoc_worst = std::max(assoc_worst, rel);
        }

        const Tensor<S> a_ident = group_mul(a, group_identity<S>(shape, eps)).value;
        for (std::uint64_t i = 0; i < a_ident.numel(); ++i)
            ident_worst = std::max(ident_worst,
                                   std::abs(static_cast<double>(a_ident[i]) - static_cast<double>(a.value[i])));

        const Tensor<S> a_inv = group_mul(a, group_inverse(a)).value;
        for (std::uint64_t i = 0; i < a_inv.numel(); ++i)
            inv_worst = std::max(inv_worst, std::abs(static_cast<double>(a_inv[i]) - 1.0));
    }

    rep.closure = {closure_ok, closure_min};
    rep.associativity = {assoc_worst <= static_cast<double>(tol), assoc_worst};
    rep.identity = {ident_worst == 0.0, ident_worst};
    rep.inverse = {inv_worst <= static_cast<double>(tol), inv_worst};
    return rep;
}

} // namespace liera::lie
