#pragma once

// Exact integer and rational combinatorics: compositions, multinomials,
// partial Bell polynomials, Stirling numbers of the first kind, and the two
// moment identities built from them.

#include <boost/multiprecision/cpp_int.hpp>

#include <functional>
#include <span>
#include <vector>

namespace mbp {

using BigInt = boost::multiprecision::cpp_int;
using BigRational = boost::multiprecision::cpp_rational;

/// Ordered tuple of strictly positive parts.
using Composition = std::vector<int>;

inline constexpr int kCompositionGuard = 30;
inline constexpr int kStirlingIdentityGuard = 15;

BigInt factorial(int n);
BigInt binomial(int n, int k);

/// Calls visit(parts) for every ordered j-tuple of positive integers summing
/// to k, in lexicographic order. The span is only valid during the call.
void for_each_composition(int k, int j, const std::function<void(std::span<const int>)>& visit);

/// All compositions of k into exactly j positive parts; C(k-1, j-1) of them.
std::vector<Composition> compositions_positive(int k, int j);

/// k! / prod(parts_i!).
BigInt multinomial(int k, std::span<const int> parts);

/// Partial Bell polynomial B_{k,j}(x_1, ..., x_{k-j+1}).
BigRational bell_partial(int k, int j, std::span<const BigRational> xs);

/// Unsigned Stirling number of the first kind: coefficient of x^j in x(x+1)...(x+k-1).
BigInt stirling_first_unsigned(int k, int j);

/// sum_j 2^j sum_{compositions} (1/j!) multinomial(k; parts) prod (k_i - 1)!,
/// which equals (k+1)!.
BigInt stirling_identity_rhs(int k);

/// E[(Y_1 + ... + Y_n)^k] for iid Y given moments[i] = E[Y^{i+1}], i < k,
/// via the composition expansion.
BigRational iid_moment_formula(int k, int n, std::span<const BigRational> moments);

/// Same expectation by brute force over all n-tuples of a finite-support law.
/// Independent of the composition expansion; used as an oracle.
BigRational iid_moment_brute_force(int k, int n, std::span<const BigRational> atoms,
                                   std::span<const BigRational> probs);

}  // namespace mbp
