#include "mbp/combinatorics.hpp"

#include <string>

#include "mbp/error.hpp"

namespace mbp {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw RangeError(what);
}

BigRational pow_rational(const BigRational& x, int e) {
    BigRational r = 1;
    for (int i = 0; i < e; ++i) r *= x;
    return r;
}

}  // namespace

BigInt factorial(int n) {
    require(n >= 0, "factorial: negative argument");
    BigInt r = 1;
    for (int i = 2; i <= n; ++i) r *= i;
    return r;
}

BigInt binomial(int n, int k) {
    if (k < 0 || n < 0 || k > n) return 0;
    BigInt r = 1;
    for (int i = 1; i <= k; ++i) {
        r *= n - k + i;
        r /= i;
    }
    return r;
}

void for_each_composition(int k, int j, const std::function<void(std::span<const int>)>& visit) {
    require(j >= 1 && j <= k, "compositions_positive: need 1 <= j <= k");
    require(k <= kCompositionGuard, "compositions_positive: k above enumeration guard");
    std::vector<int> parts(static_cast<std::size_t>(j), 1);
    parts.back() = k - (j - 1);
    // Lexicographic successor: find the rightmost part whose suffix can give
    // away one unit, bump it, and reset the suffix to 1, ..., 1, remainder.
    for (;;) {
        visit(parts);
        int suffix = parts[static_cast<std::size_t>(j - 1)];
        int pos = j - 2;
        while (pos >= 0 && suffix == j - 1 - pos) {
            suffix += parts[static_cast<std::size_t>(pos)];
            --pos;
        }
        if (pos < 0) return;
        ++parts[static_cast<std::size_t>(pos)];
        --suffix;
        for (int p = pos + 1; p < j - 1; ++p) parts[static_cast<std::size_t>(p)] = 1;
        parts[static_cast<std::size_t>(j - 1)] = suffix - (j - 2 - pos);
    }
}

std::vector<Composition> compositions_positive(int k, int j) {
    std::vector<Composition> out;
    for_each_composition(k, j, [&](std::span<const int> p) { out.emplace_back(p.begin(), p.end()); });
    return out;
}

BigInt multinomial(int k, std::span<const int> parts) {
    long long sum = 0;
    for (int p : parts) {
        require(p >= 0, "multinomial: negative part");
        sum += p;
    }
    if (sum != k) throw RangeError("multinomial: parts sum to " + std::to_string(sum) + ", expected " + std::to_string(k));
    BigInt r = factorial(k);
    for (int p : parts) r /= factorial(p);
    return r;
}

BigRational bell_partial(int k, int j, std::span<const BigRational> xs) {
    require(j >= 1 && j <= k, "bell_partial: need 1 <= j <= k");
    const int m = k - j + 1;
    if (static_cast<int>(xs.size()) != m)
        throw RangeError("bell_partial: expected " + std::to_string(m) + " arguments, got " + std::to_string(xs.size()));

    const BigInt kfact = factorial(k);
    std::vector<BigInt> ifact(static_cast<std::size_t>(m + 1));
    for (int i = 0; i <= m; ++i) ifact[static_cast<std::size_t>(i)] = factorial(i);

    BigRational total = 0;
    std::vector<int> ell(static_cast<std::size_t>(m + 1), 0);
    // Depth-first over block sizes i = m..1, choosing multiplicities ell_i with
    // sum ell_i = j and sum i * ell_i = k.
    std::function<void(int, int, int)> rec = [&](int i, int blocks_left, int size_left) {
        if (i == 0) {
            if (blocks_left != 0 || size_left != 0) return;
            BigRational term(kfact);
            for (int s = 1; s <= m; ++s) {
                const int l = ell[static_cast<std::size_t>(s)];
                if (l == 0) continue;
                BigInt denom = factorial(l);
                for (int r = 0; r < l; ++r) denom *= ifact[static_cast<std::size_t>(s)];
                term *= pow_rational(xs[static_cast<std::size_t>(s - 1)], l);
                term /= BigRational(denom);
            }
            total += term;
            return;
        }
        for (int l = 0; l <= blocks_left && l * i <= size_left; ++l) {
            ell[static_cast<std::size_t>(i)] = l;
            rec(i - 1, blocks_left - l, size_left - l * i);
        }
        ell[static_cast<std::size_t>(i)] = 0;
    };
    rec(m, j, k);
    return total;
}

BigInt stirling_first_unsigned(int k, int j) {
    require(j >= 1 && j <= k, "stirling_first_unsigned: need 1 <= j <= k");
    // coefficients of x(x+1)...(x+k-1), index = power of x
    std::vector<BigInt> poly{0, 1};
    for (int a = 1; a < k; ++a) {
        std::vector<BigInt> next(poly.size() + 1, 0);
        for (std::size_t p = 0; p < poly.size(); ++p) {
            next[p + 1] += poly[p];
            next[p] += poly[p] * a;
        }
        poly = std::move(next);
    }
    return poly[static_cast<std::size_t>(j)];
}

BigInt stirling_identity_rhs(int k) {
    require(k >= 1 && k <= kStirlingIdentityGuard, "stirling_identity_rhs: need 1 <= k <= 15");
    BigRational total = 0;
    BigInt pow2 = 1;
    for (int j = 1; j <= k; ++j) {
        pow2 *= 2;
        BigRational inner = 0;
        for_each_composition(k, j, [&](std::span<const int> parts) {
            BigInt term = multinomial(k, parts);
            for (int p : parts) term *= factorial(p - 1);
            inner += BigRational(term);
        });
        total += BigRational(pow2) * inner / BigRational(factorial(j));
    }
    if (denominator(total) != 1) throw Error("stirling_identity_rhs: non-integer result");
    return numerator(total);
}

BigRational iid_moment_formula(int k, int n, std::span<const BigRational> moments) {
    require(k >= 1 && n >= 1, "iid_moment_formula: need k, n >= 1");
    if (static_cast<int>(moments.size()) != k)
        throw RangeError("iid_moment_formula: expected " + std::to_string(k) + " moments, got " +
                         std::to_string(moments.size()));
    BigRational total = 0;
    for (int j = 1; j <= k && j <= n; ++j) {
        BigRational inner = 0;
        for_each_composition(k, j, [&](std::span<const int> parts) {
            BigRational term(multinomial(k, parts));
            for (int p : parts) term *= moments[static_cast<std::size_t>(p - 1)];
            inner += term;
        });
        total += BigRational(binomial(n, j)) * inner;
    }
    return total;
}

BigRational iid_moment_brute_force(int k, int n, std::span<const BigRational> atoms,
                                   std::span<const BigRational> probs) {
    require(k >= 0 && n >= 1, "iid_moment_brute_force: need k >= 0, n >= 1");
    if (atoms.size() != probs.size() || atoms.empty())
        throw RangeError("iid_moment_brute_force: atoms and probabilities must match");
    const std::size_t a = atoms.size();
    std::vector<std::size_t> idx(static_cast<std::size_t>(n), 0);
    BigRational total = 0;
    for (;;) {
        BigRational sum = 0, prob = 1;
        for (std::size_t i : idx) {
            sum += atoms[i];
            prob *= probs[i];
        }
        total += prob * pow_rational(sum, k);
        std::size_t pos = 0;
        while (pos < idx.size() && ++idx[pos] == a) idx[pos++] = 0;
        if (pos == idx.size()) break;
    }
    return total;
}

}  // namespace mbp
