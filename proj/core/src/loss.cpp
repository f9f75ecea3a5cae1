#include "muscl/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace muscl::loss {

double cosine_sim(const Tensor& zi, const Tensor& zj) {
    if (!zi.same_shape(zj))
        throw std::invalid_argument("cosine_sim: shape mismatch " + shape_str(zi.shape()) + " vs " +
                                    shape_str(zj.shape()));
    double d = 0.0, ni = 0.0, nj = 0.0;
    for (std::size_t k = 0; k < zi.size(); ++k) {
        d += zi[k] * zj[k];
        ni += zi[k] * zi[k];
        nj += zj[k] * zj[k];
    }
    return d / (std::max(std::sqrt(ni), kNormEps) * std::max(std::sqrt(nj), kNormEps));
}

Var cosine_sim(Var zi, Var zj) {
    if (!zi.value().same_shape(zj.value()))
        throw std::invalid_argument("cosine_sim: shape mismatch " + shape_str(zi.value().shape()) +
                                    " vs " + shape_str(zj.value().shape()));
    // Normalize first so sub-eps vectors contribute neither direction nor
    // gradient (see normalize_rows); dividing the raw dot by the guarded
    // norms instead would leave a ~1/eps backward at z = 0.
    Var ui = row(normalize_rows(stack_rows({zi}), kNormEps), 0);
    Var uj = row(normalize_rows(stack_rows({zj}), kNormEps), 0);
    return sum(mul(ui, uj));
}

Var pairwise_losses(Var Z, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("pairwise_losses: tau must be > 0");
    Tape* t = Z.tape;
    const Tensor& zv = Z.value();
    if (zv.rank() != 2 || zv.shape()[0] < 2 || zv.shape()[0] % 2 != 0)
        throw std::invalid_argument("pairwise_losses: Z of shape " + shape_str(zv.shape()) +
                                    " is not a 2N x d matrix with 2N >= 2");
    Var S = matmul_nt(normalize_rows(Z, kNormEps), normalize_rows(Z, kNormEps));

    const Tensor& sv = S.value();
    std::size_t n2 = sv.shape()[0];
    std::size_t n_pairs = n2 / 2;

    // softmax-excluding-self rows, with max subtraction
    Tensor P({n2, n2});
    for (std::size_t i = 0; i < n2; ++i) {
        double mx = -1e300;
        for (std::size_t k = 0; k < n2; ++k)
            if (k != i) mx = std::max(mx, sv.at(i, k) / tau);
        double denom = 0.0;
        for (std::size_t k = 0; k < n2; ++k)
            if (k != i) denom += std::exp(sv.at(i, k) / tau - mx);
        for (std::size_t k = 0; k < n2; ++k)
            P.at(i, k) = (k == i) ? 0.0 : std::exp(sv.at(i, k) / tau - mx) / denom;
    }
    Tensor per_pair({n_pairs});
    for (std::size_t p = 0; p < n_pairs; ++p) {
        std::size_t a = 2 * p, b = 2 * p + 1;
        per_pair[p] = -std::log(P.at(a, b)) - std::log(P.at(b, a));
    }

    int sid = S.id;
    auto back = [sid, P, n2, tau](const Tensor& g, std::vector<Tensor>& adj) {
        Tensor gs({n2, n2});
        for (std::size_t p = 0; p < n2 / 2; ++p) {
            double gp = g[p];
            std::size_t rows[2] = {2 * p, 2 * p + 1};
            for (std::size_t r = 0; r < 2; ++r) {
                std::size_t i = rows[r], j = rows[1 - r];
                for (std::size_t k = 0; k < n2; ++k) {
                    if (k == i) continue;
                    double d = P.at(i, k) - (k == j ? 1.0 : 0.0);
                    gs.at(i, k) += gp * d / tau;
                }
            }
        }
        accumulate(adj, sid, gs);
    };
    return t->record(std::move(per_pair), back, "pairwise_infonce");
}

LossBreakdown weighted_infonce(Var Z, Var weights, double tau) {
    const Tensor& zv = Z.value();
    const Tensor& wv = weights.value();
    std::size_t n_pairs = zv.shape()[0] / 2;
    if (wv.rank() != 1 || wv.size() != n_pairs)
        throw std::invalid_argument("weighted_infonce: weights of shape " + shape_str(wv.shape()) +
                                    " do not match " + std::to_string(n_pairs) + " pairs");
    require_finite(wv, "weighted_infonce(weights)");
    Var per_pair = pairwise_losses(Z, tau);
    Var total = mul_scalar(sum(mul(weights, per_pair)), 1.0 / static_cast<double>(2 * n_pairs));
    return {total, per_pair, weights, tau};
}

Var validation_loss(Var Z, double tau) {
    Tape* t = Z.tape;
    std::size_t n_pairs = Z.value().shape()[0] / 2;
    Var ones = t->constant(Tensor::full({n_pairs}, 1.0));
    return weighted_infonce(Z, ones, tau).total;
}

}  // namespace muscl::loss
