#include "muscl/meta_opt.hpp"

#include <cmath>
#include <stdexcept>

namespace muscl::meta {

void OptimConfig::validate() const {
    if (!(alpha1 > 0.0) || !(alpha2 > 0.0) || !(plain_lr > 0.0))
        throw std::invalid_argument("OptimConfig: learning rates must be > 0");
    if (!(tau > 0.0)) throw std::invalid_argument("OptimConfig: tau must be > 0");
    if (batch_size == 0) throw std::invalid_argument("OptimConfig: batch_size must be > 0");
}

std::vector<Tensor> batch_images(const PairBatch& batch) {
    std::vector<Tensor> images;
    images.reserve(2 * batch.size());
    for (const auto& p : batch.pairs) {
        images.push_back(nets::image_to_tensor(p.x1));
        images.push_back(nets::image_to_tensor(p.x2));
    }
    return images;
}

PerPairGrads per_pair_gradients(const ModelParams& m, const PairBatch& batch, double tau) {
    if (batch.size() == 0) throw std::invalid_argument("per_pair_gradients: empty batch");
    std::size_t n = batch.size();
    Tape tape;
    auto mp = nets::attach(tape, m.params);
    Var H = nets::encode_batch(tape, m.arch, mp, batch_images(batch));
    Var Z = nets::project(tape, m.arch, mp, H);
    Var per_pair = loss::pairwise_losses(Z, tau);

    PerPairGrads out;
    out.H = H.value();
    out.per_pair = per_pair.value();
    out.g.reserve(n);
    double inv = 1.0 / static_cast<double>(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        Var scalar_i = mul_scalar(element(per_pair, i), inv);
        out.g.push_back(tape.backward(scalar_i));
    }
    return out;
}

namespace {

std::vector<double> eval_weights(const WeightNetParams& c, const Tensor& H) {
    std::size_t n = H.shape()[0] / 2;
    std::size_t d = H.shape()[1];
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor h1({d}, std::vector<double>(H.data() + 2 * i * d, H.data() + (2 * i + 1) * d));
        Tensor h2({d}, std::vector<double>(H.data() + (2 * i + 1) * d, H.data() + (2 * i + 2) * d));
        w[i] = nets::weigh_value(c, h1, h2);
    }
    return w;
}

ParamSet weighted_sgd(const ParamSet& theta, double alpha1, const std::vector<double>& w,
                      const std::vector<Grads>& g) {
    ParamSet out = theta;
    for (std::size_t i = 0; i < g.size(); ++i) nets::axpy(out, -alpha1 * w[i], g[i]);
    return out;
}

}  // namespace

Lookahead lookahead_step(const ModelParams& m, const WeightNetParams& c, const PairBatch& batch,
                         double alpha1, double tau) {
    Lookahead look;
    look.ppg = per_pair_gradients(m, batch, tau);
    look.weights = eval_weights(c, look.ppg.H);
    look.theta_hat = weighted_sgd(m.params, alpha1, look.weights, look.ppg.g);
    return look;
}

Grads meta_gradient(const ModelParams& m, const ParamSet& theta_hat, const WeightNetParams& c,
                    const Tensor& H, const std::vector<Grads>& g, const PairBatch& valid_batch,
                    double alpha1, double tau) {
    // g_v: gradient of the unweighted validation loss, evaluated at theta_hat
    ModelParams m_hat{m.arch, theta_hat};
    Tape vtape;
    auto mp = nets::attach(vtape, m_hat.params);
    Var Hv = nets::encode_batch(vtape, m_hat.arch, mp, batch_images(valid_batch));
    Var Zv = nets::project(vtape, m_hat.arch, mp, Hv);
    Var vloss = loss::validation_loss(Zv, tau);
    Grads g_v = vtape.backward(vloss);

    std::vector<double> coeff(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) coeff[i] = -alpha1 * nets::dot(g_v, g[i]);

    // sum_i c_i * w_i on a weight-net-only tape; its backward is the result
    Tape wtape;
    auto wp = nets::attach(wtape, c.params);
    std::size_t d = H.shape()[1];
    Var obj = wtape.constant(Tensor::scalar(0.0));
    for (std::size_t i = 0; i < g.size(); ++i) {
        Tensor h1({d}, std::vector<double>(H.data() + 2 * i * d, H.data() + (2 * i + 1) * d));
        Tensor h2({d}, std::vector<double>(H.data() + (2 * i + 1) * d, H.data() + (2 * i + 2) * d));
        Var w_i = nets::weigh(wtape, c, wp, wtape.constant(h1), wtape.constant(h2));
        obj = add(obj, mul_scalar(w_i, coeff[i]));
    }
    return wtape.backward(obj);
}

StepInfo meta_train_step(TrainState& state, const PairBatch& train_batch,
                         const PairBatch& valid_batch, const OptimConfig& cfg) {
    cfg.validate();
    if (cfg.mode != OptimConfig::Mode::Meta)
        throw std::invalid_argument("meta_train_step: config is not in meta mode");

    // (1) feedback: lookahead with the current weighting net
    Lookahead look = lookahead_step(state.theta_m, state.theta_c, train_batch, cfg.alpha1, cfg.tau);

    // (2) weighting-net update along the meta gradient
    Grads mg = meta_gradient(state.theta_m, look.theta_hat, state.theta_c, look.ppg.H, look.ppg.g,
                             valid_batch, cfg.alpha1, cfg.tau);
    nets::axpy(state.theta_c.params, -cfg.alpha2, mg);

    // (3) final model update on the same batch with refreshed weights,
    // reusing the cached per-pair gradients
    std::vector<double> w = eval_weights(state.theta_c, look.ppg.H);
    state.theta_m.params = weighted_sgd(state.theta_m.params, cfg.alpha1, w, look.ppg.g);
    state.step += 1;

    StepInfo info;
    info.weights = w;
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) total += w[i] * look.ppg.per_pair[i];
    info.train_loss = total / static_cast<double>(2 * w.size());
    {
        ModelParams m_hat{state.theta_m.arch, look.theta_hat};
        Tape t;
        auto mp = nets::attach_const(t, m_hat.params);
        Var Hv = nets::encode_batch(t, m_hat.arch, mp, batch_images(valid_batch));
        Var Zv = nets::project(t, m_hat.arch, mp, Hv);
        info.valid_loss = loss::validation_loss(Zv, cfg.tau).value().item();
    }
    return info;
}

StepInfo plain_train_step(TrainState& state, const PairBatch& train_batch, const OptimConfig& cfg) {
    cfg.validate();
    if (cfg.mode != OptimConfig::Mode::Plain)
        throw std::invalid_argument("plain_train_step: config is not in plain mode");

    Tape tape;
    auto mp = nets::attach(tape, state.theta_m.params);
    Var H = nets::encode_batch(tape, state.theta_m.arch, mp, batch_images(train_batch));
    Var Z = nets::project(tape, state.theta_m.arch, mp, H);
    Var total = loss::validation_loss(Z, cfg.tau);
    Grads g = tape.backward(total);

    if (!state.adam.initialized) {
        state.adam.m = nets::zeros_like(state.theta_m.params);
        state.adam.v = nets::zeros_like(state.theta_m.params);
        state.adam.initialized = true;
    }
    std::size_t t = state.step + 1;
    double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < g.size(); ++i) {
        Tensor& p = state.theta_m.params.values[i];
        Tensor& mo = state.adam.m[i];
        Tensor& vo = state.adam.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            mo[j] = cfg.adam_beta1 * mo[j] + (1.0 - cfg.adam_beta1) * g[i][j];
            vo[j] = cfg.adam_beta2 * vo[j] + (1.0 - cfg.adam_beta2) * g[i][j] * g[i][j];
            double mhat = mo[j] / bc1;
            double vhat = vo[j] / bc2;
            p[j] -= cfg.plain_lr * cfg.weight_decay * p[j];  // decoupled L2
            p[j] -= cfg.plain_lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
    state.step += 1;

    StepInfo info;
    info.train_loss = total.value().item();
    return info;
}

}  // namespace muscl::meta
