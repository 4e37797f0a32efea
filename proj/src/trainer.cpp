#include "bdg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "bdg/checkpoint.hpp"
#include "bdg/errors.hpp"
#include "bdg/losses.hpp"

namespace bdg {

Adam::Adam(std::vector<Var<float>*> params, const OptimizerConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto* p : params_) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
    }
}

void Adam::zero_grad() {
    for (auto* p : params_) p->zero_grad();
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const float b1 = static_cast<float>(cfg_.beta1);
    const float b2 = static_cast<float>(cfg_.beta2);
    const float step = static_cast<float>(cfg_.lr / c1);
    const float root_c2 = static_cast<float>(std::sqrt(c2));
    const float eps = static_cast<float>(cfg_.eps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Var<float>& p = *params_[k];
        if (p.grad().empty()) continue;
        const float* g = p.grad().data();
        float* w = p.mutable_value().data();
        float* m = m_[k].data();
        float* v = v_[k].data();
        const std::size_t n = m_[k].numel();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            w[i] -= step * m[i] / (std::sqrt(v[i]) / root_c2 + eps);
        }
    }
}

namespace {

std::string format_row(const LossRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.iteration, r.total, r.bdm, r.wbce, r.wiou);
    return buf;
}

}  // namespace

void write_loss_log(std::ostream& os, const std::vector<LossRow>& rows) {
    os << kLossLogHeader << '\n';
    for (const auto& r : rows) os << format_row(r);
}

TrainResult train(BDGNet<float>& net, const std::vector<PreparedSample>& samples, const RunConfig& cfg,
                  const std::function<void(const LossRow&)>& on_step) {
    cfg.validate();
    if (samples.empty()) throw DataError("no training samples");
    const PreprocessOptions opt = cfg.preprocess_options();
    const std::size_t batch_size = std::min<std::size_t>(cfg.optimizer.batch_size, samples.size());

    Adam adam(net.parameters(), cfg.optimizer);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(samples.size());
    std::size_t cursor = order.size();

    TrainResult result;
    std::filesystem::create_directories(cfg.output_dir);
    std::ofstream log(cfg.output_dir / "train_log.csv");
    if (!log) throw DataError("cannot write training log in " + cfg.output_dir.string());
    log << kLossLogHeader << '\n';

    ForwardContext ctx;
    ctx.training = true;
    for (int it = 1; it <= cfg.optimizer.iterations; ++it) {
        std::vector<PreparedSample> drawn;
        drawn.reserve(batch_size);
        while (drawn.size() < batch_size) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), std::size_t{0});
                for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
                cursor = 0;
            }
            const PreparedSample& s = samples[order[cursor++]];
            drawn.push_back(cfg.augment ? augment(s, rng(), opt) : s);
        }
        std::vector<std::size_t> idx(drawn.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        const Batch batch = make_batch(drawn, idx);

        adam.zero_grad();
        const SegmentationOutput<float> out = net.forward(Var<float>(batch.images), ctx);
        const LossTerms<float> terms = l_total(out, batch.masks, batch.bdms, cfg.loss);
        // Logged total is the double sum of the logged components, so each row
        // adds up exactly; it differs from the float total by rounding only.
        LossRow row{it, 0.0, terms.bdm.value()[0], terms.wbce.value()[0], terms.wiou.value()[0]};
        row.total = row.bdm + row.wbce + row.wiou;
        if (!std::isfinite(row.total) || !std::isfinite(terms.total.value()[0])) {
            std::string ids;
            for (const auto& id : batch.ids) ids += (ids.empty() ? "" : " ") + id;
            throw NumericalError("non-finite loss at iteration " + std::to_string(it) + "; batch ids: " + ids);
        }
        backward(terms.total);
        adam.step();

        result.log.push_back(row);
        log << format_row(row) << std::flush;
        if (on_step) on_step(row);
        if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it != cfg.optimizer.iterations) {
            save_checkpoint(cfg.output_dir / ("step-" + std::to_string(it)), cfg, net);
        }
    }
    result.final_checkpoint = cfg.output_dir / "final";
    save_checkpoint(result.final_checkpoint, cfg, net);
    return result;
}

std::vector<Prediction> predict(BDGNet<float>& net, const Tensor<float>& images) {
    const SegmentationOutput<float> out = net.forward(Var<float>(images), ForwardContext{});
    const Tensor<float>& logits = out.logits.value();
    const int h = logits.h(), w = logits.w();
    std::vector<Prediction> preds;
    for (int b = 0; b < logits.n(); ++b) {
        Prediction p{PredictionMap(h, w), PredictionMap(h, w, 0.0)};
        const float* l = logits.plane(b, 0);
        for (std::size_t i = 0; i < p.probability.size(); ++i) {
            p.probability[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(l[i])));
        }
        if (out.has_bdm) {
            const float* d = out.bdm.value().plane(b, 0);
            for (std::size_t i = 0; i < p.bdm.size(); ++i) p.bdm[i] = d[i];
        }
        preds.push_back(std::move(p));
    }
    return preds;
}

MetricsReport evaluate_samples(BDGNet<float>& net, const std::vector<PreparedSample>& samples, int batch) {
    if (batch < 1) throw std::invalid_argument("evaluate_samples: batch must be >= 1");
    std::vector<EvalPair> pairs;
    for (std::size_t start = 0; start < samples.size(); start += batch) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(samples.size(), start + batch); ++i) idx.push_back(i);
        const Batch b = make_batch(samples, idx);
        auto preds = predict(net, b.images);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            pairs.push_back({samples[idx[k]].id, std::move(preds[k].probability), samples[idx[k]].mask});
        }
    }
    return evaluate_dataset(pairs);
}

}  // namespace bdg
