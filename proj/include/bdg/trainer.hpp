#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bdg/config.hpp"
#include "bdg/data.hpp"
#include "bdg/metrics.hpp"
#include "bdg/network.hpp"

namespace bdg {

/// Adaptive-moment optimizer with bias correction.
class Adam {
public:
    Adam(std::vector<Var<float>*> params, const OptimizerConfig& cfg);

    void zero_grad();
    /// One update from the gradients currently held by the parameters.
    void step();
    long long steps() const noexcept { return t_; }

private:
    std::vector<Var<float>*> params_;
    std::vector<Tensor<float>> m_;
    std::vector<Tensor<float>> v_;
    OptimizerConfig cfg_;
    long long t_ = 0;
};

struct LossRow {
    int iteration = 0;
    double total = 0.0;
    double bdm = 0.0;
    double wbce = 0.0;
    double wiou = 0.0;
};

inline constexpr const char* kLossLogHeader = "iter,total,bdm,wbce,wiou";

struct TrainResult {
    std::vector<LossRow> log;
    std::filesystem::path final_checkpoint;
};

/// Runs cfg.optimizer.iterations steps over `samples`. Batches are drawn from
/// a per-epoch Fisher-Yates permutation seeded by cfg.seed; with
/// cfg.augment each drawn sample gets a random dihedral transform. Writes
/// train_log.csv, step-<n> checkpoints every cfg.checkpoint_every steps and a
/// final checkpoint under cfg.output_dir.
///
/// Throws NumericalError naming the batch ids when the loss is not finite.
TrainResult train(BDGNet<float>& net, const std::vector<PreparedSample>& samples, const RunConfig& cfg,
                  const std::function<void(const LossRow&)>& on_step = {});

void write_loss_log(std::ostream& os, const std::vector<LossRow>& rows);

struct Prediction {
    PredictionMap probability;
    PredictionMap bdm;
};

/// Inference-mode forward of (B, 3, S, S) images; sigmoid of the logits and
/// the generated map per image (all zeros when the boundary branch is off).
std::vector<Prediction> predict(BDGNet<float>& net, const Tensor<float>& images);

/// Predicts `samples` in chunks of `batch` and scores them against their
/// masks at the working resolution.
MetricsReport evaluate_samples(BDGNet<float>& net, const std::vector<PreparedSample>& samples, int batch = 8);

}  // namespace bdg
