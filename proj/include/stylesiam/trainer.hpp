#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stylesiam/datapipe.hpp"
#include "stylesiam/losses.hpp"
#include "stylesiam/model.hpp"

namespace stylesiam {

// First/second moment buffers aligned with the model's trainable parameter
// registry; step_count advances by one per apply.
struct AdamState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    long step_count = 0;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;

    static AdamState init(const Model& model);
};

// p -= lr * mhat / (sqrt(vhat) + eps) with bias-corrected moments.
void adam_step(Model& model, AdamState& state, float lr);

struct Schedule {
    enum class Kind { step_decay, exponential_decay };
    Kind kind = Kind::step_decay;
    double base_lr = 8e-5;
    double drop_factor = 0.5;
    int every_n_epochs = 10;
    double gamma_per_epoch = 0.95;

    void validate() const;
};

double lr_at(const Schedule& schedule, int epoch);

struct TrainConfig {
    int epochs = 30;
    int batch_size = 8;          // triplets per step; >= 2 for train-mode batchnorm
    int triplets_per_epoch = 0;  // 0 -> 4x the number of training outfits
    uint32_t seed = 1;
    int k_folds = 5;
    LossParams loss;
    ModelConfig model = ModelConfig::defaults();
    Schedule schedule;
    std::string checkpoint_dir;  // empty -> keep checkpoints off disk
    std::string log_path;        // empty -> keep the log in memory only
    float grad_clip_norm = 5.0f;

    void validate() const;
};

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double mean_total = 0.0;
    double mean_triplet_term = 0.0;
    std::vector<double> mean_style_terms;

    std::string to_json() const;
};

struct TrainResult {
    Model model;
    std::vector<EpochLog> epoch_logs;
    std::string final_checkpoint;  // empty when checkpoint_dir was empty
};

// Seeded training over the fold's train outfits: per epoch the triplet set
// is regenerated from a seed mixed with the epoch index, batches run all
// three branches through the shared model, gradients are cleared then
// accumulated, clipped at the global norm, and applied with Adam at the
// schedule's rate. Identical (config, manifest) reruns produce bitwise
// identical checkpoints and logs.
TrainResult train(const TrainConfig& config, ImageStore& store, const FoldSplit& fold);

// normalized MAP of the model over the fold's test outfits
double evaluate_fold(Model& model, ImageStore& store, const FoldSplit& fold);

struct ExperimentResult {
    std::vector<uint32_t> seeds;
    std::vector<double> baseline_per_seed;
    std::vector<double> hybrid_per_seed;
    double baseline_mean = 0.0;
    double hybrid_mean = 0.0;
    std::vector<double> improvement_per_seed;
    double improvement_mean = 0.0;
};

// For every seed: k-fold split, then per fold train the baseline (w2=0) and
// hybrid configurations, each under both decay schedules, keeping the better
// schedule's MAP. Per-seed scores are fold means. jobs > 1 runs independent
// (seed, fold, config, schedule) units on worker threads; results do not
// depend on scheduling.
ExperimentResult run_experiment(const TrainConfig& base, const std::vector<ItemRecord>& records,
                                const std::string& base_dir, const std::vector<uint32_t>& seeds,
                                int k, int jobs);

double improvement_percent(double baseline, double hybrid);
std::string format_results_table(const ExperimentResult& result);

}  // namespace stylesiam
