#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ibam/ingest.hpp"
#include "ibam/physics.hpp"

namespace ibam {

struct FeatureConfig {
    OcvModel ocv = OcvModel::default_table();
    double rate_c = 4.0;  // > 0: per-cycle capacity inferred as mean(I)/rate_c
    double q_ah = 1.1;    // fallback capacity when rate_c == 0
    double soc0 = 1.0;
    int channels = 4;  // 4 or 1 (raw voltage only)
};

struct NormStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd stdev;
};

// channels x n time-series input:
//   0: terminal voltage V
//   1: V - V0(SoC) (relative voltage)
//   2: dV/dt, central differences, one-sided at the ends
//   3: normalized time t/t_end
struct FeatureTensor {
    Eigen::MatrixXd x;
    double t_end = 0.0;
};

FeatureTensor build_features(const ResampledCycle& cycle, const FeatureConfig& cfg,
                             const NormStats* stats = nullptr);

// Per-channel mean/std across all tensors and timesteps. Throws
// ValidationError on a zero-variance channel.
NormStats compute_stats(std::span<const FeatureTensor> features);
void apply_stats(FeatureTensor& f, const NormStats& stats);

// One GRU direction:
//   z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br)
//   n = tanh(Wn x + Un (r.*h) + bn), h' = (1-z).*n + z.*h
struct GruDir {
    Eigen::MatrixXd Wz, Wr, Wn;  // hidden x input
    Eigen::MatrixXd Uz, Ur, Un;  // hidden x hidden
    Eigen::VectorXd bz, br, bn;
};

// Two bidirectional GRU layers with a two-linear-layer ReLU head and a
// logistic output. The cycle representation concatenates each layer's
// forward and backward states at the final grid index.
struct SohEstimator {
    int in_channels = 4;
    int hidden = 96;       // per direction
    int head_hidden = 64;
    int num_layers = 2;
    std::vector<GruDir> dirs;  // [layer0 fwd, layer0 bwd, layer1 fwd, layer1 bwd]
    Eigen::MatrixXd head_W1;   // head_hidden x rep_dim
    Eigen::VectorXd head_b1;
    Eigen::MatrixXd head_W2;   // 1 x head_hidden
    double head_b2 = 0.0;
    double dropout_p = 0.1;  // training only, between layers
    NormStats stats;         // training-set normalization, stored for inference

    int rep_dim() const { return num_layers * 2 * hidden; }
    std::size_t param_count() const;
    void for_each_param(const std::function<void(double*, std::size_t)>& fn);
    void for_each_param(const std::function<void(const double*, std::size_t)>& fn) const;

    static SohEstimator make(int in_channels, int hidden = 96, int head_hidden = 64,
                             int num_layers = 2, std::uint64_t seed = 0);
};

// Mirror of the parameter structure, for gradients and optimizer state.
struct SohGradients {
    std::vector<GruDir> dirs;
    Eigen::MatrixXd head_W1;
    Eigen::VectorXd head_b1;
    Eigen::MatrixXd head_W2;
    double head_b2 = 0.0;

    static SohGradients zeros_like(const SohEstimator& w);
    void set_zero();
    void for_each_param(const std::function<void(double*, std::size_t)>& fn);
};

// Single forward pass on a (normalized) feature tensor. train_mode enables
// seeded dropout; inference is deterministic. Output strictly in (0, 1).
double estimator_forward(const FeatureTensor& f, const SohEstimator& w, bool train_mode = false,
                         std::uint64_t seed = 0);

// Squared error of one sample, accumulating analytic gradients into g.
// Dropout is off; used by training internals and the finite-difference check.
double sample_loss_grad(const FeatureTensor& f, double label, const SohEstimator& w,
                        SohGradients& g, std::uint64_t dropout_seed = 0,
                        double dropout_p = 0.0);

struct LabeledSample {
    FeatureTensor f;  // raw (unnormalized) features
    double soh = 1.0;
    std::string cell_id;
    int cycle = 0;
};

struct TrainConfig {
    double lr = 2e-3;      // peak learning rate; cosine-decayed to min_lr
    double min_lr = 0.0;
    double ema = 0.0;      // weight-averaging decay per step; 0 disables
    double weight_decay = 1e-4;
    int epochs = 40;
    int batch = 16;
    std::uint64_t seed = 1;
    double dropout_p = 0.1;
    double train_frac = 0.70;  // per-cell striped split over cycles
    double val_frac = 0.15;
    int hidden = 96;
    int head_hidden = 64;
    int jobs = 0;  // per-sample gradient workers; result independent of value

    void validate() const;
};

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

// Per-cell 70/15/15-style split over cycles. Each cell's samples are ordered
// by cycle index and the held-out portion (1 - train_frac) is striped evenly
// across the sequence (deterministic Bresenham striping), so every split
// covers the cell's whole life. Validation and test alternate within the
// held-out stripe in proportion val_frac : (1 - train_frac - val_frac).
SplitIndices split_cycles(std::span<const LabeledSample> dataset, double train_frac,
                          double val_frac);

struct TrainReport {
    std::vector<double> epoch_train_loss;
    std::vector<double> epoch_val_loss;
    double best_val_loss = 0.0;
    int best_epoch = -1;
};

// Minimizes MSE with AdamW; deterministic per seed regardless of cfg.jobs.
// Returns the parameters with the best validation loss. Throws NumericError
// (naming the epoch) when the loss becomes non-finite.
SohEstimator train_soh(std::span<const LabeledSample> dataset, const TrainConfig& cfg,
                       TrainReport* report = nullptr);

// (MAE, RMSE) of predictions vs labels; features normalized with w.stats.
std::pair<double, double> evaluate_soh(const SohEstimator& w,
                                       std::span<const LabeledSample> dataset);

// Versioned binary checkpoint, magic string "IBAM-SOH-v1".
void save_checkpoint(const SohEstimator& w, const std::string& path);
SohEstimator load_checkpoint(const std::string& path);

}  // namespace ibam
