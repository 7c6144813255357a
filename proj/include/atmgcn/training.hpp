#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "atmgcn/autodiff.hpp"
#include "atmgcn/data.hpp"
#include "atmgcn/gcn.hpp"

namespace atmgcn {

// ---------------------------------------------------------------------------
// Loss and optimiser

inline constexpr double kProbabilityFloor = 1e-12;

// -alpha * (1 - p)^gamma * log(p), p = probabilities[label] floored at 1e-12.
Var focal_loss(const Var& probabilities, std::size_t label, double gamma, double alpha);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::size_t step = 0;
};

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

// One decoupled-weight-decay Adam update. Throws TrainingError naming the
// parameter when a gradient is not finite; nothing is modified in that case.
void adamw_step(const NamedParams& params, std::span<const Tensor> grads, AdamWState& state,
                double lr, const AdamWConfig& config);

// lr0 * decay^epoch
double lr_schedule(std::size_t epoch, double lr0, double decay);
// Decay that takes the rate down two decades over 50 epochs.
double default_lr_decay();

// ---------------------------------------------------------------------------
// Protocol and metrics

struct Fold {
  std::string subject;
  std::vector<std::size_t> train;  // dataset indices
  std::vector<std::size_t> test;
};

// One fold per distinct subject, ordered by subject id.
std::vector<Fold> loso_split(std::span<const std::string> subjects);
std::vector<Fold> loso_split(std::span<const FrameSequence> dataset);

struct ClassCounts {
  std::size_t tp = 0, fp = 0, fn = 0, n = 0;
};

struct Metrics {
  double uf1 = 0.0, uar = 0.0, acc = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<ClassCounts> per_class;
};

// Macro F1 / recall over classes. Classes with no samples and no false
// positives are left out of both averages; recall skips every class with no
// samples.
Metrics compute_metrics(std::span<const std::size_t> predictions,
                        std::span<const std::size_t> labels, std::size_t num_classes);
// Same averaging rules applied to already accumulated counts.
Metrics metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t epochs = 50;
  double lr0 = 1e-4;
  double lr_decay = default_lr_decay();
  std::size_t batch_size = 1;
  double focal_gamma = 2.0;
  std::vector<double> focal_alpha;  // empty: inverse class frequency, mean 1
  std::uint64_t seed = 7;
  AdamWConfig adamw;
  AugmentOptions augment;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double uf1 = 0.0;
  double uar = 0.0;
  double acc = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> history;
};

// Inverse class frequency over the given labels, normalised to mean 1 over
// the classes that occur (absent classes get 1).
std::vector<double> inverse_frequency_alpha(std::span<const std::size_t> labels,
                                            std::size_t num_classes);

// Called after every epoch; used for progress logging.
using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const TrainConfig& config, const ModelConfig& model,
                  std::span<const FrameSequence> dataset, const EpochCallback& on_epoch = {});

struct Evaluation {
  Metrics metrics;
  std::vector<std::size_t> predictions;
  std::vector<std::size_t> labels;
};

Evaluation evaluate(const ModelParams& params, const ModelConfig& model,
                    std::span<const FrameSequence> dataset);

struct FoldReport {
  std::string subject;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  Metrics test;
  Metrics train;
  std::vector<EpochRecord> history;
};

struct Aggregate {
  double uf1 = 0.0, uar = 0.0, acc = 0.0;
};

struct LosoReport {
  std::vector<FoldReport> folds;
  Aggregate subject_mean;   // unweighted mean of per-fold test metrics
  Aggregate pooled;         // metrics of the summed test confusion matrices
  Aggregate train_mean;     // mean of per-fold training-split metrics
};

// Trains one model per fold from scratch; `jobs` folds run concurrently.
// Results do not depend on `jobs`.
LosoReport run_loso(const TrainConfig& config, const ModelConfig& model,
                    std::span<const FrameSequence> dataset, std::size_t jobs = 1,
                    const std::function<void(const std::string&)>& log = {});

}  // namespace atmgcn
