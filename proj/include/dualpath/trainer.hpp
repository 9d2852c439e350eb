#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dualpath/config.hpp"
#include "dualpath/corpus.hpp"
#include "dualpath/model.hpp"
#include "dualpath/optim.hpp"

namespace dualpath {

// base * factor^(number of decay epochs <= epoch); a decay applies from the
// start of its listed epoch.
double lr_at(std::size_t epoch, double base, const std::vector<std::size_t>& decay_epochs, double factor);

// ---- metric log -----------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double val_mA = 0.0;
  double val_f1_macro = 0.0;
  double val_precision_macro = 0.0;
  double val_recall_weighted = 0.0;
  std::optional<double> val_auc;  // undefined when val lacks a Female or non-Female sample
};

extern const std::vector<std::string> kMetricLogHeader;
std::string metric_log_row(const EpochMetrics& m);
EpochMetrics parse_metric_log_row(const std::vector<std::string>& fields);
void write_metric_log(const std::filesystem::path& path, const std::vector<EpochMetrics>& log);
std::vector<EpochMetrics> read_metric_log(const std::filesystem::path& path);

// ---- model and batches ----------------------------------------------------

// Class-level queries come from the prompt vocabulary; the token vocabulary
// covers every prompt text. Initialization is seeded by config.train.seed.
DualPathModel build_model(const RunConfig& config, const PromptVocabulary& prompts);

struct Batch {
  Tensor images;                                  // [B,3,H,W]
  std::vector<int> gender;                        // [B]
  std::vector<std::vector<int>> attributes;       // [attribute][B]
  std::vector<std::vector<std::string>> prompts;  // [B][attribute], sample-level mode only
};

// Records must carry pixels. flip_rng enables the train-mode flip.
Batch make_batch(const std::vector<const SampleRecord*>& records, const RunConfig& config,
                 const PromptVocabulary& prompts, std::mt19937_64* flip_rng);

struct Predictions {
  std::vector<std::array<double, 3>> fused, direct, mediated;  // softmax probabilities
  std::vector<std::vector<int>> attributes;                     // [attribute][sample] argmax
  std::vector<int> gender;                                      // true labels
};

// Eval-mode forward over the records in order.
Predictions predict(const DualPathModel& model, const std::vector<const SampleRecord*>& records,
                    const RunConfig& config, const PromptVocabulary& prompts, std::size_t batch_size = 64);

// Fused-head metrics over a prediction buffer (epoch and train_loss unset).
EpochMetrics evaluate_fused(const Predictions& predictions);

// ---- checkpoints ----------------------------------------------------------

// Manifest (UTF-8 text, blank-line terminated) followed by little-endian
// doubles for every tensor in manifest order.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::string> vocabulary;  // token list
  std::vector<std::string> queries;     // class-level attribute queries
  std::vector<std::pair<std::string, Tensor>> tensors;

  const std::string* find(const std::string& key) const;
  const std::string& get(const std::string& key) const;  // CorruptionError when absent
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// Validates the whole file before returning; throws CorruptionError on any
// manifest/payload disagreement.
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainProgress {
  std::size_t epoch = 0;  // epochs completed
  std::size_t best_epoch = 0;
  double best_val_acc = -1.0;
  std::vector<EpochMetrics> log;
};

Checkpoint make_checkpoint(const RunConfig& config, const DualPathModel& model, const AdamW* optimizer,
                           const TrainProgress& progress);
RunConfig checkpoint_config(const Checkpoint& checkpoint);
TrainProgress checkpoint_progress(const Checkpoint& checkpoint);
// Copies parameters by name; every model parameter must be present with its
// shape. Nothing is written unless all of them match.
void load_parameters(const Checkpoint& checkpoint, DualPathModel& model);
// Rebuilds the model described by the checkpoint and loads its parameters.
DualPathModel restore_model(const Checkpoint& checkpoint);
void restore_optimizer(const Checkpoint& checkpoint, const DualPathModel& model, AdamW& optimizer);

// ---- training -------------------------------------------------------------

struct TrainOptions {
  std::filesystem::path out_dir;                 // empty: nothing written
  std::optional<std::filesystem::path> resume;   // a checkpoint written after some epoch
  std::size_t stop_after_epoch = 0;              // 0: run all configured epochs
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochMetrics> log;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
  Checkpoint best;  // parameters at best_epoch
  Checkpoint last;  // parameters and optimizer after the final epoch run
  double seconds = 0.0;
};

// Per epoch: seeded shuffle, forward, total loss, backward, global-norm clip,
// AdamW step; learning rates follow lr_at; validation on the val split with
// the fused head; best checkpoint by val accuracy, earliest epoch on ties.
// Writes metrics.csv, best.ckpt, last.ckpt and config.txt when out_dir is set.
TrainResult train(const RunConfig& config, const std::vector<SampleRecord>& records, const PromptVocabulary& prompts,
                  const TrainOptions& options = {});

}  // namespace dualpath
