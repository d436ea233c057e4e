#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wagparse/corpus.hpp"
#include "wagparse/decode.hpp"
#include "wagparse/model.hpp"
#include "wagparse/smatch.hpp"

namespace wagparse {

struct LossWeights {
  double alpha = 20.0;  // KL weight
  double beta = 90.0;   // leak-pass weight for this step
  double tau = 1.0;     // KL temperature

  void check() const;
};

/// Linear ramp from `start` to `end` over `steps`, clamped afterwards.
struct BetaSchedule {
  double start = 90.0;
  double end = 10.0;
  std::int64_t steps = 21000;
};

double beta_at(const BetaSchedule& schedule, std::int64_t step);

/// Per batch, p_mask ~ U(lo, hi) is drawn once and every non-special source
/// token is replaced by <mask> with probability p_mask.
struct MaskingAugmenter {
  double lo = 0.0;
  double hi = 0.15;

  void check() const;
};

/// Returns the masked copy and the drawn p_mask through `drawn` when given.
Batch mask_batch(const MaskingAugmenter& augmenter, const Batch& batch, nn::Rng& rng, double* drawn = nullptr);

/// Teacher-forced NLL under the Leak pass. Throws Error(kInput) when an
/// example has no WAG.
nn::Var l_leak(const Seq2SeqModel& model, const Batch& batch, RunContext& ctx);

/// KL(p || q) with the student distribution p first. Both arguments are
/// logits (or log-probs), tempered by tau before normalizing. Summed over the
/// weighted rows and divided by `batch_size`.
nn::Var kl_div(const nn::Var& student_logits, const nn::Var& teacher_logits, double tau,
               const std::vector<double>& weights, std::size_t batch_size);

/// Loss values reported for one step. total = l_nll + beta * l_leak + alpha * l_kl.
struct StepLosses {
  double total = 0.0;
  double l_nll = 0.0;
  double l_leak = 0.0;
  double l_kl = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

struct StepResult {
  nn::Var loss;
  StepLosses losses;
};

/// Student Off pass against the frozen teacher's Leak pass:
/// nll(student) + alpha * KL(student, teacher). Throws Error(kConfig) when any
/// student decoder parameter is still trainable.
StepResult kd_step(const Seq2SeqModel& teacher, Seq2SeqModel& student, const Batch& batch, double alpha, double tau,
                   RunContext& ctx);

/// Both passes on the same batch, then L = L_nll + beta * L_leak + alpha * KL(p, q).
/// With `detach_teacher` the Leak-pass distribution q enters the KL as a constant.
StepResult leakdistill_step(const Seq2SeqModel& model, const Batch& batch, const LossWeights& weights,
                            bool detach_teacher, RunContext& ctx);

enum class Regime { kBaseline, kGlm, kKd, kLeakDistill };

std::string to_string(Regime regime);
Regime parse_regime(const std::string& text);

/// Every hyperparameter of a run.
struct TrainConfig {
  std::uint64_t seed = 7;
  int epochs = 20;
  double dev_fraction = 0.1;
  std::size_t batch_size = 16;
  int grad_accum = 1;
  std::string optimizer = "adam";
  double lr = 3e-4;
  std::string lr_sched = "linear";  // "const" or "linear"
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  MaskingAugmenter mask_range;
  int beamsize = 4;
  WagVariant wag = WagVariant::kFull;
  // kd
  double kd_alpha = 10.0;
  // leakdistill
  double kl_temp = 1.0;
  double alpha = 20.0;
  bool beta_sched = true;
  double beta = 10.0;  // used when beta_sched is false
  BetaSchedule beta_schedule{90.0, 10.0, 0};  // steps 0: the run's total step count
  bool detach_teacher = false;
  // evaluation
  std::size_t bucket_size = 50;
  int smatch_restarts = 10;
  /// Evaluate dev every k epochs (the last epoch is always evaluated).
  int eval_every = 1;
  /// Cap on dev pairs decoded per evaluation; 0 = all.
  std::size_t dev_limit = 0;
  ModelConfig model;

  void check() const;
  nlohmann::json to_json() const;
  /// Unknown keys are rejected so that typos fail loudly.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
};

/// Vocabulary over sentence words, concepts and relations of `records`.
Vocabulary build_vocabulary(const std::vector<CorpusRecord>& records);

/// Deterministic split: the last ceil(fraction * n) records form the dev set.
std::pair<std::vector<CorpusRecord>, std::vector<CorpusRecord>> split_dev(const std::vector<CorpusRecord>& records,
                                                                          double fraction);

struct EvalOptions {
  DecodeOptions decode;
  std::size_t bucket_size = 50;
  SmatchOptions smatch;
  std::size_t limit = 0;  // 0 = every record
};

struct EvalResult {
  std::vector<AmrGraph> predictions;
  SmatchReport report;
};

/// Decodes every record (greedy when decode.beam == 1) and scores against gold.
/// Leak-mode decoding builds each record's WAG with `variant`.
EvalResult evaluate_model(const Seq2SeqModel& model, const std::vector<CorpusRecord>& records, const EvalOptions& options,
                          WagVariant variant = WagVariant::kFull);

struct EpochMetrics {
  int epoch = 0;
  std::int64_t step = 0;
  double l_nll = 0.0;
  double l_leak = 0.0;
  double l_kl = 0.0;
  double beta = 0.0;
  double lr = 0.0;
  double dev_smatch = 0.0;
  bool evaluated = false;

  nlohmann::json to_json() const;
  static EpochMetrics from_json(const nlohmann::json& j);
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  int epoch = 0;  // completed epochs
  std::int64_t step = 0;
  std::string rng_state;
  double best_dev = -1.0;
  int best_epoch = -1;
  std::vector<EpochMetrics> history;
};

struct TrainResult {
  double best_dev_smatch = 0.0;
  int best_epoch = -1;
  std::int64_t steps = 0;
  std::vector<EpochMetrics> history;
};

struct TrainRequest {
  Regime regime = Regime::kBaseline;
  TrainConfig config;
  std::vector<CorpusRecord> train;
  std::vector<CorpusRecord> dev;
  std::filesystem::path out_dir;
  /// Required for kd: a trained GLM checkpoint directory.
  std::filesystem::path teacher_dir;
  /// Continue from out_dir/train_state.bin when present.
  bool resume = false;
  /// Stop after this many epochs in this invocation (0 = run to the end).
  int max_epochs_this_run = 0;
  /// Optional progress sink, one line per epoch.
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Runs the regime with per-epoch dev evaluation, keeps the best-dev
/// checkpoint in out_dir and writes out_dir/metrics.jsonl.
TrainResult train(const TrainRequest& request);

/// Builds training examples for a regime (WAGs only where the regime uses them).
std::vector<Example> make_examples(const std::vector<CorpusRecord>& records, const Vocabulary& vocab,
                                   std::optional<WagVariant> variant);

/// The four scalar losses at the default toy configuration for gradient
/// checking, each as a closure over a fixed tiny batch.
struct GradCheckReport {
  std::string loss;
  nn::GradCheckResult result;
};
std::vector<GradCheckReport> grad_check_losses(const TrainConfig& config, const nn::GradCheckOptions& options = {});

}  // namespace wagparse
