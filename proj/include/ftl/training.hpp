#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ftl/dataset.hpp"
#include "ftl/image.hpp"
#include "ftl/losses.hpp"
#include "ftl/model.hpp"
#include "ftl/rng.hpp"

namespace ftl {

/// Ablation variants:
///   B          - detector on the backbone, no triplet loss, no discriminator
///   TL         - triplet loss + attached detector
///   TL+Adv     - TL + discriminator loss without gradient reversal
///   TL+GRL     - TL + discriminator behind gradient reversal
///   TL+GRL+DH  - TL+GRL with the detector detached from the backbone (full method)
enum class Variant { baseline, tl, tl_adv, tl_grl, tl_grl_dh };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
const std::vector<Variant>& all_variants();

enum class Optimizer { adam };

struct TrainConfig {
  BackboneConfig backbone;
  int discriminator_hidden = 64;
  FinetuneMode finetune_mode = FinetuneMode::full;
  double learning_rate = 1e-4;
  int batch_size = 4;
  double margin = 1.0;
  MarginSign margin_sign = MarginSign::plus;
  double lambda = 1.0;
  double alpha = 1.0;
  double beta = 1.0;
  int epochs = 30;
  std::uint64_t seed = 0;
  /// Fake categories used to form triplets; empty means every fake category present.
  std::set<std::string> included_categories;
  Optimizer optimizer = Optimizer::adam;

  // Component switches, normally set through apply_variant.
  bool use_triplet = true;
  bool use_discriminator = true;
  GradientGate discriminator_gate = GradientGate::reverse;
  GradientGate detector_gate = GradientGate::block;

  /// Hyperparameter defaults of the reference setup for the given mode:
  /// full   - lr 1e-4, batch 4, margin 1.0, lambda 1.0, beta 1.0, 30 epochs, Adam
  /// bitfit - lr 2e-5, batch 8, margin 1.0, lambda 1.0, beta 0.5, 7 epochs, Adam
  static TrainConfig defaults(FinetuneMode mode);

  double effective_alpha() const { return use_triplet ? alpha : 0.0; }
  double effective_beta() const { return use_discriminator ? beta : 0.0; }
};

void apply_variant(TrainConfig& cfg, Variant v);
/// The variant a component combination corresponds to, if any.
std::optional<Variant> variant_of(const TrainConfig& cfg);
void validate(const TrainConfig& cfg);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  bool operator==(const AdamState&) const = default;
};

/// Everything needed to continue a run exactly.
struct TrainState {
  Model model;
  AdamState adam;
  int epoch = 0;           // completed epochs
  std::uint64_t step = 0;  // completed optimizer steps
  Rng rng;
  std::string train_dataset;
  std::string variant;
  FinetuneMode finetune_mode = FinetuneMode::full;
};

/// Discriminator classes for a manifest: "real" followed by its fake categories.
ModelConfig model_config_for(const Manifest& manifest, const TrainConfig& cfg);

/// Seeded model, BitFit mask applied, zeroed optimizer moments.
TrainState init_train_state(const ModelConfig& model_cfg, const TrainConfig& cfg);

/// Inputs for one step: rows [0,B) anchors, [B,2B) positives, [2B,3B) negatives.
struct TripletBatch {
  ImageBatch images;
  std::vector<int> labels;   // 0 real, 1 fake
  std::vector<int> targets;  // discriminator class per element
  std::size_t triplets = 0;
};

TripletBatch make_triplet_batch(const std::vector<Triplet>& triplets, ImageStore& store, const ModelConfig& model_cfg);

struct StepGradients {
  LossBreakdown losses;
  Gradients grads;
};

/// Forward and backward pass of one step without touching parameters. With
/// `include_bce = false` the detector term is dropped from the objective.
StepGradients compute_gradients(const Model& model, const TripletBatch& batch, const TrainConfig& cfg,
                                bool include_bce = true);

void adam_update(Model& model, AdamState& adam, const Gradients& grads, double learning_rate);

/// One optimizer step on a batch of triplets. Throws RuntimeFailure naming the term when
/// a loss is non-finite, ValidationError on an invalid triplet.
LossBreakdown train_step(const std::vector<Triplet>& batch, TrainState& state, const TrainConfig& cfg,
                         ImageStore& store);

struct LossLogRow {
  int epoch = 0;
  std::uint64_t step = 0;
  LossBreakdown losses;
};

struct TrainResult {
  TrainState state;
  std::vector<LossLogRow> log;
};

/// Epochs over seeded shuffles of the triplet set. With a non-empty `out_dir`, writes
/// `checkpoint_epoch<k>.ckpt` after each epoch, `checkpoint.ckpt` at the end, and
/// appends to `loss_log.csv`. Passing `resume` continues from that state.
TrainResult train(const Manifest& manifest, ImageStore& store, const TrainConfig& cfg,
                  std::optional<TrainState> resume = std::nullopt, const std::filesystem::path& out_dir = {});

void write_loss_log_header(std::ostream& os);
void write_loss_log_row(std::ostream& os, const LossLogRow& row);

}  // namespace ftl
