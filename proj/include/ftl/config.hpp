#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ftl/metrics.hpp"
#include "ftl/synthetic.hpp"
#include "ftl/training.hpp"

namespace ftl {

/// Environment variable that overrides `output_dir` (the --out flag still wins).
inline constexpr const char* kOutputDirEnv = "FTL_OUTPUT_DIR";

struct TsneSettings {
  std::filesystem::path manifest;  // empty: first eval manifest, else the train manifest
  double perplexity = 30.0;
  int iterations = 1000;
  bool plot = false;
};

/// Everything one CLI invocation needs. Parsed from a JSON object with a fixed key set;
/// unknown keys are rejected. Relative paths resolve against the config file's folder.
///
/// Top-level keys:
///   finetune_mode, backbone, learning_rate, batch_size, margin, margin_sign, lambda,
///   alpha, beta, epochs, seed, included_categories, optimizer, variant, image_size,
///   conv_channels, embedding_dim, normalize_embedding, discriminator_hidden,
///   train_manifest, eval_manifests, granularity, output_dir, checkpoint, init_checkpoint,
///   synth { identities, frames, image_size, families, seed, dataset_name, test_fraction },
///   tsne { manifest, perplexity, iterations, plot }
/// Unset hyperparameters take the defaults for the selected finetune_mode.
struct RunConfig {
  TrainConfig train;
  Variant variant = Variant::tl_grl_dh;
  std::filesystem::path train_manifest;
  std::vector<std::filesystem::path> eval_manifests;
  Granularity granularity = Granularity::frame;
  std::filesystem::path output_dir = "ftl_out";
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> init_checkpoint;
  SyntheticSpec synth;
  double synth_test_fraction = 0.25;
  TsneSettings tsne;
  /// Top-level keys present in the file (lets commands tell explicit values from defaults).
  std::set<std::string> explicit_keys;

  std::filesystem::path checkpoint_path() const { return checkpoint ? *checkpoint : output_dir / "checkpoint.ckpt"; }
};

/// Parses JSON text. Throws ValidationError naming the offending key.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
/// Defaults only (used when no --config is given).
RunConfig default_run_config();

}  // namespace ftl
