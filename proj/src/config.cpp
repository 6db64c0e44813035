#include "ftl/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ftl {

using nlohmann::json;

namespace {

const std::set<std::string> kTopKeys = {
    "finetune_mode", "backbone",       "learning_rate",   "batch_size",     "margin",        "margin_sign",
    "lambda",        "alpha",          "beta",            "epochs",         "seed",          "included_categories",
    "optimizer",     "variant",        "image_size",      "conv_channels",  "embedding_dim", "normalize_embedding",
    "discriminator_hidden",            "train_manifest",  "granularity",  "eval_manifests", "output_dir",    "checkpoint",
    "init_checkpoint",                 "synth",           "tsne"};
const std::set<std::string> kSynthKeys = {"identities", "frames",       "image_size",   "families",
                                          "seed",       "dataset_name", "test_fraction"};
const std::set<std::string> kTsneKeys = {"manifest", "perplexity", "iterations", "plot"};

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.contains(key)) throw ValidationError("unknown config key \"" + where + key + "\"");
  }
}

template <typename T>
T get(const json& obj, const std::string& key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config key \"" + where + key + "\" has the wrong type");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) throw ValidationError("empty path in config");
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

MarginSign parse_margin_sign(const std::string& s) {
  if (s == "plus") return MarginSign::plus;
  if (s == "printed_minus") return MarginSign::printed_minus;
  throw ValidationError("margin_sign must be \"plus\" or \"printed_minus\", got \"" + s + "\"");
}

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.train = TrainConfig::defaults(FinetuneMode::full);
  apply_variant(c.train, c.variant);
  return c;
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  reject_unknown(j, kTopKeys, "");

  RunConfig c;
  for (const auto& [key, _] : j.items()) c.explicit_keys.insert(key);

  const FinetuneMode mode =
      j.contains("finetune_mode") ? parse_finetune_mode(get<std::string>(j, "finetune_mode", "")) : FinetuneMode::full;
  c.train = TrainConfig::defaults(mode);
  auto& t = c.train;

  if (j.contains("backbone")) t.backbone.kind = parse_backbone_kind(get<std::string>(j, "backbone", ""));
  if (j.contains("learning_rate")) t.learning_rate = get<double>(j, "learning_rate", "");
  if (j.contains("batch_size")) t.batch_size = get<int>(j, "batch_size", "");
  if (j.contains("margin")) t.margin = get<double>(j, "margin", "");
  if (j.contains("margin_sign")) t.margin_sign = parse_margin_sign(get<std::string>(j, "margin_sign", ""));
  if (j.contains("lambda")) t.lambda = get<double>(j, "lambda", "");
  if (j.contains("alpha")) t.alpha = get<double>(j, "alpha", "");
  if (j.contains("beta")) t.beta = get<double>(j, "beta", "");
  if (j.contains("epochs")) t.epochs = get<int>(j, "epochs", "");
  if (j.contains("seed")) t.seed = get<std::uint64_t>(j, "seed", "");
  if (j.contains("included_categories")) {
    const auto cats = get<std::vector<std::string>>(j, "included_categories", "");
    t.included_categories = {cats.begin(), cats.end()};
  }
  if (j.contains("optimizer") && get<std::string>(j, "optimizer", "") != "adam") {
    throw ValidationError("optimizer must be \"adam\"");
  }
  if (j.contains("image_size")) t.backbone.image_size = get<int>(j, "image_size", "");
  if (j.contains("conv_channels")) t.backbone.conv_channels = get<std::vector<int>>(j, "conv_channels", "");
  if (j.contains("embedding_dim")) t.backbone.embedding_dim = get<int>(j, "embedding_dim", "");
  if (j.contains("normalize_embedding")) t.backbone.normalize_embedding = get<bool>(j, "normalize_embedding", "");
  if (j.contains("discriminator_hidden")) t.discriminator_hidden = get<int>(j, "discriminator_hidden", "");
  if (j.contains("variant")) c.variant = parse_variant(get<std::string>(j, "variant", ""));
  apply_variant(t, c.variant);

  if (j.contains("train_manifest")) c.train_manifest = resolve(base_dir, get<std::string>(j, "train_manifest", ""));
  if (j.contains("eval_manifests")) {
    for (const auto& p : get<std::vector<std::string>>(j, "eval_manifests", "")) {
      c.eval_manifests.push_back(resolve(base_dir, p));
    }
  }
  if (j.contains("granularity")) c.granularity = parse_granularity(get<std::string>(j, "granularity", ""));
  if (j.contains("output_dir")) c.output_dir = resolve(base_dir, get<std::string>(j, "output_dir", ""));
  if (j.contains("checkpoint")) c.checkpoint = resolve(base_dir, get<std::string>(j, "checkpoint", ""));
  if (j.contains("init_checkpoint")) c.init_checkpoint = resolve(base_dir, get<std::string>(j, "init_checkpoint", ""));

  if (j.contains("synth")) {
    const auto& s = j["synth"];
    if (!s.is_object()) throw ValidationError("config key \"synth\" must be an object");
    reject_unknown(s, kSynthKeys, "synth.");
    if (s.contains("identities")) c.synth.identities = get<int>(s, "identities", "synth.");
    if (s.contains("frames")) c.synth.frames = get<int>(s, "frames", "synth.");
    if (s.contains("image_size")) c.synth.image_size = get<int>(s, "image_size", "synth.");
    if (s.contains("families")) c.synth.families = get<std::vector<std::string>>(s, "families", "synth.");
    if (s.contains("seed")) c.synth.seed = get<std::uint64_t>(s, "seed", "synth.");
    if (s.contains("dataset_name")) c.synth.dataset_name = get<std::string>(s, "dataset_name", "synth.");
    if (s.contains("test_fraction")) c.synth_test_fraction = get<double>(s, "test_fraction", "synth.");
  }
  if (j.contains("tsne")) {
    const auto& s = j["tsne"];
    if (!s.is_object()) throw ValidationError("config key \"tsne\" must be an object");
    reject_unknown(s, kTsneKeys, "tsne.");
    if (s.contains("manifest")) c.tsne.manifest = resolve(base_dir, get<std::string>(s, "manifest", "tsne."));
    if (s.contains("perplexity")) c.tsne.perplexity = get<double>(s, "perplexity", "tsne.");
    if (s.contains("iterations")) c.tsne.iterations = get<int>(s, "iterations", "tsne.");
    if (s.contains("plot")) c.tsne.plot = get<bool>(s, "plot", "tsne.");
  }
  if (c.synth_test_fraction < 0.0 || c.synth_test_fraction >= 1.0) {
    throw ValidationError("synth.test_fraction must be in [0, 1)");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config file not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

}  // namespace ftl
