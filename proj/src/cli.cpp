#include "ftl/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "ftl/checkpoint.hpp"
#include "ftl/config.hpp"
#include "ftl/metrics.hpp"
#include "ftl/tsne.hpp"

namespace ftl {
namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool dry_run = false;
  bool no_grl = false;
  bool no_triplet = false;
  bool no_detach = false;
  std::string preset;
  bool plot = false;
  std::string resume;
};

void require_file(const std::filesystem::path& p, const std::string& key) {
  if (p.empty()) throw ValidationError(key + " is required");
  if (!std::filesystem::is_regular_file(p)) throw ValidationError(key + " not found: " + p.string());
}

RunConfig resolve_config(const Flags& f) {
  RunConfig c = f.config.empty() ? default_run_config() : load_run_config(f.config);
  if (f.seed) {
    c.train.seed = *f.seed;
    c.synth.seed = *f.seed;
  }
  if (!f.out.empty()) {
    c.output_dir = f.out;
  } else if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') {
    c.output_dir = env;
  }
  if (!f.preset.empty()) c.variant = parse_variant(f.preset);
  apply_variant(c.train, c.variant);
  if (f.no_triplet) c.train.use_triplet = false;
  if (f.no_grl) c.train.use_discriminator = false;
  if (f.no_detach) c.train.detector_gate = GradientGate::pass;
  return c;
}

std::string describe(const Manifest& m) {
  return std::to_string(m.records.size()) + " records (" + std::to_string(m.count(Authenticity::real)) + " real, " +
         std::to_string(m.count(Authenticity::fake)) + " fake)";
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw RuntimeFailure("unwritable output directory " + dir.string() + (ec ? ": " + ec.message() : ""));
  }
}

// Seeded identity split; the test side gets round(fraction * n) identities, at least one.
std::pair<std::set<std::string>, std::set<std::string>> split_identities(const std::vector<std::string>& ids,
                                                                         double fraction, std::uint64_t seed) {
  const auto n = ids.size();
  auto n_test = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  Rng rng(seed ^ 0x9E3779B97F4A7C15ULL);
  const auto order = rng.permutation(n);
  std::set<std::string> train, test;
  for (std::size_t k = 0; k < n; ++k) (k < n_test ? test : train).insert(ids[order[k]]);
  return {train, test};
}

int cmd_synth(const RunConfig& c, bool dry_run, std::ostream& out) {
  validate(c.synth);
  const bool split = c.synth_test_fraction > 0.0;
  if (split && c.synth.identities < 2) throw ValidationError("synth.identities must be at least 2 to split off a test set");
  if (dry_run) {
    out << "dry run: would write " << c.synth.identities << " identities x " << c.synth.frames << " frames x "
        << (1 + c.synth.families.size()) << " streams to " << c.output_dir.string() << "\n";
    return 0;
  }
  ensure_dir(c.output_dir);
  const auto data = make_synthetic_dataset(c.synth);
  const auto path = write_synthetic_dataset(c.output_dir, data, "manifest");
  out << "manifest " << path.string() << ": " << describe(data.manifest) << "\n";
  if (!split) return 0;

  const auto [train_ids, test_ids] =
      split_identities(identities_of(data.manifest), c.synth_test_fraction, c.synth.seed);
  const auto emit = [&](const std::set<std::string>& ids, const std::set<std::string>& cats, const std::string& name) {
    const Manifest m = select_records(data.manifest, ids, cats, name);
    const auto p = c.output_dir / (name + ".jsonl");
    save_manifest(p, m);
    out << "manifest " << p.string() << ": " << describe(m) << "\n";
  };
  emit(train_ids, {}, "train");
  emit(test_ids, {}, "test");
  for (const auto& fam : c.synth.families) {
    emit(train_ids, {fam}, "train_" + fam);
    emit(test_ids, {fam}, "test_" + fam);
  }
  return 0;
}

std::set<std::string> included_for(const RunConfig& c, const Manifest& m) {
  if (!c.train.included_categories.empty()) return c.train.included_categories;
  const auto all = fake_categories_of(m);
  return {all.begin(), all.end()};
}

int cmd_triplets(const RunConfig& c, bool dry_run, std::ostream& out) {
  require_file(c.train_manifest, "train_manifest");
  const Manifest m = load_manifest(c.train_manifest);
  const auto included = included_for(c, m);
  if (included.empty()) throw ValidationError("empty triplet set: manifest " + m.dataset_name + " has no fake samples");
  const auto triplets = build_triplet_set(m, included);
  if (triplets.empty()) throw ValidationError("empty triplet set for manifest " + m.dataset_name);
  const auto path = c.output_dir / "triplets.csv";
  if (dry_run) {
    out << "dry run: would write " << triplets.size() << " triplets to " << path.string() << "\n";
    return 0;
  }
  ensure_dir(c.output_dir);
  write_triplet_listing(path, triplets);
  const auto rows = verify_triplet_listing(path, m);
  out << rows << " triplets written to " << path.string() << " (verified)\n";
  return 0;
}

void print_parameter_counts(const Model& model, FinetuneMode mode, std::ostream& out) {
  const auto info = model.parameter_info();
  const auto all = count_parameters(info);
  std::map<ParamRole, ParameterCount> by_role;
  for (const auto& p : info) {
    auto& r = by_role[p.role];
    r.total += p.count();
    if (p.trainable) r.trainable += p.count();
  }
  out << "parameters (" << to_string(mode) << "): " << all.trainable << " trainable of " << all.total
      << " (backbone " << by_role[ParamRole::backbone].trainable << "/" << by_role[ParamRole::backbone].total
      << ", detector " << by_role[ParamRole::detector].trainable << "/" << by_role[ParamRole::detector].total
      << ", discriminator " << by_role[ParamRole::discriminator].trainable << "/"
      << by_role[ParamRole::discriminator].total << ")\n";
}

int cmd_train(const RunConfig& c, const Flags& f, std::ostream& out) {
  require_file(c.train_manifest, "train_manifest");
  if (c.init_checkpoint) require_file(*c.init_checkpoint, "init_checkpoint");
  if (!f.resume.empty()) require_file(f.resume, "resume");
  validate(c.train);
  const Manifest m = load_manifest(c.train_manifest);
  const auto model_cfg = model_config_for(m, c.train);
  validate(model_cfg);
  const auto variant = variant_of(c.train);
  const std::string variant_name = variant ? to_string(*variant) : "custom";

  std::optional<TrainState> start;
  if (!f.resume.empty()) {
    start = load_checkpoint(f.resume);
    if (start->model.config() != model_cfg) throw ValidationError("resume checkpoint does not match the configured model");
  } else if (c.init_checkpoint) {
    TrainState init = load_checkpoint(*c.init_checkpoint);
    if (init.model.config() != model_cfg) {
      throw ValidationError("init_checkpoint does not match the configured model");
    }
    start = init_train_state(model_cfg, c.train);
    auto& dst = start->model.parameters();
    const auto& src = init.model.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i].value = src[i].value;
  }

  if (f.dry_run) {
    out << "dry run: would train " << variant_name << " on " << m.dataset_name << " (" << describe(m) << ") for "
        << c.train.epochs << " epochs into " << c.output_dir.string() << "\n";
    return 0;
  }
  ensure_dir(c.output_dir);
  ImageStore store(m.base_dir);
  print_parameter_counts(start ? start->model : init_train_state(model_cfg, c.train).model, c.train.finetune_mode,
                         out);
  const auto result = train(m, store, c.train, std::move(start), c.output_dir);
  if (result.log.empty()) {
    out << "no steps run (already at epoch " << result.state.epoch << ")\n";
    return 0;
  }
  const auto& last = result.log.back().losses;
  if (!std::isfinite(last.total)) throw RuntimeFailure("final loss is not finite");
  char buf[160];
  std::snprintf(buf, sizeof(buf), "final loss %.6f (bce %.6f, triplet %.6f, forgery %.6f) after %llu steps\n",
                last.total, last.bce, last.triplet, last.forgery, static_cast<unsigned long long>(result.state.step));
  out << variant_name << " trained on " << m.dataset_name << ": " << buf;
  out << "checkpoint " << (c.output_dir / "checkpoint.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& c, bool dry_run, std::ostream& out) {
  const auto ckpt = c.checkpoint_path();
  require_file(ckpt, "checkpoint");
  if (c.eval_manifests.empty()) throw ValidationError("eval_manifests is required");
  for (const auto& p : c.eval_manifests) require_file(p, "eval_manifests entry");
  std::optional<BackboneConfig> configured;
  if (c.explicit_keys.contains("embedding_dim") || c.explicit_keys.contains("image_size")) {
    configured = c.train.backbone;
  }
  std::vector<Manifest> manifests;
  for (const auto& p : c.eval_manifests) manifests.push_back(load_manifest(p));
  const auto path = c.output_dir / "report.csv";
  if (dry_run) {
    out << "dry run: would evaluate " << ckpt.string() << " on " << manifests.size() << " manifest(s) into "
        << path.string() << "\n";
    return 0;
  }
  std::vector<EvalReport> reports;
  for (const auto& m : manifests) {
    ImageStore store(m.base_dir);
    reports.push_back(evaluate_checkpoint(ckpt, m, store, configured));
  }
  ensure_dir(c.output_dir);
  std::ostringstream table;
  write_report_header(table);
  for (const auto& r : reports) write_report_row(table, r, c.granularity);
  std::ofstream file(path);
  if (!file || !(file << table.str())) throw RuntimeFailure("cannot write " + path.string());
  for (const auto& r : reports) {
    out << "evaluated " << r.dataset_name << " with " << r.variant << " trained on " << r.trained_on << "\n";
  }
  out << table.str() << "report " << path.string() << "\n";
  return 0;
}

int cmd_tsne(const RunConfig& c, const Flags& f, std::ostream& out) {
  const auto ckpt = c.checkpoint_path();
  require_file(ckpt, "checkpoint");
  std::filesystem::path manifest_path = c.tsne.manifest;
  if (manifest_path.empty()) manifest_path = c.eval_manifests.empty() ? c.train_manifest : c.eval_manifests.front();
  require_file(manifest_path, "tsne.manifest");
  const Manifest m = load_manifest(manifest_path);
  TsneOptions opts;
  opts.perplexity = c.tsne.perplexity;
  opts.iterations = c.tsne.iterations;
  opts.seed = c.train.seed;
  if (opts.iterations < 1) throw ValidationError("tsne.iterations must be at least 1");
  if (!(opts.perplexity > 0.0)) throw ValidationError("tsne.perplexity must be positive");
  const bool plot = f.plot || c.tsne.plot;
  const auto csv = c.output_dir / "tsne.csv";
  if (f.dry_run) {
    out << "dry run: would project " << m.records.size() << " records to " << csv.string() << (plot ? " with plot" : "")
        << "\n";
    return 0;
  }
  const TrainState state = load_checkpoint(ckpt);
  ImageStore store(m.base_dir);
  const auto rows = tsne_export(state.model, m, store, opts);
  ensure_dir(c.output_dir);
  write_tsne_csv(csv, rows);
  out << rows.size() << " points written to " << csv.string() << " (perplexity "
      << effective_perplexity(opts.perplexity, rows.size()) << ")\n";
  if (plot) {
    const auto png = c.output_dir / "tsne.png";
    write_tsne_plot(png, rows);
    out << "plot " << png.string() << "\n";
  }
  return 0;
}

}  // namespace

void write_triplet_listing(const std::filesystem::path& path, const std::vector<Triplet>& triplets) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << "anchor_ref,positive_ref,negative_ref,l_a,l_p,l_n\n";
  for (const auto& t : triplets) {
    out << t.anchor.payload_ref << ',' << t.positive.payload_ref << ',' << t.negative.payload_ref << ','
        << t.labels[0] << ',' << t.labels[1] << ',' << t.labels[2] << '\n';
  }
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

std::size_t verify_triplet_listing(const std::filesystem::path& path, const Manifest& manifest) {
  std::map<std::string, const SampleRecord*> by_ref;
  for (const auto& r : manifest.records) by_ref.emplace(r.payload_ref, &r);
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "anchor_ref,positive_ref,negative_ref,l_a,l_p,l_n") throw ValidationError("bad triplet listing header");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string field; std::getline(ss, field, ',');) fields.push_back(field);
    const auto where = path.string() + ":" + std::to_string(rows + 1) + ": ";
    if (fields.size() != 6) throw ValidationError(where + "expected 6 fields");
    Triplet t;
    SampleRecord* slots[3] = {&t.anchor, &t.positive, &t.negative};
    for (int k = 0; k < 3; ++k) {
      const auto it = by_ref.find(fields[static_cast<std::size_t>(k)]);
      if (it == by_ref.end()) throw ValidationError(where + "unknown ref " + fields[static_cast<std::size_t>(k)]);
      *slots[k] = *it->second;
      const auto& l = fields[static_cast<std::size_t>(3 + k)];
      if (l != "0" && l != "1") throw ValidationError(where + "label must be 0 or 1");
      t.labels[static_cast<std::size_t>(k)] = l == "1" ? 1 : 0;
    }
    if (const auto v = triplet_violation(t); !v.empty()) throw ValidationError(where + v);
  }
  return rows;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Forgery triplet learning: synthetic data, training, evaluation", "ftl"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "JSON run configuration");
  app.add_option("--seed", f.seed, "Override the training and generator seeds");
  app.add_option("--out", f.out, "Output directory (overrides FTL_OUTPUT_DIR and the config)");
  app.add_flag("--dry-run", f.dry_run, "Validate the configuration and inputs without writing anything");
  app.add_flag("--no-grl", f.no_grl, "Drop the discriminator branch");
  app.add_flag("--no-triplet", f.no_triplet, "Drop the triplet loss");
  app.add_flag("--no-detach", f.no_detach, "Let detector gradients reach the backbone");
  app.add_option("--preset", f.preset, "Ablation preset: B, TL, TL+Adv, TL+GRL, TL+GRL+DH");

  auto* synth = app.add_subcommand("synth", "Generate the procedural forgery dataset");
  auto* triplets = app.add_subcommand("triplets", "List the controlled triplets of the train manifest");
  auto* train_cmd = app.add_subcommand("train", "Train and write checkpoints and the loss log");
  train_cmd->add_option("--resume", f.resume, "Continue from this checkpoint");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the eval manifests");
  auto* tsne_cmd = app.add_subcommand("tsne", "Project embeddings to 2-D");
  tsne_cmd->add_flag("--plot", f.plot, "Also write a scatter plot");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    const RunConfig c = resolve_config(f);
    if (synth->parsed()) return cmd_synth(c, f.dry_run, out);
    if (triplets->parsed()) return cmd_triplets(c, f.dry_run, out);
    if (train_cmd->parsed()) return cmd_train(c, f, out);
    if (eval->parsed()) return cmd_eval(c, f.dry_run, out);
    if (tsne_cmd->parsed()) return cmd_tsne(c, f, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const RuntimeFailure& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace ftl
