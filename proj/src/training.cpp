#include "ftl/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "ftl/checkpoint.hpp"

namespace ftl {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline:
      return "B";
    case Variant::tl:
      return "TL";
    case Variant::tl_adv:
      return "TL+Adv";
    case Variant::tl_grl:
      return "TL+GRL";
    case Variant::tl_grl_dh:
      return "TL+GRL+DH";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : all_variants()) {
    if (to_string(v) == s) return v;
  }
  throw ValidationError("unknown variant \"" + s + "\" (expected B, TL, TL+Adv, TL+GRL or TL+GRL+DH)");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> kAll{Variant::baseline, Variant::tl, Variant::tl_adv, Variant::tl_grl,
                                         Variant::tl_grl_dh};
  return kAll;
}

TrainConfig TrainConfig::defaults(FinetuneMode mode) {
  TrainConfig c;
  c.finetune_mode = mode;
  if (mode == FinetuneMode::bitfit) {
    c.learning_rate = 2e-5;
    c.batch_size = 8;
    c.beta = 0.5;
    c.epochs = 7;
  }
  return c;
}

void apply_variant(TrainConfig& cfg, Variant v) {
  cfg.use_triplet = v != Variant::baseline;
  cfg.use_discriminator = v == Variant::tl_adv || v == Variant::tl_grl || v == Variant::tl_grl_dh;
  cfg.discriminator_gate = v == Variant::tl_adv ? GradientGate::pass : GradientGate::reverse;
  cfg.detector_gate = v == Variant::tl_grl_dh ? GradientGate::block : GradientGate::pass;
}

std::optional<Variant> variant_of(const TrainConfig& cfg) {
  for (Variant v : all_variants()) {
    TrainConfig probe = cfg;
    apply_variant(probe, v);
    const bool same_disc = !cfg.use_discriminator || probe.discriminator_gate == cfg.discriminator_gate;
    if (probe.use_triplet == cfg.use_triplet && probe.use_discriminator == cfg.use_discriminator && same_disc &&
        probe.detector_gate == cfg.detector_gate) {
      return v;
    }
  }
  return std::nullopt;
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (cfg.batch_size < 1) throw ValidationError("batch_size must be at least 1");
  if (cfg.epochs < 1) throw ValidationError("epochs must be at least 1");
  if (!(cfg.margin >= 0.0)) throw ValidationError("margin must be non-negative");
  if (!(cfg.lambda >= 0.0)) throw ValidationError("lambda must be non-negative");
  if (!(cfg.alpha >= 0.0)) throw ValidationError("alpha must be non-negative");
  if (!(cfg.beta >= 0.0)) throw ValidationError("beta must be non-negative");
  if (cfg.included_categories.contains(kRealCategory)) {
    throw ValidationError("included_categories must not contain \"real\"");
  }
  if (cfg.backbone.kind == BackboneKind::external) {
    throw ValidationError("backbone \"external\" needs pretrained weights, which are not bundled; use \"toy_cnn\"");
  }
}

ModelConfig model_config_for(const Manifest& manifest, const TrainConfig& cfg) {
  ModelConfig m;
  m.backbone = cfg.backbone;
  m.discriminator_hidden = cfg.discriminator_hidden;
  m.categories = {kRealCategory};
  for (const auto& c : fake_categories_of(manifest)) m.categories.push_back(c);
  return m;
}

TrainState init_train_state(const ModelConfig& model_cfg, const TrainConfig& cfg) {
  TrainState s{Model(model_cfg, cfg.seed), {}, 0, 0, Rng(cfg.seed ^ 0x5DEECE66DULL), {}, {}, cfg.finetune_mode};
  s.model.set_trainable(apply_bitfit_mask(s.model.parameter_info(), cfg.finetune_mode));
  s.adam.m = s.model.zero_gradients();
  s.adam.v = s.model.zero_gradients();
  if (auto v = variant_of(cfg)) s.variant = to_string(*v);
  return s;
}

TripletBatch make_triplet_batch(const std::vector<Triplet>& triplets, ImageStore& store, const ModelConfig& model_cfg) {
  if (triplets.empty()) throw ValidationError("empty triplet batch");
  TripletBatch b;
  b.triplets = triplets.size();
  std::vector<const Image*> images;
  images.reserve(3 * triplets.size());
  b.labels.reserve(3 * triplets.size());
  b.targets.reserve(3 * triplets.size());
  for (const auto& t : triplets) {
    if (auto why = triplet_violation(t); !why.empty()) {
      throw ValidationError("invalid triplet (" + t.anchor.identity_id + ", frame " +
                            std::to_string(t.anchor.frame_index) + "): " + why);
    }
  }
  const auto add = [&](const SampleRecord& r, int label) {
    images.push_back(&store.get(r.payload_ref));
    b.labels.push_back(label);
    b.targets.push_back(model_cfg.category_index(r.forgery_category));
  };
  for (const auto& t : triplets) add(t.anchor, t.labels[0]);
  for (const auto& t : triplets) add(t.positive, t.labels[1]);
  for (const auto& t : triplets) add(t.negative, t.labels[2]);
  b.images = make_batch(images);
  return b;
}

namespace {

Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t count) {
  Matrix out(count, m.cols);
  std::copy(m.data.begin() + static_cast<std::ptrdiff_t>(begin * m.cols),
            m.data.begin() + static_cast<std::ptrdiff_t>((begin + count) * m.cols), out.data.begin());
  return out;
}

void add_rows(Matrix& dst, std::size_t begin, const Matrix& src, double scale) {
  for (std::size_t i = 0; i < src.data.size(); ++i) dst.data[begin * dst.cols + i] += scale * src.data[i];
}

void add_all(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < src.data.size(); ++i) dst.data[i] += src.data[i];
}

void check_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw RuntimeFailure(std::string("non-finite ") + term + " loss");
}

}  // namespace

StepGradients compute_gradients(const Model& model, const TripletBatch& batch, const TrainConfig& cfg,
                                bool include_bce) {
  const std::size_t b = batch.triplets;
  StepGradients out;
  out.grads = model.zero_gradients();

  BackboneTape tape;
  const EmbeddingBatch e = model.embed(batch.images, &tape);
  const Matrix a = slice_rows(e, 0, b);
  const Matrix p = slice_rows(e, b, b);
  const Matrix n = slice_rows(e, 2 * b, b);

  const double triplet = triplet_loss(a, p, n, cfg.margin, cfg.margin_sign);
  check_finite(triplet, "triplet");

  // Detector on (possibly detached) embeddings.
  const EmbeddingBatch det_in = cfg.detector_gate == GradientGate::block ? detach(e) : e;
  const auto probs = model.detect(det_in);
  double bce = 0.0;
  std::optional<Matrix> det_grad;
  if (include_bce) {
    bce = bce_loss(probs, batch.labels);
    check_finite(bce, "bce");
    const auto g = bce_logit_gradient(probs, batch.labels);
    det_grad = route_gradient(cfg.detector_gate, model.detect_backward(det_in, g, out.grads), cfg.lambda);
  }

  // Discriminator behind the configured gate; beta scales its whole contribution.
  const double beta = cfg.effective_beta();
  const GrlConfig grl{cfg.lambda};
  DiscriminatorTape dtape;
  const Matrix cat_probs =
      model.discriminate(cfg.discriminator_gate == GradientGate::reverse ? grl_apply(e, grl) : e, &dtape);
  const double forgery = forgery_ce_loss(cat_probs, batch.targets);
  check_finite(forgery, "forgery");
  Matrix g_logits = forgery_ce_logit_gradient(cat_probs, batch.targets);
  for (auto& v : g_logits.data) v *= beta;
  const auto disc_grad =
      route_gradient(cfg.discriminator_gate, model.discriminate_backward(dtape, g_logits, out.grads), cfg.lambda);

  const double alpha = cfg.effective_alpha();
  out.losses = total_loss(bce, triplet, forgery, alpha, beta, cfg.lambda, cfg.margin);
  check_finite(out.losses.total, "total");

  Matrix grad_e(e.rows, e.cols);
  const auto tg = triplet_gradient(a, p, n, cfg.margin, cfg.margin_sign);
  add_rows(grad_e, 0, tg.anchor, alpha);
  add_rows(grad_e, b, tg.positive, alpha);
  add_rows(grad_e, 2 * b, tg.negative, alpha);
  if (det_grad) add_all(grad_e, *det_grad);
  if (disc_grad) add_all(grad_e, *disc_grad);

  model.embed_backward(tape, grad_e, out.grads);
  return out;
}

void adam_update(Model& model, AdamState& adam, const Gradients& grads, double learning_rate) {
  auto& params = model.parameters();
  if (grads.size() != params.size() || adam.m.size() != params.size() || adam.v.size() != params.size()) {
    throw ValidationError("adam_update: state does not match the model");
  }
  adam.t += 1;
  const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.t));
  const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    auto& w = params[i].value;
    auto& m = adam.m[i];
    auto& v = adam.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * g[k];
      v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      w[k] -= learning_rate * m_hat / (std::sqrt(v_hat) + adam.epsilon);
    }
  }
}

LossBreakdown train_step(const std::vector<Triplet>& batch, TrainState& state, const TrainConfig& cfg,
                         ImageStore& store) {
  const TripletBatch tb = make_triplet_batch(batch, store, state.model.config());
  StepGradients sg = compute_gradients(state.model, tb, cfg);
  adam_update(state.model, state.adam, sg.grads, cfg.learning_rate);
  state.step += 1;
  return sg.losses;
}

void write_loss_log_header(std::ostream& os) { os << "epoch,step,bce,triplet,forgery,total\n"; }

void write_loss_log_row(std::ostream& os, const LossLogRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%llu,%.17g,%.17g,%.17g,%.17g\n", row.epoch,
                static_cast<unsigned long long>(row.step), row.losses.bce, row.losses.triplet, row.losses.forgery,
                row.losses.total);
  os << buf;
}

TrainResult train(const Manifest& manifest, ImageStore& store, const TrainConfig& cfg,
                  std::optional<TrainState> resume, const std::filesystem::path& out_dir) {
  validate(cfg);
  std::set<std::string> included = cfg.included_categories;
  if (included.empty()) {
    const auto all = fake_categories_of(manifest);
    included.insert(all.begin(), all.end());
  }
  if (included.empty()) throw ValidationError("manifest " + manifest.dataset_name + " has no fake samples");
  const auto triplets = build_triplet_set(manifest, included);
  if (triplets.empty()) {
    throw ValidationError("no triplets can be formed from " + manifest.dataset_name + " for the included categories");
  }

  TrainResult result{resume ? std::move(*resume) : init_train_state(model_config_for(manifest, cfg), cfg), {}};
  TrainState& state = result.state;
  if (state.train_dataset.empty()) state.train_dataset = manifest.dataset_name;

  std::ofstream log_file;
  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw RuntimeFailure("cannot create output directory " + out_dir.string() + ": " + ec.message());
    const auto log_path = out_dir / "loss_log.csv";
    const bool fresh = !std::filesystem::exists(log_path) || std::filesystem::file_size(log_path) == 0;
    log_file.open(log_path, std::ios::app);
    if (!log_file) throw RuntimeFailure("cannot open " + log_path.string());
    if (fresh) write_loss_log_header(log_file);
  }

  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  while (state.epoch < cfg.epochs) {
    const auto order = state.rng.permutation(triplets.size());
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      std::vector<Triplet> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) batch.push_back(triplets[order[i]]);
      LossLogRow row{state.epoch + 1, 0, {}};
      try {
        row.losses = train_step(batch, state, cfg, store);
      } catch (const RuntimeFailure& e) {
        throw RuntimeFailure(std::string(e.what()) + " at epoch " + std::to_string(state.epoch + 1) + ", step " +
                             std::to_string(state.step + 1));
      }
      row.step = state.step;
      if (log_file.is_open()) write_loss_log_row(log_file, row);
      result.log.push_back(row);
    }
    state.epoch += 1;
    if (!out_dir.empty()) save_checkpoint(out_dir / ("checkpoint_epoch" + std::to_string(state.epoch) + ".ckpt"), state);
  }
  if (log_file.is_open()) log_file.flush();
  if (!out_dir.empty()) save_checkpoint(out_dir / "checkpoint.ckpt", state);
  return result;
}

}  // namespace ftl
