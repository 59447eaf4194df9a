#pragma once

#include <cstdio>
#include <functional>
#include <iostream>
#include <ostream>

#include "seer/datagen.hpp"
#include "seer/evalkit.hpp"
#include "seer/model.hpp"

namespace seer {

struct PhaseSpec {
  PhaseKind name = PhaseKind::ordinary;
  std::size_t epochs = 0;
  double lr_start = 1e-4;
  double lr_end = 1e-6;
  bool backbone_trainable = false;
  bool action_frames_visible = false;
  bool class_weights_active = false;
  bool include_validation_in_train = false;
};

// warmup and ordinary run 50 epochs at 1e-4 -> 1e-6, both finetunes 20 at
// 1e-5 -> 1e-7; only warmup trains the backbone and sees the action frames,
// only the finetunes weight classes, only the last phase folds in validation.
inline std::vector<PhaseSpec> default_pipeline() {
  return {
      {PhaseKind::warmup, 50, 1e-4, 1e-6, true, true, false, false},
      {PhaseKind::ordinary, 50, 1e-4, 1e-6, false, false, false, false},
      {PhaseKind::finetune, 20, 1e-5, 1e-7, false, false, true, false},
      {PhaseKind::finetune_joint_val, 20, 1e-5, 1e-7, false, false, true, true},
  };
}

// Flat at lr_start for the first 75% of the phase, cosine decay to lr_end
// over the remaining quarter. Continuous at the switch point.
inline double flatcosine_lr(double epoch, const PhaseSpec& spec) {
  const double total = static_cast<double>(spec.epochs);
  if (epoch < 0.0 || epoch >= total)
    throw ContractError("flatcosine_lr: epoch " + std::to_string(epoch) + " outside [0," +
                        std::to_string(spec.epochs) + ")");
  const double flat = 0.75 * total;
  if (epoch < flat) return spec.lr_start;
  const double t = (epoch - flat) / (0.25 * total);
  return spec.lr_end + (spec.lr_start - spec.lr_end) * (1.0 + std::cos(M_PI * t)) / 2.0;
}

// Inverse-frequency weights (1/freq)^gamma, rescaled to mean 1. Zero-count
// classes cannot be meaningfully upweighted: they keep weight 1 and trigger
// a warning.
inline std::vector<float> class_weights_from_freq(const std::vector<std::size_t>& counts, double gamma,
                                                  std::ostream* warn = &std::cerr) {
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("class weighting exponent must lie in [0,1]");
  std::vector<float> w(counts.size(), 1.0f);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      if (warn) *warn << "warning: class " << c << " has no training instances; weight left at 1\n";
      continue;
    }
    w[c] = static_cast<float>(std::pow(1.0 / static_cast<double>(counts[c]), gamma));
    sum += w[c];
    ++present;
  }
  if (present > 0) {
    const double scale = static_cast<double>(present) / sum;
    for (std::size_t c = 0; c < counts.size(); ++c)
      if (counts[c] > 0) w[c] = static_cast<float>(w[c] * scale);
  }
  return w;
}

struct ClassWeights {
  std::vector<float> verb, noun, action;
  double gamma = 0.5;

  static ClassWeights from_manifest(const DatasetManifest& m, double gamma, std::ostream* warn = &std::cerr) {
    TaskCounts c = label_frequencies(m, "train");
    ClassWeights w;
    w.gamma = gamma;
    w.verb = class_weights_from_freq(c.verb, gamma, warn);
    w.noun = class_weights_from_freq(c.noun, gamma, warn);
    w.action = class_weights_from_freq(c.action, gamma, warn);
    return w;
  }
};

struct OptimizerConfig {
  double momentum = 0.9;
  double weight_decay = 0.001;  // decoupled
};

// Momentum SGD with decoupled weight decay. With momentum 0 and decay 0 this
// is plain gradient descent.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, OptimizerConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0f);
  }

  void step(double lr) {
    const float mu = static_cast<float>(cfg_.momentum);
    const float decay = static_cast<float>(lr * cfg_.weight_decay);
    const float rate = static_cast<float>(lr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& value = params_[i].values();
      const auto& grad = params_[i].grad();
      auto& vel = velocity_[i];
      for (std::size_t j = 0; j < value.size(); ++j) {
        vel[j] = mu * vel[j] + grad[j];
        value[j] -= rate * vel[j];
        value[j] -= decay * value[j];
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t param_count() const { return params_.size(); }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> velocity_;
  OptimizerConfig cfg_;
};

struct TrainOptions {
  std::size_t batch = 16;
  double gamma = 0.5;  // class weighting exponent
  std::uint64_t seed = 7;
  OptimizerConfig optimizer;
  std::ostream* warn = &std::cerr;
};

struct EpochMetrics {
  PhaseKind phase;
  std::size_t epoch;
  double lr, loss;
  double mt5r_verb, mt5r_noun, mt5r_action;
};

inline std::string metrics_header() { return "phase,epoch,lr,loss,val_mt5r_verb,val_mt5r_noun,val_mt5r_action"; }

inline std::string metrics_line(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g", to_string(m.phase).c_str(), m.epoch,
                m.lr, m.loss, m.mt5r_verb, m.mt5r_noun, m.mt5r_action);
  return buf;
}

inline EvalLabels labels_for(const std::vector<const SampleRecord*>& records) {
  EvalLabels l;
  for (const auto* r : records) {
    l.verb.push_back(r->verb);
    l.noun.push_back(r->noun);
    l.action.push_back(r->action);
  }
  return l;
}

// Windowed (anticipation-limited) inference over a split.
inline ScoreSet score_split(const AnticipationModel<float>& model, DatasetReader& reader,
                            const std::string& split, const std::string& model_id) {
  const auto records = reader.manifest().split(split);
  if (records.empty()) throw DataError("score_split: split '" + split + "' is empty");
  const ModelConfig& c = model.config();
  ScoreSet out;
  out.model_id = model_id;
  out.modality = to_string(c.modality);
  out.verb = Tensor({records.size(), c.verbs});
  out.noun = Tensor({records.size(), c.nouns});
  out.action = Tensor({records.size(), c.actions});
  for (std::size_t i = 0; i < records.size(); ++i) {
    out.sample_ids.push_back(records[i]->id);
    auto frames = window(reader, *records[i], c.modality, PhaseKind::evaluation);
    auto scores = model.predict(frames);
    std::copy(scores[0].values().begin(), scores[0].values().end(), out.verb.values().begin() + i * c.verbs);
    std::copy(scores[1].values().begin(), scores[1].values().end(), out.noun.values().begin() + i * c.nouns);
    std::copy(scores[2].values().begin(), scores[2].values().end(), out.action.values().begin() + i * c.actions);
  }
  return out;
}

// One training phase: epoch loop with FlatCosine scheduling, minibatch
// gradient accumulation, freeze and frame-visibility contracts, and a
// validation MT5R measurement per epoch.
inline std::vector<EpochMetrics> run_phase(AnticipationModel<float>& model, DatasetReader& reader,
                                           const PhaseSpec& spec, const TrainOptions& opt,
                                           std::ostream* log = nullptr) {
  const ModelConfig& mc = model.config();
  const DatasetManifest& manifest = reader.manifest();
  if (mc.verbs != manifest.cfg.verbs || mc.nouns != manifest.cfg.nouns || mc.actions != manifest.cfg.actions)
    throw ConfigError("model label spaces do not match dataset manifest");

  std::vector<const SampleRecord*> pool = manifest.split("train");
  if (spec.include_validation_in_train) {
    auto val = manifest.split("val");
    pool.insert(pool.end(), val.begin(), val.end());
  }
  if (pool.empty()) throw DataError("run_phase: empty training pool");

  ClassWeights weights;
  if (spec.class_weights_active) weights = ClassWeights::from_manifest(manifest, opt.gamma, opt.warn);

  std::vector<Tensor> params;
  ParamVisitor<float> collect = [&](const std::string&, Tensor& t) { params.push_back(t); };
  if (spec.backbone_trainable) model.visit_encoder_params(collect);
  model.visit_cell_params(collect);
  SgdOptimizer optimizer(std::move(params), opt.optimizer);

  const std::size_t expected_frames =
      spec.action_frames_visible ? manifest.cfg.frames : manifest.observed_frames();
  const auto val_records = manifest.split("val");
  const EvalLabels val_labels = labels_for(val_records);

  std::vector<EpochMetrics> history;
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    const double lr = flatcosine_lr(static_cast<double>(epoch), spec);
    Rng shuffle_rng(opt.seed * 1000003ULL + static_cast<std::uint64_t>(spec.name) * 7919ULL + epoch);
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t done = 0;
    Tape<float> tape;
    while (done < order.size()) {
      const std::size_t batch = std::min(opt.batch, order.size() - done);
      optimizer.zero_grad();
      for (std::size_t b = 0; b < batch; ++b) {
        const SampleRecord& rec = *pool[order[done + b]];
        auto frames = window(reader, rec, mc.modality, spec.name);
        if (frames.size() != expected_frames)
          throw ContractError("window returned " + std::to_string(frames.size()) + " frames, expected " +
                              std::to_string(expected_frames));
        tape.reset();
        TapeScope<float> scope(&tape);
        auto out = model.rollout(frames, !spec.backbone_trainable);
        const auto& fin = out.final_logits();
        auto loss = cross_entropy(reshape(fin[0], {1, mc.verbs}), {rec.verb},
                                  spec.class_weights_active ? weights.verb : std::vector<float>{});
        loss = add(loss, cross_entropy(reshape(fin[1], {1, mc.nouns}), {rec.noun},
                                       spec.class_weights_active ? weights.noun : std::vector<float>{}));
        loss = add(loss, cross_entropy(reshape(fin[2], {1, mc.actions}), {rec.action},
                                       spec.class_weights_active ? weights.action : std::vector<float>{}));
        if (out.has_aux) {
          loss = add(loss, cross_entropy(reshape(out.aux_verb_logits, {1, mc.verbs}), {rec.verb},
                                         spec.class_weights_active ? weights.verb : std::vector<float>{}));
          loss = add(loss, cross_entropy(reshape(out.aux_noun_logits, {1, mc.nouns}), {rec.noun},
                                         spec.class_weights_active ? weights.noun : std::vector<float>{}));
        }
        const double sample_loss = static_cast<double>(loss.item());
        if (!std::isfinite(sample_loss)) throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
        loss_sum += sample_loss;
        auto scaled = affine(loss, 1.0f / static_cast<float>(batch), 0.0f);
        tape.backward(scaled);
      }
      optimizer.step(lr);
      done += batch;
    }

    EpochMetrics m;
    m.phase = spec.name;
    m.epoch = epoch;
    m.lr = lr;
    m.loss = loss_sum / static_cast<double>(order.size());
    ScoreSet val_scores = score_split(model, reader, "val", "val");
    m.mt5r_verb = mt5r(val_scores.verb, val_labels.verb);
    m.mt5r_noun = mt5r(val_scores.noun, val_labels.noun);
    m.mt5r_action = mt5r(val_scores.action, val_labels.action);
    if (log) *log << metrics_line(m) << "\n" << std::flush;
    history.push_back(m);
  }
  return history;
}

inline std::vector<EpochMetrics> run_pipeline(
    AnticipationModel<float>& model, DatasetReader& reader, const std::vector<PhaseSpec>& phases,
    const TrainOptions& opt, std::ostream* log = nullptr,
    const std::function<void(const PhaseSpec&)>& after_phase = {}) {
  std::vector<EpochMetrics> all;
  for (const auto& phase : phases) {
    auto h = run_phase(model, reader, phase, opt, log);
    all.insert(all.end(), h.begin(), h.end());
    if (after_phase) after_phase(phase);
  }
  return all;
}

}  // namespace seer
