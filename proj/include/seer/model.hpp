#pragma once

#include <array>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "seer/horst.hpp"
#include "seer/mpnnel.hpp"
#include "seer/serialize.hpp"

namespace seer {

enum class CellKind { horst, mpnnel, mpnnel_tb, mpnnel_ctp };
enum class Modality { rgb, flow, flow_snippets, obj, masked_rgb };

inline std::string to_string(CellKind k) {
  switch (k) {
    case CellKind::horst: return "horst";
    case CellKind::mpnnel: return "mpnnel";
    case CellKind::mpnnel_tb: return "mpnnel_tb";
    case CellKind::mpnnel_ctp: return "mpnnel_ctp";
  }
  return "?";
}

inline CellKind cell_kind_from(const std::string& s) {
  if (s == "horst") return CellKind::horst;
  if (s == "mpnnel") return CellKind::mpnnel;
  if (s == "mpnnel_tb") return CellKind::mpnnel_tb;
  if (s == "mpnnel_ctp") return CellKind::mpnnel_ctp;
  throw ConfigError("unknown cell kind: " + s);
}

inline std::string to_string(Modality m) {
  switch (m) {
    case Modality::rgb: return "rgb";
    case Modality::flow: return "flow";
    case Modality::flow_snippets: return "flow_snippets";
    case Modality::obj: return "obj";
    case Modality::masked_rgb: return "masked_rgb";
  }
  return "?";
}

inline Modality modality_from(const std::string& s) {
  if (s == "rgb") return Modality::rgb;
  if (s == "flow") return Modality::flow;
  if (s == "flow_snippets") return Modality::flow_snippets;
  if (s == "obj") return Modality::obj;
  if (s == "masked_rgb") return Modality::masked_rgb;
  throw ConfigError("unknown modality: " + s);
}

inline bool modality_is_spatial(Modality m) { return m != Modality::obj; }

inline std::size_t modality_channels(Modality m) {
  switch (m) {
    case Modality::rgb:
    case Modality::masked_rgb: return 3;
    case Modality::flow: return 2;
    case Modality::flow_snippets: return 10;
    case Modality::obj: return 0;
  }
  return 0;
}

struct ModelConfig {
  CellKind cell = CellKind::horst;
  Modality modality = Modality::rgb;
  std::size_t verbs = 6;
  std::size_t nouns = 8;
  std::size_t actions = 12;
  std::size_t order = 4;       // HORST queue capacity S
  std::size_t templates = 8;   // template bank size M
  std::size_t heads = 4;       // attention heads
  std::size_t vertex_dim = 64; // MPNNEL vertex feature dim D
  std::size_t enc_channels = 32;
  std::size_t filter_k = 7;    // spatial filter kernel
  std::size_t k_obj = 20;      // object score vector length
  std::size_t frame_hw = 16;   // input frame side
  std::uint64_t seed = 1;
};

// Two stride-2 conv layers; 16x16 inputs become enc_channels x 4 x 4 maps.
template <typename T>
struct Encoder {
  Conv2dLayer<T> c1, c2;

  Encoder() = default;

  Encoder(std::size_t in_channels, std::size_t out_channels, Rng& rng)
      : c1(in_channels, 16, 3, 1, 2, rng), c2(16, out_channels, 3, 1, 2, rng) {}

  BasicTensor<T> apply(const BasicTensor<T>& frame) const {
    return tanh_act(c2.apply(tanh_act(c1.apply(frame))));
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    c1.visit(prefix + ".c1", fn);
    c2.visit(prefix + ".c2", fn);
  }
};

// Per-timestep verb/noun/action logits of one clip rollout; the anticipation
// prediction is the last observed step.
template <typename T>
struct RolloutOutput {
  std::vector<std::array<BasicTensor<T>, 3>> step_logits;  // [verb, noun, action]
  BasicTensor<T> aux_verb_logits, aux_noun_logits;         // class-token heads (ctp only)
  bool has_aux = false;

  const std::array<BasicTensor<T>, 3>& final_logits() const { return step_logits.back(); }
};

template <typename T>
class AnticipationModel {
 public:
  explicit AnticipationModel(const ModelConfig& cfg) : cfg_(cfg) {
    Rng rng(cfg.seed);
    const bool spatial = modality_is_spatial(cfg.modality);
    if (spatial) encoder_ = Encoder<T>(modality_channels(cfg.modality), cfg.enc_channels, rng);

    const std::size_t cell_in = spatial ? cfg.enc_channels : cfg.k_obj;
    if (cfg.cell == CellKind::horst) {
      if (spatial)
        horst_ = HorstCellParams<T>(cfg.order, cell_in, cfg.filter_k, rng);
      else
        horst1d_ = Horst1dParams<T>(cfg.order, cell_in, rng);
      head_dim_ = cell_in;
    } else {
      vertex_count_ = spatial ? feat_hw() * feat_hw() : cfg.k_obj;
      if (spatial) {
        vertex_proj_ = Dense<T>(cfg.enc_channels, cfg.vertex_dim, rng);
      } else {
        std::vector<T> e(cfg.k_obj * cfg.vertex_dim);
        const double s = 1.0 / std::sqrt(static_cast<double>(cfg.vertex_dim));
        for (auto& v : e) v = static_cast<T>(rng.normal() * s);
        obj_embeddings_ = BasicTensor<T>({cfg.k_obj, cfg.vertex_dim}, std::move(e));
        obj_embeddings_.set_tracked();
      }
      mp_ = MessagePassParams<T>(cfg.vertex_dim, cfg.heads, rng);
      if (cfg.cell == CellKind::mpnnel_tb)
        bank_ = TemplateBank<T>(cfg.templates, vertex_count_, cell_in, rng);
      if (cfg.cell == CellKind::mpnnel_ctp)
        tokens_ = ClassTokens<T>(cfg.vertex_dim, cfg.verbs, cfg.nouns, rng);
      head_dim_ = cfg.vertex_dim;
    }
    head_verb_ = Dense<T>(head_dim_, cfg.verbs, rng);
    head_noun_ = Dense<T>(head_dim_, cfg.nouns, rng);
    head_action_ = Dense<T>(head_dim_, cfg.actions, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t feat_hw() const { return cfg_.frame_hw / 4; }
  std::size_t vertex_count() const { return vertex_count_; }

  BasicTensor<T> encode_frame(const BasicTensor<T>& frame, bool frozen) const {
    if (!modality_is_spatial(cfg_.modality)) {
      if (frame.rank() != 1 || frame.extent(0) != cfg_.k_obj)
        throw ConfigError("encode_frame: obj frame " + shape_str(frame.shape()) + " expected [" +
                          std::to_string(cfg_.k_obj) + "]");
      return frame;  // identity pass-through for score vectors
    }
    if (frame.rank() != 3 || frame.extent(0) != modality_channels(cfg_.modality) ||
        frame.extent(1) != cfg_.frame_hw || frame.extent(2) != cfg_.frame_hw)
      throw ConfigError("encode_frame: frame " + shape_str(frame.shape()) + " does not match modality " +
                        to_string(cfg_.modality));
    if (frozen) {
      TapeScope<T> off(nullptr);
      return encoder_.apply(frame);
    }
    return encoder_.apply(frame);
  }

  RolloutOutput<T> rollout(const std::vector<BasicTensor<T>>& frames, bool encoder_frozen) const {
    if (frames.empty()) throw ContractError("rollout: empty clip");
    RolloutOutput<T> out;
    const bool spatial = modality_is_spatial(cfg_.modality);

    if (cfg_.cell == CellKind::horst) {
      StateQueue<T> queue(cfg_.order);
      for (const auto& frame : frames) {
        auto x = encode_frame(frame, encoder_frozen);
        BasicTensor<T> h = spatial ? horst_step(x, queue, horst_) : horst_step_1d(x, queue, horst1d_);
        auto pooled = spatial ? global_avg_pool(h) : h;
        out.step_logits.push_back({head_verb_.apply(pooled), head_noun_.apply(pooled), head_action_.apply(pooled)});
      }
      return out;
    }

    BasicTensor<T> state({vertex_count_, cfg_.vertex_dim});
    BasicTensor<T> token_rows;
    for (const auto& frame : frames) {
      auto feat = encode_frame(frame, encoder_frozen);
      auto incoming = spatial ? build_vertices(feat, vertex_proj_) : build_obj_vertices(feat, obj_embeddings_);
      auto merged = add(state, incoming);

      EdgeEstimate<T> edges;
      const EdgeEstimate<T>* edges_ptr = nullptr;
      if (cfg_.cell == CellKind::mpnnel_tb) {
        auto pooled = spatial ? global_avg_pool(feat) : feat;
        edges = edges_template_bank(pooled, bank_);
        edges_ptr = &edges;
      } else if (cfg_.cell == CellKind::mpnnel_ctp) {
        edges = edges_class_token(merged, tokens_);
        edges_ptr = &edges;
      }

      const bool with_tokens = cfg_.cell == CellKind::mpnnel_ctp;
      state = message_pass(merged, edges_ptr, mp_, with_tokens ? &tokens_ : nullptr,
                           with_tokens ? &token_rows : nullptr);
      out.step_logits.push_back({readout(state, head_verb_), readout(state, head_noun_), readout(state, head_action_)});
    }
    if (cfg_.cell == CellKind::mpnnel_ctp) {
      out.aux_verb_logits = tokens_.verb_head.apply(reshape(slice_rows(token_rows, 0, 1), {cfg_.vertex_dim}));
      out.aux_noun_logits = tokens_.noun_head.apply(reshape(slice_rows(token_rows, 1, 2), {cfg_.vertex_dim}));
      out.has_aux = true;
    }
    return out;
  }

  // Softmax scores of the final observed step; evaluated without taping.
  std::array<BasicTensor<T>, 3> predict(const std::vector<BasicTensor<T>>& frames) const {
    TapeScope<T> off(nullptr);
    auto out = rollout(frames, /*encoder_frozen=*/true);
    const auto& fin = out.final_logits();
    return {softmax(fin[0], 0), softmax(fin[1], 0), softmax(fin[2], 0)};
  }

  void visit_encoder_params(const ParamVisitor<T>& fn) {
    if (modality_is_spatial(cfg_.modality)) encoder_.visit("encoder", fn);
  }

  void visit_cell_params(const ParamVisitor<T>& fn) {
    const bool spatial = modality_is_spatial(cfg_.modality);
    if (cfg_.cell == CellKind::horst) {
      if (spatial)
        horst_.visit("cell", fn);
      else
        horst1d_.visit("cell", fn);
    } else {
      if (spatial)
        vertex_proj_.visit("vertex_proj", fn);
      else
        fn("obj_embeddings", obj_embeddings_);
      mp_.visit("cell", fn);
      if (cfg_.cell == CellKind::mpnnel_tb) bank_.visit("bank", fn);
      if (cfg_.cell == CellKind::mpnnel_ctp) tokens_.visit("tokens", fn);
    }
    head_verb_.visit("head.verb", fn);
    head_noun_.visit("head.noun", fn);
    head_action_.visit("head.action", fn);
  }

  void visit_params(const ParamVisitor<T>& fn) {
    visit_encoder_params(fn);
    visit_cell_params(fn);
  }

  // Direct access for tests and fine-grained wiring.
  HorstCellParams<T>& horst_params() { return horst_; }
  Horst1dParams<T>& horst1d_params() { return horst1d_; }
  MessagePassParams<T>& mp_params() { return mp_; }
  TemplateBank<T>& bank() { return bank_; }
  ClassTokens<T>& tokens() { return tokens_; }

 private:
  ModelConfig cfg_;
  Encoder<T> encoder_;
  HorstCellParams<T> horst_;
  Horst1dParams<T> horst1d_;
  Dense<T> vertex_proj_;
  BasicTensor<T> obj_embeddings_;
  MessagePassParams<T> mp_;
  TemplateBank<T> bank_;
  ClassTokens<T> tokens_;
  Dense<T> head_verb_, head_noun_, head_action_;
  std::size_t head_dim_ = 0;
  std::size_t vertex_count_ = 0;
};

// ---- checkpoints -----------------------------------------------------------
// Container: "CKP1" magic, JSON manifest (config + ordered param table), then
// one TNS1 block per parameter in manifest order.

inline void save_checkpoint(AnticipationModel<float>& model, const std::string& path) {
  using nlohmann::json;
  std::vector<std::pair<std::string, Tensor>> params;
  model.visit_params([&](const std::string& name, Tensor& t) { params.emplace_back(name, t); });

  const ModelConfig& c = model.config();
  json manifest;
  manifest["format"] = "seer-ckpt-1";
  manifest["cell"] = to_string(c.cell);
  manifest["modality"] = to_string(c.modality);
  manifest["verbs"] = c.verbs;
  manifest["nouns"] = c.nouns;
  manifest["actions"] = c.actions;
  manifest["order"] = c.order;
  manifest["templates"] = c.templates;
  manifest["heads"] = c.heads;
  manifest["vertex_dim"] = c.vertex_dim;
  manifest["enc_channels"] = c.enc_channels;
  manifest["filter_k"] = c.filter_k;
  manifest["k_obj"] = c.k_obj;
  manifest["frame_hw"] = c.frame_hw;
  manifest["seed"] = c.seed;
  json table = json::array();
  for (auto& [name, t] : params) table.push_back({{"name", name}, {"shape", t.shape()}});
  manifest["params"] = table;

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  write_json_header(os, "CKP1", manifest.dump());
  for (auto& [name, t] : params) write_tns(os, t);
  if (!os) throw DataError("checkpoint write failed: " + path);
}

inline AnticipationModel<float> load_checkpoint(const std::string& path) {
  using nlohmann::json;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  json manifest = json::parse(read_json_header(is, "CKP1"));
  if (manifest.value("format", "") != "seer-ckpt-1") throw ConfigError("unsupported checkpoint format");

  ModelConfig c;
  c.cell = cell_kind_from(manifest.at("cell").get<std::string>());
  c.modality = modality_from(manifest.at("modality").get<std::string>());
  c.verbs = manifest.at("verbs").get<std::size_t>();
  c.nouns = manifest.at("nouns").get<std::size_t>();
  c.actions = manifest.at("actions").get<std::size_t>();
  c.order = manifest.at("order").get<std::size_t>();
  c.templates = manifest.at("templates").get<std::size_t>();
  c.heads = manifest.at("heads").get<std::size_t>();
  c.vertex_dim = manifest.at("vertex_dim").get<std::size_t>();
  c.enc_channels = manifest.at("enc_channels").get<std::size_t>();
  c.filter_k = manifest.at("filter_k").get<std::size_t>();
  c.k_obj = manifest.at("k_obj").get<std::size_t>();
  c.frame_hw = manifest.at("frame_hw").get<std::size_t>();
  c.seed = manifest.at("seed").get<std::uint64_t>();

  AnticipationModel<float> model(c);
  std::size_t idx = 0;
  const auto& table = manifest.at("params");
  model.visit_params([&](const std::string& name, Tensor& t) {
    if (idx >= table.size()) throw ConfigError("checkpoint param table too short");
    const auto& entry = table[idx++];
    if (entry.at("name").get<std::string>() != name)
      throw ConfigError("checkpoint param order mismatch at " + name);
    Tensor loaded = read_tns(is);
    if (loaded.shape() != t.shape())
      throw ConfigError("checkpoint shape mismatch for " + name + ": " + shape_str(loaded.shape()) + " vs " +
                        shape_str(t.shape()));
    t.values() = loaded.values();
  });
  if (idx != table.size()) throw ConfigError("checkpoint param table too long");
  return model;
}

}  // namespace seer
