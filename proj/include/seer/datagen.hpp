#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "seer/model.hpp"
#include "seer/serialize.hpp"

namespace seer {

enum class PhaseKind { warmup, ordinary, finetune, finetune_joint_val, evaluation };

inline std::string to_string(PhaseKind p) {
  switch (p) {
    case PhaseKind::warmup: return "warmup";
    case PhaseKind::ordinary: return "ordinary";
    case PhaseKind::finetune: return "finetune";
    case PhaseKind::finetune_joint_val: return "finetune_joint_val";
    case PhaseKind::evaluation: return "evaluation";
  }
  return "?";
}

struct GenConfig {
  std::uint64_t seed = 42;
  std::size_t train = 1200, val = 300, test = 300;
  std::size_t verbs = 6, nouns = 8, actions = 12;
  double zipf = 1.0;
  std::size_t active_actions = 0;  // 0 = all actions eligible
  std::size_t frames = 14;
  std::size_t hw = 16;
  std::size_t k_obj = 20;
};

struct SampleRecord {
  std::string id;
  std::string split;
  int verb = 0, noun = 0, action = 0;
};

struct TaskCounts {
  std::vector<std::size_t> verb, noun, action;
};

struct DatasetManifest {
  GenConfig cfg;
  std::vector<std::pair<int, int>> action_table;  // action id -> (verb, noun)
  std::vector<SampleRecord> samples;

  std::size_t observed_frames() const { return cfg.frames - 3; }

  std::vector<const SampleRecord*> split(const std::string& name) const {
    bool known = name == "train" || name == "val" || name == "test";
    if (!known) throw ConfigError("unknown split: " + name);
    std::vector<const SampleRecord*> out;
    for (const auto& s : samples)
      if (s.split == name) out.push_back(&s);
    return out;
  }

  nlohmann::json to_json() const {
    using nlohmann::json;
    json j;
    j["format"] = "seer-dataset-1";
    j["seed"] = cfg.seed;
    j["zipf"] = cfg.zipf;
    j["active_actions"] = cfg.active_actions;
    j["verbs"] = cfg.verbs;
    j["nouns"] = cfg.nouns;
    j["actions"] = cfg.actions;
    j["frames"] = cfg.frames;
    j["hw"] = cfg.hw;
    j["k_obj"] = cfg.k_obj;
    json table = json::array();
    for (auto& [v, n] : action_table) table.push_back({v, n});
    j["action_table"] = table;
    j["splits"] = {{"train", cfg.train}, {"val", cfg.val}, {"test", cfg.test}};
    j["shapes"] = {{"rgb", {cfg.frames, 3, cfg.hw, cfg.hw}},
                   {"flow", {cfg.frames, 2, cfg.hw, cfg.hw}},
                   {"flow_snippets", {cfg.frames, 10, cfg.hw, cfg.hw}},
                   {"obj", {cfg.frames, cfg.k_obj}},
                   {"masked_rgb", {cfg.frames, 3, cfg.hw, cfg.hw}}};
    json counts;
    for (const char* split : {"train", "val", "test"}) {
      TaskCounts c = count_labels(split);
      counts[split] = {{"verb", c.verb}, {"noun", c.noun}, {"action", c.action}};
    }
    j["counts"] = counts;
    json recs = json::array();
    for (const auto& s : samples)
      recs.push_back({{"id", s.id}, {"split", s.split}, {"verb", s.verb}, {"noun", s.noun}, {"action", s.action}});
    j["samples"] = recs;
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "seer-dataset-1") throw DataError("unsupported dataset manifest format");
    DatasetManifest m;
    m.cfg.seed = j.at("seed").get<std::uint64_t>();
    m.cfg.zipf = j.at("zipf").get<double>();
    m.cfg.active_actions = j.at("active_actions").get<std::size_t>();
    m.cfg.verbs = j.at("verbs").get<std::size_t>();
    m.cfg.nouns = j.at("nouns").get<std::size_t>();
    m.cfg.actions = j.at("actions").get<std::size_t>();
    m.cfg.frames = j.at("frames").get<std::size_t>();
    m.cfg.hw = j.at("hw").get<std::size_t>();
    m.cfg.k_obj = j.at("k_obj").get<std::size_t>();
    m.cfg.train = j.at("splits").at("train").get<std::size_t>();
    m.cfg.val = j.at("splits").at("val").get<std::size_t>();
    m.cfg.test = j.at("splits").at("test").get<std::size_t>();
    for (const auto& row : j.at("action_table"))
      m.action_table.emplace_back(row.at(0).get<int>(), row.at(1).get<int>());
    for (const auto& rec : j.at("samples")) {
      SampleRecord s;
      s.id = rec.at("id").get<std::string>();
      s.split = rec.at("split").get<std::string>();
      s.verb = rec.at("verb").get<int>();
      s.noun = rec.at("noun").get<int>();
      s.action = rec.at("action").get<int>();
      m.samples.push_back(std::move(s));
    }
    return m;
  }

  TaskCounts count_labels(const std::string& split_name) const {
    TaskCounts c;
    c.verb.assign(cfg.verbs, 0);
    c.noun.assign(cfg.nouns, 0);
    c.action.assign(cfg.actions, 0);
    for (const auto* s : split(split_name)) {
      c.verb[static_cast<std::size_t>(s->verb)]++;
      c.noun[static_cast<std::size_t>(s->noun)]++;
      c.action[static_cast<std::size_t>(s->action)]++;
    }
    return c;
  }
};

inline TaskCounts label_frequencies(const DatasetManifest& m, const std::string& split) {
  return m.count_labels(split);
}

// Distinct (verb, noun) pairs: a CRT-style walk that mixes both label spaces,
// falling back to a grid scan once the walk starts repeating.
inline std::vector<std::pair<int, int>> build_action_table(std::size_t verbs, std::size_t nouns,
                                                           std::size_t actions) {
  if (actions > verbs * nouns)
    throw ConfigError("action count " + std::to_string(actions) + " exceeds verb*noun grid " +
                      std::to_string(verbs * nouns));
  std::vector<std::pair<int, int>> table;
  std::vector<char> used(verbs * nouns, 0);
  for (std::size_t a = 0; a < actions; ++a) {
    std::size_t v = a % verbs, n = a % nouns;
    if (used[v * nouns + n]) {
      std::size_t cell = 0;
      while (used[cell]) ++cell;
      v = cell / nouns;
      n = cell % nouns;
    }
    used[v * nouns + n] = 1;
    table.emplace_back(static_cast<int>(v), static_cast<int>(n));
  }
  return table;
}

namespace detail {

// Snippet channel stack: frame t carries frames [t-4, t] concatenated along
// channels, repeating the first frame before the sequence start.
inline std::vector<Tensor> stack_flow_snippets_impl(const std::vector<Tensor>& flow) {
  if (flow.empty()) throw ContractError("stack_flow_snippets: empty sequence");
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < flow.size(); ++t) {
    std::vector<Tensor> parts;
    for (long j = static_cast<long>(t) - 4; j <= static_cast<long>(t); ++j)
      parts.push_back(flow[static_cast<std::size_t>(std::max(0L, j))]);
    out.push_back(concat0(parts));
  }
  return out;
}

}  // namespace detail

inline std::vector<Tensor> stack_flow_snippets(const std::vector<Tensor>& flow) {
  return detail::stack_flow_snippets_impl(flow);
}

// Writes manifest.json plus one TNS1 stream per sample per modality into
// <dir>/<split>/<id>.<modality>.tns. Fully determined by the seed.
inline DatasetManifest generate(const GenConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  if (cfg.actions > cfg.verbs * cfg.nouns)
    throw ConfigError("A=" + std::to_string(cfg.actions) + " exceeds V*N=" + std::to_string(cfg.verbs * cfg.nouns));
  const std::size_t active = cfg.active_actions == 0 ? cfg.actions : cfg.active_actions;
  if (active > cfg.actions) throw ConfigError("active_actions exceeds action count");
  for (std::size_t size : {cfg.train, cfg.val, cfg.test})
    if (size < active) throw ConfigError("split size must be at least the number of sampled actions");
  if (cfg.frames < 4) throw ConfigError("need at least 4 frames (3 are withheld)");

  DatasetManifest m;
  m.cfg = cfg;
  m.action_table = build_action_table(cfg.verbs, cfg.nouns, cfg.actions);

  Rng rng(cfg.seed);
  const std::size_t hw = cfg.hw, patch = 6;
  const std::size_t span = hw > patch + 2 ? hw - patch - 2 : 1;

  // Per-action planted templates: a context patch visible in observed frames
  // and a distinct action patch for the withheld tail.
  struct ActionTemplates {
    std::vector<float> rgb_ctx, rgb_act;    // [3,hw,hw]
    std::vector<float> flow_ctx, flow_act;  // [2,hw,hw]
    std::vector<double> obj_ctx, obj_act;   // Dirichlet base weights [k_obj]
  };
  auto plant_patch = [&](std::vector<float>& img, std::size_t channels, std::size_t a, std::uint64_t salt) {
    img.assign(channels * hw * hw, 0.0f);
    const std::size_t r0 = 1 + (a * 5 + salt) % span;
    const std::size_t c0 = 1 + (a * 7 + 3 * salt + 2) % span;
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < patch; ++i)
        for (std::size_t j = 0; j < patch; ++j)
          img[(c * hw + r0 + i) * hw + c0 + j] = static_cast<float>(rng.normal() * 1.5);
  };
  std::vector<ActionTemplates> tpl(cfg.actions);
  for (std::size_t a = 0; a < cfg.actions; ++a) {
    plant_patch(tpl[a].rgb_ctx, 3, a, 0);
    plant_patch(tpl[a].rgb_act, 3, a, 1);
    plant_patch(tpl[a].flow_ctx, 2, a, 0);
    plant_patch(tpl[a].flow_act, 2, a, 1);
    auto base = [&] {
      std::vector<double> w(cfg.k_obj);
      double mx = -1e30;
      for (auto& v : w) {
        v = rng.normal() * 2.0;
        mx = std::max(mx, v);
      }
      double denom = 0.0;
      for (auto& v : w) {
        v = std::exp(v - mx);
        denom += v;
      }
      for (auto& v : w) v /= denom;
      return w;
    };
    tpl[a].obj_ctx = base();
    tpl[a].obj_act = base();
  }

  // Labels: every eligible action appears at least once per split, the rest
  // follow a Zipf draw over the eligible set.
  std::vector<double> zipf_w(active);
  for (std::size_t a = 0; a < active; ++a) zipf_w[a] = 1.0 / std::pow(static_cast<double>(a + 1), cfg.zipf);
  auto draw_labels = [&](std::size_t size) {
    std::vector<int> labels(size);
    for (std::size_t i = 0; i < size; ++i)
      labels[i] = i < active ? static_cast<int>(i) : static_cast<int>(rng.discrete(zipf_w));
    rng.shuffle(labels);
    return labels;
  };

  fs::create_directories(dir);
  const std::array<std::pair<const char*, std::size_t>, 3> splits = {
      {{"train", cfg.train}, {"val", cfg.val}, {"test", cfg.test}}};
  for (const auto& [split_name, size] : splits) {
    fs::create_directories(fs::path(dir) / split_name);
    auto labels = draw_labels(size);
    for (std::size_t i = 0; i < size; ++i) {
      const int action = labels[i];
      SampleRecord rec;
      {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s_%05zu", split_name, i);
        rec.id = buf;
      }
      rec.split = split_name;
      rec.action = action;
      rec.verb = m.action_table[static_cast<std::size_t>(action)].first;
      rec.noun = m.action_table[static_cast<std::size_t>(action)].second;

      const auto& t = tpl[static_cast<std::size_t>(action)];
      std::vector<Tensor> rgb_frames, flow_frames, masked_frames;
      Tensor obj_stream({cfg.frames, cfg.k_obj});
      for (std::size_t f = 0; f < cfg.frames; ++f) {
        const bool action_window = f >= cfg.frames - 3;
        const float amp = 0.75f + 0.5f * static_cast<float>(f) / static_cast<float>(cfg.frames - 1);
        const auto& rgb_t = action_window ? t.rgb_act : t.rgb_ctx;
        const auto& flow_t = action_window ? t.flow_act : t.flow_ctx;
        const auto& obj_t = action_window ? t.obj_act : t.obj_ctx;

        Tensor rgb({3, hw, hw});
        for (std::size_t p = 0; p < rgb.numel(); ++p)
          rgb.values()[p] = amp * rgb_t[p] + 0.5f * static_cast<float>(rng.normal());
        Tensor flow({2, hw, hw});
        for (std::size_t p = 0; p < flow.numel(); ++p)
          flow.values()[p] = amp * flow_t[p] + 0.5f * static_cast<float>(rng.normal());

        // synthetic binary mask: a jittered rectangle
        Tensor masked({3, hw, hw});
        const std::size_t mr = rng.uniform_index(hw / 2), mc = rng.uniform_index(hw / 2);
        const std::size_t mh = hw / 2 + rng.uniform_index(hw / 4), mw = hw / 2 + rng.uniform_index(hw / 4);
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t r = 0; r < hw; ++r)
            for (std::size_t cc = 0; cc < hw; ++cc) {
              const bool inside = r >= mr && r < std::min(hw, mr + mh) && cc >= mc && cc < std::min(hw, mc + mw);
              masked.values()[(c * hw + r) * hw + cc] = inside ? rgb.values()[(c * hw + r) * hw + cc] : 0.0f;
            }

        const double conc = 40.0;
        std::vector<double> g(cfg.k_obj);
        double gs = 0.0;
        for (std::size_t k = 0; k < cfg.k_obj; ++k) {
          g[k] = rng.gamma(std::max(1e-3, conc * obj_t[k]));
          gs += g[k];
        }
        for (std::size_t k = 0; k < cfg.k_obj; ++k)
          obj_stream.values()[f * cfg.k_obj + k] = static_cast<float>(g[k] / gs);

        rgb_frames.push_back(std::move(rgb));
        flow_frames.push_back(std::move(flow));
        masked_frames.push_back(std::move(masked));
      }
      auto snippet_frames = stack_flow_snippets(flow_frames);

      auto stream_of = [&](const std::vector<Tensor>& frames) {
        std::vector<Tensor> expanded;
        for (const auto& fr : frames) {
          Shape s = fr.shape();
          s.insert(s.begin(), 1);
          expanded.push_back(reshape(fr, s));
        }
        return concat0(expanded);
      };
      const fs::path base = fs::path(dir) / split_name / rec.id;
      save_tensor(base.string() + ".rgb.tns", stream_of(rgb_frames));
      save_tensor(base.string() + ".flow.tns", stream_of(flow_frames));
      save_tensor(base.string() + ".flow_snippets.tns", stream_of(snippet_frames));
      save_tensor(base.string() + ".obj.tns", obj_stream);
      save_tensor(base.string() + ".masked_rgb.tns", stream_of(masked_frames));
      m.samples.push_back(std::move(rec));
    }
  }

  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw DataError("cannot write dataset manifest in " + dir);
  os << m.to_json().dump(2) << "\n";
  return m;
}

// Reads sample streams back with per-frame access accounting; the counters
// are how tests prove withheld frames stay untouched outside warmup.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& dir) : dir_(dir) {
    std::ifstream is(std::filesystem::path(dir) / "manifest.json");
    if (!is) throw DataError("dataset manifest not found in " + dir);
    manifest_ = DatasetManifest::from_json(nlohmann::json::parse(is));
    frame_reads_.assign(manifest_.cfg.frames, 0);
  }

  const DatasetManifest& manifest() const { return manifest_; }

  // First n_frames of one modality stream, as per-frame tensors.
  std::vector<Tensor> clip(const SampleRecord& s, Modality modality, std::size_t n_frames) {
    if (n_frames == 0 || n_frames > manifest_.cfg.frames)
      throw ContractError("clip: requested " + std::to_string(n_frames) + " of " +
                          std::to_string(manifest_.cfg.frames) + " frames");
    const Tensor& stream = load_stream(s, modality);
    const std::size_t block = stream.numel() / manifest_.cfg.frames;
    Shape frame_shape(stream.shape().begin() + 1, stream.shape().end());
    std::vector<Tensor> frames;
    for (std::size_t f = 0; f < n_frames; ++f) {
      ++frame_reads_[f];
      Tensor fr(frame_shape);
      std::copy_n(stream.values().begin() + f * block, block, fr.values().begin());
      frames.push_back(std::move(fr));
    }
    return frames;
  }

  const std::vector<std::uint64_t>& frame_reads() const { return frame_reads_; }
  void reset_frame_reads() { frame_reads_.assign(manifest_.cfg.frames, 0); }

  std::uint64_t withheld_frame_reads() const {
    std::uint64_t n = 0;
    for (std::size_t f = manifest_.observed_frames(); f < frame_reads_.size(); ++f) n += frame_reads_[f];
    return n;
  }

 private:
  const Tensor& load_stream(const SampleRecord& s, Modality modality) {
    const std::string key = s.id + "." + to_string(modality);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const auto path = std::filesystem::path(dir_) / s.split / (key + ".tns");
    Tensor t = load_tensor(path.string());
    if (t.extent(0) != manifest_.cfg.frames) throw DataError("stream frame count mismatch in " + path.string());
    return cache_.emplace(key, std::move(t)).first->second;
  }

  std::string dir_;
  DatasetManifest manifest_;
  std::map<std::string, Tensor> cache_;
  std::vector<std::uint64_t> frame_reads_;
};

// Clip windowing: warmup sees the whole recording, everything else stops at
// the anticipation boundary.
inline std::vector<Tensor> window(DatasetReader& reader, const SampleRecord& s, Modality modality,
                                  PhaseKind phase) {
  const std::size_t total = reader.manifest().cfg.frames;
  const std::size_t n = phase == PhaseKind::warmup ? total : reader.manifest().observed_frames();
  return reader.clip(s, modality, n);
}

}  // namespace seer
