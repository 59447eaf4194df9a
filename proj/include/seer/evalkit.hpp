#pragma once

#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "seer/serialize.hpp"

namespace seer {

// Per-sample post-softmax class scores of one model over one split.
struct ScoreSet {
  std::string model_id;
  std::string modality;
  std::vector<std::string> sample_ids;
  Tensor verb, noun, action;  // each [n, classes]

  std::size_t size() const { return sample_ids.size(); }

  void validate() const {
    for (const Tensor* t : {&verb, &noun, &action}) {
      if (t->rank() != 2 || t->extent(0) != sample_ids.size())
        throw DataError("score set " + model_id + ": block shape " + shape_str(t->shape()) + " for " +
                        std::to_string(sample_ids.size()) + " samples");
      t->check_finite("score set");
      const std::size_t C = t->extent(1);
      for (std::size_t i = 0; i < t->extent(0); ++i) {
        float s = 0.0f;
        for (std::size_t c = 0; c < C; ++c) s += t->values()[i * C + c];
        if (std::abs(s - 1.0f) > 1e-5f)
          throw DataError("score set " + model_id + ": row " + std::to_string(i) + " sums to " + std::to_string(s));
      }
    }
  }

  void save(const std::string& path) const {
    validate();
    nlohmann::json j;
    j["format"] = "seer-scores-1";
    j["model_id"] = model_id;
    j["modality"] = modality;
    j["verbs"] = verb.extent(1);
    j["nouns"] = noun.extent(1);
    j["actions"] = action.extent(1);
    j["sample_ids"] = sample_ids;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open score set for writing: " + path);
    write_json_header(os, "SCR1", j.dump());
    write_tns(os, verb);
    write_tns(os, noun);
    write_tns(os, action);
    if (!os) throw DataError("score set write failed: " + path);
  }

  static ScoreSet load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open score set: " + path);
    auto j = nlohmann::json::parse(read_json_header(is, "SCR1"));
    if (j.value("format", "") != "seer-scores-1") throw DataError("unsupported score set format");
    ScoreSet s;
    s.model_id = j.at("model_id").get<std::string>();
    s.modality = j.at("modality").get<std::string>();
    s.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
    s.verb = read_tns(is);
    s.noun = read_tns(is);
    s.action = read_tns(is);
    s.validate();
    return s;
  }
};

// True iff the label's score ranks in the top k, ties resolved toward the
// lower class index.
inline bool in_top_k(const float* row, std::size_t classes, int label, std::size_t k) {
  const float ly = row[label];
  std::size_t rank = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (row[c] > ly) ++rank;
    else if (row[c] == ly && static_cast<int>(c) < label) ++rank;
  }
  return rank < k;
}

struct PerClassRecall {
  std::vector<int> classes;      // classes with at least one instance
  std::vector<double> recall;    // aligned with classes
};

inline PerClassRecall topk_recall_per_class(const Tensor& scores, const std::vector<int>& labels,
                                            std::size_t k = 5) {
  if (k < 1) throw ContractError("topk_recall_per_class: k must be >= 1");
  if (scores.rank() != 2 || scores.extent(0) != labels.size())
    throw DimensionError("topk_recall_per_class: scores " + shape_str(scores.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t C = scores.extent(1);
  std::vector<std::size_t> hits(C, 0), totals(C, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw DataError("topk_recall_per_class: label " + std::to_string(y) + " out of range");
    totals[static_cast<std::size_t>(y)]++;
    if (in_top_k(scores.values().data() + i * C, C, y, k)) hits[static_cast<std::size_t>(y)]++;
  }
  PerClassRecall out;
  for (std::size_t c = 0; c < C; ++c)
    if (totals[c] > 0) {
      out.classes.push_back(static_cast<int>(c));
      out.recall.push_back(static_cast<double>(hits[c]) / static_cast<double>(totals[c]));
    }
  return out;
}

// Mean top-k recall over the classes present in the evaluation labels.
inline double mt5r(const Tensor& scores, const std::vector<int>& labels, std::size_t k = 5) {
  if (labels.empty()) throw ContractError("mt5r: empty label set");
  PerClassRecall per = topk_recall_per_class(scores, labels, k);
  double acc = 0.0;
  for (double r : per.recall) acc += r;
  return acc / static_cast<double>(per.recall.size());
}

struct FusionSpec {
  std::vector<std::pair<std::string, double>> weights;  // model id -> weight

  double weight_for(const std::string& model_id) const {
    for (const auto& [id, w] : weights)
      if (id == model_id) {
        if (w <= 0.0) throw ConfigError("fusion weight for " + model_id + " must be positive");
        return w;
      }
    return 1.0;
  }
};

// Weighted mean of score vectors, renormalized per sample per task.
inline ScoreSet fuse(const std::vector<ScoreSet>& sets, const FusionSpec& spec = {}) {
  if (sets.empty()) throw ContractError("fuse: no score sets");
  const std::size_t n = sets[0].size();
  for (const auto& s : sets) {
    if (s.size() != n)
      throw DataError("fuse: sample count mismatch between " + sets[0].model_id + " and " + s.model_id);
    for (std::size_t i = 0; i < n; ++i)
      if (s.sample_ids[i] != sets[0].sample_ids[i])
        throw DataError("fuse: sample id mismatch at position " + std::to_string(i) + ": " +
                        sets[0].sample_ids[i] + " vs " + s.sample_ids[i]);
  }

  ScoreSet out;
  out.sample_ids = sets[0].sample_ids;
  std::string joined;
  bool same_modality = true;
  for (const auto& s : sets) {
    if (!joined.empty()) joined += "+";
    joined += s.model_id;
    if (s.modality != sets[0].modality) same_modality = false;
  }
  out.model_id = "fuse(" + joined + ")";
  out.modality = same_modality ? sets[0].modality : "mixed";

  auto fuse_block = [&](auto member) {
    const Tensor& first = sets[0].*member;
    const std::size_t C = first.extent(1);
    Tensor fused({n, C});
    for (const auto& s : sets) {
      const double w = spec.weight_for(s.model_id);
      const Tensor& block = s.*member;
      for (std::size_t i = 0; i < n * C; ++i)
        fused.values()[i] += static_cast<float>(w) * block.values()[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      float rowsum = 0.0f;
      for (std::size_t c = 0; c < C; ++c) rowsum += fused.values()[i * C + c];
      for (std::size_t c = 0; c < C; ++c) fused.values()[i * C + c] /= rowsum;
    }
    return fused;
  };
  out.verb = fuse_block(&ScoreSet::verb);
  out.noun = fuse_block(&ScoreSet::noun);
  out.action = fuse_block(&ScoreSet::action);
  return out;
}

struct EvalLabels {
  std::vector<int> verb, noun, action;  // aligned with ScoreSet sample order
};

struct ReportRow {
  std::string name;
  double mt5r_verb = 0.0, mt5r_noun = 0.0, mt5r_action = 0.0;
};

struct EnsembleSpec {
  std::string name;
  std::vector<std::string> member_ids;  // empty = all sets
  FusionSpec weights;
};

inline std::vector<ReportRow> ensemble_report(const std::vector<ScoreSet>& sets,
                                              const std::vector<EnsembleSpec>& specs,
                                              const EvalLabels& labels, std::size_t k = 5) {
  std::vector<ReportRow> rows;
  for (const auto& spec : specs) {
    std::vector<ScoreSet> members;
    if (spec.member_ids.empty()) {
      members = sets;
    } else {
      for (const auto& id : spec.member_ids) {
        bool found = false;
        for (const auto& s : sets)
          if (s.model_id == id) {
            members.push_back(s);
            found = true;
            break;
          }
        if (!found) throw DataError("ensemble spec " + spec.name + ": no score set named " + id);
      }
    }
    ScoreSet fused = fuse(members, spec.weights);
    rows.push_back({spec.name, mt5r(fused.verb, labels.verb, k), mt5r(fused.noun, labels.noun, k),
                    mt5r(fused.action, labels.action, k)});
  }
  return rows;
}

inline std::string report_table(const std::vector<ReportRow>& rows) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-40s %10s %10s %10s\n", "ensemble", "verb", "noun", "action");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-40s %10.4f %10.4f %10.4f\n", r.name.c_str(), r.mt5r_verb, r.mt5r_noun,
                  r.mt5r_action);
    out += buf;
  }
  return out;
}

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "ensemble,mt5r_verb,mt5r_noun,mt5r_action\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g\n", r.name.c_str(), r.mt5r_verb, r.mt5r_noun,
                  r.mt5r_action);
    out += buf;
  }
  return out;
}

}  // namespace seer
