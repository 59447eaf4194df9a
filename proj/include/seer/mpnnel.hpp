#pragma once

#include <optional>

#include "seer/layers.hpp"

namespace seer {

enum class EdgeKind { implicit, template_bank, class_token };

// Real-valued N x N adjacency bias; enters attention logits additively.
template <typename T>
struct EdgeEstimate {
  BasicTensor<T> a;  // [N, N]
  EdgeKind kind = EdgeKind::implicit;
};

// Frame feature map projected onto one vertex per spatial location,
// row-major spatial order.
template <typename T>
BasicTensor<T> build_vertices(const BasicTensor<T>& feat, const Dense<T>& proj) {
  if (feat.rank() != 3) throw DimensionError("build_vertices: feature " + shape_str(feat.shape()));
  const std::size_t C = feat.extent(0), HW = feat.extent(1) * feat.extent(2);
  // [C,H,W] -> [H*W, C]
  BasicTensor<T> grid({HW, C});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t p = 0; p < HW; ++p) grid.values()[p * C + c] = feat.values()[c * HW + p];
  if (taping_any<T>({&feat})) {
    grid.set_tracked();
    auto fd = feat.storage(), gd = grid.storage();
    Tape<T>::current()->record([fd, gd, C, HW] {
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < HW; ++p) fd->grad[c * HW + p] += gd->grad[p * C + c];
    });
  }
  return proj.apply(grid);
}

// Object-score variant: vertex k is the k-th learnable embedding scaled by
// its detection score.
template <typename T>
BasicTensor<T> build_obj_vertices(const BasicTensor<T>& scores, const BasicTensor<T>& embeddings) {
  if (scores.rank() != 1 || embeddings.rank() != 2 || scores.extent(0) != embeddings.extent(0))
    throw DimensionError("build_obj_vertices: scores " + shape_str(scores.shape()) + " with embeddings " +
                         shape_str(embeddings.shape()));
  return scale_rows(embeddings, scores);
}

template <typename T>
struct TemplateBank {
  BasicTensor<T> templates;  // [M, N, N]
  Dense<T> selector;         // pooled feature dim -> M

  TemplateBank() = default;

  TemplateBank(std::size_t count, std::size_t vertices, std::size_t feat_dim, Rng& rng)
      : selector(feat_dim, count, rng) {
    std::vector<T> w(count * vertices * vertices);
    for (auto& v : w) v = static_cast<T>(rng.normal() * 0.01);
    templates = BasicTensor<T>({count, vertices, vertices}, std::move(w));
    templates.set_tracked();
  }

  std::size_t count() const { return templates.extent(0); }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".templates", templates);
    selector.visit(prefix + ".selector", fn);
  }
};

// Soft-fused adjacency: softmax(selector(pooled feature)) mixes the bank.
template <typename T>
EdgeEstimate<T> edges_template_bank(const BasicTensor<T>& pooled_feat, const TemplateBank<T>& bank) {
  auto weights = softmax(bank.selector.apply(pooled_feat), 0);
  BasicTensor<T> a;
  for (std::size_t m = 0; m < bank.count(); ++m) {
    auto term = mul_scalar(slice0(bank.templates, m), index1d(weights, m));
    a = (m == 0) ? term : add(a, term);
  }
  return {a, EdgeKind::template_bank};
}

template <typename T>
struct ClassTokens {
  BasicTensor<T> verb_token;  // [D]
  BasicTensor<T> noun_token;  // [D]
  Dense<T> verb_head;         // D -> verb classes (auxiliary supervision)
  Dense<T> noun_head;         // D -> noun classes

  ClassTokens() = default;

  ClassTokens(std::size_t dim, std::size_t verbs, std::size_t nouns, Rng& rng)
      : verb_head(dim, verbs, rng), noun_head(dim, nouns, rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(dim));
    std::vector<T> vt(dim), nt(dim);
    for (auto& v : vt) v = static_cast<T>(rng.normal() * s);
    for (auto& v : nt) v = static_cast<T>(rng.normal() * s);
    verb_token = BasicTensor<T>({dim}, std::move(vt));
    noun_token = BasicTensor<T>({dim}, std::move(nt));
    verb_token.set_tracked();
    noun_token.set_tracked();
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".verb_token", verb_token);
    fn(prefix + ".noun_token", noun_token);
    verb_head.visit(prefix + ".verb_head", fn);
    noun_head.visit(prefix + ".noun_head", fn);
  }
};

// Outer product of scaled token affinities: A[i,j] = s_v[i] * s_n[j].
template <typename T>
EdgeEstimate<T> edges_class_token(const BasicTensor<T>& vertices, const ClassTokens<T>& tokens) {
  const std::size_t D = vertices.extent(1);
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(D));
  auto sv = affine(reshape(matmul(vertices, reshape(tokens.verb_token, {D, 1})), {vertices.extent(0)}),
                   inv_sqrt_d, T(0));
  auto sn = affine(reshape(matmul(vertices, reshape(tokens.noun_token, {D, 1})), {vertices.extent(0)}),
                   inv_sqrt_d, T(0));
  return {outer(sv, sn), EdgeKind::class_token};
}

template <typename T>
struct MessagePassParams {
  std::size_t dim = 64;
  std::size_t heads = 4;
  Dense<T> proj_q, proj_k, proj_v, proj_out;  // dim -> dim
  Dense<T> gate_update, gate_reset, candidate;  // 2*dim -> dim

  MessagePassParams() = default;

  MessagePassParams(std::size_t dim, std::size_t heads, Rng& rng)
      : dim(dim),
        heads(heads),
        proj_q(dim, dim, rng),
        proj_k(dim, dim, rng),
        proj_v(dim, dim, rng),
        proj_out(dim, dim, rng),
        gate_update(2 * dim, dim, rng),
        gate_reset(2 * dim, dim, rng),
        candidate(2 * dim, dim, rng) {
    if (heads == 0 || dim % heads != 0) throw ConfigError("message passing: dim must divide by heads");
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    proj_q.visit(prefix + ".q", fn);
    proj_k.visit(prefix + ".k", fn);
    proj_v.visit(prefix + ".v", fn);
    proj_out.visit(prefix + ".out", fn);
    gate_update.visit(prefix + ".gate_update", fn);
    gate_reset.visit(prefix + ".gate_reset", fn);
    candidate.visit(prefix + ".candidate", fn);
  }
};

// One message-passing round: multi-head self-attention over vertices (with an
// optional additive adjacency bias shared across heads) followed by a gated
// per-vertex update. Class tokens, when given, ride along as extra rows and
// their updated rows are returned through token_out.
template <typename T>
BasicTensor<T> message_pass(const BasicTensor<T>& state, const EdgeEstimate<T>* edges,
                            const MessagePassParams<T>& p, const ClassTokens<T>* tokens = nullptr,
                            BasicTensor<T>* token_out = nullptr) {
  if (state.rank() != 2 || state.extent(1) != p.dim)
    throw DimensionError("message_pass: state " + shape_str(state.shape()) + " for dim " + std::to_string(p.dim));
  const std::size_t N = state.extent(0);
  if (edges && (edges->a.rank() != 2 || edges->a.extent(0) != N || edges->a.extent(1) != N))
    throw DimensionError("message_pass: edge bias " + shape_str(edges->a.shape()) + " for " + std::to_string(N) +
                         " vertices");

  BasicTensor<T> rows = state;
  std::size_t extra = 0;
  if (tokens) {
    rows = concat0<T>({state, reshape(tokens->verb_token, {1, p.dim}), reshape(tokens->noun_token, {1, p.dim})});
    extra = 2;
  }
  const std::size_t Nf = N + extra;

  auto q = p.proj_q.apply(rows);
  auto k = p.proj_k.apply(rows);
  auto v = p.proj_v.apply(rows);

  BasicTensor<T> bias;
  if (edges) bias = extra ? pad2d_zero(edges->a, extra, extra) : edges->a;

  const std::size_t dh = p.dim / p.heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  BasicTensor<T> merged;
  for (std::size_t h = 0; h < p.heads; ++h) {
    auto qh = slice_cols(q, h * dh, (h + 1) * dh);
    auto kh = slice_cols(k, h * dh, (h + 1) * dh);
    auto vh = slice_cols(v, h * dh, (h + 1) * dh);
    auto logits = affine(matmul(qh, transpose(kh)), inv_sqrt, T(0));
    if (edges) logits = add(logits, bias);
    auto head = matmul(softmax(logits, 1), vh);
    merged = (h == 0) ? head : concat_cols(merged, head);
  }
  auto messages = p.proj_out.apply(merged);

  auto joint = concat_cols(rows, messages);
  auto z = sigmoid(p.gate_update.apply(joint));
  auto r = sigmoid(p.gate_reset.apply(joint));
  auto cand = tanh_act(p.candidate.apply(concat_cols(mul(r, rows), messages)));
  auto updated = add(mul(affine(z, T(-1), T(1)), rows), mul(z, cand));

  if (tokens) {
    if (token_out) *token_out = slice_rows(updated, N, Nf);
    return slice_rows(updated, 0, N);
  }
  if (token_out) *token_out = BasicTensor<T>();
  return updated;
}

// Mean over vertices followed by a classifier head.
template <typename T>
BasicTensor<T> readout(const BasicTensor<T>& state, const Dense<T>& head) {
  return head.apply(mean_rows(state));
}

}  // namespace seer
