#include "evfsam/prompt.hpp"

#include <cmath>

#include "evfsam/errors.hpp"
#include "evfsam/ops.hpp"

namespace evfsam {

Projector::Projector(ParameterStore& store, Initializer& init, const std::string& name, ParamGroup group,
                     std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim)
    : fc1_(make_linear(store, init, name + ".fc1", group, in_dim, hidden_dim)),
      fc2_(make_linear(store, init, name + ".fc2", group, hidden_dim, out_dim)) {}

Tensor Projector::operator()(const Tensor& x) const {
  if (x.rank() == 1) {
    if (x.dim(0) != in_dim())
      throw ShapeError("projector expects dim " + std::to_string(in_dim()) + ", got " + to_string(x.shape()));
    return reshape(fc2_(relu(fc1_(reshape(x, {1, x.dim(0)})))), {out_dim()});
  }
  if (x.rank() != 2 || x.dim(1) != in_dim())
    throw ShapeError("projector expects [B, " + std::to_string(in_dim()) + "], got " + to_string(x.shape()));
  return fc2_(relu(fc1_(x)));
}

Tensor SparsePromptEmbeddings::sample(std::size_t b) const {
  const std::size_t n = count(), d = tokens.dim(2);
  auto idx = std::make_shared<std::vector<std::size_t>>(n * d);
  for (std::size_t i = 0; i < n * d; ++i) (*idx)[i] = b * n * d + i;
  return gather(tokens, idx, {n, d});
}

std::vector<Scalar> coordinate_features(double x, double y, std::size_t dim) {
  if (dim % 4 != 0) throw ShapeError("coordinate feature dim must be a multiple of 4");
  std::vector<Scalar> f(dim);
  constexpr double pi = 3.141592653589793;
  for (std::size_t k = 0; k < dim / 4; ++k) {
    const double freq = pi * std::ldexp(1.0, static_cast<int>(k));
    f[4 * k + 0] = static_cast<Scalar>(std::sin(freq * x));
    f[4 * k + 1] = static_cast<Scalar>(std::cos(freq * x));
    f[4 * k + 2] = static_cast<Scalar>(std::sin(freq * y));
    f[4 * k + 3] = static_cast<Scalar>(std::cos(freq * y));
  }
  return f;
}

PromptEncoder::PromptEncoder(ParameterStore& store, Initializer& init, const std::string& name,
                             std::size_t prompt_dim)
    : dim_(prompt_dim) {
  if (prompt_dim % 4 != 0) throw ConfigError("prompt_dim must be a multiple of 4");
  const auto g = ParamGroup::PromptEncoder;
  point_embed_ = store.add(name + ".point_embed", g, init.normal({prompt_dim}, 1.0));
  corner_tl_embed_ = store.add(name + ".box_corner_tl_embed", g, init.normal({prompt_dim}, 1.0));
  corner_br_embed_ = store.add(name + ".box_corner_br_embed", g, init.normal({prompt_dim}, 1.0));
  no_mask_ = store.add(name + ".no_mask_embed", g, init.normal({prompt_dim}, 1.0));
}

Tensor PromptEncoder::tokens_for(const Tensor& evf_token, const GeometricPrompts& geometric,
                                 std::vector<TokenKind>& kinds) const {
  if (evf_token.rank() != 1 || evf_token.dim(0) != dim_)
    throw ShapeError("evf token must be [" + std::to_string(dim_) + "], got " + to_string(evf_token.shape()));
  auto check = [](double v) {
    if (!(v >= 0.0 && v <= 1.0))
      throw ValidationError("geometric prompt coordinate " + std::to_string(v) + " outside [0,1]");
  };
  std::vector<Tensor> rows;
  kinds.clear();
  auto push = [&](double x, double y, const Tensor& kind_embed, TokenKind kind) {
    check(x);
    check(y);
    rows.push_back(add(Tensor({dim_}, coordinate_features(x, y, dim_)), kind_embed));
    kinds.push_back(kind);
  };
  for (const auto& p : geometric.points) push(p.x, p.y, point_embed_, TokenKind::Point);
  for (const auto& b : geometric.boxes) {
    push(b.x0, b.y0, corner_tl_embed_, TokenKind::BoxCorner);
    push(b.x1, b.y1, corner_br_embed_, TokenKind::BoxCorner);
  }
  // The geometric block (empty without prompts) is the base the evf token is appended to.
  rows.push_back(evf_token);
  kinds.push_back(TokenKind::Evf);
  std::vector<Tensor> as_rows;
  for (const auto& r : rows) as_rows.push_back(reshape(r, {1, dim_}));
  return concat_rows(as_rows);
}

SparsePromptEmbeddings PromptEncoder::build(const Tensor& evf_token, const GeometricPrompts& geometric) const {
  SparsePromptEmbeddings out;
  Tensor t = tokens_for(evf_token, geometric, out.provenance);
  out.tokens = reshape(t, {1, t.dim(0), dim_});
  return out;
}

SparsePromptEmbeddings PromptEncoder::build_batch(const Tensor& evf_tokens,
                                                  const std::vector<GeometricPrompts>& geometric) const {
  if (evf_tokens.rank() != 2 || evf_tokens.dim(1) != dim_ || evf_tokens.dim(0) != geometric.size())
    throw ShapeError("build_batch: evf tokens " + to_string(evf_tokens.shape()) + " for " +
                     std::to_string(geometric.size()) + " prompt sets");
  SparsePromptEmbeddings out;
  std::vector<Tensor> parts;
  for (std::size_t b = 0; b < geometric.size(); ++b) {
    if (geometric[b].points.size() != geometric[0].points.size() ||
        geometric[b].boxes.size() != geometric[0].boxes.size())
      throw ShapeError("build_batch: every batch item needs the same prompt layout");
    std::vector<TokenKind> kinds;
    parts.push_back(tokens_for(row(evf_tokens, b), geometric[b], kinds));
    out.provenance = kinds;
  }
  const std::size_t n = parts[0].dim(0);
  out.tokens = reshape(concat_rows(parts), {geometric.size(), n, dim_});
  return out;
}

}  // namespace evfsam
