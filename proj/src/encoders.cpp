#include "dualpath/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_map>

#include "dualpath/errors.hpp"
#include "dualpath/ops.hpp"

namespace dualpath {

namespace {

// 1-D corner-aligned linear interpolation weights from n0 to n1 samples.
std::vector<std::vector<double>> interp_weights(std::size_t n0, std::size_t n1) {
  std::vector<std::vector<double>> w(n1, std::vector<double>(n0, 0.0));
  for (std::size_t i = 0; i < n1; ++i) {
    double src = n1 == 1 ? 0.5 * static_cast<double>(n0 - 1)
                         : static_cast<double>(i) * static_cast<double>(n0 - 1) / static_cast<double>(n1 - 1);
    auto lo = static_cast<std::size_t>(std::floor(src));
    lo = std::min(lo, n0 - 1);
    std::size_t hi = std::min(lo + 1, n0 - 1);
    double frac = src - static_cast<double>(lo);
    w[i][lo] += 1.0 - frac;
    w[i][hi] += frac;
  }
  return w;
}

void set_trainable(const std::vector<Parameter>& params, bool value) {
  for (auto p : params) p.set_trainable(value);
}

}  // namespace

Tensor interpolate_positional(const Tensor& pe, std::size_t target_grid) {
  if (pe.rank() != 2) throw DimensionError("positional grid must be [g*g, d], got " + shape_str(pe.shape()));
  const auto g0 = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(pe.dim(0)))));
  if (g0 * g0 != pe.dim(0) || g0 == 0) throw DimensionError("positional rows are not a square grid");
  if (target_grid == 0) throw DimensionError("target grid must be >= 1");
  if (g0 == target_grid) return pe;
  const auto w = interp_weights(g0, target_grid);
  const std::size_t n1 = target_grid * target_grid, n0 = g0 * g0;
  std::vector<double> m(n1 * n0, 0.0);
  for (std::size_t r = 0; r < target_grid; ++r)
    for (std::size_t c = 0; c < target_grid; ++c)
      for (std::size_t r0 = 0; r0 < g0; ++r0)
        for (std::size_t c0 = 0; c0 < g0; ++c0)
          m[(r * target_grid + c) * n0 + r0 * g0 + c0] = w[r][r0] * w[c][c0];
  return matmul(Tensor({n1, n0}, std::move(m)), pe);
}

// ---- visual ---------------------------------------------------------------

VisualEncoder::VisualEncoder(const VisualEncoderConfig& config, std::mt19937_64& rng) : config_(config) {
  if (config_.patch_size == 0 || config_.image_size % config_.patch_size != 0) {
    throw ConfigError("image size " + std::to_string(config_.image_size) + " is not a multiple of patch size " +
                      std::to_string(config_.patch_size));
  }
  if (config_.pos_grid == 0) config_.pos_grid = config_.grid();
  const std::size_t patch_dim = 3 * config_.patch_size * config_.patch_size;
  patch_embed_ = Linear(patch_dim, config_.width, rng);
  positional_ = random_normal({config_.pos_grid * config_.pos_grid, config_.width}, 0.5, rng);
  for (std::size_t i = 0; i < config_.depth; ++i) {
    blocks_.emplace_back(config_.width, config_.heads, config_.width * config_.mlp_ratio, rng, config_.qk_tied_gain);
  }
  set_trainable_last(config_.depth);
}

EncodedImage VisualEncoder::encode(const Tensor& images, bool retain_attention) const {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != 3) throw DimensionError("expected images [B,3,H,W], got " + shape_str(s));
  if (s[2] != config_.image_size || s[3] != config_.image_size) {
    throw DimensionError("expected " + std::to_string(config_.image_size) + "x" + std::to_string(config_.image_size) +
                         " images, got " + shape_str(s));
  }
  const std::size_t B = s[0], g = config_.grid(), p = config_.patch_size;
  Tensor patches = reshape(permute(reshape(images, {B, 3, g, p, g, p}), {0, 2, 4, 1, 3, 5}), {B, g * g, 3 * p * p});
  Tensor x = add(patch_embed_(patches), interpolate_positional(positional_, g));
  EncodedImage result;
  for (const auto& block : blocks_) {
    auto out = block(x);
    x = out.output;
    if (retain_attention) result.attention.push_back(out.weights);
  }
  result.tokens = x;
  return result;
}

void VisualEncoder::set_trainable_last(std::size_t last_blocks) {
  if (last_blocks > blocks_.size()) {
    throw ConfigError("cannot train last " + std::to_string(last_blocks) + " of " + std::to_string(blocks_.size()) +
                      " visual blocks");
  }
  std::vector<Parameter> emb;
  patch_embed_.collect(emb, "", ParamGroup::Backbone);
  emb.push_back({positional_, ParamGroup::Backbone, ""});
  set_trainable(emb, false);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    std::vector<Parameter> ps;
    blocks_[i].collect(ps, "", ParamGroup::Backbone);
    set_trainable(ps, i + last_blocks >= blocks_.size());
  }
}

void VisualEncoder::collect(std::vector<Parameter>& out, const std::string& prefix) const {
  patch_embed_.collect(out, prefix + ".patch_embed", ParamGroup::Backbone);
  out.push_back({positional_, ParamGroup::Backbone, prefix + ".positional"});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect(out, prefix + ".block" + std::to_string(i), ParamGroup::Backbone);
  }
}

// ---- vocabulary -----------------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{"<pad>", "<unk>"}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2 || tokens_[0] != "<pad>" || tokens_[1] != "<unk>") {
    throw FormatError("vocabulary must start with <pad>, <unk>");
  }
  for (std::size_t i = 2; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw FormatError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

std::vector<std::string> Vocabulary::tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::vector<std::string> words;
  for (const auto& t : texts) {
    for (auto& w : tokenize(t)) words.push_back(std::move(w));
  }
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  std::vector<std::string> tokens{"<pad>", "<unk>"};
  tokens.insert(tokens.end(), words.begin(), words.end());
  return Vocabulary(std::move(tokens));
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : tokenize(text)) {
    auto it = index_.find(w);
    ids.push_back(it == index_.end() ? kUnk : it->second);
  }
  return ids;
}

// ---- text -----------------------------------------------------------------

TextEncoder::TextEncoder(const TextEncoderConfig& config, Vocabulary vocab, std::mt19937_64& rng)
    : config_(config), vocab_(std::move(vocab)) {
  token_embedding_ = random_normal({vocab_.size(), config_.width}, 1.0, rng);
  positional_ = random_normal({config_.max_len, config_.width}, 0.1, rng);
  for (std::size_t i = 0; i < config_.depth; ++i) {
    blocks_.emplace_back(config_.width, config_.heads, config_.width * config_.mlp_ratio, rng);
  }
  final_norm_ = LayerNorm(config_.width);
  projection_ = random_normal({config_.width, config_.output_dim}, 1.0 / std::sqrt(static_cast<double>(config_.width)), rng);
  set_trainable_last(0);
}

Tensor TextEncoder::encode(std::string_view prompt) const {
  auto ids = vocab_.encode(prompt);
  if (ids.empty()) throw DimensionError("prompt has no tokens");
  if (ids.size() > config_.max_len) ids.resize(config_.max_len);
  const std::size_t L = ids.size();
  Tensor x = add(embedding(token_embedding_, ids), slice(positional_, 0, 0, L));
  x = reshape(x, {1, L, config_.width});
  for (const auto& block : blocks_) x = block(x).output;
  Tensor pooled = mean(final_norm_(x), 1);  // [1, width]
  return matmul(pooled, projection_);
}

Tensor TextEncoder::encode_many(const std::vector<std::string>& prompts) const {
  std::vector<Tensor> rows;
  rows.reserve(prompts.size());
  for (const auto& p : prompts) rows.push_back(encode(p));
  return concat(rows, 0);
}

void TextEncoder::set_trainable_last(std::size_t last_blocks) {
  if (last_blocks > blocks_.size()) {
    throw ConfigError("cannot train last " + std::to_string(last_blocks) + " of " + std::to_string(blocks_.size()) +
                      " text blocks");
  }
  std::vector<Parameter> fixed{{token_embedding_, ParamGroup::Backbone, ""},
                               {positional_, ParamGroup::Backbone, ""},
                               {projection_, ParamGroup::Backbone, ""}};
  final_norm_.collect(fixed, "", ParamGroup::Backbone);
  set_trainable(fixed, false);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    std::vector<Parameter> ps;
    blocks_[i].collect(ps, "", ParamGroup::Backbone);
    set_trainable(ps, i + last_blocks >= blocks_.size());
  }
}

void TextEncoder::collect(std::vector<Parameter>& out, const std::string& prefix) const {
  out.push_back({token_embedding_, ParamGroup::Backbone, prefix + ".token_embedding"});
  out.push_back({positional_, ParamGroup::Backbone, prefix + ".positional"});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect(out, prefix + ".block" + std::to_string(i), ParamGroup::Backbone);
  }
  final_norm_.collect(out, prefix + ".final_norm", ParamGroup::Backbone);
  out.push_back({projection_, ParamGroup::Backbone, prefix + ".projection"});
}

void apply_freeze_policy(VisualEncoder& encoder, const FreezePolicy& policy) {
  encoder.set_trainable_last(policy.visual_last);
}

void apply_freeze_policy(TextEncoder& encoder, const FreezePolicy& policy) {
  encoder.set_trainable_last(policy.text_last);
}

}  // namespace dualpath
