#pragma once

#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dualpath/nn.hpp"
#include "dualpath/optim.hpp"
#include "dualpath/tensor.hpp"

namespace dualpath {

// Mini CLIP-style encoders trained from scratch. Every encoder parameter is in
// ParamGroup::Backbone; FreezePolicy decides which of them train.

struct VisualEncoderConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t width = 32;  // token dimension d_v
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  // Side of the stored positional grid; 0 means "same as the token grid".
  // A different value is resampled bilinearly at encode time.
  std::size_t pos_grid = 0;
  // When positive, each block starts with key weights equal to its query
  // weights, both scaled by this gain, so initial attention favors each
  // token itself. 0 draws query and key independently.
  double qk_tied_gain = 0.0;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t tokens() const { return grid() * grid(); }
};

struct EncodedImage {
  Tensor tokens;                   // [B, g*g, d_v], no class token
  std::vector<Tensor> attention;   // per block [B, heads, N, N] when retained
};

// Bilinear (corner-aligned) resampling of a square positional grid
// pe[g0*g0, d] to [g1*g1, d]. Implemented as a fixed linear map, so gradients
// flow back to pe.
Tensor interpolate_positional(const Tensor& pe, std::size_t target_grid);

class VisualEncoder {
 public:
  VisualEncoder(const VisualEncoderConfig& config, std::mt19937_64& rng);

  // images [B,3,H,W] with H == W == image_size.
  EncodedImage encode(const Tensor& images, bool retain_attention = false) const;

  const VisualEncoderConfig& config() const { return config_; }
  std::size_t depth() const { return blocks_.size(); }
  const std::vector<TransformerBlock>& blocks() const { return blocks_; }

  // Trains exactly the last `last_blocks` blocks; embeddings stay frozen.
  void set_trainable_last(std::size_t last_blocks);
  void collect(std::vector<Parameter>& out, const std::string& prefix) const;

 private:
  VisualEncoderConfig config_;
  Linear patch_embed_;
  Tensor positional_;  // [pos_grid^2, d_v]
  std::vector<TransformerBlock> blocks_;
};

// Lowercase word/punctuation vocabulary harvested from prompt text.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);  // tokens[0..1] must be the reserved entries
  static Vocabulary build(const std::vector<std::string>& texts);

  // Lowercases, splits on whitespace, and emits each punctuation character as
  // its own token.
  static std::vector<std::string> tokenize(std::string_view text);

  std::vector<int> encode(std::string_view text) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct TextEncoderConfig {
  std::size_t width = 32;
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t max_len = 32;
  std::size_t output_dim = 16;  // joint dimension d
};

class TextEncoder {
 public:
  TextEncoder(const TextEncoderConfig& config, Vocabulary vocab, std::mt19937_64& rng);

  // Mean-pooled, projected embedding [1, d]. Unknown words map to UNK; the
  // prompt must contain at least one token.
  Tensor encode(std::string_view prompt) const;
  // Stacked encodings [n, d].
  Tensor encode_many(const std::vector<std::string>& prompts) const;

  const TextEncoderConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  std::size_t depth() const { return blocks_.size(); }
  const std::vector<TransformerBlock>& blocks() const { return blocks_; }

  void set_trainable_last(std::size_t last_blocks);
  void collect(std::vector<Parameter>& out, const std::string& prefix) const;

 private:
  TextEncoderConfig config_;
  Vocabulary vocab_;
  Tensor token_embedding_;  // [V, width]
  Tensor positional_;       // [max_len, width]
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_norm_;
  Tensor projection_;  // [width, d]
};

struct FreezePolicy {
  std::size_t visual_last = 4;  // L_v
  std::size_t text_last = 0;    // L_t
};

// Throws ConfigError when the policy asks for more blocks than exist.
void apply_freeze_policy(VisualEncoder& encoder, const FreezePolicy& policy);
void apply_freeze_policy(TextEncoder& encoder, const FreezePolicy& policy);

}  // namespace dualpath
