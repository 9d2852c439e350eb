#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dualpath/encoders.hpp"
#include "dualpath/nn.hpp"
#include "dualpath/optim.hpp"
#include "dualpath/tensor.hpp"

namespace dualpath {

inline constexpr std::size_t kGenderClasses = 3;
enum Gender : int { kMale = 0, kFemale = 1, kUnknown = 2 };

struct AttributeSpec {
  std::string name;
  std::size_t classes = 2;  // K_a
};

// How attribute queries are formed.
//  ClassLevel: one query per attribute from its class descriptions, shared by
//              the whole batch.
//  SampleLevel: one query per (sample, attribute) from the sample's own prompt.
enum class PromptMode { ClassLevel, SampleLevel };

struct ModelConfig {
  VisualEncoderConfig visual;
  TextEncoderConfig text;
  std::size_t joint_dim = 16;  // d
  std::vector<AttributeSpec> attributes;
  bool use_sca_path1 = true;
  bool use_sca_path2 = true;
  std::size_t sca_reduction = 4;
  std::size_t fusion_heads = 4;
  std::size_t attribute_heads = 4;
  double dropout = 0.2;
  // Tied query/key init gain for the attribute-path visual encoder only; see
  // VisualEncoderConfig::qk_tied_gain. The direct-path encoder never ties.
  double attribute_qk_gain = 0.0;
  PromptMode prompt_mode = PromptMode::ClassLevel;

  // Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

// ---- component modules ----------------------------------------------------

// Squeeze-excitation channel gate followed by a CBAM spatial gate.
struct ScaModule {
  Linear squeeze;      // d -> d/r
  Linear excite;       // d/r -> d
  Tensor conv_weight;  // [1, 2, 7, 7]
  Tensor conv_bias;    // [1]

  ScaModule() = default;
  ScaModule(std::size_t channels, std::size_t reduction, std::mt19937_64& rng);
  void collect(std::vector<Parameter>& out, const std::string& prefix) const;
};

// Test hook: replaces a computed gate with a constant.
struct GateOverride {
  std::optional<double> channel;
  std::optional<double> spatial;
};

struct FusionModule {
  MultiHeadAttention attention;
  LayerNorm norm;
  MlpHead head;

  FusionModule() = default;
  FusionModule(std::size_t dim, std::size_t heads, std::mt19937_64& rng);
  void collect(std::vector<Parameter>& out, const std::string& prefix) const;
};

struct PathOutput {
  Tensor embedding;  // [B, d]
  Tensor logits;     // [B, 3]
};

struct AttributeAttention {
  Tensor region;   // r^a [B, d]
  Tensor weights;  // [B, heads, 1, N]
};

struct FusionOutput {
  Tensor embedding;  // v_f [B, d]
  Tensor logits;     // [B, 3]
  Tensor attention;  // [B, heads, 2, 2]
};

struct Regularization {
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
  bool training = false;
};

// Z = T W_p + b_p, per token.
Tensor project_tokens(const Tensor& tokens, const Linear& projection);

// [B,N,d] <-> [B,d,g,g]
Tensor tokens_to_map(const Tensor& tokens, std::size_t grid);
Tensor map_to_tokens(const Tensor& feature_map);

// F' = (F * A_c(F)) * A_s + F, on a feature map [B,d,g,g].
Tensor sca(const Tensor& feature_map, const ScaModule& module, const GateOverride* gate_override = nullptr);

// v1 = token mean; logits from the direct gender head.
PathOutput path1_direct(const Tensor& tokens, const MlpHead& head, const Regularization& reg = {});

// Multi-head attention with Q = query [B|1, 1, d], K = V = tokens; no norm or residual.
AttributeAttention attend_attribute(const Tensor& query, const Tensor& tokens, const MultiHeadAttention& attention);

std::vector<Tensor> attribute_heads(const std::vector<Tensor>& regions, const std::vector<Linear>& heads);

// v2 = mean of the attribute regions; logits from the mediated gender head.
PathOutput aggregate_attributes(const std::vector<Tensor>& regions, const MlpHead& head,
                                const Regularization& reg = {});

// Two-token self-attention over [v1; v2] with residual and LayerNorm, mean
// pooled, then the fused gender head. No positional encoding, so the result is
// invariant to swapping v1 and v2.
FusionOutput fuse(const Tensor& v1, const Tensor& v2, const FusionModule& module, const Regularization& reg = {});

// ---- full model -----------------------------------------------------------

struct ForwardOutputs {
  Tensor gender_direct;    // g1 [B,3]
  Tensor gender_mediated;  // g2 [B,3]
  Tensor gender_fused;     // gf [B,3]
  std::vector<Tensor> attribute_logits;     // per attribute [B, K_a]
  std::vector<Tensor> attribute_attention;  // per attribute [B, heads, 1, N]
  Tensor fusion_attention;                  // [B, heads, 2, 2]
  std::vector<Tensor> visual_attention;     // attribute-path encoder, per block [B, heads, N, N]
  Tensor v_direct, v_mediated, v_fused;     // [B, d]
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // dropout stream, required when training with dropout
  bool retain_attention = false;
  const GateOverride* sca_override = nullptr;
};

class DualPathModel {
 public:
  // attribute_queries: one class-level prompt per configured attribute.
  DualPathModel(ModelConfig config, Vocabulary vocab, std::vector<std::string> attribute_queries,
                std::uint64_t seed);

  // images [B,3,H,W] already normalized. In SampleLevel mode sample_prompts
  // holds B rows of one prompt per attribute.
  ForwardOutputs forward(const Tensor& images, const ForwardOptions& options = {},
                         const std::vector<std::vector<std::string>>* sample_prompts = nullptr) const;

  // All parameters in a fixed order with stable names.
  std::vector<Parameter> parameters() const;
  void apply_freeze_policy(const FreezePolicy& policy);

  const ModelConfig& config() const { return config_; }
  const std::vector<std::string>& attribute_queries() const { return attribute_queries_; }
  const Vocabulary& vocabulary() const { return text_.vocabulary(); }

  const VisualEncoder& visual_direct() const { return visual1_; }
  const VisualEncoder& visual_attribute() const { return visual2_; }
  const TextEncoder& text_encoder() const { return text_; }
  MultiHeadAttention& attribute_attention() { return attr_attention_; }
  FusionModule& fusion() { return fusion_; }
  const std::optional<ScaModule>& sca_direct() const { return sca1_; }
  const std::optional<ScaModule>& sca_attribute() const { return sca2_; }

 private:
  Tensor refine(const Tensor& tokens, const std::optional<ScaModule>& module, const GateOverride* override) const;
  Tensor queries_for(std::size_t attribute, std::size_t batch,
                     const std::vector<std::vector<std::string>>* sample_prompts) const;

  ModelConfig config_;
  std::vector<std::string> attribute_queries_;
  VisualEncoder visual1_;
  VisualEncoder visual2_;
  TextEncoder text_;
  Linear proj1_, proj2_;
  std::optional<ScaModule> sca1_, sca2_;
  MlpHead head_direct_;
  MultiHeadAttention attr_attention_;
  std::vector<Linear> attr_heads_;
  MlpHead head_mediated_;
  FusionModule fusion_;
};

}  // namespace dualpath
