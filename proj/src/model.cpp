#include "dualpath/model.hpp"

#include <cmath>

#include "dualpath/errors.hpp"
#include "dualpath/ops.hpp"
#include "dualpath/random.hpp"

namespace dualpath {

void ModelConfig::validate() const {
  if (attributes.empty()) throw ConfigError("attribute set must not be empty");
  for (const auto& a : attributes) {
    if (a.classes < 2) throw ConfigError("attribute '" + a.name + "' needs at least 2 classes");
  }
  if (joint_dim == 0 || joint_dim % fusion_heads != 0 || joint_dim % attribute_heads != 0) {
    throw ConfigError("joint dim " + std::to_string(joint_dim) + " not divisible by head counts");
  }
  if (joint_dim < 2) throw ConfigError("joint dim must be >= 2");
  if ((use_sca_path1 || use_sca_path2) && (sca_reduction == 0 || joint_dim % sca_reduction != 0)) {
    throw ConfigError("joint dim " + std::to_string(joint_dim) + " not divisible by SCA reduction " +
                      std::to_string(sca_reduction));
  }
  if (text.output_dim != joint_dim) throw ConfigError("text output dim must equal the joint dim");
  if (visual.width % visual.heads != 0) throw ConfigError("visual width not divisible by heads");
  if (!(attribute_qk_gain >= 0.0)) throw ConfigError("attribute-path query/key gain must be nonnegative");
  if (text.width % text.heads != 0) throw ConfigError("text width not divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
}

// ---- components -----------------------------------------------------------

ScaModule::ScaModule(std::size_t channels, std::size_t reduction, std::mt19937_64& rng) {
  if (reduction == 0 || channels % reduction != 0) {
    throw ConfigError("channels " + std::to_string(channels) + " not divisible by reduction " +
                      std::to_string(reduction));
  }
  squeeze = Linear(channels, channels / reduction, rng);
  excite = Linear(channels / reduction, channels, rng);
  conv_weight = random_normal({1, 2, 7, 7}, 1.0 / std::sqrt(98.0), rng);
  conv_bias = Tensor::zeros({1}, true);
}

void ScaModule::collect(std::vector<Parameter>& out, const std::string& prefix) const {
  squeeze.collect(out, prefix + ".squeeze", ParamGroup::NewModule);
  excite.collect(out, prefix + ".excite", ParamGroup::NewModule);
  out.push_back({conv_weight, ParamGroup::NewModule, prefix + ".conv.weight"});
  out.push_back({conv_bias, ParamGroup::NewModule, prefix + ".conv.bias"});
}

FusionModule::FusionModule(std::size_t dim, std::size_t heads, std::mt19937_64& rng)
    : attention(dim, heads, rng), norm(dim), head(dim, dim / 2, kGenderClasses, rng) {}

void FusionModule::collect(std::vector<Parameter>& out, const std::string& prefix) const {
  attention.collect(out, prefix + ".attention", ParamGroup::NewModule);
  norm.collect(out, prefix + ".norm", ParamGroup::NewModule);
  head.collect(out, prefix + ".head", ParamGroup::NewModule);
}

Tensor project_tokens(const Tensor& tokens, const Linear& projection) { return projection(tokens); }

Tensor tokens_to_map(const Tensor& tokens, std::size_t grid) {
  if (tokens.rank() != 3 || tokens.dim(1) != grid * grid) {
    throw DimensionError("tokens " + shape_str(tokens.shape()) + " do not form a " + std::to_string(grid) + "x" +
                         std::to_string(grid) + " grid");
  }
  const std::size_t B = tokens.dim(0), d = tokens.dim(2);
  return reshape(permute(tokens, {0, 2, 1}), {B, d, grid, grid});
}

Tensor map_to_tokens(const Tensor& feature_map) {
  const std::size_t B = feature_map.dim(0), d = feature_map.dim(1);
  const std::size_t n = feature_map.dim(2) * feature_map.dim(3);
  return permute(reshape(feature_map, {B, d, n}), {0, 2, 1});
}

Tensor sca(const Tensor& feature_map, const ScaModule& module, const GateOverride* gate_override) {
  if (feature_map.rank() != 4) throw DimensionError("sca expects [B,d,g,g], got " + shape_str(feature_map.shape()));
  const std::size_t B = feature_map.dim(0), d = feature_map.dim(1), h = feature_map.dim(2), w = feature_map.dim(3);
  if (module.excite.weight.dim(1) != d) throw ConfigError("SCA module width does not match feature map channels");

  Tensor channel_gate;  // [B,d,1,1]
  if (gate_override && gate_override->channel) {
    channel_gate = Tensor::full({B, d, 1, 1}, *gate_override->channel);
  } else {
    Tensor pooled = mean(reshape(feature_map, {B, d, h * w}), 2);  // [B,d]
    Tensor gate = sigmoid(module.excite(relu(module.squeeze(pooled))));
    channel_gate = reshape(gate, {B, d, 1, 1});
  }
  Tensor refined = mul(feature_map, channel_gate);

  Tensor spatial_gate;  // [B,1,h,w]
  if (gate_override && gate_override->spatial) {
    spatial_gate = Tensor::full({B, 1, h, w}, *gate_override->spatial);
  } else {
    Tensor desc = concat({max(refined, 1, true), mean(refined, 1, true)}, 1);  // [B,2,h,w]
    spatial_gate = sigmoid(conv2d(desc, module.conv_weight, module.conv_bias, 3));
  }
  return add(mul(refined, spatial_gate), feature_map);
}

PathOutput path1_direct(const Tensor& tokens, const MlpHead& head, const Regularization& reg) {
  Tensor v1 = mean(tokens, 1);
  return {v1, head(v1, reg.dropout, reg.rng, reg.training)};
}

AttributeAttention attend_attribute(const Tensor& query, const Tensor& tokens, const MultiHeadAttention& attention) {
  auto out = attention(query, tokens, tokens);
  const std::size_t B = out.output.dim(0), d = out.output.dim(2);
  return {reshape(out.output, {B, d}), out.weights};
}

std::vector<Tensor> attribute_heads(const std::vector<Tensor>& regions, const std::vector<Linear>& heads) {
  if (regions.size() != heads.size()) throw DimensionError("one attribute head per region required");
  std::vector<Tensor> logits;
  logits.reserve(regions.size());
  for (std::size_t a = 0; a < regions.size(); ++a) logits.push_back(heads[a](regions[a]));
  return logits;
}

PathOutput aggregate_attributes(const std::vector<Tensor>& regions, const MlpHead& head, const Regularization& reg) {
  if (regions.empty()) throw DimensionError("aggregate_attributes needs at least one attribute");
  Tensor total = regions.front();
  for (std::size_t a = 1; a < regions.size(); ++a) total = add(total, regions[a]);
  Tensor v2 = scale(total, 1.0 / static_cast<double>(regions.size()));
  return {v2, head(v2, reg.dropout, reg.rng, reg.training)};
}

FusionOutput fuse(const Tensor& v1, const Tensor& v2, const FusionModule& module, const Regularization& reg) {
  const std::size_t B = v1.dim(0), d = v1.dim(1);
  Tensor u = concat({reshape(v1, {B, 1, d}), reshape(v2, {B, 1, d})}, 1);  // [B,2,d]
  auto att = module.attention(u, u, u);
  Tensor h = module.norm(add(att.output, u));
  Tensor vf = mean(h, 1);
  if (reg.training && reg.dropout > 0.0) {
    if (!reg.rng) throw StateError("dropout requested without an RNG");
    vf = dropout(vf, reg.dropout, *reg.rng, true);
  }
  return {vf, module.head(vf, reg.dropout, reg.rng, reg.training), att.weights};
}

// ---- model ----------------------------------------------------------------

namespace {

VisualEncoder make_visual(const ModelConfig& c, std::uint64_t seed, const char* purpose, double qk_gain) {
  auto rng = make_rng(seed, purpose);
  VisualEncoderConfig vc = c.visual;
  vc.qk_tied_gain = qk_gain;
  return VisualEncoder(vc, rng);
}

TextEncoder make_text(const ModelConfig& c, Vocabulary vocab, std::uint64_t seed) {
  auto rng = make_rng(seed, "init.text");
  return TextEncoder(c.text, std::move(vocab), rng);
}

const ModelConfig& validated(const ModelConfig& c) {
  c.validate();
  return c;
}

}  // namespace

DualPathModel::DualPathModel(ModelConfig config, Vocabulary vocab, std::vector<std::string> attribute_queries,
                             std::uint64_t seed)
    : config_(std::move(config)),
      attribute_queries_(std::move(attribute_queries)),
      visual1_(make_visual(validated(config_), seed, "init.visual1", 0.0)),
      visual2_(make_visual(config_, seed, "init.visual2", config_.attribute_qk_gain)),
      text_(make_text(config_, std::move(vocab), seed)) {
  if (config_.prompt_mode == PromptMode::ClassLevel && attribute_queries_.size() != config_.attributes.size()) {
    throw ConfigError("need one class-level query per attribute (" + std::to_string(config_.attributes.size()) +
                      "), got " + std::to_string(attribute_queries_.size()));
  }
  const std::size_t d = config_.joint_dim;
  auto rng = make_rng(seed, "init.heads");
  proj1_ = Linear(config_.visual.width, d, rng);
  proj2_ = Linear(config_.visual.width, d, rng);
  if (config_.use_sca_path1) sca1_.emplace(d, config_.sca_reduction, rng);
  if (config_.use_sca_path2) sca2_.emplace(d, config_.sca_reduction, rng);
  head_direct_ = MlpHead(d, d / 2, kGenderClasses, rng);
  attr_attention_ = MultiHeadAttention(d, config_.attribute_heads, rng);
  for (const auto& a : config_.attributes) attr_heads_.emplace_back(d, a.classes, rng);
  head_mediated_ = MlpHead(d, d / 2, kGenderClasses, rng);
  fusion_ = FusionModule(d, config_.fusion_heads, rng);
}

Tensor DualPathModel::refine(const Tensor& tokens, const std::optional<ScaModule>& module,
                             const GateOverride* override) const {
  if (!module) return tokens;
  const std::size_t g = config_.visual.grid();
  return map_to_tokens(sca(tokens_to_map(tokens, g), *module, override));
}

Tensor DualPathModel::queries_for(std::size_t attribute, std::size_t batch,
                                  const std::vector<std::vector<std::string>>* sample_prompts) const {
  const std::size_t d = config_.joint_dim;
  if (config_.prompt_mode == PromptMode::ClassLevel) {
    return reshape(text_.encode(attribute_queries_[attribute]), {1, 1, d});
  }
  if (!sample_prompts || sample_prompts->size() != batch) {
    throw DimensionError("sample-level prompts required for every sample in the batch");
  }
  std::vector<std::string> prompts;
  prompts.reserve(batch);
  for (const auto& row : *sample_prompts) {
    if (row.size() != config_.attributes.size()) throw DimensionError("one prompt per attribute required");
    prompts.push_back(row[attribute]);
  }
  return reshape(text_.encode_many(prompts), {batch, 1, d});
}

ForwardOutputs DualPathModel::forward(const Tensor& images, const ForwardOptions& options,
                                      const std::vector<std::vector<std::string>>* sample_prompts) const {
  const double p = options.training ? config_.dropout : 0.0;
  if (options.training && p > 0.0 && !options.rng) throw StateError("training forward with dropout needs an RNG");
  Regularization reg{p, options.rng, options.training};
  ForwardOutputs out;

  // Path 1: direct visual hypothesis.
  auto enc1 = visual1_.encode(images, false);
  Tensor z1 = refine(project_tokens(enc1.tokens, proj1_), sca1_, options.sca_override);
  auto direct = path1_direct(z1, head_direct_, reg);

  // Path 2: text-queried attribute regions.
  auto enc2 = visual2_.encode(images, options.retain_attention);
  Tensor z2 = refine(project_tokens(enc2.tokens, proj2_), sca2_, options.sca_override);
  const std::size_t B = images.dim(0);
  std::vector<Tensor> regions;
  for (std::size_t a = 0; a < config_.attributes.size(); ++a) {
    auto att = attend_attribute(queries_for(a, B, sample_prompts), z2, attr_attention_);
    regions.push_back(att.region);
    out.attribute_attention.push_back(att.weights);
  }
  out.attribute_logits = attribute_heads(regions, attr_heads_);
  auto mediated = aggregate_attributes(regions, head_mediated_, reg);

  auto fused = fuse(direct.embedding, mediated.embedding, fusion_, reg);

  out.gender_direct = direct.logits;
  out.gender_mediated = mediated.logits;
  out.gender_fused = fused.logits;
  out.fusion_attention = fused.attention;
  out.visual_attention = std::move(enc2.attention);
  out.v_direct = direct.embedding;
  out.v_mediated = mediated.embedding;
  out.v_fused = fused.embedding;
  return out;
}

std::vector<Parameter> DualPathModel::parameters() const {
  std::vector<Parameter> ps;
  visual1_.collect(ps, "visual1");
  visual2_.collect(ps, "visual2");
  text_.collect(ps, "text");
  proj1_.collect(ps, "proj1", ParamGroup::NewModule);
  proj2_.collect(ps, "proj2", ParamGroup::NewModule);
  if (sca1_) sca1_->collect(ps, "sca1");
  if (sca2_) sca2_->collect(ps, "sca2");
  head_direct_.collect(ps, "head_direct", ParamGroup::NewModule);
  attr_attention_.collect(ps, "attr_attention", ParamGroup::NewModule);
  for (std::size_t a = 0; a < attr_heads_.size(); ++a) {
    attr_heads_[a].collect(ps, "attr_head." + config_.attributes[a].name, ParamGroup::NewModule);
  }
  head_mediated_.collect(ps, "head_mediated", ParamGroup::NewModule);
  fusion_.collect(ps, "fusion");
  return ps;
}

void DualPathModel::apply_freeze_policy(const FreezePolicy& policy) {
  if (policy.visual_last > visual1_.depth() || policy.text_last > text_.depth()) {
    throw ConfigError("freeze policy L_v=" + std::to_string(policy.visual_last) + ", L_t=" +
                      std::to_string(policy.text_last) + " exceeds encoder depth");
  }
  dualpath::apply_freeze_policy(visual1_, policy);
  dualpath::apply_freeze_policy(visual2_, policy);
  dualpath::apply_freeze_policy(text_, policy);
}

}  // namespace dualpath
