#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dualpath/corpus.hpp"
#include "dualpath/image.hpp"
#include "dualpath/model.hpp"
#include "dualpath/tensor.hpp"

namespace dualpath {

// g x g probability distribution over patch cells, row-major.
struct AttentionMap {
  std::size_t grid = 0;
  std::vector<double> values;
  std::string tag;        // attribute name or "gender-fused"
  std::string sample_id;

  double at(std::size_t row, std::size_t col) const { return values[row * grid + col]; }
};

// Plain rollout: per layer, mean over heads, add I, renormalize rows, then
// R = A_L ... A_1. Layers are [heads, N, N]; each input row must sum to 1
// within 1e-6 (ValidationError otherwise). Returns [N, N].
Tensor rollout_visual(const std::vector<Tensor>& layers);

// Head-mean cross-attention row w [heads, 1, N] composed with the rollout:
// map = w R, reshaped to g x g and renormalized.
AttentionMap attribute_map(const Tensor& cross_attention, const Tensor& rollout, const std::string& tag = "",
                           const std::string& sample_id = "");

struct GenderMap {
  AttentionMap map;
  double mediated_mass = 0.0;  // fusion attention on the attribute-path token
};

// Attribute maps averaged with the given weights (equal when empty), scaled by
// the fusion attention mass on token 2 of [v1; v2], renormalized. The direct
// path is globally pooled and contributes no spatial map.
GenderMap gender_map(const std::vector<AttentionMap>& attribute_maps, const Tensor& fusion_attention,
                     const std::vector<double>& weights = {});

// Mass of the map inside a patch-grid region.
double region_mass(const AttentionMap& map, const GridRegion& region);

// PGM with one pixel per cell scaled so max = 255.
Image8 heatmap_image(const AttentionMap& map);
void write_heatmap(const AttentionMap& map, const std::filesystem::path& path);
// Source image left; source blended with the upsampled heat in red right.
Image8 overlay_image(const Image8& source, const AttentionMap& map);
void write_overlay(const Image8& source, const AttentionMap& map, const std::filesystem::path& path);
// Rows "row,col,value".
void write_map_csv(const AttentionMap& map, const std::filesystem::path& path);

struct SampleExplanation {
  std::vector<AttentionMap> attributes;  // in configured attribute order
  GenderMap gender;
};

// Runs the model in eval mode with attention retained; one explanation per
// batch row. images [B,3,H,W] normalized.
std::vector<SampleExplanation> explain_batch(const DualPathModel& model, const Tensor& images,
                                             const std::vector<std::string>& sample_ids,
                                             const std::vector<std::vector<std::string>>* sample_prompts = nullptr);

}  // namespace dualpath
