#include "dualpath/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dualpath/errors.hpp"

namespace dualpath {

namespace {

std::size_t grid_side(std::size_t n) {
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (g * g != n) throw DimensionError("token count " + std::to_string(n) + " is not a square grid");
  return g;
}

void normalize(std::vector<double>& v) {
  double s = 0.0;
  for (double& x : v) {
    x = std::max(x, 0.0);
    s += x;
  }
  if (s <= 0.0) throw NumericError("attention map has no mass");
  for (double& x : v) x /= s;
}

// Row block b of a [B, ...] tensor, as a tensor of the trailing shape.
Tensor batch_row(const Tensor& t, std::size_t b) {
  Shape tail(t.shape().begin() + 1, t.shape().end());
  const std::size_t n = shape_numel(tail);
  auto d = t.data().subspan(b * n, n);
  return Tensor(tail, std::vector<double>(d.begin(), d.end()));
}

}  // namespace

Tensor rollout_visual(const std::vector<Tensor>& layers) {
  if (layers.empty()) throw ValidationError("rollout needs at least one attention layer");
  const std::size_t N = layers.front().dim(-1);
  std::vector<double> R(N * N, 0.0);
  for (std::size_t i = 0; i < N; ++i) R[i * N + i] = 1.0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Tensor& A = layers[l];
    if (A.rank() != 3 || A.dim(1) != N || A.dim(2) != N)
      throw DimensionError("rollout layer " + std::to_string(l) + " has shape " + shape_str(A.shape()) +
                           ", expected [heads," + std::to_string(N) + "," + std::to_string(N) + "]");
    const std::size_t H = A.dim(0);
    std::vector<double> M(N * N, 0.0);
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t i = 0; i < N; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
          const double a = A[(h * N + i) * N + j];
          if (a < 0.0 || !std::isfinite(a))
            throw ValidationError("rollout layer " + std::to_string(l) + " has a negative or non-finite weight");
          row += a;
          M[i * N + j] += a / static_cast<double>(H);
        }
        if (std::abs(row - 1.0) > 1e-6)
          throw ValidationError("rollout layer " + std::to_string(l) + " head " + std::to_string(h) + " row " +
                                std::to_string(i) + " sums to " + std::to_string(row));
      }
    for (std::size_t i = 0; i < N; ++i) {
      M[i * N + i] += 1.0;
      double s = 0.0;
      for (std::size_t j = 0; j < N; ++j) s += M[i * N + j];
      for (std::size_t j = 0; j < N; ++j) M[i * N + j] /= s;
    }
    // R <- M R: the newest layer composes on the left.
    std::vector<double> next(N * N, 0.0);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t k = 0; k < N; ++k) {
        const double m = M[i * N + k];
        for (std::size_t j = 0; j < N; ++j) next[i * N + j] += m * R[k * N + j];
      }
    R = std::move(next);
  }
  return Tensor({N, N}, std::move(R));
}

AttentionMap attribute_map(const Tensor& cross_attention, const Tensor& rollout, const std::string& tag,
                           const std::string& sample_id) {
  if (cross_attention.rank() != 3 || cross_attention.dim(1) != 1)
    throw DimensionError("cross-attention must be [heads,1,N], got " + shape_str(cross_attention.shape()));
  const std::size_t H = cross_attention.dim(0), N = cross_attention.dim(2);
  if (rollout.rank() != 2 || rollout.dim(0) != N || rollout.dim(1) != N)
    throw DimensionError("rollout shape " + shape_str(rollout.shape()) + " does not match " + std::to_string(N) +
                         " tokens");
  std::vector<double> w(N, 0.0);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t j = 0; j < N; ++j) w[j] += cross_attention[h * N + j] / static_cast<double>(H);
  AttentionMap map;
  map.grid = grid_side(N);
  map.tag = tag;
  map.sample_id = sample_id;
  map.values.assign(N, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) map.values[j] += w[i] * rollout[i * N + j];
  normalize(map.values);
  return map;
}

GenderMap gender_map(const std::vector<AttentionMap>& attribute_maps, const Tensor& fusion_attention,
                     const std::vector<double>& weights) {
  if (attribute_maps.empty()) throw ValidationError("gender map needs at least one attribute map");
  if (!weights.empty() && weights.size() != attribute_maps.size())
    throw DimensionError("gender map weights do not match the attribute maps");
  if (fusion_attention.rank() != 3 || fusion_attention.dim(1) != 2 || fusion_attention.dim(2) != 2)
    throw DimensionError("fusion attention must be [heads,2,2], got " + shape_str(fusion_attention.shape()));
  const std::size_t H = fusion_attention.dim(0);
  double mass = 0.0;
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t q = 0; q < 2; ++q) mass += fusion_attention[(h * 2 + q) * 2 + 1];
  mass /= static_cast<double>(2 * H);

  GenderMap out;
  out.mediated_mass = mass;
  out.map.grid = attribute_maps.front().grid;
  out.map.tag = "gender-fused";
  out.map.sample_id = attribute_maps.front().sample_id;
  out.map.values.assign(out.map.grid * out.map.grid, 0.0);
  for (std::size_t a = 0; a < attribute_maps.size(); ++a) {
    if (attribute_maps[a].grid != out.map.grid) throw DimensionError("attribute maps differ in grid size");
    const double w = (weights.empty() ? 1.0 : weights[a]) * mass;
    for (std::size_t i = 0; i < out.map.values.size(); ++i) out.map.values[i] += w * attribute_maps[a].values[i];
  }
  normalize(out.map.values);
  return out;
}

double region_mass(const AttentionMap& map, const GridRegion& region) {
  double m = 0.0;
  for (std::size_t r = 0; r < map.grid; ++r)
    for (std::size_t c = 0; c < map.grid; ++c)
      if (region.contains(r, c)) m += map.at(r, c);
  return m;
}

Image8 heatmap_image(const AttentionMap& map) {
  Image8 img(map.grid, map.grid, 1);
  const double mx = *std::max_element(map.values.begin(), map.values.end());
  for (std::size_t i = 0; i < map.values.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(mx > 0 ? std::lround(map.values[i] / mx * 255.0) : 0);
  return img;
}

void write_heatmap(const AttentionMap& map, const std::filesystem::path& path) { write_pgm(path, heatmap_image(map)); }

Image8 overlay_image(const Image8& source, const AttentionMap& map) {
  if (source.channels != 3) throw FormatError("overlay source must be RGB");
  const Image8 heat = heatmap_image(map);
  Image8 out(source.width * 2, source.height, 3);
  for (std::size_t y = 0; y < source.height; ++y)
    for (std::size_t x = 0; x < source.width; ++x) {
      const std::size_t hx = x * map.grid / source.width, hy = y * map.grid / source.height;
      const double h = heat.at(hx, hy, 0);
      for (std::size_t c = 0; c < 3; ++c) {
        out.at(x, y, c) = source.at(x, y, c);
        const double tint = c == 0 ? h : 0.0;
        out.at(source.width + x, y, c) = static_cast<std::uint8_t>(std::lround(0.5 * source.at(x, y, c) + 0.5 * tint));
      }
    }
  return out;
}

void write_overlay(const Image8& source, const AttentionMap& map, const std::filesystem::path& path) {
  write_ppm(path, overlay_image(source, map));
}

void write_map_csv(const AttentionMap& map, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "row,col,value\n";
  for (std::size_t r = 0; r < map.grid; ++r)
    for (std::size_t c = 0; c < map.grid; ++c) out << r << ',' << c << ',' << map.at(r, c) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<SampleExplanation> explain_batch(const DualPathModel& model, const Tensor& images,
                                             const std::vector<std::string>& sample_ids,
                                             const std::vector<std::vector<std::string>>* sample_prompts) {
  const std::size_t B = images.dim(0);
  if (sample_ids.size() != B) throw DimensionError("one sample id per image is required");
  NoGradGuard guard;
  ForwardOptions opts;
  opts.retain_attention = true;
  const auto out = model.forward(images, opts, sample_prompts);
  std::vector<SampleExplanation> result(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<Tensor> layers;
    for (const auto& l : out.visual_attention) layers.push_back(batch_row(l, b));
    const Tensor R = rollout_visual(layers);
    for (std::size_t a = 0; a < out.attribute_attention.size(); ++a)
      result[b].attributes.push_back(attribute_map(batch_row(out.attribute_attention[a], b), R,
                                                   model.config().attributes[a].name, sample_ids[b]));
    result[b].gender = gender_map(result[b].attributes, batch_row(out.fusion_attention, b));
  }
  return result;
}

}  // namespace dualpath
