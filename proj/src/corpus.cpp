#include "dualpath/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_map>

#include "dualpath/csv.hpp"
#include "dualpath/errors.hpp"
#include "dualpath/random.hpp"

namespace dualpath {

namespace fs = std::filesystem;

const char* split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw FormatError("unknown split '" + std::string(text) + "'");
}

std::size_t attribute_column(std::string_view name) {
  for (std::size_t i = 0; i < kAllAttributes; ++i)
    if (kAttributeNames[i] == name) return i;
  throw ConfigError("unknown attribute '" + std::string(name) + "'");
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

int parse_int(const std::string& s, const std::string& what) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError("bad integer for " + what + ": '" + s + "'");
  return v;
}

std::optional<double> parse_optional(const std::string& s, const std::string& what) {
  if (s.empty()) return std::nullopt;
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
    throw FormatError("bad number for " + what + ": '" + s + "'");
  if (v < 0) throw FormatError(what + " must be nonnegative, got " + s);
  return v;
}

std::optional<double> parse_angle(const std::string& s) {
  auto v = parse_optional(s, "angle_deg");
  if (v && *v != 30.0 && *v != 60.0 && *v != 90.0) throw FormatError("angle_deg must be 30, 60 or 90, got " + s);
  return v;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::ofstream open_out(const fs::path& path) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string join_header(const std::vector<std::string>& header) {
  std::string s;
  for (const auto& h : header) s += (s.empty() ? "" : ",") + h;
  return s;
}

}  // namespace

// ---- corpus CSV -----------------------------------------------------------

const std::vector<std::string> kCorpusHeader = {
    "path",   "gender",   "hairstyle", "upper",  "lower",      "feet",     "accessories", "beard",
    "moustache", "prompt", "identity", "split", "distance_m", "height_m", "angle_deg",   "source"};

void write_corpus_csv(const fs::path& path, const std::vector<SampleRecord>& records) {
  auto out = open_out(path);
  out << join_header(kCorpusHeader) << '\n';
  for (const auto& r : records) {
    out << csv_field(r.path) << ',' << r.gender;
    for (int a : r.attributes) out << ',' << a;
    out << ',' << csv_field(r.prompt) << ',' << csv_field(r.identity) << ',' << split_name(r.split) << ','
        << format_optional(r.distance_m) << ',' << format_optional(r.height_m) << ','
        << format_optional(r.angle_deg) << ',' << csv_field(r.source) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<SampleRecord> read_corpus_csv(const fs::path& path) {
  const CsvTable table = read_csv(path, kCorpusHeader);
  std::vector<SampleRecord> records;
  records.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    SampleRecord r;
    r.path = row[0];
    const std::string where = path.string() + " row " + std::to_string(i + 1);
    r.gender = parse_int(row[1], "gender in " + where);
    if (r.gender < 0 || r.gender > 2) throw LabelError(where + ": gender must be 0, 1 or 2");
    for (std::size_t a = 0; a < kAllAttributes; ++a) {
      r.attributes[a] = parse_int(row[2 + a], kAttributeNames[a] + " in " + where);
      if (r.attributes[a] < 0 && r.attributes[a] != kNoLabel)
        throw LabelError(where + ": " + kAttributeNames[a] + " must be >= 0 or -100");
    }
    r.prompt = row[9];
    r.identity = row[10];
    r.split = parse_split(row[11]);
    r.distance_m = parse_optional(row[12], "distance_m in " + where);
    r.height_m = parse_optional(row[13], "height_m in " + where);
    r.angle_deg = parse_angle(row[14]);
    r.source = row[15];
    records.push_back(std::move(r));
  }
  return records;
}

void validate_labels(const std::vector<SampleRecord>& records, const std::vector<AttributeSpec>& attributes) {
  for (const auto& r : records) {
    if (r.gender < 0 || r.gender > 2) throw LabelError(r.path + ": gender must be 0, 1 or 2");
    for (const auto& spec : attributes) {
      const int v = r.attribute(spec.name);
      if (v != kNoLabel && (v < 0 || static_cast<std::size_t>(v) >= spec.classes))
        throw LabelError(r.path + ": " + spec.name + " index " + std::to_string(v) + " outside [0, " +
                         std::to_string(spec.classes) + ")");
    }
  }
}

void check_split_hygiene(const std::vector<SampleRecord>& records) {
  std::unordered_map<std::string, Split> seen;
  for (const auto& r : records) {
    auto [it, inserted] = seen.emplace(r.identity, r.split);
    if (!inserted && it->second != r.split)
      throw LeakageError("identity '" + r.identity + "' appears in both " + split_name(it->second) + " and " +
                         split_name(r.split));
  }
}

void load_pixels(std::vector<SampleRecord>& records, const fs::path& root) {
  for (auto& r : records)
    if (!r.pixels) r.pixels = read_ppm(root / r.path);
}

// ---- prompt vocabulary ----------------------------------------------------

const std::vector<std::string> PromptVocabulary::kHeader = {"attribute", "class_index", "description"};

void PromptVocabulary::add(const std::string& attribute, int class_index, const std::string& description) {
  if (class_index < 0) throw FormatError("prompt class index must be >= 0 for " + attribute);
  auto [it, inserted] = rows_[attribute].emplace(class_index, description);
  if (!inserted)
    throw FormatError("duplicate prompt for (" + attribute + ", " + std::to_string(class_index) + ")");
}

PromptVocabulary PromptVocabulary::load(const fs::path& path) {
  const CsvTable table = read_csv(path, kHeader);
  PromptVocabulary vocab;
  for (const auto& row : table.rows) vocab.add(row[0], parse_int(row[1], "class_index in " + path.string()), row[2]);
  return vocab;
}

void PromptVocabulary::save(const fs::path& path) const {
  auto out = open_out(path);
  out << join_header(kHeader) << '\n';
  for (const auto& [attr, classes] : rows_)
    for (const auto& [k, text] : classes) out << csv_field(attr) << ',' << k << ',' << csv_field(text) << '\n';
}

void PromptVocabulary::validate(const std::vector<AttributeSpec>& attributes) const {
  for (const auto& spec : attributes) {
    auto it = rows_.find(spec.name);
    for (std::size_t k = 0; k < spec.classes; ++k)
      if (it == rows_.end() || !it->second.count(static_cast<int>(k)))
        throw ConfigError("prompt vocabulary lacks (" + spec.name + ", " + std::to_string(k) + ")");
    for (const auto& [k, text] : it->second)
      if (static_cast<std::size_t>(k) >= spec.classes)
        throw ConfigError("prompt vocabulary has (" + spec.name + ", " + std::to_string(k) + ") beyond K = " +
                          std::to_string(spec.classes));
  }
}

const std::string& PromptVocabulary::description(const std::string& attribute, int class_index) const {
  auto it = rows_.find(attribute);
  if (it != rows_.end()) {
    auto jt = it->second.find(class_index);
    if (jt != it->second.end()) return jt->second;
  }
  throw ConfigError("no prompt for (" + attribute + ", " + std::to_string(class_index) + ")");
}

std::string PromptVocabulary::class_query(const std::string& attribute) const {
  auto it = rows_.find(attribute);
  if (it == rows_.end()) throw ConfigError("no prompts for attribute " + attribute);
  std::string q;
  for (const auto& [k, text] : it->second) q += (q.empty() ? "" : ", ") + text;
  return q;
}

std::vector<std::string> PromptVocabulary::texts() const {
  std::vector<std::string> out;
  for (const auto& [attr, classes] : rows_)
    for (const auto& [k, text] : classes) out.push_back(text);
  out.push_back(neutral_);
  return out;
}

std::string compose_prompt(const SampleRecord& record, const PromptVocabulary& vocab,
                           const std::vector<AttributeSpec>& attributes, MissingPromptMode mode) {
  std::string prompt;
  bool missing = false;
  for (const auto& spec : attributes) {
    const int v = record.attribute(spec.name);
    if (v == kNoLabel) {
      missing = true;
      continue;
    }
    prompt += (prompt.empty() ? "" : ", ") + vocab.description(spec.name, v);
  }
  if (missing && mode == MissingPromptMode::Neutral) prompt += (prompt.empty() ? "" : ", ") + vocab.neutral();
  return prompt;
}

std::string prompt_or_neutral(const std::string& prompt, const PromptVocabulary& vocab) {
  return prompt.empty() ? vocab.neutral() : prompt;
}

// ---- harmonization --------------------------------------------------------

const std::vector<std::string> OntologyMapping::kHeader = {"attribute", "source", "native_class", "unified_index"};

void OntologyMapping::add(const std::string& attribute, const std::string& source, const std::string& native,
                          int unified) {
  if (unified < 0 && unified != kNoLabel)
    throw FormatError("unified index must be >= 0 or -100 for (" + attribute + ", " + source + ", " + native + ")");
  if (map_.count({attribute, source, native}))
    throw FormatError("duplicate mapping for (" + attribute + ", " + source + ", " + native + ")");
  const bool sink = unified == kNoLabel || (attribute == "gender" && unified == kUnknown);
  if (!sink) {
    for (const auto& [key, value] : map_) {
      if (std::get<0>(key) == attribute && std::get<1>(key) == source && value == unified)
        throw FormatError("index collision: " + attribute + "/" + source + " natives '" + std::get<2>(key) +
                          "' and '" + native + "' both map to " + std::to_string(unified));
    }
  }
  map_[{attribute, source, native}] = unified;
}

OntologyMapping OntologyMapping::load(const fs::path& path) {
  const CsvTable table = read_csv(path, kHeader);
  OntologyMapping m;
  for (const auto& row : table.rows) m.add(row[0], row[1], row[2], parse_int(row[3], "unified_index"));
  return m;
}

std::optional<int> OntologyMapping::lookup(const std::string& attribute, const std::string& source,
                                           const std::string& native) const {
  auto it = map_.find({attribute, source, native});
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

const std::vector<std::string> kRawHeader = {
    "path",        "source", "identity",  "split", "gender",     "hairstyle", "upper",    "lower",
    "feet",        "accessories", "beard", "moustache", "distance_m", "height_m",  "angle_deg"};

std::vector<RawRecord> read_raw_csv(const fs::path& path) {
  const CsvTable table = read_csv(path, kRawHeader);
  std::vector<RawRecord> rows;
  for (const auto& row : table.rows) {
    RawRecord r;
    r.path = row[0];
    r.source = row[1];
    r.identity = row[2];
    r.split = row[3];
    r.gender = row[4];
    for (std::size_t a = 0; a < kAllAttributes; ++a) r.attributes[a] = row[5 + a];
    r.distance_m = row[12];
    r.height_m = row[13];
    r.angle_deg = row[14];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::size_t AuditReport::split_total(Split split) const {
  std::size_t n = 0;
  for (const auto& [key, counts] : gender_counts)
    if (key.second == split) n += counts[0] + counts[1] + counts[2];
  return n;
}

bool AuditReport::totals_consistent() const {
  return split_total(Split::Train) + split_total(Split::Val) + split_total(Split::Test) == total;
}

void AuditReport::write(const fs::path& dir) const {
  fs::create_directories(dir);
  {
    auto out = open_out(dir / "audit.csv");
    out << "source,split,male,female,unknown,total\n";
    std::map<Split, std::array<std::size_t, 3>> per_split;
    for (const auto& [key, c] : gender_counts) {
      out << csv_field(key.first) << ',' << split_name(key.second) << ',' << c[0] << ',' << c[1] << ',' << c[2]
          << ',' << c[0] + c[1] + c[2] << '\n';
      auto& s = per_split[key.second];
      for (int i = 0; i < 3; ++i) s[i] += c[i];
    }
    std::array<std::size_t, 3> all{};
    for (const auto& [split, c] : per_split) {
      out << "ALL," << split_name(split) << ',' << c[0] << ',' << c[1] << ',' << c[2] << ',' << c[0] + c[1] + c[2]
          << '\n';
      for (int i = 0; i < 3; ++i) all[i] += c[i];
    }
    out << "ALL,ALL," << all[0] << ',' << all[1] << ',' << all[2] << ',' << all[0] + all[1] + all[2] << '\n';
  }
  {
    auto out = open_out(dir / "audit_summary.csv");
    out << "split_sum,record_count,consistent\n";
    out << split_total(Split::Train) + split_total(Split::Val) + split_total(Split::Test) << ',' << total << ','
        << (totals_consistent() ? "true" : "false") << '\n';
  }
  {
    auto out = open_out(dir / "attributes.csv");
    out << "attribute,source,unified_index,count\n";
    for (const auto& [key, n] : attribute_counts)
      out << std::get<0>(key) << ',' << csv_field(std::get<1>(key)) << ',' << std::get<2>(key) << ',' << n << '\n';
  }
  {
    auto out = open_out(dir / "unmapped.csv");
    out << "attribute,source,native_class,count\n";
    for (const auto& [key, n] : unmapped)
      out << std::get<0>(key) << ',' << csv_field(std::get<1>(key)) << ',' << csv_field(std::get<2>(key)) << ','
          << n << '\n';
  }
}

HarmonizeResult harmonize(const std::vector<RawRecord>& rows, const OntologyMapping& mapping,
                          const PromptVocabulary& vocab, const std::vector<AttributeSpec>& attributes,
                          MissingPromptMode mode) {
  vocab.validate(attributes);
  HarmonizeResult result;
  auto& audit = result.audit;
  for (const auto& raw : rows) {
    SampleRecord r;
    r.path = raw.path;
    r.source = raw.source;
    r.identity = raw.identity;
    r.split = parse_split(raw.split);
    r.distance_m = parse_optional(raw.distance_m, "distance_m of " + raw.path);
    r.height_m = parse_optional(raw.height_m, "height_m of " + raw.path);
    r.angle_deg = parse_angle(raw.angle_deg);

    r.gender = kUnknown;
    if (!raw.gender.empty()) {
      auto g = mapping.lookup("gender", raw.source, raw.gender);
      if (!g) {
        ++audit.unmapped[{"gender", raw.source, raw.gender}];
      } else if (*g == kMale || *g == kFemale) {
        r.gender = *g;
      } else if (*g != kUnknown && *g != kNoLabel) {
        throw LabelError("gender mapping for '" + raw.gender + "' gives " + std::to_string(*g));
      }
    }

    for (const auto& spec : attributes) {
      const std::size_t col = attribute_column(spec.name);
      const std::string& native = raw.attributes[col];
      if (native.empty()) continue;
      auto v = mapping.lookup(spec.name, raw.source, native);
      if (!v) {
        ++audit.unmapped[{spec.name, raw.source, native}];
        continue;
      }
      if (*v != kNoLabel && static_cast<std::size_t>(*v) >= spec.classes)
        throw LabelError("mapping for " + spec.name + " '" + native + "' gives " + std::to_string(*v) +
                         " outside [0, " + std::to_string(spec.classes) + ")");
      r.attributes[col] = *v;
      if (*v != kNoLabel) ++audit.attribute_counts[{spec.name, raw.source, *v}];
    }
    r.prompt = compose_prompt(r, vocab, attributes, mode);
    ++audit.gender_counts[{r.source, r.split}][static_cast<std::size_t>(r.gender)];
    result.records.push_back(std::move(r));
  }
  audit.total = result.records.size();
  check_split_hygiene(result.records);
  return result;
}

DeclaredTotalCheck check_declared_total(std::span<const std::size_t> parts, std::size_t declared) {
  DeclaredTotalCheck c;
  c.recomputed = std::accumulate(parts.begin(), parts.end(), std::size_t{0});
  c.declared = declared;
  return c;
}

// ---- image normalization --------------------------------------------------

namespace {

// Pixel-center aligned bilinear sampling of a float plane stack [h][w][c].
std::vector<double> bilinear(const std::vector<double>& src, std::size_t sw, std::size_t sh, std::size_t c,
                             std::size_t dw, std::size_t dh) {
  std::vector<double> dst(dw * dh * c);
  const double sx = static_cast<double>(sw) / dw, sy = static_cast<double>(sh) / dh;
  for (std::size_t y = 0; y < dh; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(sh - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, sh - 1);
    const double ty = fy - y0;
    for (std::size_t x = 0; x < dw; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(sw - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, sw - 1);
      const double tx = fx - x0;
      for (std::size_t k = 0; k < c; ++k) {
        auto at = [&](std::size_t xx, std::size_t yy) { return src[(yy * sw + xx) * c + k]; };
        const double top = at(x0, y0) * (1 - tx) + at(x1, y0) * tx;
        const double bot = at(x0, y1) * (1 - tx) + at(x1, y1) * tx;
        dst[(y * dw + x) * c + k] = top * (1 - ty) + bot * ty;
      }
    }
  }
  return dst;
}

std::vector<double> to_float(const Image8& image) {
  std::vector<double> f(image.pixels.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = image.pixels[i] / 255.0;
  return f;
}

Image8 to_image(const std::vector<double>& f, std::size_t w, std::size_t h, std::size_t c) {
  Image8 out(w, h, c);
  for (std::size_t i = 0; i < f.size(); ++i)
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(f[i], 0.0, 1.0) * 255.0));
  return out;
}

}  // namespace

Image8 resize_bilinear(const Image8& image, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw DimensionError("resize target must be positive");
  if (image.width == width && image.height == height) return image;
  return to_image(bilinear(to_float(image), image.width, image.height, image.channels, width, height), width,
                  height, image.channels);
}

Tensor normalize_image(const Image8& image, const NormalizeOptions& options) {
  if (image.channels != 3) throw FormatError("expected an RGB image, got " + std::to_string(image.channels) + " channels");
  if (image.pixels.size() != image.width * image.height * 3) throw FormatError("image buffer size mismatch");
  const std::size_t s = options.image_size;
  std::vector<double> f = to_float(image);
  if (image.width != s || image.height != s) f = bilinear(f, image.width, image.height, 3, s, s);
  bool flip = false;
  if (options.train) {
    if (!options.rng) throw StateError("train-mode normalization needs a flip rng");
    flip = ((*options.rng)() >> 63) != 0;
  }
  std::vector<double> out(3 * s * s);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const std::size_t sx = flip ? s - 1 - x : x;
        out[(c * s + y) * s + x] = (f[(y * s + sx) * 3 + c] - kImageMean[c]) / kImageStd[c];
      }
  return Tensor({3, s, s}, std::move(out));
}

Tensor normalize_batch(const std::vector<const Image8*>& images, const NormalizeOptions& options) {
  const std::size_t s = options.image_size;
  std::vector<double> data;
  data.reserve(images.size() * 3 * s * s);
  for (const Image8* img : images) {
    auto t = normalize_image(*img, options);
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor({images.size(), 3, s, s}, std::move(data));
}

// ---- synthetic corpus -----------------------------------------------------

const std::array<DegradationBin, 4>& degradation_bins() {
  static const std::array<DegradationBin, 4> bins = {{
      {1, 0.0, 0.00, 10.0, 20.0},
      {2, 0.5, 0.02, 20.0, 40.0},
      {4, 1.0, 0.05, 40.0, 80.0},
      {8, 2.0, 0.10, 80.0, 120.0},
  }};
  return bins;
}

namespace {

constexpr std::array<std::size_t, kAllAttributes> kSynthClasses = {4, 4, 4, 3, 3, 2, 2};

struct Rgb {
  double r, g, b;
};

constexpr double kStripe = 0.22;
constexpr Rgb kHair[2] = {{0.30, 0.22, 0.16}, {0.78, 0.66, 0.36}};
constexpr Rgb kUpper[2] = {{0.28, 0.30, 0.62}, {0.76, 0.46, 0.44}};
constexpr Rgb kLower[2] = {{0.30, 0.36, 0.28}, {0.70, 0.68, 0.74}};
constexpr Rgb kFeet[3] = {{0.95, 0.95, 0.95}, {0.45, 0.28, 0.14}, {0.85, 0.10, 0.15}};
constexpr Rgb kBag[3] = {{0, 0, 0}, {0.15, 0.65, 0.20}, {0.60, 0.25, 0.70}};
constexpr Rgb kSkin = {0.86, 0.70, 0.56};
constexpr Rgb kFacialHair = {0.22, 0.15, 0.10};
constexpr Rgb kBackground = {0.35, 0.55, 0.35};
constexpr double kMaskGray = 0.5;

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double gaussian(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

int uniform_int(std::mt19937_64& rng, std::size_t k) { return static_cast<int>(rng() % k); }

struct Canvas {
  std::vector<double> f = std::vector<double>(kSynthImageSize * kSynthImageSize * 3);
  void set(std::size_t x, std::size_t y, const Rgb& c, double shift = 0.0) {
    double* p = &f[(y * kSynthImageSize + x) * 3];
    p[0] = c.r + shift;
    p[1] = c.g + shift;
    p[2] = c.b + shift;
  }
  void fill(std::size_t x0, std::size_t x1, std::size_t y0, std::size_t y1, const Rgb& c) {
    for (std::size_t y = y0; y <= y1; ++y)
      for (std::size_t x = x0; x <= x1; ++x) set(x, y, c);
  }
  // Horizontal stripes: rows alternate +stripe/-stripe in runs of period/2
  // starting at y0, so the region mean equals the base color.
  void striped(std::size_t x0, std::size_t x1, std::size_t y0, std::size_t y1, const Rgb& c, bool textured,
               std::size_t period) {
    for (std::size_t y = y0; y <= y1; ++y) {
      const double shift = textured ? (((y - y0) % period) < period / 2 ? kStripe : -kStripe) : 0.0;
      for (std::size_t x = x0; x <= x1; ++x) set(x, y, c, shift);
    }
  }
};

Rgb jitter(Rgb c, std::mt19937_64& rng, double amount) {
  c.r += (uniform01(rng) * 2 - 1) * amount;
  c.g += (uniform01(rng) * 2 - 1) * amount;
  c.b += (uniform01(rng) * 2 - 1) * amount;
  return c;
}

struct Identity {
  std::array<int, kAllAttributes> classes{};
  int width_bit = 0;
  bool masked = false;
  int bag_side = 1;
  double angle = 30.0;
  Image8 clean;
};

Image8 render(const Identity& id, std::mt19937_64& rng) {
  Canvas cv;
  cv.fill(0, 31, 0, 31, jitter(kBackground, rng, 0.06));
  const int hair = id.classes[0], upper = id.classes[1], lower = id.classes[2];
  // Head: hair band over a face with optional moustache and beard.
  cv.striped(10, 21, 0, 3, jitter(kHair[hair >> 1], rng, 0.04), hair & 1, 2);
  cv.fill(12, 19, 4, 7, jitter(kSkin, rng, 0.03));
  if (id.classes[6] == 1) cv.fill(14, 17, 5, 5, kFacialHair);
  if (id.classes[5] == 1) cv.fill(12, 19, 6, 7, kFacialHair);
  const std::size_t x0 = id.width_bit ? 8 : 11, x1 = id.width_bit ? 23 : 20;
  cv.striped(x0, x1, 8, 15, jitter(kUpper[upper >> 1], rng, 0.04), upper & 1, 4);
  cv.striped(x0, x1, 16, 23, jitter(kLower[lower >> 1], rng, 0.04), lower & 1, 8);
  const Rgb shoe = jitter(kFeet[id.classes[3]], rng, 0.03);
  cv.fill(9, 14, 26, 31, shoe);
  cv.fill(17, 22, 26, 31, shoe);
  if (id.classes[4] > 0) cv.fill(id.bag_side ? 25 : 1, id.bag_side ? 30 : 6, 10, 21, jitter(kBag[id.classes[4]], rng, 0.03));
  if (id.masked) cv.fill(8, 23, 0, 23, {kMaskGray, kMaskGray, kMaskGray});
  return to_image(cv.f, kSynthImageSize, kSynthImageSize, 3);
}

double draw_range(std::mt19937_64& rng, const DegradationBin& bin) {
  // (lo, hi] on a 1 cm grid.
  const double v = bin.range_lo + (1.0 - uniform01(rng)) * (bin.range_hi - bin.range_lo);
  return std::clamp(std::ceil(v * 100.0) / 100.0, bin.range_lo + 0.01, bin.range_hi);
}

}  // namespace

std::vector<AttributeSpec> synthetic_attributes(std::size_t count) {
  if (count != 5 && count != 7) throw ConfigError("synthetic attribute set must have 5 or 7 attributes");
  std::vector<AttributeSpec> specs;
  for (std::size_t a = 0; a < count; ++a) specs.push_back({kAttributeNames[a], kSynthClasses[a]});
  return specs;
}

PromptVocabulary synthetic_prompt_vocabulary() {
  PromptVocabulary v;
  const std::vector<std::pair<std::string, std::vector<std::string>>> rows = {
      {"hairstyle", {"short dark hair", "long dark hair", "short light hair", "long light hair"}},
      {"upper", {"a plain dark top", "a striped dark top", "a plain light top", "a striped light top"}},
      {"lower", {"dark trousers", "a dark skirt", "light trousers", "a light skirt"}},
      {"feet", {"a person wearing sneakers", "a person wearing boots", "a person wearing high heels"}},
      {"accessories", {"no bag", "a backpack", "a handbag"}},
      {"beard", {"no beard", "a beard"}},
      {"moustache", {"no moustache", "a moustache"}},
  };
  for (const auto& [attr, texts] : rows)
    for (std::size_t k = 0; k < texts.size(); ++k) v.add(attr, static_cast<int>(k), texts[k]);
  return v;
}

GridRegion synthetic_region(std::string_view attribute, const SynthParams* params) {
  if (attribute == "hairstyle" || attribute == "beard" || attribute == "moustache") return {0, 0, 1, 2};
  if (attribute == "upper") return {1, 1, 1, 2};
  if (attribute == "lower") return {2, 2, 1, 2};
  if (attribute == "feet") return {3, 3, 1, 2};
  if (attribute == "accessories") {
    const std::size_t col = params && params->bag_side == 0 ? 0 : 3;
    return {1, 2, col, col};
  }
  throw ConfigError("no synthetic region for attribute '" + std::string(attribute) + "'");
}

int synthetic_gender(int hairstyle, int upper, int lower, int width_bit) {
  const int votes = (hairstyle & 1) + (upper & 1) + (lower & 1);
  return (votes >= 2 ? 1 : 0) ^ (width_bit & 1);
}

Image8 degrade(const Image8& image, const DegradationBin& bin, std::mt19937_64& rng) {
  const std::size_t w = image.width, h = image.height, c = image.channels;
  std::vector<double> f = to_float(image);
  if (bin.downsample > 1) {
    const std::size_t s = bin.downsample;
    if (w % s != 0 || h % s != 0) throw DimensionError("image size not divisible by the downsample factor");
    const std::size_t sw = w / s, sh = h / s;
    std::vector<double> small(sw * sh * c, 0.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t k = 0; k < c; ++k) small[((y / s) * sw + x / s) * c + k] += f[(y * w + x) * c + k];
    for (double& v : small) v /= static_cast<double>(s * s);
    f = bilinear(small, sw, sh, c, w, h);
  }
  if (bin.blur_sigma > 0.0) {
    const int radius = static_cast<int>(std::ceil(3.0 * bin.blur_sigma));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) sum += kernel[i + radius] = std::exp(-0.5 * i * i / (bin.blur_sigma * bin.blur_sigma));
    for (double& k : kernel) k /= sum;
    auto pass = [&](bool horizontal) {
      std::vector<double> out(f.size(), 0.0);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          for (int i = -radius; i <= radius; ++i) {
            const long xx = horizontal ? std::clamp<long>(static_cast<long>(x) + i, 0, static_cast<long>(w) - 1)
                                       : static_cast<long>(x);
            const long yy = horizontal ? static_cast<long>(y)
                                       : std::clamp<long>(static_cast<long>(y) + i, 0, static_cast<long>(h) - 1);
            for (std::size_t k = 0; k < c; ++k)
              out[(y * w + x) * c + k] += kernel[i + radius] * f[(yy * w + xx) * c + k];
          }
      f = std::move(out);
    };
    pass(true);
    pass(false);
  }
  if (bin.noise_sigma > 0.0)
    for (double& v : f) v += bin.noise_sigma * gaussian(rng);
  return to_image(f, w, h, c);
}

std::vector<SampleRecord> synth_generate(const SynthConfig& config) {
  if (config.n == 0) throw ConfigError("synthetic corpus needs n >= 1");
  if (config.bins == 0 || config.bins > 4) throw ConfigError("synthetic bins must be in 1..4");
  if (config.attribute_count != 5 && config.attribute_count != 7)
    throw ConfigError("synthetic attribute set must have 5 or 7 attributes");
  if (config.unknown_rate < 0 || config.unknown_rate > 1) throw ConfigError("unknown_rate must be in [0,1]");
  if (config.train_fraction < 0 || config.val_fraction < 0 || config.train_fraction + config.val_fraction > 1 + 1e-12)
    throw ConfigError("split fractions must be nonnegative and sum to at most 1");

  const std::size_t identities = (config.n + config.bins - 1) / config.bins;
  std::vector<Split> split(identities, Split::Test);
  {
    std::vector<std::size_t> order(identities);
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng(config.seed, "synth.split");
    for (std::size_t i = identities; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    const auto n_train = static_cast<std::size_t>(std::llround(config.train_fraction * identities));
    const auto n_val = std::min(identities - n_train,
                                static_cast<std::size_t>(std::llround(config.val_fraction * identities)));
    for (std::size_t i = 0; i < n_train; ++i) split[order[i]] = Split::Train;
    for (std::size_t i = n_train; i < n_train + n_val; ++i) split[order[i]] = Split::Val;
  }

  const auto attributes = synthetic_attributes(config.attribute_count);
  const auto vocab = synthetic_prompt_vocabulary();
  std::vector<SampleRecord> records;
  records.reserve(config.n);
  for (std::size_t i = 0; i < identities; ++i) {
    auto rng = make_rng(config.seed, "synth.identity", i);
    Identity id;
    for (std::size_t a = 0; a < kAllAttributes; ++a) id.classes[a] = uniform_int(rng, kSynthClasses[a]);
    id.width_bit = uniform_int(rng, 2);
    id.masked = uniform01(rng) < config.unknown_rate;
    static constexpr double kAngles[3] = {30.0, 60.0, 90.0};
    id.angle = kAngles[uniform_int(rng, 3)];
    // Flip augmentation mirrors the figure, so both bag sides occur.
    id.bag_side = uniform_int(rng, 2);
    id.clean = render(id, rng);

    char name[32];
    std::snprintf(name, sizeof name, "syn-%05zu", i);
    for (std::size_t b = 0; b < config.bins; ++b) {
      const std::size_t index = i * config.bins + b;
      if (index >= config.n) break;
      auto drng = make_rng(config.seed, "synth.degrade", index);
      const auto& bin = degradation_bins()[b];
      SampleRecord r;
      char path[32];
      std::snprintf(path, sizeof path, "images/%06zu.ppm", index);
      r.path = path;
      r.identity = name;
      r.split = split[i];
      r.source = "synthetic";
      r.gender = id.masked ? kUnknown : synthetic_gender(id.classes[0], id.classes[1], id.classes[2], id.width_bit);
      for (std::size_t a = 0; a < config.attribute_count; ++a) r.attributes[a] = id.classes[a];
      if (id.masked)
        for (const char* gendered : {"hairstyle", "upper", "lower", "beard", "moustache"})
          r.attributes[attribute_column(gendered)] = kNoLabel;
      r.angle_deg = id.angle;
      const double measure = draw_range(drng, bin);
      if (id.angle == 90.0)
        r.height_m = measure;
      else
        r.distance_m = measure;
      r.pixels = b == 0 && bin.downsample == 1 && bin.blur_sigma == 0 && bin.noise_sigma == 0
                     ? id.clean
                     : degrade(id.clean, bin, drng);
      r.synth = SynthParams{id.width_bit, static_cast<int>(b), id.masked, id.bag_side};
      r.prompt = compose_prompt(r, vocab, attributes, MissingPromptMode::Neutral);
      records.push_back(std::move(r));
    }
  }
  return records;
}

void write_synthetic_corpus(const fs::path& dir, std::vector<SampleRecord>& records) {
  fs::create_directories(dir / "images");
  for (const auto& r : records) {
    if (!r.pixels) throw StateError("record " + r.path + " has no pixels to write");
    write_ppm(dir / r.path, *r.pixels);
  }
  write_corpus_csv(dir / "corpus.csv", records);
  synthetic_prompt_vocabulary().save(dir / "prompts.csv");
  auto out = open_out(dir / "generator.csv");
  out << "path,width_bit,degradation_bin,masked,bag_side\n";
  for (const auto& r : records) {
    const SynthParams p = r.synth.value_or(SynthParams{});
    out << csv_field(r.path) << ',' << p.width_bit << ',' << p.degradation_bin << ',' << (p.masked ? 1 : 0) << ',' << p.bag_side << '\n';
  }
}

}  // namespace dualpath
