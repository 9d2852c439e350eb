#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "dualpath/image.hpp"
#include "dualpath/model.hpp"
#include "dualpath/tensor.hpp"

namespace dualpath {

enum class Split { Train, Val, Test };
const char* split_name(Split split);
Split parse_split(std::string_view text);  // FormatError on anything else

// Attribute columns of the corpus CSV, in column order. The 5-attribute set
// is the first five; the 7-attribute set adds beard and moustache.
inline constexpr std::size_t kAllAttributes = 7;
inline const std::array<std::string, kAllAttributes> kAttributeNames = {
    "hairstyle", "upper", "lower", "feet", "accessories", "beard", "moustache"};
std::size_t attribute_column(std::string_view name);  // ConfigError when unknown

inline constexpr int kNoLabel = -100;

// Rendering parameters the synthetic generator used for one record.
struct SynthParams {
  int width_bit = 0;  // 1 = wide silhouette
  int degradation_bin = 0;
  bool masked = false;  // gendered cues grayed out (Unknown)
  int bag_side = 1;     // 1 = right edge column, 0 = left edge column
};

struct SampleRecord {
  std::string path;  // relative to the corpus CSV directory
  int gender = kUnknown;
  std::array<int, kAllAttributes> attributes{kNoLabel, kNoLabel, kNoLabel, kNoLabel, kNoLabel, kNoLabel, kNoLabel};
  std::string prompt;
  std::string identity;
  Split split = Split::Train;
  std::optional<double> distance_m;
  std::optional<double> height_m;
  std::optional<double> angle_deg;
  std::string source;
  std::optional<Image8> pixels;       // inline pixels, when loaded or generated
  std::optional<SynthParams> synth;   // only for generated records

  int attribute(std::string_view name) const { return attributes[attribute_column(name)]; }
};

// ---- corpus CSV -----------------------------------------------------------

extern const std::vector<std::string> kCorpusHeader;

void write_corpus_csv(const std::filesystem::path& path, const std::vector<SampleRecord>& records);
// Parses and validates labels (gender in {0,1,2}, attributes >= 0 or -100).
std::vector<SampleRecord> read_corpus_csv(const std::filesystem::path& path);

// Attribute indices must be < K_a or -100; throws LabelError naming the record.
void validate_labels(const std::vector<SampleRecord>& records, const std::vector<AttributeSpec>& attributes);
// Throws LeakageError naming the first identity that appears in two splits.
void check_split_hygiene(const std::vector<SampleRecord>& records);
// Reads every record's PPM (relative to root) into record.pixels.
void load_pixels(std::vector<SampleRecord>& records, const std::filesystem::path& root);

// ---- prompt vocabulary ----------------------------------------------------

class PromptVocabulary {
 public:
  static constexpr const char* kNeutral = "the attribute is unclear";
  static const std::vector<std::string> kHeader;  // attribute,class_index,description

  // Throws FormatError on a duplicate (attribute, class) pair.
  void add(const std::string& attribute, int class_index, const std::string& description);
  static PromptVocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Every class of every configured attribute must be described.
  void validate(const std::vector<AttributeSpec>& attributes) const;
  const std::string& description(const std::string& attribute, int class_index) const;
  // All class descriptions of the attribute, in class order, joined by ", ".
  std::string class_query(const std::string& attribute) const;
  // Every description plus the neutral prompt, for building a token vocabulary.
  std::vector<std::string> texts() const;
  const std::string& neutral() const { return neutral_; }

 private:
  std::map<std::string, std::map<int, std::string>> rows_;
  std::string neutral_ = kNeutral;
};

enum class MissingPromptMode { Neutral, Omit };

// Descriptions of the record's labelled attributes joined by ", ". Missing
// labels contribute the neutral prompt once (Neutral) or nothing (Omit); the
// Omit result may be empty.
std::string compose_prompt(const SampleRecord& record, const PromptVocabulary& vocab,
                           const std::vector<AttributeSpec>& attributes, MissingPromptMode mode);
// What the text encoder receives: the prompt, or the neutral prompt if empty.
std::string prompt_or_neutral(const std::string& prompt, const PromptVocabulary& vocab);

// ---- harmonization --------------------------------------------------------

// (attribute, source, native class) -> unified index. "gender" is an
// attribute like any other, with unified indices 0..2.
class OntologyMapping {
 public:
  static const std::vector<std::string> kHeader;  // attribute,source,native_class,unified_index

  // Throws FormatError when the key is already mapped, or when another native
  // class of the same source already owns the unified index (index collision).
  // kNoLabel targets are exempt from the collision rule.
  void add(const std::string& attribute, const std::string& source, const std::string& native, int unified);
  static OntologyMapping load(const std::filesystem::path& path);
  std::optional<int> lookup(const std::string& attribute, const std::string& source, const std::string& native) const;

 private:
  std::map<std::tuple<std::string, std::string, std::string>, int> map_;
};

// A source annotation row before harmonization; empty strings are missing.
struct RawRecord {
  std::string path, source, identity, split, gender;
  std::array<std::string, kAllAttributes> attributes;
  std::string distance_m, height_m, angle_deg;
};
extern const std::vector<std::string> kRawHeader;
std::vector<RawRecord> read_raw_csv(const std::filesystem::path& path);

struct AuditReport {
  // (source, split) -> counts for Male, Female, Unknown
  std::map<std::pair<std::string, Split>, std::array<std::size_t, 3>> gender_counts;
  // (attribute, source, unified index) -> count
  std::map<std::tuple<std::string, std::string, int>, std::size_t> attribute_counts;
  // (attribute, source, native class) -> occurrences without a mapping
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> unmapped;
  std::size_t total = 0;

  std::size_t split_total(Split split) const;
  // Sum of per-split totals equals the record count.
  bool totals_consistent() const;
  // audit.csv (source,split,male,female,unknown,total plus an ALL row per
  // split and a TOTAL row), attributes.csv and unmapped.csv.
  void write(const std::filesystem::path& dir) const;
};

struct HarmonizeResult {
  std::vector<SampleRecord> records;
  AuditReport audit;
};

// Uncertain or unmapped gender -> Unknown; missing or unmapped attribute ->
// -100. Unmapped natives are listed in the audit. Throws LeakageError when an
// identity spans splits.
HarmonizeResult harmonize(const std::vector<RawRecord>& rows, const OntologyMapping& mapping,
                          const PromptVocabulary& vocab, const std::vector<AttributeSpec>& attributes,
                          MissingPromptMode mode = MissingPromptMode::Neutral);

// Recomputes a total from its parts and compares it with a stated total.
struct DeclaredTotalCheck {
  std::size_t recomputed = 0;
  std::size_t declared = 0;
  bool consistent() const { return recomputed == declared; }
};
DeclaredTotalCheck check_declared_total(std::span<const std::size_t> parts, std::size_t declared);

// ---- image normalization --------------------------------------------------

inline constexpr std::array<double, 3> kImageMean{0.4815, 0.4578, 0.4082};
inline constexpr std::array<double, 3> kImageStd{0.2686, 0.2613, 0.2758};

Image8 resize_bilinear(const Image8& image, std::size_t width, std::size_t height);

struct NormalizeOptions {
  std::size_t image_size = 32;
  bool train = false;               // enables the random horizontal flip
  std::mt19937_64* rng = nullptr;   // flip stream, required in train mode
};

// Resize, scale to [0,1], standardize per channel -> [3,H,W]. Throws
// FormatError for non-RGB input.
Tensor normalize_image(const Image8& image, const NormalizeOptions& options);
// Stacks normalized images into [B,3,H,W].
Tensor normalize_batch(const std::vector<const Image8*>& images, const NormalizeOptions& options);

// ---- synthetic corpus -----------------------------------------------------

struct DegradationBin {
  std::size_t downsample = 1;
  double blur_sigma = 0.0;
  double noise_sigma = 0.0;
  double range_lo = 0.0;  // distance (or nadir height) drawn from (lo, hi]
  double range_hi = 20.0;
};
const std::array<DegradationBin, 4>& degradation_bins();

struct SynthConfig {
  std::size_t n = 2000;
  std::uint64_t seed = 7;
  std::size_t bins = 4;  // degradation bins rendered per identity, 1..4
  std::size_t attribute_count = 5;  // 5 or 7; columns outside the set hold -100
  double unknown_rate = 0.1;
  double train_fraction = 0.8;
  double val_fraction = 0.2;  // the remainder is test
};

inline constexpr std::size_t kSynthImageSize = 32;
inline constexpr std::size_t kSynthPatch = 8;

std::vector<AttributeSpec> synthetic_attributes(std::size_t count);  // 5 or 7
PromptVocabulary synthetic_prompt_vocabulary();

// Patch rows/cols (inclusive) where the generator draws an attribute.
struct GridRegion {
  std::size_t row0, row1, col0, col1;
  bool contains(std::size_t row, std::size_t col) const {
    return row >= row0 && row <= row1 && col >= col0 && col <= col1;
  }
};
// The accessory column follows params->bag_side; without params it is the right edge.
GridRegion synthetic_region(std::string_view attribute, const SynthParams* params = nullptr);

// Majority of the three parity bits (class index & 1 of hairstyle, upper,
// lower) XOR the width bit; 1 means Female.
int synthetic_gender(int hairstyle, int upper, int lower, int width_bit);

// Area downsample, bilinear upsample, Gaussian blur, additive noise.
Image8 degrade(const Image8& image, const DegradationBin& bin, std::mt19937_64& rng);

// Identity-major records: each identity is rendered once per bin. Prompts use
// the synthetic vocabulary over all seven attributes in Neutral mode.
std::vector<SampleRecord> synth_generate(const SynthConfig& config);

// Writes images/<index>.ppm, corpus.csv, prompts.csv and generator.csv
// (path,width_bit,degradation_bin,masked) under dir.
void write_synthetic_corpus(const std::filesystem::path& dir, std::vector<SampleRecord>& records);

}  // namespace dualpath
