#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "dualpath/corpus.hpp"
#include "dualpath/csv.hpp"
#include "dualpath/errors.hpp"
#include "dualpath/metrics.hpp"
#include "dualpath/random.hpp"

using namespace dualpath;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dualpath_test_corpus_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Reads classes back from clean pixels, knowing only the drawing layout.
struct Decoded {
  bool masked;
  int width_bit, hair, upper, lower, feet, bag, bag_side;
};

int channel_sum(const Image8& im, std::size_t x, std::size_t y) {
  return im.at(x, y, 0) + im.at(x, y, 1) + im.at(x, y, 2);
}

bool same_pixel(const Image8& im, std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1) {
  for (std::size_t c = 0; c < 3; ++c)
    if (im.at(x0, y0, c) != im.at(x1, y1, c)) return false;
  return true;
}

Decoded decode(const Image8& im) {
  Decoded d{};
  d.masked = im.at(16, 12, 0) == 128 && im.at(16, 12, 1) == 128 && im.at(16, 12, 2) == 128 && same_pixel(im, 16, 12, 16, 2);
  d.width_bit = same_pixel(im, 9, 12, 0, 12) ? 0 : 1;
  auto textured = [&](std::size_t ya, std::size_t yb) { return same_pixel(im, 16, ya, 16, yb) ? 0 : 1; };
  auto mean_sum = [&](std::size_t ya, std::size_t yb) { return 0.5 * (channel_sum(im, 16, ya) + channel_sum(im, 16, yb)); };
  d.hair = (mean_sum(0, 1) > 1.2 * 255 ? 2 : 0) + textured(0, 1);
  const int blue_minus_red = (im.at(16, 8, 2) + im.at(16, 10, 2)) - (im.at(16, 8, 0) + im.at(16, 10, 0));
  d.upper = (blue_minus_red < 0 ? 2 : 0) + textured(8, 10);
  d.lower = (mean_sum(16, 20) > 1.5 * 255 ? 2 : 0) + textured(16, 20);
  const int r = im.at(10, 28, 0), g = im.at(10, 28, 1);
  d.feet = (r > 200 && g > 200) ? 0 : (g < 60 ? 2 : 1);
  d.bag_side = same_pixel(im, 27, 15, 0, 15) ? 0 : 1;
  const std::size_t bx = d.bag_side ? 27 : 4;
  d.bag = same_pixel(im, bx, 15, 0, 15) ? 0 : (im.at(bx, 15, 1) > im.at(bx, 15, 0) ? 1 : 2);
  return d;
}

int gender_oracle(const Decoded& d) {
  if (d.masked) return 2;
  const int votes = (d.hair & 1) + (d.upper & 1) + (d.lower & 1);
  return (votes >= 2 ? 1 : 0) ^ d.width_bit;
}

RawRecord raw(const std::string& id, const std::string& split, const std::string& gender, const std::string& feet) {
  RawRecord r;
  r.path = id + ".ppm";
  r.source = "DetReIDx";
  r.identity = id;
  r.split = split;
  r.gender = gender;
  r.attributes[attribute_column("feet")] = feet;
  return r;
}

}  // namespace

TEST_CASE("synthetic corpus is deterministic under a fixed seed") {
  SynthConfig cfg;
  cfg.n = 40;
  auto a = synth_generate(cfg), b = synth_generate(cfg);
  REQUIRE(a.size() == 40);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pixels == b[i].pixels);
    CHECK(a[i].prompt == b[i].prompt);
    CHECK(a[i].distance_m == b[i].distance_m);
  }
  auto d1 = temp_dir("det1"), d2 = temp_dir("det2");
  write_synthetic_corpus(d1, a);
  write_synthetic_corpus(d2, b);
  for (const char* f : {"corpus.csv", "prompts.csv", "generator.csv", "images/000017.ppm"})
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  cfg.seed = 8;
  auto c = synth_generate(cfg);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) any_diff |= !(a[i].pixels == c[i].pixels);
  CHECK(any_diff);
}

TEST_CASE("degradation bins") {
  const auto& bins = degradation_bins();
  CHECK(bins[0].blur_sigma == 0.0);
  CHECK(bins[0].downsample == 1);
  CHECK(bins[0].noise_sigma == 0.0);
  for (std::size_t b = 1; b < 4; ++b) {
    CHECK(bins[b].downsample == 2 * bins[b - 1].downsample);
    CHECK(bins[b].blur_sigma > bins[b - 1].blur_sigma);
    CHECK(bins[b].noise_sigma > bins[b - 1].noise_sigma);
  }
  Image8 img(32, 32, 3);
  std::mt19937_64 rng(1);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() % 256);
  CHECK(degrade(img, bins[0], rng) == img);

  // A constant image survives downsample and blur unchanged.
  Image8 flat(32, 32, 3);
  std::fill(flat.pixels.begin(), flat.pixels.end(), std::uint8_t{77});
  CHECK(degrade(flat, {8, 2.0, 0.0, 0, 1}, rng) == flat);

  // Period-2 stripes vanish under a factor-2 area downsample.
  Image8 stripes(32, 32, 3);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x)
      for (std::size_t c = 0; c < 3; ++c) stripes.at(x, y, c) = y % 2 ? 100 : 200;
  auto out = degrade(stripes, {2, 0.0, 0.0, 0, 1}, rng);
  for (auto p : out.pixels) CHECK(p == 150);
}

TEST_CASE("pixel oracle recovers labels and gender on the clean bin") {
  SynthConfig cfg;
  cfg.n = 2000;
  auto records = synth_generate(cfg);
  std::size_t clean = 0, correct = 0;
  for (const auto& r : records) {
    REQUIRE(r.synth);
    if (r.synth->degradation_bin != 0) continue;
    ++clean;
    const Decoded d = decode(*r.pixels);
    CHECK(d.masked == r.synth->masked);
    CHECK(d.feet == r.attribute("feet"));
    CHECK(d.bag == r.attribute("accessories"));
    if (d.bag > 0) CHECK(d.bag_side == r.synth->bag_side);
    if (!d.masked) {
      CHECK(d.width_bit == r.synth->width_bit);
      CHECK(d.hair == r.attribute("hairstyle"));
      CHECK(d.upper == r.attribute("upper"));
      CHECK(d.lower == r.attribute("lower"));
    }
    correct += gender_oracle(d) == r.gender;
  }
  CHECK(clean == 500);
  CHECK(correct == clean);
}

TEST_CASE("synthetic records respect the schema and metadata contract") {
  SynthConfig cfg;
  cfg.n = 403;
  auto records = synth_generate(cfg);
  REQUIRE(records.size() == 403);
  std::map<std::string, std::set<Split>> splits;
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    CHECK(r.synth->degradation_bin == static_cast<int>(k % 4));
    CHECK(r.source == "synthetic");
    CHECK(r.attribute("beard") == kNoLabel);
    CHECK(r.attribute("moustache") == kNoLabel);
    REQUIRE(r.angle_deg);
    const auto& bin = degradation_bins()[k % 4];
    const double m = *r.angle_deg == 90.0 ? r.height_m.value() : r.distance_m.value();
    const bool nadir = *r.angle_deg == 90.0;
    CHECK(r.distance_m.has_value() != nadir);
    CHECK(r.height_m.has_value() == nadir);
    CHECK(m > bin.range_lo);
    CHECK(m <= bin.range_hi);
    // The metric binning puts the sample in its generator bin.
    SampleMeta meta{r.angle_deg, r.distance_m, r.height_m};
    const std::string L = *r.angle_deg == 90.0 ? "H" : "D";
    const std::string expected[4] = {L + "<=20", "20<" + L + "<=40", "40<" + L + "<=80", L + ">80"};
    CHECK(bin_metadata(meta).range == expected[k % 4]);
    splits[r.identity].insert(r.split);
    if (r.gender == kUnknown) {
      CHECK(r.synth->masked);
    }
  }
  for (const auto& [id, s] : splits) CHECK(s.size() == 1);
  CHECK_NOTHROW(check_split_hygiene(records));
  CHECK_NOTHROW(validate_labels(records, synthetic_attributes(5)));
  CHECK(splits.size() == 101);
}

TEST_CASE("synthetic class frequencies stay within 3 sigma") {
  SynthConfig cfg;
  cfg.n = 4000;
  cfg.attribute_count = 7;
  auto records = synth_generate(cfg);
  const auto specs = synthetic_attributes(7);
  for (int b = 0; b < 4; ++b) {
    std::map<std::pair<std::string, int>, std::size_t> counts;
    std::map<std::string, std::size_t> labelled;
    std::size_t unknown = 0, n = 0, female = 0, gendered = 0;
    for (const auto& r : records) {
      if (r.synth->degradation_bin != b) continue;
      ++n;
      unknown += r.gender == kUnknown;
      if (r.gender != kUnknown) {
        ++gendered;
        female += r.gender == kFemale;
      }
      for (const auto& s : specs) {
        const int v = r.attribute(s.name);
        if (v == kNoLabel) continue;
        ++labelled[s.name];
        ++counts[{s.name, v}];
      }
    }
    auto within = [](std::size_t count, std::size_t total, double p) {
      const double mean = total * p, sigma = std::sqrt(total * p * (1 - p));
      return std::abs(count - mean) <= 3 * sigma;
    };
    CHECK(within(unknown, n, 0.1));
    CHECK(within(female, gendered, 0.5));
    for (const auto& s : specs)
      for (std::size_t k = 0; k < s.classes; ++k)
        CHECK(within(counts[{s.name, static_cast<int>(k)}], labelled[s.name], 1.0 / s.classes));
  }
}

TEST_CASE("synthetic gender needs several cues") {
  // Flipping any single parity cue changes gender for some inputs but not all.
  for (int cue = 0; cue < 4; ++cue) {
    int changed = 0, total = 0;
    for (int h = 0; h < 2; ++h)
      for (int u = 0; u < 2; ++u)
        for (int l = 0; l < 2; ++l)
          for (int w = 0; w < 2; ++w) {
            int v[4] = {h, u, l, w};
            const int base = synthetic_gender(v[0], v[1], v[2], v[3]);
            v[cue] ^= 1;
            changed += synthetic_gender(v[0], v[1], v[2], v[3]) != base;
            ++total;
          }
    if (cue == 3)
      CHECK(changed == total);
    else
      CHECK(changed == total / 2);
  }
  CHECK(synthetic_gender(1, 1, 0, 0) == 1);
  CHECK(synthetic_gender(1, 1, 0, 1) == 0);
  CHECK(synthetic_gender(2, 0, 0, 0) == 0);  // color bits do not vote
}

TEST_CASE("synthetic regions tile the attribute layout") {
  CHECK(synthetic_region("hairstyle").contains(0, 1));
  CHECK_FALSE(synthetic_region("hairstyle").contains(1, 1));
  CHECK(synthetic_region("accessories").contains(2, 3));
  CHECK(synthetic_region("feet").contains(3, 2));
  SynthParams left;
  left.bag_side = 0;
  CHECK(synthetic_region("accessories", &left).contains(1, 0));
  CHECK_FALSE(synthetic_region("accessories", &left).contains(1, 3));
  CHECK_THROWS_AS(synthetic_region("gender"), ConfigError);
}

TEST_CASE("corpus CSV round trip and schema") {
  SynthConfig cfg;
  cfg.n = 12;
  auto records = synth_generate(cfg);
  auto dir = temp_dir("csv");
  write_synthetic_corpus(dir, records);
  std::ifstream in(dir / "corpus.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "path,gender,hairstyle,upper,lower,feet,accessories,beard,moustache,prompt,identity,split,"
                  "distance_m,height_m,angle_deg,source");
  auto back = read_corpus_csv(dir / "corpus.csv");
  REQUIRE(back.size() == records.size());
  load_pixels(back, dir);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].path == records[i].path);
    CHECK(back[i].gender == records[i].gender);
    CHECK(back[i].attributes == records[i].attributes);
    CHECK(back[i].prompt == records[i].prompt);
    CHECK(back[i].identity == records[i].identity);
    CHECK(back[i].split == records[i].split);
    CHECK(back[i].distance_m == records[i].distance_m);
    CHECK(back[i].height_m == records[i].height_m);
    CHECK(back[i].angle_deg == records[i].angle_deg);
    CHECK(back[i].pixels == records[i].pixels);
  }
  auto gen = read_csv(dir / "generator.csv", {"path", "width_bit", "degradation_bin", "masked", "bag_side"});
  CHECK(gen.rows.size() == records.size());

  write_text(dir / "bad.csv", header + "\nx.ppm,3,0,0,0,0,0,-100,-100,p,id,train,,,,s\n");
  CHECK_THROWS_AS(read_corpus_csv(dir / "bad.csv"), LabelError);
  write_text(dir / "bad.csv", header + "\nx.ppm,1,-5,0,0,0,0,-100,-100,p,id,train,,,,s\n");
  CHECK_THROWS_AS(read_corpus_csv(dir / "bad.csv"), LabelError);
  write_text(dir / "bad.csv", header + "\nx.ppm,1,0,0,0,0,0,-100,-100,p,id,holdout,,,,s\n");
  CHECK_THROWS_AS(read_corpus_csv(dir / "bad.csv"), FormatError);
  write_text(dir / "bad.csv", header + "\nx.ppm,1,0,0,0,0,0,-100,-100,p,id,train,,,45,s\n");
  CHECK_THROWS_AS(read_corpus_csv(dir / "bad.csv"), FormatError);
  write_text(dir / "bad.csv", "path,gender\nx,1\n");
  CHECK_THROWS_AS(read_corpus_csv(dir / "bad.csv"), FormatError);

  SampleRecord wide;
  wide.attributes[0] = 4;
  CHECK_THROWS_AS(validate_labels({wide}, synthetic_attributes(5)), LabelError);
}

TEST_CASE("compose_prompt") {
  const auto vocab = synthetic_prompt_vocabulary();
  const auto specs = synthetic_attributes(5);
  SampleRecord r;
  r.attributes[attribute_column("feet")] = 2;
  r.attributes[attribute_column("hairstyle")] = 1;
  const auto p = compose_prompt(r, vocab, specs, MissingPromptMode::Omit);
  CHECK(p == "long dark hair, a person wearing high heels");
  CHECK(p.find("a person wearing high heels") != std::string::npos);
  CHECK(compose_prompt(r, vocab, specs, MissingPromptMode::Neutral) ==
        "long dark hair, a person wearing high heels, the attribute is unclear");

  SampleRecord none;
  CHECK(compose_prompt(none, vocab, specs, MissingPromptMode::Neutral) == "the attribute is unclear");
  const auto omitted = compose_prompt(none, vocab, specs, MissingPromptMode::Omit);
  CHECK(omitted.empty());
  CHECK(prompt_or_neutral(omitted, vocab) == "the attribute is unclear");
  CHECK(prompt_or_neutral(p, vocab) == p);

  SampleRecord full;
  full.attributes = {0, 1, 2, 0, 1, 0, 0};
  CHECK(compose_prompt(full, vocab, specs, MissingPromptMode::Neutral) ==
        "short dark hair, a striped dark top, light trousers, a person wearing sneakers, a backpack");
  CHECK(compose_prompt(full, vocab, specs, MissingPromptMode::Neutral) ==
        compose_prompt(full, vocab, specs, MissingPromptMode::Omit));
}

TEST_CASE("prompt vocabulary") {
  auto vocab = synthetic_prompt_vocabulary();
  CHECK_NOTHROW(vocab.validate(synthetic_attributes(7)));
  CHECK(vocab.class_query("feet") == "a person wearing sneakers, a person wearing boots, a person wearing high heels");
  CHECK_THROWS_AS(vocab.add("feet", 1, "clogs"), FormatError);
  CHECK_THROWS_AS(vocab.validate({{"feet", 4}}), ConfigError);
  CHECK_THROWS_AS(vocab.validate({{"feet", 2}}), ConfigError);
  CHECK_THROWS_AS(vocab.validate({{"hat", 2}}), ConfigError);
  CHECK(vocab.texts().back() == "the attribute is unclear");

  auto dir = temp_dir("vocab");
  vocab.save(dir / "prompts.csv");
  auto back = PromptVocabulary::load(dir / "prompts.csv");
  CHECK(back.texts() == vocab.texts());
  write_text(dir / "dup.csv", "attribute,class_index,description\nfeet,0,a\nfeet,0,b\n");
  CHECK_THROWS_AS(PromptVocabulary::load(dir / "dup.csv"), FormatError);
}

TEST_CASE("ontology mapping") {
  OntologyMapping m;
  m.add("feet", "DetReIDx", "high-heels", 2);
  m.add("feet", "AG-ReID", "heels", 2);  // other source, same unified class
  CHECK_THROWS_AS(m.add("feet", "DetReIDx", "stilettos", 2), FormatError);
  CHECK_THROWS_AS(m.add("feet", "DetReIDx", "high-heels", 1), FormatError);
  m.add("feet", "DetReIDx", "other", kNoLabel);
  m.add("feet", "DetReIDx", "unsure", kNoLabel);
  m.add("gender", "DetReIDx", "unclear", kUnknown);
  m.add("gender", "DetReIDx", "ambiguous", kUnknown);
  CHECK_THROWS_AS(m.add("feet", "DetReIDx", "x", -3), FormatError);
  CHECK(m.lookup("feet", "DetReIDx", "high-heels") == 2);
  CHECK_FALSE(m.lookup("feet", "DetReIDx", "sandals").has_value());

  auto dir = temp_dir("mapping");
  write_text(dir / "m.csv", "attribute,source,native_class,unified_index\nfeet,A,boots,1\nfeet,A,boot,1\n");
  CHECK_THROWS_AS(OntologyMapping::load(dir / "m.csv"), FormatError);
}

TEST_CASE("harmonize") {
  OntologyMapping m;
  m.add("gender", "DetReIDx", "male", kMale);
  m.add("gender", "DetReIDx", "female", kFemale);
  m.add("gender", "DetReIDx", "unclear", kUnknown);
  m.add("feet", "DetReIDx", "sneakers", 0);
  m.add("feet", "DetReIDx", "high-heels", 2);
  const auto vocab = synthetic_prompt_vocabulary();
  const auto specs = synthetic_attributes(5);

  std::vector<RawRecord> rows = {raw("a", "train", "unclear", "high-heels"), raw("b", "train", "female", "sandals"),
                                 raw("c", "val", "", "sneakers"), raw("d", "test", "robot", ""),
                                 raw("a", "train", "male", "")};
  auto res = harmonize(rows, m, vocab, specs);
  REQUIRE(res.records.size() == 5);
  CHECK(res.records[0].gender == kUnknown);
  CHECK(res.records[0].attribute("feet") == 2);
  CHECK(res.records[0].prompt.find("a person wearing high heels") != std::string::npos);
  CHECK(res.records[1].gender == kFemale);
  CHECK(res.records[1].attribute("feet") == kNoLabel);
  CHECK(res.records[2].gender == kUnknown);
  CHECK(res.records[3].gender == kUnknown);
  CHECK(res.records[4].gender == kMale);
  CHECK(res.audit.unmapped.at({"feet", "DetReIDx", "sandals"}) == 1);
  CHECK(res.audit.unmapped.at({"gender", "DetReIDx", "robot"}) == 1);
  CHECK(res.audit.gender_counts.at({"DetReIDx", Split::Train}) == std::array<std::size_t, 3>{1, 1, 1});
  CHECK(res.audit.total == 5);
  CHECK(res.audit.totals_consistent());
  CHECK(res.audit.split_total(Split::Val) == 1);

  // No Unknown label is ever coerced to Male or Female.
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].gender != "male" && rows[i].gender != "female") CHECK(res.records[i].gender == kUnknown);

  auto dir = temp_dir("audit");
  res.audit.write(dir);
  const auto audit = read_csv(dir / "audit.csv", {"source", "split", "male", "female", "unknown", "total"});
  CHECK(audit.rows.back() == std::vector<std::string>{"ALL", "ALL", "1", "1", "3", "5"});
  const auto unmapped = read_csv(dir / "unmapped.csv", {"attribute", "source", "native_class", "count"});
  CHECK(unmapped.rows.size() == 2);
  CHECK(slurp(dir / "audit_summary.csv") == "split_sum,record_count,consistent\n5,5,true\n");

  rows.push_back(raw("c", "train", "male", ""));
  try {
    harmonize(rows, m, vocab, specs);
    FAIL("expected a leakage error");
  } catch (const LeakageError& e) {
    CHECK(std::string(e.what()).find("'c'") != std::string::npos);
  }

  std::vector<RawRecord> bad_index = {raw("z", "train", "male", "sneakers")};
  OntologyMapping wide;
  wide.add("feet", "DetReIDx", "sneakers", 7);
  CHECK_THROWS_AS(harmonize(bad_index, wide, vocab, specs), LabelError);
}

TEST_CASE("raw CSV ingestion") {
  auto dir = temp_dir("raw");
  std::string text =
      "path,source,identity,split,gender,hairstyle,upper,lower,feet,accessories,beard,moustache,distance_m,height_m,"
      "angle_deg\n"
      "p1.ppm,DetReIDx,id1,train,female,,,,high-heels,,,,35.5,,30\n"
      "p2.ppm,DetReIDx,id2,val,unclear,,,,,,,,,18,90\n";
  write_text(dir / "raw.csv", text);
  auto rows = read_raw_csv(dir / "raw.csv");
  REQUIRE(rows.size() == 2);
  OntologyMapping m;
  m.add("gender", "DetReIDx", "female", kFemale);
  m.add("gender", "DetReIDx", "unclear", kUnknown);
  m.add("feet", "DetReIDx", "high-heels", 2);
  auto res = harmonize(rows, m, synthetic_prompt_vocabulary(), synthetic_attributes(5));
  CHECK(res.records[0].distance_m == 35.5);
  CHECK(res.records[0].angle_deg == 30.0);
  CHECK(res.records[1].height_m == 18.0);
  CHECK(res.records[1].gender == kUnknown);
  CHECK(res.records[1].prompt == "the attribute is unclear");
}

TEST_CASE("declared totals are recomputed and flagged") {
  const std::vector<std::size_t> parts = {308592, 194683, 134952};
  const auto check = check_declared_total(parts, 638372);
  CHECK(check.recomputed == 638227);
  CHECK_FALSE(check.consistent());
  CHECK(check_declared_total(parts, 638227).consistent());
}

TEST_CASE("normalize_image") {
  Image8 at_mean(4, 4, 3);
  // Choose bytes whose value/255 is closest to the mean; residual bounded by 0.5/255/sigma.
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      for (std::size_t c = 0; c < 3; ++c) at_mean.at(x, y, c) = static_cast<std::uint8_t>(std::lround(kImageMean[c] * 255));
  auto t = normalize_image(at_mean, {4, false, nullptr});
  CHECK(t.shape() == Shape{3, 4, 4});
  for (std::size_t i = 0; i < t.numel(); ++i) CHECK(std::abs(t[i]) < 0.5 / 255 / 0.26);

  Image8 img(8, 8, 3);
  std::mt19937_64 rng(3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() % 256);
  auto v = normalize_image(img, {8, false, nullptr});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x)
        CHECK(std::abs(v[(c * 8 + y) * 8 + x] - (img.at(x, y, c) / 255.0 - kImageMean[c]) / kImageStd[c]) < 1e-12);

  // Validation mode never flips, even with a stream present.
  std::mt19937_64 flip_rng(5);
  for (int i = 0; i < 20; ++i) {
    auto w = normalize_image(img, {8, false, &flip_rng});
    CHECK(std::equal(w.data().begin(), w.data().end(), v.data().begin()));
  }

  // Train mode flips about half the time, reproducibly.
  std::mt19937_64 r1(9), r2(9);
  int flips = 0;
  for (int i = 0; i < 200; ++i) {
    auto a = normalize_image(img, {8, true, &r1});
    auto b = normalize_image(img, {8, true, &r2});
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    const bool flipped = !std::equal(a.data().begin(), a.data().end(), v.data().begin());
    if (flipped) {
      ++flips;
      CHECK(a[0] == v[7]);
    }
  }
  CHECK(flips > 70);
  CHECK(flips < 130);
  CHECK_THROWS_AS(normalize_image(img, {8, true, nullptr}), StateError);

  Image8 gray(8, 8, 1);
  CHECK_THROWS_AS(normalize_image(gray, {8, false, nullptr}), FormatError);

  auto up = normalize_image(at_mean, {16, false, nullptr});
  CHECK(up.shape() == Shape{3, 16, 16});
  auto batch = normalize_batch({&img, &img}, {8, false, nullptr});
  CHECK(batch.shape() == Shape{2, 3, 8, 8});
}

TEST_CASE("bilinear resize") {
  Image8 img(2, 1, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    img.at(0, 0, c) = 0;
    img.at(1, 0, c) = 200;
  }
  auto r = resize_bilinear(img, 4, 1);
  // Pixel-center alignment: samples at 0, 0.25, 0.75, 1 of the span.
  CHECK(r.at(0, 0, 0) == 0);
  CHECK(r.at(1, 0, 0) == 50);
  CHECK(r.at(2, 0, 0) == 150);
  CHECK(r.at(3, 0, 0) == 200);
  CHECK(resize_bilinear(img, 2, 1) == img);
}

TEST_CASE("PPM and PGM round trip") {
  auto dir = temp_dir("ppm");
  Image8 img(5, 3, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 17);
  write_ppm(dir / "a.ppm", img);
  CHECK(read_ppm(dir / "a.ppm") == img);
  CHECK(slurp(dir / "a.ppm").rfind("P6\n5 3\n255\n", 0) == 0);
  Image8 g(3, 2, 1);
  g.pixels = {0, 10, 20, 30, 40, 255};
  write_pgm(dir / "g.pgm", g);
  CHECK(read_pgm(dir / "g.pgm") == g);
  write_text(dir / "c.ppm", "P6\n# comment\n1 1\n255\n\x01\x02\x03");
  CHECK(read_ppm(dir / "c.ppm").pixels == std::vector<std::uint8_t>{1, 2, 3});
  write_text(dir / "bad.ppm", "P3\n1 1\n255\n1 2 3");
  CHECK_THROWS_AS(read_ppm(dir / "bad.ppm"), FormatError);
  write_text(dir / "short.ppm", "P6\n2 2\n255\n\x01\x02");
  CHECK_THROWS_AS(read_ppm(dir / "short.ppm"), FormatError);
}

TEST_CASE("csv helpers") {
  CHECK(parse_csv_line("a,\"b, c\",\"d\"\"e\"") == std::vector<std::string>{"a", "b, c", "d\"e"});
  CHECK(parse_csv_line("x,,y\r") == std::vector<std::string>{"x", "", "y"});
  CHECK_THROWS_AS(parse_csv_line("a,\"b"), FormatError);
  CHECK(csv_field("plain") == "plain");
  CHECK(csv_field("a, b") == "\"a, b\"");
  CHECK(parse_csv_line(csv_field("q\"uote,")) == std::vector<std::string>{"q\"uote,"});
}
