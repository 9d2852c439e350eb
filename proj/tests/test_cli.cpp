#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dualpath/cli.hpp"
#include "dualpath/csv.hpp"
#include "dualpath/errors.hpp"
#include "dualpath/trainer.hpp"

using namespace dualpath;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dualpath_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Run {
  int code;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  return files;
}

// A model small enough for sub-second epochs.
const char* kTinyConfig =
    "visual_width = 16\nvisual_depth = 2\nvisual_heads = 2\ntext_width = 16\ntext_depth = 1\ntext_heads = 2\n"
    "joint_dim = 8\nfusion_heads = 2\nattribute_heads = 2\nepochs = 2\nbatch_size = 16\ndecay_epochs = 2\n"
    "freeze_visual = 1\n";

std::size_t data_rows(const fs::path& csv) { return read_csv(csv).rows.size(); }

}  // namespace

TEST_CASE("usage errors, help and exit codes") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"bogus"}).code == kExitUsage);
  const auto help = cli({"--help"});
  CHECK(help.code == kExitOk);
  for (const char* cmd : {"synth", "harmonize", "train", "eval", "explain", "ablate"})
    CHECK(help.out.find(cmd) != std::string::npos);
  const auto train_help = cli({"train", "--help"});
  CHECK(train_help.code == kExitOk);
  CHECK(train_help.out.find("--resume") != std::string::npos);
  auto r = cli({"eval", "--checkpoint", "/nonexistent.ckpt", "--corpus", "/nonexistent.csv", "--out", "x"});
  CHECK(r.code == kExitUsage);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  CHECK(cli({"synth", "--n", "10"}).code == kExitUsage);
  CHECK(cli({"synth", "--n", "0", "--out", "x"}).code == kExitUsage);

  // A corrupt checkpoint is invalid input.
  auto dir = temp_dir("usage");
  spit(dir / "bad.ckpt", "not a checkpoint");
  spit(dir / "corpus.csv", "x");
  r = cli({"eval", "--checkpoint", (dir / "bad.ckpt").string(), "--corpus", (dir / "corpus.csv").string(), "--out",
           (dir / "out").string()});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.rfind("usage error: ", 0) == 0);
}

TEST_CASE("synth is deterministic") {
  auto a = temp_dir("synth_a"), b = temp_dir("synth_b");
  REQUIRE(cli({"synth", "--n", "200", "--seed", "7", "--out", a.string()}).code == kExitOk);
  REQUIRE(cli({"synth", "--n", "200", "--seed", "7", "--out", b.string()}).code == kExitOk);
  const auto ta = tree(a), tb = tree(b);
  CHECK(ta.size() == 200 + 3);
  CHECK(ta == tb);
  CHECK(data_rows(a / "corpus.csv") == 200);
  auto c = temp_dir("synth_c");
  REQUIRE(cli({"synth", "--n", "200", "--seed", "8", "--out", c.string()}).code == kExitOk);
  CHECK(tree(c) != ta);
}

TEST_CASE("harmonize writes a unified corpus and audit") {
  auto dir = temp_dir("harmonize");
  spit(dir / "mapping.csv",
       "attribute,source,native_class,unified_index\n"
       "gender,A,man,0\ngender,A,woman,1\ngender,A,unsure,2\n"
       "hairstyle,A,short,0\nhairstyle,A,long,1\n");
  spit(dir / "vocab.csv", "attribute,class_index,description\nhairstyle,0,short hair\nhairstyle,1,long hair\n");
  std::string raw = "path,source,identity,split,gender,hairstyle,upper,lower,feet,accessories,beard,moustache,"
                    "distance_m,height_m,angle_deg\n";
  raw += "a.ppm,A,p1,train,man,short,,,,,,,15,,30\n";
  raw += "b.ppm,A,p2,val,woman,long,,,,,,,50,,60\n";
  raw += "c.ppm,A,p3,val,unsure,curly,,,,,,,,30,90\n";
  spit(dir / "raw.csv", raw);
  const auto r = cli({"harmonize", "--mapping", (dir / "mapping.csv").string(), "--vocab", (dir / "vocab.csv").string(),
                      "--inputs", (dir / "raw.csv").string(), "--attributes", "hairstyle:2", "--out",
                      (dir / "out").string()});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  const auto records = read_corpus_csv(dir / "out" / "corpus.csv");
  REQUIRE(records.size() == 3);
  CHECK(records[0].gender == 0);
  CHECK(records[1].gender == 1);
  CHECK(records[2].gender == 2);
  CHECK(records[2].attribute("hairstyle") == kNoLabel);
  CHECK(records[1].prompt == "long hair");
  CHECK(fs::exists(dir / "out" / "audit.csv"));
  CHECK(slurp(dir / "out" / "unmapped.csv").find("curly") != std::string::npos);

  // Identity leakage is an input error.
  spit(dir / "leak.csv", raw + "d.ppm,A,p1,val,man,short,,,,,,,15,,30\n");
  const auto leak = cli({"harmonize", "--mapping", (dir / "mapping.csv").string(), "--vocab",
                         (dir / "vocab.csv").string(), "--inputs", (dir / "leak.csv").string(), "--attributes",
                         "hairstyle:2", "--out", (dir / "out2").string()});
  CHECK(leak.code == kExitUsage);
  CHECK(leak.err.find("p1") != std::string::npos);
}

TEST_CASE("train, eval and explain end to end") {
  auto dir = temp_dir("e2e");
  REQUIRE(cli({"synth", "--n", "200", "--seed", "5", "--out", (dir / "data").string()}).code == kExitOk);
  spit(dir / "run.txt", kTinyConfig);
  const auto corpus = (dir / "data" / "corpus.csv").string();
  auto r = cli({"train", "--config", (dir / "run.txt").string(), "--corpus", corpus, "--out", (dir / "run").string()});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  for (const char* f : {"best.ckpt", "last.ckpt", "metrics.csv", "config.txt"}) CHECK(fs::exists(dir / "run" / f));
  CHECK(data_rows(dir / "run" / "metrics.csv") == 2);
  // The written config reproduces the run.
  CHECK(load_run_config(dir / "run" / "config.txt").train.epochs == 2);

  const auto ckpt = (dir / "run" / "best.ckpt").string();
  r = cli({"eval", "--checkpoint", ckpt, "--corpus", corpus, "--split", "val", "--out", (dir / "eval").string()});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(data_rows(dir / "eval" / "metrics.csv") == 3);

  // One strata row per (angle, bin) key present in val, from an independent binning.
  std::set<std::pair<std::string, std::string>> expected;
  std::size_t n_val = 0;
  for (const auto& rec : read_corpus_csv(corpus)) {
    if (rec.split != Split::Val) continue;
    ++n_val;
    const int angle = static_cast<int>(*rec.angle_deg);
    const bool nadir = angle == 90;
    const double v = nadir ? *rec.height_m : *rec.distance_m;
    const std::string s = nadir ? "H" : "D";
    std::string range = v <= 20 ? s + "<=20" : v <= 40 ? "20<" + s + "<=40" : v <= 80 ? "40<" + s + "<=80" : s + ">80";
    expected.insert({std::to_string(angle) + "deg", range});
  }
  const auto strata = read_csv(dir / "eval" / "strata.csv");
  CHECK(strata.rows.size() == expected.size());
  std::size_t n_sum = 0;
  for (const auto& row : strata.rows) {
    CHECK(expected.count({row[strata.column("group")], row[strata.column("range")]}) == 1);
    n_sum += std::stoul(row[strata.column("n")]);
  }
  CHECK(n_sum == n_val);
  CHECK(data_rows(dir / "eval" / "predictions.csv") == n_val);
  const auto roc = read_csv(dir / "eval" / "roc_fused.csv");
  REQUIRE(roc.rows.size() >= 2);
  CHECK(roc.rows.front()[0] == "0");
  CHECK(roc.rows.back()[0] == "1");

  // Eval is idempotent.
  r = cli({"eval", "--checkpoint", ckpt, "--corpus", corpus, "--out", (dir / "eval2").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(tree(dir / "eval") == tree(dir / "eval2"));

  r = cli({"explain", "--checkpoint", ckpt, "--corpus", corpus, "--count", "3", "--out", (dir / "explain").string()});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(data_rows(dir / "explain" / "summary.csv") == 3 * 6);
  const auto first = read_csv(dir / "explain" / "summary.csv").rows[0][0];
  const auto stem = fs::path(first).replace_extension().generic_string();
  std::string sample_dir = stem;
  for (char& c : sample_dir)
    if (c == '/' || c == '.') c = '_';
  CHECK(fs::exists(dir / "explain" / sample_dir / "hairstyle.pgm"));
  CHECK(fs::exists(dir / "explain" / sample_dir / "gender_overlay.ppm"));
  CHECK(fs::exists(dir / "explain" / sample_dir / "gender.csv"));

  r = cli({"explain", "--checkpoint", ckpt, "--corpus", corpus, "--ids", "no/such.ppm", "--out",
           (dir / "explain2").string()});
  CHECK(r.code == kExitUsage);
}

TEST_CASE("ablation matrix expansion") {
  const auto base = RunConfig::toy();
  const auto cells = expand_ablation_matrix("# axes\nsca1,sca2 = true | false\nfreeze_visual = 0 | 2\n", base);
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].config.model.use_sca_path1);
  CHECK(cells[0].config.model.use_sca_path2);
  CHECK(cells[0].config.train.freeze.visual_last == 0);
  CHECK(cells[1].config.train.freeze.visual_last == 2);
  CHECK_FALSE(cells[2].config.model.use_sca_path1);
  CHECK_FALSE(cells[3].config.model.use_sca_path2);
  CHECK(cells[3].settings.size() == 3);
  CHECK(cells[1].config.train.epochs == base.train.epochs);
  CHECK(expand_ablation_matrix("", base).size() == 1);
  CHECK_THROWS_AS(expand_ablation_matrix("nope = 1 | 2\n", base), ConfigError);
  CHECK_THROWS_AS(expand_ablation_matrix("epochs = 1 | \n", base), ConfigError);
  CHECK_THROWS_AS(expand_ablation_matrix("epochs = 1 | x\n", base), ConfigError);
}

TEST_CASE("ablate emits one row per cell, deterministically") {
  auto dir = temp_dir("ablate");
  REQUIRE(cli({"synth", "--n", "80", "--seed", "9", "--attributes", "7", "--out", (dir / "data").string()}).code ==
          kExitOk);
  std::string base = kTinyConfig;
  base.replace(base.find("epochs = 2"), 10, "epochs = 1");
  base.replace(base.find("decay_epochs = 2"), 16, "decay_epochs = 1");
  spit(dir / "base.txt", base);
  spit(dir / "matrix.txt", "sca1,sca2 = true | false\nattributes = 5 | 7\n");
  std::vector<std::string> args{"ablate",   "--config-matrix", (dir / "matrix.txt").string(),
                                "--config", (dir / "base.txt").string(), "--corpus",
                                (dir / "data" / "corpus.csv").string()};
  auto a = args, b = args;
  a.insert(a.end(), {"--out", (dir / "a").string()});
  b.insert(b.end(), {"--out", (dir / "b").string()});
  const auto ra = cli(a);
  REQUIRE_MESSAGE(ra.code == kExitOk, ra.err);
  REQUIRE(cli(b).code == kExitOk);
  const auto table = read_csv(dir / "a" / "ablation.csv", kAblationHeader);
  CHECK(table.rows.size() == 4);
  CHECK(table.rows[0][table.column("SCA-1")] == "on");
  CHECK(table.rows[2][table.column("SCA-2")] == "off");
  CHECK(table.rows[1][table.column("attributes")] == "7");
  for (const auto& row : table.rows)
    for (const auto& cell : row) CHECK_FALSE(cell.empty());
  CHECK(slurp(dir / "a" / "ablation.csv") == slurp(dir / "b" / "ablation.csv"));
}
