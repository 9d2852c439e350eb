#include "dualpath/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "dualpath/csv.hpp"
#include "dualpath/errors.hpp"
#include "dualpath/explain.hpp"
#include "dualpath/metrics.hpp"
#include "dualpath/trainer.hpp"

namespace dualpath {

namespace fs = std::filesystem;

const std::vector<std::string> kAblationHeader{"config", "attributes", "SCA-1", "SCA-2",  "FT-Vis", "FT-Txt",
                                               "LRs",    "dropout",    "epochs", "mA",     "F1",     "AUC"};

namespace {

// Invalid user input; maps to the usage exit code.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string opt_fixed(const std::optional<double>& v, int digits) { return v ? fixed(*v, digits) : "NA"; }

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string join_csv(const std::vector<std::string>& fields) {
  std::string s;
  for (std::size_t i = 0; i < fields.size(); ++i) s += (i ? "," : "") + csv_field(fields[i]);
  return s;
}

// Corpus CSV with pixels loaded from paths relative to its directory.
std::vector<SampleRecord> load_corpus(const fs::path& path) {
  auto records = read_corpus_csv(path);
  load_pixels(records, path.parent_path());
  return records;
}

// Explicit file, then the configured one, then prompts.csv beside the
// corpus, then the built-in synthetic vocabulary.
PromptVocabulary resolve_prompts(const fs::path& explicit_path, const fs::path& configured, const fs::path& corpus) {
  if (!explicit_path.empty()) return PromptVocabulary::load(explicit_path);
  if (!configured.empty()) return PromptVocabulary::load(configured);
  const auto beside = corpus.parent_path() / "prompts.csv";
  if (fs::exists(beside)) return PromptVocabulary::load(beside);
  return synthetic_prompt_vocabulary();
}

std::vector<const SampleRecord*> select_split(const std::vector<SampleRecord>& records, Split split) {
  std::vector<const SampleRecord*> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(&r);
  if (out.empty()) throw UsageError(std::string("corpus has no ") + split_name(split) + " samples");
  return out;
}

// ---- synth ----------------------------------------------------------------

void cmd_synth(std::size_t n, std::uint64_t seed, std::size_t bins, std::size_t attributes, double unknown_rate,
               const fs::path& out) {
  SynthConfig sc;
  sc.n = n;
  sc.seed = seed;
  sc.bins = bins;
  sc.attribute_count = attributes;
  sc.unknown_rate = unknown_rate;
  auto records = synth_generate(sc);
  write_synthetic_corpus(out, records);
}

// ---- harmonize ------------------------------------------------------------

void cmd_harmonize(const fs::path& mapping_path, const fs::path& vocab_path, const std::vector<fs::path>& inputs,
                   const std::string& attributes, const std::string& missing, const fs::path& out,
                   std::ostream& log) {
  const auto mapping = OntologyMapping::load(mapping_path);
  const auto vocab = PromptVocabulary::load(vocab_path);
  const auto attrs = parse_attribute_list(attributes);
  MissingPromptMode mode;
  if (missing == "neutral")
    mode = MissingPromptMode::Neutral;
  else if (missing == "omit")
    mode = MissingPromptMode::Omit;
  else
    throw UsageError("--missing-prompt must be 'neutral' or 'omit'");
  std::vector<RawRecord> rows;
  for (const auto& in : inputs) {
    auto part = read_raw_csv(in);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  auto result = harmonize(rows, mapping, vocab, attrs, mode);
  fs::create_directories(out);
  write_corpus_csv(out / "corpus.csv", result.records);
  vocab.save(out / "prompts.csv");
  result.audit.write(out);
  if (!result.audit.totals_consistent()) log << "warning: per-split totals do not sum to the record count\n";
}

// ---- train ----------------------------------------------------------------

void cmd_train(const fs::path& config_path, const fs::path& corpus_arg, const fs::path& out_arg,
               const fs::path& resume, std::ostream& log) {
  RunConfig config = config_path.empty() ? RunConfig::toy() : load_run_config(config_path);
  if (!corpus_arg.empty()) config.corpus = corpus_arg;
  if (!out_arg.empty()) config.out = out_arg;
  if (config.corpus.empty()) throw UsageError("no corpus given (--corpus or 'corpus' in the config)");
  if (config.out.empty()) throw UsageError("no output directory given (--out or 'out' in the config)");
  if (!fs::exists(config.corpus)) throw UsageError("corpus not found: " + config.corpus.string());
  const auto records = load_corpus(config.corpus);
  const auto prompts = resolve_prompts({}, config.prompts, config.corpus);
  TrainOptions options;
  options.out_dir = config.out;
  if (!resume.empty()) options.resume = resume;
  options.on_epoch = [&log](const EpochMetrics& m) {
    log << "epoch " << m.epoch << " loss " << fixed(m.train_loss, 4) << " val_acc " << fixed(m.val_acc, 4)
        << " val_F1 " << fixed(m.val_f1_macro, 4) << "\n";
  };
  const auto result = train(config, records, prompts, options);
  log << "best epoch " << result.best_epoch << " val_acc " << fixed(result.best_val_acc, 4) << "\n";
}

// ---- eval -----------------------------------------------------------------

struct HeadSummary {
  CoreMetrics core;
  std::optional<double> auc;
  std::vector<double> p_female;
  std::vector<int> pred;
};

HeadSummary summarize(const std::vector<std::array<double, 3>>& probs, const std::vector<int>& labels) {
  HeadSummary h;
  for (const auto& p : probs) {
    h.p_female.push_back(p[kFemale]);
    h.pred.push_back(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
  }
  h.core = core_metrics(h.pred, labels);
  const auto pos = std::count(labels.begin(), labels.end(), kFemale);
  if (pos > 0 && pos < static_cast<std::ptrdiff_t>(labels.size())) h.auc = auc_female_vs_rest(h.p_female, labels);
  return h;
}

std::vector<double> parse_edges(const std::string& text) {
  std::vector<double> edges;
  for (const auto& s : split(text, ',')) {
    double v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw UsageError("bad --strata edge '" + s + "'");
    if (!edges.empty() && v <= edges.back()) throw UsageError("--strata edges must be strictly ascending");
    edges.push_back(v);
  }
  if (edges.empty()) throw UsageError("--strata needs at least one edge");
  return edges;
}

void cmd_eval(const fs::path& checkpoint_path, const fs::path& corpus_path, const std::string& split_arg,
              const std::string& strata, const fs::path& prompts_path, const fs::path& out, std::ostream& log) {
  const auto ck = load_checkpoint(checkpoint_path);
  const auto config = checkpoint_config(ck);
  const auto model = restore_model(ck);
  const auto records = load_corpus(corpus_path);
  const auto prompts = resolve_prompts(prompts_path, {}, corpus_path);
  const auto edges = parse_edges(strata);
  const auto subset = select_split(records, parse_split(split_arg));
  const auto pred = predict(model, subset, config, prompts);

  fs::create_directories(out);
  auto metrics = open_out(out / "metrics.csv");
  metrics << "head,n,accuracy,mA,F1_macro,precision_macro,recall_weighted,AUC\n";
  const std::pair<const char*, const std::vector<std::array<double, 3>>*> heads[] = {
      {"fused", &pred.fused}, {"direct", &pred.direct}, {"mediated", &pred.mediated}};
  for (const auto& [name, probs] : heads) {
    const auto h = summarize(*probs, pred.gender);
    metrics << name << "," << subset.size() << "," << fixed(h.core.accuracy, 6) << ","
            << fixed(h.core.balanced_accuracy, 6) << "," << fixed(h.core.macro_f1, 6) << ","
            << fixed(h.core.macro_precision, 6) << "," << fixed(h.core.weighted_recall, 6) << ","
            << opt_fixed(h.auc, 6) << "\n";
    if (h.auc) {
      auto roc = open_out(out / (std::string("roc_") + name + ".csv"));
      write_roc_csv(roc, roc_curve(h.p_female, pred.gender));
    }
    if (std::string(name) == "fused") {
      std::vector<SampleMeta> meta;
      for (const auto* r : subset) meta.push_back({r->angle_deg, r->distance_m, r->height_m});
      auto strata_out = open_out(out / "strata.csv");
      write_strata_csv(strata_out, stratified_report(h.p_female, pred.gender, meta, 0.5, edges));
      auto preds = open_out(out / "predictions.csv");
      preds << "path,gender,pred,p_male,p_female,p_unknown\n";
      for (std::size_t i = 0; i < subset.size(); ++i)
        preds << csv_field(subset[i]->path) << "," << pred.gender[i] << "," << h.pred[i] << ","
              << fmt(pred.fused[i][0]) << "," << fmt(pred.fused[i][1]) << "," << fmt(pred.fused[i][2]) << "\n";
      log << "fused accuracy " << fixed(h.core.accuracy, 4) << " F1 " << fixed(h.core.macro_f1, 4) << " AUC "
          << opt_fixed(h.auc, 4) << "\n";
    }
  }
  auto attr_out = open_out(out / "attributes.csv");
  attr_out << "attribute,n_labelled,accuracy\n";
  for (std::size_t a = 0; a < config.model.attributes.size(); ++a) {
    const auto& name = config.model.attributes[a].name;
    std::size_t n = 0, hit = 0;
    for (std::size_t i = 0; i < subset.size(); ++i) {
      const int y = subset[i]->attribute(name);
      if (y == kNoLabel) continue;
      ++n;
      hit += pred.attributes[a][i] == y;
    }
    attr_out << name << "," << n << "," << (n ? fixed(static_cast<double>(hit) / n, 6) : "NA") << "\n";
  }
}

// ---- explain --------------------------------------------------------------

std::string file_stem_for(const std::string& id) {
  std::string s = fs::path(id).replace_extension().generic_string();
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) c = '_';
  return s;
}

void write_map_files(const Image8& source, const AttentionMap& map, const fs::path& stem) {
  write_heatmap(map, fs::path(stem.string() + ".pgm"));
  write_overlay(source, map, fs::path(stem.string() + "_overlay.ppm"));
  write_map_csv(map, fs::path(stem.string() + ".csv"));
}

void cmd_explain(const fs::path& checkpoint_path, const fs::path& corpus_path, const std::string& ids_arg,
                 const std::string& split_arg, std::size_t count, const fs::path& prompts_path, const fs::path& out) {
  const auto ck = load_checkpoint(checkpoint_path);
  const auto config = checkpoint_config(ck);
  const auto model = restore_model(ck);
  const auto records = load_corpus(corpus_path);
  const auto prompts = resolve_prompts(prompts_path, {}, corpus_path);

  std::vector<const SampleRecord*> chosen;
  if (!ids_arg.empty()) {
    for (const auto& id : split(ids_arg, ',')) {
      auto it = std::find_if(records.begin(), records.end(), [&](const SampleRecord& r) { return r.path == id; });
      if (it == records.end()) throw UsageError("no record with path '" + id + "'");
      chosen.push_back(&*it);
    }
  } else {
    auto subset = select_split(records, parse_split(split_arg));
    subset.resize(std::min(count, subset.size()));
    chosen = subset;
  }

  fs::create_directories(out);
  auto summary = open_out(out / "summary.csv");
  summary << "id,map,peak_row,peak_col,peak_value,mediated_mass\n";
  for (std::size_t start = 0; start < chosen.size(); start += 32) {
    std::vector<const SampleRecord*> chunk(chosen.begin() + start,
                                           chosen.begin() + std::min(chosen.size(), start + 32));
    const Batch batch = make_batch(chunk, config, prompts, nullptr);
    std::vector<std::string> ids;
    for (const auto* r : chunk) ids.push_back(r->path);
    const auto ex = explain_batch(model, batch.images, ids, batch.prompts.empty() ? nullptr : &batch.prompts);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const fs::path dir = out / file_stem_for(chunk[i]->path);
      fs::create_directories(dir);
      auto row = [&](const AttentionMap& m, const std::string& name, const std::string& mediated) {
        const auto peak = std::max_element(m.values.begin(), m.values.end()) - m.values.begin();
        summary << csv_field(chunk[i]->path) << "," << name << "," << peak / m.grid << "," << peak % m.grid << ","
                << fixed(m.values[peak], 6) << "," << mediated << "\n";
      };
      for (const auto& m : ex[i].attributes) {
        write_map_files(*chunk[i]->pixels, m, dir / m.tag);
        row(m, m.tag, "");
      }
      write_map_files(*chunk[i]->pixels, ex[i].gender.map, dir / "gender");
      row(ex[i].gender.map, "gender", fixed(ex[i].gender.mediated_mass, 6));
    }
  }
}

// ---- ablate ---------------------------------------------------------------

std::string on_off(bool v) { return v ? "on" : "off"; }

void cmd_ablate(const fs::path& matrix_path, const fs::path& base_path, const fs::path& corpus_path,
                const fs::path& out, std::ostream& log) {
  std::ifstream in(matrix_path);
  if (!in) throw UsageError("cannot open " + matrix_path.string());
  std::stringstream text;
  text << in.rdbuf();
  const RunConfig base = base_path.empty() ? RunConfig::toy() : load_run_config(base_path);
  const auto cells = expand_ablation_matrix(text.str(), base);
  const auto records = load_corpus(corpus_path);

  fs::create_directories(out);
  std::vector<std::string> rows;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    RunConfig config = cells[i].config;
    config.corpus = corpus_path;
    const std::string name = "cell" + std::to_string(i + 1);
    config.out = out / name;
    const auto prompts = resolve_prompts({}, config.prompts, corpus_path);
    TrainOptions options;
    options.out_dir = config.out;
    const auto result = train(config, records, prompts, options);
    const auto model = restore_model(result.best);
    const auto metrics = evaluate_fused(predict(model, select_split(records, Split::Val), config, prompts));
    const auto& t = config.train;
    rows.push_back(join_csv({name, std::to_string(config.model.attributes.size()), on_off(config.model.use_sca_path1),
                             on_off(config.model.use_sca_path2), std::to_string(t.freeze.visual_last),
                             std::to_string(t.freeze.text_last), fmt(t.lr_backbone) + "/" + fmt(t.lr_new_module),
                             fmt(config.model.dropout), std::to_string(t.epochs), fixed(100 * metrics.val_mA, 2),
                             fixed(100 * metrics.val_f1_macro, 2),
                             metrics.val_auc ? fixed(100 * *metrics.val_auc, 2) : "NA"}));
    std::string settings;
    for (const auto& [k, v] : cells[i].settings) settings += " " + k + "=" + v;
    log << name << settings << " mA " << fixed(100 * metrics.val_mA, 2) << "\n";
  }
  auto csv = open_out(out / "ablation.csv");
  csv << join_csv(kAblationHeader) << "\n";
  for (const auto& r : rows) csv << r << "\n";
}

// Library errors that mean the inputs were unusable.
bool is_input_error(const std::exception& e) {
  return dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
         dynamic_cast<const FormatError*>(&e) || dynamic_cast<const LabelError*>(&e) ||
         dynamic_cast<const LeakageError*>(&e) || dynamic_cast<const CorruptionError*>(&e) ||
         dynamic_cast<const ValidationError*>(&e);
}

}  // namespace

std::vector<AblationCell> expand_ablation_matrix(const std::string& text, const RunConfig& base) {
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> axes;
  for (const auto& [key, value] : parse_key_values(text)) {
    auto keys = split(key, ',');
    auto values = split(value, '|');
    for (const auto& v : values)
      if (v.empty()) throw ConfigError("empty value in matrix line for '" + key + "'");
    axes.emplace_back(std::move(keys), std::move(values));
  }
  std::vector<AblationCell> cells;
  std::vector<std::size_t> idx(axes.size(), 0);
  while (true) {
    AblationCell cell;
    auto pairs = base.to_pairs();
    for (std::size_t a = 0; a < axes.size(); ++a) {
      for (const auto& k : axes[a].first) {
        auto it = std::find_if(pairs.begin(), pairs.end(), [&](const auto& p) { return p.first == k; });
        if (it == pairs.end()) throw ConfigError("unknown config key '" + k + "' in matrix");
        it->second = axes[a].second[idx[a]];
        cell.settings.emplace_back(k, axes[a].second[idx[a]]);
      }
    }
    cell.config = RunConfig::from_pairs(pairs);
    cell.config.validate();
    cells.push_back(std::move(cell));
    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++idx[a] < axes[a].second.size()) break;
      idx[a] = 0;
      if (a == 0) return cells;
    }
    if (axes.empty()) return cells;
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-path vision-language gender and attribute classifier"};
  app.name("dualpath");
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Emit a synthetic corpus (CSV and PPM images)");
  std::size_t n = 2000, bins = 4, attr_count = 5;
  std::uint64_t seed = 7;
  double unknown_rate = 0.1;
  std::string out_dir;
  synth->add_option("--n", n, "Number of records")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Master seed");
  synth->add_option("--bins", bins, "Degradation bins per identity (1..4)")->check(CLI::Range(1, 4));
  synth->add_option("--attributes", attr_count, "Labelled attribute set size (5 or 7)")->check(CLI::IsMember({5, 7}));
  synth->add_option("--unknown-rate", unknown_rate, "Fraction of identities with masked cues")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--out", out_dir, "Output directory")->required();

  auto* harm = app.add_subcommand("harmonize", "Map source annotations to the unified ontology");
  std::string mapping, vocab, attributes = "5", missing = "neutral";
  std::vector<std::string> inputs;
  harm->add_option("--mapping", mapping, "Mapping CSV attribute,source,native_class,unified_index")
      ->required()
      ->check(CLI::ExistingFile);
  harm->add_option("--vocab", vocab, "Prompt vocabulary CSV attribute,class_index,description")
      ->required()
      ->check(CLI::ExistingFile);
  harm->add_option("--inputs", inputs, "Raw annotation CSVs")->required()->check(CLI::ExistingFile);
  harm->add_option("--attributes", attributes, "Attribute set: 5, 7 or name:K,...");
  harm->add_option("--missing-prompt", missing, "Missing-attribute prompts: neutral or omit");
  harm->add_option("--out", out_dir, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model; writes checkpoints, metrics.csv and config.txt");
  std::string config_path, corpus, resume;
  tr->add_option("--config", config_path, "Run config (key = value); toy defaults when omitted")
      ->check(CLI::ExistingFile);
  tr->add_option("--corpus", corpus, "Corpus CSV (overrides the config)")->check(CLI::ExistingFile);
  tr->add_option("--out", out_dir, "Output directory (overrides the config)");
  tr->add_option("--resume", resume, "Continue from a last.ckpt")->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint; metrics, strata and ROC points");
  std::string checkpoint, split_name_arg = "val", strata = "20,40,80", prompts;
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--corpus", corpus, "Corpus CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", split_name_arg, "train, val or test");
  ev->add_option("--strata", strata, "Ascending distance/height bin edges in metres");
  ev->add_option("--prompts", prompts, "Prompt vocabulary CSV")->check(CLI::ExistingFile);
  ev->add_option("--out", out_dir, "Output directory")->required();

  auto* ex = app.add_subcommand("explain", "Write attribute and gender heatmaps");
  std::string ids;
  std::size_t count = 8;
  ex->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ex->add_option("--corpus", corpus, "Corpus CSV")->required()->check(CLI::ExistingFile);
  ex->add_option("--ids", ids, "Comma-separated record paths; default is the first --count of --split");
  ex->add_option("--split", split_name_arg, "Split used when --ids is absent");
  ex->add_option("--count", count, "Samples used when --ids is absent")->check(CLI::PositiveNumber);
  ex->add_option("--prompts", prompts, "Prompt vocabulary CSV")->check(CLI::ExistingFile);
  ex->add_option("--out", out_dir, "Output directory")->required();

  auto* ab = app.add_subcommand("ablate", "Train every cell of a config matrix; writes ablation.csv");
  std::string matrix;
  ab->add_option("--config-matrix", matrix, "Matrix file: 'key = v1 | v2' per line")
      ->required()
      ->check(CLI::ExistingFile);
  ab->add_option("--config", config_path, "Base run config; toy defaults when omitted")->check(CLI::ExistingFile);
  ab->add_option("--corpus", corpus, "Corpus CSV")->required()->check(CLI::ExistingFile);
  ab->add_option("--out", out_dir, "Output directory")->required();

  std::vector<std::string> argv_store{"dualpath"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "usage error: " << msg << "\n";
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      cmd_synth(n, seed, bins, attr_count, unknown_rate, out_dir);
    } else if (harm->parsed()) {
      std::vector<fs::path> in_paths(inputs.begin(), inputs.end());
      cmd_harmonize(mapping, vocab, in_paths, attributes, missing, out_dir, err);
    } else if (tr->parsed()) {
      cmd_train(config_path, corpus, out_dir, resume, err);
    } else if (ev->parsed()) {
      cmd_eval(checkpoint, corpus, split_name_arg, strata, prompts, out_dir, err);
    } else if (ex->parsed()) {
      cmd_explain(checkpoint, corpus, ids, split_name_arg, count, prompts, out_dir);
    } else if (ab->parsed()) {
      cmd_ablate(matrix, config_path, corpus, out_dir, err);
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    const bool usage = is_input_error(e);
    err << (usage ? "usage error: " : "error: ") << msg << "\n";
    return usage ? kExitUsage : kExitRuntime;
  }
  return kExitOk;
}

}  // namespace dualpath
