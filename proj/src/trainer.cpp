#include "dualpath/trainer.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "dualpath/csv.hpp"
#include "dualpath/errors.hpp"
#include "dualpath/metrics.hpp"
#include "dualpath/objective.hpp"
#include "dualpath/random.hpp"

namespace dualpath {

namespace fs = std::filesystem;

double lr_at(std::size_t epoch, double base, const std::vector<std::size_t>& decay_epochs, double factor) {
  if (epoch < 1) throw ConfigError("epochs are counted from 1");
  double lr = base;
  for (std::size_t e : decay_epochs)
    if (e <= epoch) lr *= factor;
  return lr;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw FormatError("bad number for " + what + ": '" + s + "'");
  return v;
}

std::size_t parse_size(const std::string& s, const std::string& what) {
  std::size_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw FormatError("bad integer for " + what + ": '" + s + "'");
  return v;
}

}  // namespace

// ---- metric log -----------------------------------------------------------

const std::vector<std::string> kMetricLogHeader = {"epoch",        "train_loss",          "val_acc",
                                                   "val_mA",       "val_F1_macro",        "val_precision_macro",
                                                   "val_recall_weighted", "val_auc"};

std::string metric_log_row(const EpochMetrics& m) {
  return std::to_string(m.epoch) + "," + fmt(m.train_loss) + "," + fmt(m.val_acc) + "," + fmt(m.val_mA) + "," +
         fmt(m.val_f1_macro) + "," + fmt(m.val_precision_macro) + "," + fmt(m.val_recall_weighted) + "," +
         (m.val_auc ? fmt(*m.val_auc) : "NA");
}

EpochMetrics parse_metric_log_row(const std::vector<std::string>& f) {
  if (f.size() != kMetricLogHeader.size()) throw FormatError("metric log row has the wrong width");
  EpochMetrics m;
  m.epoch = parse_size(f[0], "epoch");
  m.train_loss = parse_double(f[1], "train_loss");
  m.val_acc = parse_double(f[2], "val_acc");
  m.val_mA = parse_double(f[3], "val_mA");
  m.val_f1_macro = parse_double(f[4], "val_F1_macro");
  m.val_precision_macro = parse_double(f[5], "val_precision_macro");
  m.val_recall_weighted = parse_double(f[6], "val_recall_weighted");
  if (f[7] != "NA") m.val_auc = parse_double(f[7], "val_auc");
  return m;
}

void write_metric_log(const fs::path& path, const std::vector<EpochMetrics>& log) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < kMetricLogHeader.size(); ++i) out << (i ? "," : "") << kMetricLogHeader[i];
  out << '\n';
  for (const auto& m : log) out << metric_log_row(m) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<EpochMetrics> read_metric_log(const fs::path& path) {
  const auto table = read_csv(path, kMetricLogHeader);
  std::vector<EpochMetrics> log;
  for (const auto& row : table.rows) log.push_back(parse_metric_log_row(row));
  return log;
}

// ---- model and batches ----------------------------------------------------

DualPathModel build_model(const RunConfig& config, const PromptVocabulary& prompts) {
  config.validate();
  prompts.validate(config.model.attributes);
  std::vector<std::string> queries;
  for (const auto& a : config.model.attributes) queries.push_back(prompts.class_query(a.name));
  return DualPathModel(config.model, Vocabulary::build(prompts.texts()), std::move(queries), config.train.seed);
}

Batch make_batch(const std::vector<const SampleRecord*>& records, const RunConfig& config,
                 const PromptVocabulary& prompts, std::mt19937_64* flip_rng) {
  Batch batch;
  std::vector<const Image8*> images;
  const auto& attrs = config.model.attributes;
  batch.attributes.assign(attrs.size(), {});
  for (const SampleRecord* r : records) {
    if (!r->pixels) throw StateError("record " + r->path + " has no pixels loaded");
    images.push_back(&*r->pixels);
    batch.gender.push_back(r->gender);
    for (std::size_t a = 0; a < attrs.size(); ++a) batch.attributes[a].push_back(r->attribute(attrs[a].name));
    if (config.model.prompt_mode == PromptMode::SampleLevel) {
      std::vector<std::string> row;
      for (const auto& spec : attrs) {
        const int v = r->attribute(spec.name);
        row.push_back(v == kNoLabel ? prompts.neutral() : prompts.description(spec.name, v));
      }
      batch.prompts.push_back(std::move(row));
    }
  }
  NormalizeOptions opts;
  opts.image_size = config.model.visual.image_size;
  opts.train = flip_rng != nullptr;
  opts.rng = flip_rng;
  batch.images = normalize_batch(images, opts);
  return batch;
}

namespace {

std::vector<std::array<double, 3>> softmax3(const Tensor& logits) {
  std::vector<std::array<double, 3>> out(logits.dim(0));
  for (std::size_t b = 0; b < out.size(); ++b) {
    const double* l = logits.data().data() + b * 3;
    const double m = std::max({l[0], l[1], l[2]});
    double z = 0.0;
    for (int k = 0; k < 3; ++k) z += out[b][k] = std::exp(l[k] - m);
    for (int k = 0; k < 3; ++k) out[b][k] /= z;
  }
  return out;
}

int argmax3(const std::array<double, 3>& p) {
  int best = 0;
  for (int k = 1; k < 3; ++k)
    if (p[k] > p[best]) best = k;
  return best;
}

}  // namespace

Predictions predict(const DualPathModel& model, const std::vector<const SampleRecord*>& records,
                    const RunConfig& config, const PromptVocabulary& prompts, std::size_t batch_size) {
  NoGradGuard guard;
  Predictions p;
  p.attributes.assign(config.model.attributes.size(), {});
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    std::vector<const SampleRecord*> chunk(records.begin() + start,
                                           records.begin() + std::min(records.size(), start + batch_size));
    Batch batch = make_batch(chunk, config, prompts, nullptr);
    const auto out = model.forward(batch.images, {}, batch.prompts.empty() ? nullptr : &batch.prompts);
    for (auto& row : softmax3(out.gender_fused)) p.fused.push_back(row);
    for (auto& row : softmax3(out.gender_direct)) p.direct.push_back(row);
    for (auto& row : softmax3(out.gender_mediated)) p.mediated.push_back(row);
    for (std::size_t a = 0; a < out.attribute_logits.size(); ++a) {
      auto cls = classify(out.attribute_logits[a]);
      p.attributes[a].insert(p.attributes[a].end(), cls.begin(), cls.end());
    }
    p.gender.insert(p.gender.end(), batch.gender.begin(), batch.gender.end());
  }
  return p;
}

EpochMetrics evaluate_fused(const Predictions& predictions) {
  std::vector<int> pred;
  std::vector<double> score;
  for (const auto& row : predictions.fused) {
    pred.push_back(argmax3(row));
    score.push_back(row[kFemale]);
  }
  const auto core = core_metrics(pred, predictions.gender);
  EpochMetrics m;
  m.val_acc = core.accuracy;
  m.val_mA = core.balanced_accuracy;
  m.val_f1_macro = core.macro_f1;
  m.val_precision_macro = core.macro_precision;
  m.val_recall_weighted = core.weighted_recall;
  const bool has_pos = std::count(predictions.gender.begin(), predictions.gender.end(), kFemale) > 0;
  const bool has_neg = std::any_of(predictions.gender.begin(), predictions.gender.end(), [](int g) { return g != kFemale; });
  if (has_pos && has_neg) m.val_auc = auc_female_vs_rest(score, predictions.gender);
  return m;
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr const char* kMagic = "dualpath-checkpoint 1";

bool valid_token(const std::string& s) {
  return !s.empty() && s.find_first_of(" \t\r\n") == std::string::npos;
}

}  // namespace

const std::string* Checkpoint::find(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return &v;
  return nullptr;
}

const std::string& Checkpoint::get(const std::string& key) const {
  if (const auto* v = find(key)) return *v;
  throw CorruptionError("checkpoint lacks '" + key + "'");
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  std::ostringstream head;
  head << kMagic << '\n';
  for (const auto& [k, v] : ck.meta) {
    if (!valid_token(k) || v.find_first_of("\r\n") != std::string::npos)
      throw std::invalid_argument("checkpoint meta '" + k + "' is not a single-line entry");
    head << "meta " << k << '\t' << v << '\n';
  }
  for (const auto& t : ck.vocabulary) {
    if (!valid_token(t)) throw std::invalid_argument("vocabulary token contains whitespace");
    head << "vocab " << t << '\n';
  }
  for (const auto& q : ck.queries) {
    if (q.find_first_of("\r\n") != std::string::npos) throw std::invalid_argument("query spans lines");
    head << "query " << q << '\n';
  }
  std::size_t total = 0;
  for (const auto& [name, t] : ck.tensors) {
    if (!valid_token(name)) throw std::invalid_argument("tensor name contains whitespace");
    head << "tensor " << name << ' ' << t.numel();
    for (std::size_t d : t.shape()) head << ' ' << d;
    head << '\n';
    total += t.numel();
  }
  head << "doubles " << total << "\n\n";

  std::string payload(total * 8, '\0');
  std::size_t pos = 0;
  for (const auto& [name, t] : ck.tensors)
    for (double v : t.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) payload[pos++] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    const std::string h = head.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  const auto end = bytes.find("\n\n");
  if (end == std::string::npos) throw CorruptionError(path.string() + ": manifest is not terminated by a blank line");
  std::istringstream head(bytes.substr(0, end + 1));
  std::string line;
  if (!std::getline(head, line) || line != kMagic) throw CorruptionError(path.string() + ": not a checkpoint");

  Checkpoint ck;
  struct Entry {
    std::string name;
    std::size_t count;
    Shape shape;
  };
  std::vector<Entry> entries;
  std::optional<std::size_t> declared;
  while (std::getline(head, line)) {
    const auto sp = line.find(' ');
    const std::string kind = line.substr(0, sp);
    const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (kind == "meta") {
      const auto tab = rest.find('\t');
      if (tab == std::string::npos) throw CorruptionError("malformed meta line: " + line);
      ck.meta.emplace_back(rest.substr(0, tab), rest.substr(tab + 1));
    } else if (kind == "vocab") {
      ck.vocabulary.push_back(rest);
    } else if (kind == "query") {
      ck.queries.push_back(rest);
    } else if (kind == "tensor") {
      std::istringstream ss(rest);
      Entry e;
      if (!(ss >> e.name >> e.count)) throw CorruptionError("malformed tensor line: " + line);
      std::size_t d;
      while (ss >> d) e.shape.push_back(d);
      if (!ss.eof() || shape_numel(e.shape) != e.count)
        throw CorruptionError("tensor '" + e.name + "' shape does not match its length");
      entries.push_back(std::move(e));
    } else if (kind == "doubles") {
      try {
        declared = parse_size(rest, "doubles");
      } catch (const FormatError& e) {
        throw CorruptionError(e.what());
      }
    } else {
      throw CorruptionError("unknown manifest line: " + line);
    }
  }
  std::size_t total = 0;
  for (const auto& e : entries) total += e.count;
  if (!declared || *declared != total) throw CorruptionError("manifest tensor lengths disagree with the declared total");
  const std::size_t payload_start = end + 2;
  if (bytes.size() - payload_start != total * 8)
    throw CorruptionError(path.string() + ": payload holds " + std::to_string(bytes.size() - payload_start) +
                          " bytes, manifest expects " + std::to_string(total * 8));
  std::size_t pos = payload_start;
  for (auto& e : entries) {
    std::vector<double> data(e.count);
    for (auto& v : data) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * b);
      v = std::bit_cast<double>(bits);
    }
    ck.tensors.emplace_back(e.name, Tensor(e.shape, std::move(data)));
  }
  return ck;
}

Checkpoint make_checkpoint(const RunConfig& config, const DualPathModel& model, const AdamW* optimizer,
                           const TrainProgress& progress) {
  Checkpoint ck;
  for (const auto& [k, v] : config.to_pairs()) ck.meta.emplace_back("config." + k, v);
  ck.meta.emplace_back("epoch", std::to_string(progress.epoch));
  ck.meta.emplace_back("best_epoch", std::to_string(progress.best_epoch));
  ck.meta.emplace_back("best_val_acc", fmt(progress.best_val_acc));
  for (const auto& m : progress.log) ck.meta.emplace_back("log." + std::to_string(m.epoch), metric_log_row(m));
  ck.vocabulary = model.vocabulary().tokens();
  ck.queries = model.attribute_queries();
  const auto params = model.parameters();
  for (const auto& p : params) ck.tensors.emplace_back("param." + p.name, p.tensor.clone());
  if (optimizer) {
    ck.meta.emplace_back("optimizer.step", std::to_string(optimizer->step_count()));
    const auto& moments = optimizer->moments();
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (moments[i].m.empty()) continue;
      const Shape shape = params[i].tensor.shape();
      ck.tensors.emplace_back("adam.m." + params[i].name, Tensor(shape, moments[i].m));
      ck.tensors.emplace_back("adam.v." + params[i].name, Tensor(shape, moments[i].v));
    }
  }
  return ck;
}

RunConfig checkpoint_config(const Checkpoint& ck) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& [k, v] : ck.meta)
    if (k.rfind("config.", 0) == 0) pairs.emplace_back(k.substr(7), v);
  try {
    return RunConfig::from_pairs(pairs);
  } catch (const ConfigError& e) {
    throw CorruptionError(std::string("checkpoint config: ") + e.what());
  }
}

TrainProgress checkpoint_progress(const Checkpoint& ck) {
  TrainProgress p;
  try {
    p.epoch = parse_size(ck.get("epoch"), "epoch");
    p.best_epoch = parse_size(ck.get("best_epoch"), "best_epoch");
    p.best_val_acc = parse_double(ck.get("best_val_acc"), "best_val_acc");
    for (std::size_t e = 1; e <= p.epoch; ++e) p.log.push_back(parse_metric_log_row(parse_csv_line(ck.get("log." + std::to_string(e)))));
  } catch (const FormatError& e) {
    throw CorruptionError(std::string("checkpoint progress: ") + e.what());
  }
  return p;
}

void load_parameters(const Checkpoint& ck, DualPathModel& model) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ck.tensors) by_name[name] = &t;
  auto params = model.parameters();
  for (const auto& p : params) {
    auto it = by_name.find("param." + p.name);
    if (it == by_name.end()) throw CorruptionError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape())
      throw CorruptionError("parameter '" + p.name + "' has shape " + shape_str(it->second->shape()) +
                            " in the checkpoint, model expects " + shape_str(p.tensor.shape()));
  }
  for (auto& p : params) {
    auto src = by_name.at("param." + p.name)->data();
    std::copy(src.begin(), src.end(), p.tensor.mutable_data().begin());
  }
}

DualPathModel restore_model(const Checkpoint& ck) {
  const RunConfig config = checkpoint_config(ck);
  DualPathModel model(config.model, Vocabulary(ck.vocabulary), ck.queries, config.train.seed);
  model.apply_freeze_policy(config.train.freeze);
  load_parameters(ck, model);
  return model;
}

void restore_optimizer(const Checkpoint& ck, const DualPathModel& model, AdamW& optimizer) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ck.tensors) by_name[name] = &t;
  const auto params = model.parameters();
  std::vector<AdamW::Moments> moments(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (optimizer.moments()[i].m.empty()) continue;
    auto m = by_name.find("adam.m." + params[i].name), v = by_name.find("adam.v." + params[i].name);
    if (m == by_name.end() || v == by_name.end())
      throw CorruptionError("checkpoint lacks optimizer moments for '" + params[i].name + "'");
    moments[i].m.assign(m->second->data().begin(), m->second->data().end());
    moments[i].v.assign(v->second->data().begin(), v->second->data().end());
  }
  std::uint64_t step = 0;
  try {
    step = parse_size(ck.get("optimizer.step"), "optimizer.step");
  } catch (const FormatError& e) {
    throw CorruptionError(e.what());
  }
  optimizer.restore(step, std::move(moments));
}

// ---- training -------------------------------------------------------------

namespace {

// Paths do not affect the trajectory, so a resumed run may move its files.
bool same_training_config(const RunConfig& a, const RunConfig& b) {
  auto strip = [](RunConfig c) {
    c.corpus.clear();
    c.prompts.clear();
    c.out.clear();
    return c.to_pairs();
  };
  return strip(a) == strip(b);
}

}  // namespace

TrainResult train(const RunConfig& config, const std::vector<SampleRecord>& records, const PromptVocabulary& prompts,
                  const TrainOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  validate_labels(records, config.model.attributes);
  check_split_hygiene(records);
  std::vector<const SampleRecord*> train_set, val_set;
  for (const auto& r : records) {
    if (r.split == Split::Train) train_set.push_back(&r);
    if (r.split == Split::Val) val_set.push_back(&r);
  }
  if (train_set.empty()) throw ConfigError("corpus has no train samples");
  if (val_set.empty()) throw ConfigError("corpus has no val samples");

  DualPathModel model = build_model(config, prompts);
  model.apply_freeze_policy(config.train.freeze);
  auto params = model.parameters();
  AdamWConfig oc;
  oc.weight_decay = config.train.weight_decay;
  oc.lr_backbone = config.train.lr_backbone;
  oc.lr_new_module = config.train.lr_new_module;
  AdamW optimizer(params, oc);

  TrainResult result;
  TrainProgress progress;
  if (options.resume) {
    const Checkpoint ck = load_checkpoint(*options.resume);
    if (!same_training_config(checkpoint_config(ck), config))
      throw ConfigError("resume checkpoint was written with a different configuration");
    load_parameters(ck, model);
    restore_optimizer(ck, model, optimizer);
    progress = checkpoint_progress(ck);
    if (progress.best_epoch > 0) {
      const fs::path best_path = options.resume->parent_path() / "best.ckpt";
      if (!fs::exists(best_path)) throw ConfigError("resume needs " + best_path.string());
      result.best = load_checkpoint(best_path);
      if (checkpoint_progress(result.best).epoch != progress.best_epoch)
        throw CorruptionError(best_path.string() + " does not hold the recorded best epoch");
    }
  }

  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    save_run_config(config, options.out_dir / "config.txt");
  }

  const std::size_t last_epoch =
      options.stop_after_epoch ? std::min(options.stop_after_epoch, config.train.epochs) : config.train.epochs;
  const auto& tc = config.train;
  for (std::size_t epoch = progress.epoch + 1; epoch <= last_epoch; ++epoch) {
    optimizer.set_learning_rates(lr_at(epoch, tc.lr_backbone, tc.decay_epochs, tc.decay_factor),
                                 lr_at(epoch, tc.lr_new_module, tc.decay_epochs, tc.decay_factor));
    std::vector<const SampleRecord*> order = train_set;
    auto shuffle_rng = make_rng(tc.seed, "train.shuffle", epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);
    auto dropout_rng = make_rng(tc.seed, "train.dropout", epoch);
    auto flip_rng = make_rng(tc.seed, "train.flip", epoch);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++batches) {
      std::vector<const SampleRecord*> chunk(order.begin() + start,
                                             order.begin() + std::min(order.size(), start + tc.batch_size));
      const Batch batch = make_batch(chunk, config, prompts, &flip_rng);
      zero_grad(params);
      try {
        ForwardOptions fo;
        fo.training = true;
        fo.rng = &dropout_rng;
        const auto out = model.forward(batch.images, fo, batch.prompts.empty() ? nullptr : &batch.prompts);
        const Tensor lg = gender_loss(out.gender_fused, out.gender_direct, out.gender_mediated, batch.gender,
                                      tc.loss.alpha);
        const Tensor la = attribute_loss(out.attribute_logits, batch.attributes);
        const Tensor loss = total_loss(lg, la, tc.loss.lambda_g, tc.loss.lambda_a);
        if (!std::isfinite(loss.item())) throw NumericError("loss is " + fmt(loss.item()));
        loss.backward();
        loss_sum += loss.item();
      } catch (const NumericError& e) {
        throw NumericError("non-finite value at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches) + " (first sample " + chunk.front()->path + "): " + e.what());
      }
      clip_global_norm(params, tc.clip_norm);
      optimizer.step(params);
    }

    EpochMetrics m = evaluate_fused(predict(model, val_set, config, prompts));
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(batches);
    progress.log.push_back(m);
    progress.epoch = epoch;
    const bool improved = m.val_acc > progress.best_val_acc;
    if (improved) {
      progress.best_epoch = epoch;
      progress.best_val_acc = m.val_acc;
    }
    result.last = make_checkpoint(config, model, &optimizer, progress);
    if (improved) result.best = result.last;
    if (!options.out_dir.empty()) {
      write_metric_log(options.out_dir / "metrics.csv", progress.log);
      if (improved) save_checkpoint(options.out_dir / "best.ckpt", result.best);
      save_checkpoint(options.out_dir / "last.ckpt", result.last);
    }
    if (options.on_epoch) options.on_epoch(m);
  }
  if (progress.epoch == 0) result.last = make_checkpoint(config, model, &optimizer, progress);

  result.log = progress.log;
  result.best_epoch = progress.best_epoch;
  result.best_val_acc = progress.best_val_acc;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace dualpath
