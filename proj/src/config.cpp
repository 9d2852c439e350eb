#include "dualpath/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "dualpath/errors.hpp"

namespace dualpath {

namespace fs = std::filesystem;

TrainConfig TrainConfig::toy() {
  TrainConfig t;
  t.epochs = 30;
  t.batch_size = 16;
  t.lr_backbone = 1e-3;
  t.lr_new_module = 3e-3;
  t.decay_epochs = {20};
  t.freeze.visual_last = 2;
  return t;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  for (std::size_t e : decay_epochs)
    if (e < 1 || e > epochs)
      throw ConfigError("decay epoch " + std::to_string(e) + " outside [1, " + std::to_string(epochs) + "]");
  if (lr_backbone < 0 || lr_new_module < 0) throw ConfigError("learning rates must be nonnegative");
  if (decay_factor <= 0) throw ConfigError("decay factor must be positive");
  if (clip_norm <= 0) throw ConfigError("clip norm must be positive");
  if (weight_decay < 0) throw ConfigError("weight decay must be nonnegative");
  loss.validate();
}

RunConfig RunConfig::toy() {
  RunConfig c;
  c.model.attributes = synthetic_attributes(5);
  c.model.attribute_heads = 1;
  c.model.attribute_qk_gain = 4.0;
  c.model.dropout = 0.1;
  c.train = TrainConfig::toy();
  return c;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (train.freeze.visual_last > model.visual.depth)
    throw ConfigError("freeze_visual exceeds the visual depth " + std::to_string(model.visual.depth));
  if (train.freeze.text_last > model.text.depth)
    throw ConfigError("freeze_text exceeds the text depth " + std::to_string(model.text.depth));
  if (model.visual.image_size % model.visual.patch_size != 0)
    throw ConfigError("image size must be a multiple of the patch size");
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(std::size_t v) { return std::to_string(v); }

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError("bad value for " + key + ": '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw ConfigError("bad boolean for " + key + ": '" + s + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto sz = [&f](const std::string& key, std::function<std::size_t&(RunConfig&)> ref) {
      f.push_back({key, [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); },
                   [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_number<std::size_t>(key, v); }});
    };
    auto real = [&f](const std::string& key, std::function<double&(RunConfig&)> ref) {
      f.push_back({key, [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); },
                   [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_number<double>(key, v); }});
    };
    auto flag = [&f](const std::string& key, std::function<bool&(RunConfig&)> ref) {
      f.push_back({key, [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); },
                   [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); }});
    };
    auto path = [&f](const std::string& key, std::function<fs::path&(RunConfig&)> ref) {
      f.push_back({key, [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)).generic_string(); },
                   [ref](RunConfig& c, const std::string& v) { ref(c) = v; }});
    };

    sz("image_size", [](RunConfig& c) -> std::size_t& { return c.model.visual.image_size; });
    sz("patch_size", [](RunConfig& c) -> std::size_t& { return c.model.visual.patch_size; });
    sz("visual_width", [](RunConfig& c) -> std::size_t& { return c.model.visual.width; });
    sz("visual_depth", [](RunConfig& c) -> std::size_t& { return c.model.visual.depth; });
    sz("visual_heads", [](RunConfig& c) -> std::size_t& { return c.model.visual.heads; });
    sz("visual_mlp_ratio", [](RunConfig& c) -> std::size_t& { return c.model.visual.mlp_ratio; });
    sz("pos_grid", [](RunConfig& c) -> std::size_t& { return c.model.visual.pos_grid; });
    real("attribute_qk_gain", [](RunConfig& c) -> double& { return c.model.attribute_qk_gain; });
    sz("text_width", [](RunConfig& c) -> std::size_t& { return c.model.text.width; });
    sz("text_depth", [](RunConfig& c) -> std::size_t& { return c.model.text.depth; });
    sz("text_heads", [](RunConfig& c) -> std::size_t& { return c.model.text.heads; });
    sz("text_mlp_ratio", [](RunConfig& c) -> std::size_t& { return c.model.text.mlp_ratio; });
    sz("text_max_len", [](RunConfig& c) -> std::size_t& { return c.model.text.max_len; });
    f.push_back({"joint_dim", [](const RunConfig& c) { return fmt(c.model.joint_dim); },
                 [](RunConfig& c, const std::string& v) {
                   c.model.joint_dim = c.model.text.output_dim = parse_number<std::size_t>("joint_dim", v);
                 }});
    f.push_back({"attributes", [](const RunConfig& c) { return format_attribute_list(c.model.attributes); },
                 [](RunConfig& c, const std::string& v) { c.model.attributes = parse_attribute_list(v); }});
    flag("sca1", [](RunConfig& c) -> bool& { return c.model.use_sca_path1; });
    flag("sca2", [](RunConfig& c) -> bool& { return c.model.use_sca_path2; });
    sz("sca_reduction", [](RunConfig& c) -> std::size_t& { return c.model.sca_reduction; });
    sz("fusion_heads", [](RunConfig& c) -> std::size_t& { return c.model.fusion_heads; });
    sz("attribute_heads", [](RunConfig& c) -> std::size_t& { return c.model.attribute_heads; });
    real("dropout", [](RunConfig& c) -> double& { return c.model.dropout; });
    f.push_back({"prompt_mode",
                 [](const RunConfig& c) {
                   return std::string(c.model.prompt_mode == PromptMode::ClassLevel ? "class" : "sample");
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "class")
                     c.model.prompt_mode = PromptMode::ClassLevel;
                   else if (v == "sample")
                     c.model.prompt_mode = PromptMode::SampleLevel;
                   else
                     throw ConfigError("prompt_mode must be 'class' or 'sample', got '" + v + "'");
                 }});
    f.push_back({"missing_prompt",
                 [](const RunConfig& c) {
                   return std::string(c.missing_prompt == MissingPromptMode::Neutral ? "neutral" : "omit");
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "neutral")
                     c.missing_prompt = MissingPromptMode::Neutral;
                   else if (v == "omit")
                     c.missing_prompt = MissingPromptMode::Omit;
                   else
                     throw ConfigError("missing_prompt must be 'neutral' or 'omit', got '" + v + "'");
                 }});

    sz("epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; });
    sz("batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    real("lr_backbone", [](RunConfig& c) -> double& { return c.train.lr_backbone; });
    real("lr_new_module", [](RunConfig& c) -> double& { return c.train.lr_new_module; });
    f.push_back({"decay_epochs",
                 [](const RunConfig& c) {
                   std::string s;
                   for (auto e : c.train.decay_epochs) s += (s.empty() ? "" : ",") + std::to_string(e);
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.train.decay_epochs.clear();
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ','))
                     if (!trim(item).empty()) c.train.decay_epochs.push_back(parse_number<std::size_t>("decay_epochs", trim(item)));
                 }});
    real("decay_factor", [](RunConfig& c) -> double& { return c.train.decay_factor; });
    real("clip_norm", [](RunConfig& c) -> double& { return c.train.clip_norm; });
    real("weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
    real("alpha", [](RunConfig& c) -> double& { return c.train.loss.alpha; });
    real("lambda_g", [](RunConfig& c) -> double& { return c.train.loss.lambda_g; });
    real("lambda_a", [](RunConfig& c) -> double& { return c.train.loss.lambda_a; });
    f.push_back({"seed", [](const RunConfig& c) { return std::to_string(c.train.seed); },
                 [](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("seed", v); }});
    sz("freeze_visual", [](RunConfig& c) -> std::size_t& { return c.train.freeze.visual_last; });
    sz("freeze_text", [](RunConfig& c) -> std::size_t& { return c.train.freeze.text_last; });
    path("corpus", [](RunConfig& c) -> fs::path& { return c.corpus; });
    path("prompts", [](RunConfig& c) -> fs::path& { return c.prompts; });
    path("out", [](RunConfig& c) -> fs::path& { return c.out; });
    return f;
  }();
  return table;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> RunConfig::to_pairs() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

RunConfig RunConfig::from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  RunConfig c = toy();
  for (const auto& [key, value] : pairs) {
    const Field* hit = nullptr;
    for (const auto& f : fields())
      if (f.key == key) hit = &f;
    if (!hit) throw ConfigError("unknown config key '" + key + "'");
    hit->set(c, value);
  }
  return c;
}

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!seen.insert(key).second) throw ConfigError("duplicate config key '" + key + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto config = RunConfig::from_pairs(parse_key_values(ss.str()));
  // Relative corpus/prompt paths are taken relative to the config file.
  const auto base = path.parent_path();
  for (fs::path* p : {&config.corpus, &config.prompts})
    if (!p->empty() && p->is_relative()) *p = base / *p;
  return config;
}

std::string format_run_config(const RunConfig& config) {
  std::string s;
  for (const auto& [k, v] : config.to_pairs()) s += k + " = " + v + "\n";
  return s;
}

void save_run_config(const RunConfig& config, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_run_config(config);
}

std::vector<AttributeSpec> parse_attribute_list(const std::string& text) {
  const std::string t = trim(text);
  if (t == "5" || t == "7") return synthetic_attributes(t == "5" ? 5 : 7);
  std::vector<AttributeSpec> out;
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("attribute entry '" + item + "' must be name:classes");
    AttributeSpec spec{trim(item.substr(0, colon)), parse_number<std::size_t>("attributes", trim(item.substr(colon + 1)))};
    attribute_column(spec.name);
    out.push_back(spec);
  }
  if (out.empty()) throw ConfigError("attribute list is empty");
  return out;
}

std::string format_attribute_list(const std::vector<AttributeSpec>& attributes) {
  std::string s;
  for (const auto& a : attributes) s += (s.empty() ? "" : ",") + a.name + ":" + std::to_string(a.classes);
  return s;
}

}  // namespace dualpath
