#include "richunet/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "richunet/error.hpp"

namespace richunet {

namespace {

// Every configurable field, with a double view used for checkpoint snapshots.
struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> parse;
  std::function<std::string(const RunConfig&)> format;
  std::function<std::vector<double>(const RunConfig&)> to_doubles;
  std::function<void(RunConfig&, const Tensor&)> from_tensor;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v) {
  std::istringstream in(v);
  in.imbue(std::locale::classic());
  double out = 0;
  in >> out;
  if (!in || !in.eof()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("expected true/false, got '" + v + "'");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Field size_field(const char* key, std::size_t RichUNetConfig::*m) {
  return {key, [m](RunConfig& c, const std::string& v) { c.model.*m = parse_size(v); },
          [m](const RunConfig& c) { return std::to_string(c.model.*m); },
          [m](const RunConfig& c) { return std::vector<double>{static_cast<double>(c.model.*m)}; },
          [m](RunConfig& c, const Tensor& t) { c.model.*m = static_cast<std::size_t>(t.item()); }};
}

Field size_field(const char* key, std::size_t TrainConfig::*m) {
  return {key, [m](RunConfig& c, const std::string& v) { c.train.*m = parse_size(v); },
          [m](const RunConfig& c) { return std::to_string(c.train.*m); },
          [m](const RunConfig& c) { return std::vector<double>{static_cast<double>(c.train.*m)}; },
          [m](RunConfig& c, const Tensor& t) { c.train.*m = static_cast<std::size_t>(t.item()); }};
}

Field double_field(const char* key, double RichUNetConfig::*m) {
  return {key, [m](RunConfig& c, const std::string& v) { c.model.*m = parse_double(v); },
          [m](const RunConfig& c) { return format_double(c.model.*m); },
          [m](const RunConfig& c) { return std::vector<double>{c.model.*m}; },
          [m](RunConfig& c, const Tensor& t) { c.model.*m = t.item(); }};
}

Field double_field(const char* key, double TrainConfig::*m) {
  return {key, [m](RunConfig& c, const std::string& v) { c.train.*m = parse_double(v); },
          [m](const RunConfig& c) { return format_double(c.train.*m); },
          [m](const RunConfig& c) { return std::vector<double>{c.train.*m}; },
          [m](RunConfig& c, const Tensor& t) { c.train.*m = t.item(); }};
}

Field bool_field(const char* key, bool RichUNetConfig::*m) {
  return {key, [m](RunConfig& c, const std::string& v) { c.model.*m = parse_bool(v); },
          [m](const RunConfig& c) { return std::string(c.model.*m ? "true" : "false"); },
          [m](const RunConfig& c) { return std::vector<double>{c.model.*m ? 1.0 : 0.0}; },
          [m](RunConfig& c, const Tensor& t) { c.model.*m = t.item() != 0.0; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(size_field("in_channels", &RichUNetConfig::in_channels));
    f.push_back(size_field("num_classes", &RichUNetConfig::num_classes));
    f.push_back({"stage_channels",
                 [](RunConfig& c, const std::string& v) {
                   std::vector<std::size_t> parts;
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ',')) parts.push_back(parse_size(trim(item)));
                   if (parts.size() != 3) throw ConfigError("stage_channels needs exactly 3 values");
                   c.model.stage_channels = {parts[0], parts[1], parts[2]};
                 },
                 [](const RunConfig& c) {
                   const auto& s = c.model.stage_channels;
                   return std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]);
                 },
                 [](const RunConfig& c) {
                   const auto& s = c.model.stage_channels;
                   return std::vector<double>{static_cast<double>(s[0]), static_cast<double>(s[1]),
                                              static_cast<double>(s[2])};
                 },
                 [](RunConfig& c, const Tensor& t) {
                   if (t.size() != 3) throw ParseError("checkpoint: config.stage_channels needs 3 values", 0);
                   for (std::size_t i = 0; i < 3; ++i) c.model.stage_channels[i] = static_cast<std::size_t>(t[i]);
                 }});
    f.push_back(size_field("heads", &RichUNetConfig::heads));
    f.push_back(size_field("topk", &RichUNetConfig::topk));
    f.push_back(double_field("drop_rate", &RichUNetConfig::drop_rate));
    f.push_back(size_field("patch_size", &RichUNetConfig::patch_size));
    f.push_back(size_field("bottleneck_channels", &RichUNetConfig::bottleneck_channels));
    f.push_back(size_field("reduction", &RichUNetConfig::reduction));
    f.push_back(bool_field("use_k_attention", &RichUNetConfig::use_k_attention));
    f.push_back(bool_field("use_fusion_layer", &RichUNetConfig::use_fusion_layer));
    f.push_back(bool_field("use_msagf", &RichUNetConfig::use_msagf));
    f.push_back(double_field("learning_rate", &TrainConfig::learning_rate));
    f.push_back(size_field("epochs", &TrainConfig::epochs));
    f.push_back(size_field("batch_size", &TrainConfig::batch_size));
    f.push_back({"seed", [](RunConfig& c, const std::string& v) { c.train.seed = parse_u64(v); },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); },
                 [](const RunConfig& c) { return std::vector<double>{u64_bits_to_double(c.train.seed)}; },
                 [](RunConfig& c, const Tensor& t) { c.train.seed = double_bits_to_u64(t.item()); }});
    f.push_back(double_field("beta1", &TrainConfig::beta1));
    f.push_back(double_field("beta2", &TrainConfig::beta2));
    f.push_back(double_field("adam_eps", &TrainConfig::adam_eps));
    f.push_back(double_field("loss_lambda", &TrainConfig::loss_lambda));
    f.push_back(size_field("checkpoint_every", &TrainConfig::checkpoint_every));
    f.push_back(size_field("steps", &TrainConfig::steps));
    return f;
  }();
  return table;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("invalid config: learning_rate must be non-negative");
  if (batch_size == 0) throw ConfigError("invalid config: batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("invalid config: beta1/beta2 must lie in [0,1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("invalid config: adam_eps must be positive");
  if (!(loss_lambda >= 0.0 && loss_lambda <= 1.0)) throw ConfigError("invalid config: loss_lambda must lie in [0,1]");
}

std::size_t TrainConfig::total_steps(std::size_t dataset_size) const {
  if (steps != 0) return steps;
  return epochs * ((dataset_size + batch_size - 1) / batch_size);
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::map<std::string, const Field*> index;
  for (const auto& f : fields()) index.emplace(f.key, &f);
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(number) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError("config line " + std::to_string(number) + ": unknown key '" + key + "'");
    try {
      it->second->parse(base, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(number) + " (" + key + "): " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), std::move(base));
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.format(config) + "\n";
  return out;
}

void store_config(const RunConfig& config, Checkpoint& checkpoint) {
  for (const auto& f : fields()) {
    std::vector<double> values = f.to_doubles(config);
    const std::size_t n = values.size();
    checkpoint.add(std::string("config.") + f.key, Tensor({n}, std::move(values)));
  }
}

RunConfig restore_config(const Checkpoint& checkpoint) {
  RunConfig config;
  for (const auto& f : fields()) f.from_tensor(config, checkpoint.get(std::string("config.") + f.key));
  return config;
}

}  // namespace richunet
