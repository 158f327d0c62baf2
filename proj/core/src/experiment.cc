// Copyright 2026 The ftis Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ftis/experiment.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ftis/errors.h"
#include "ftis/random.h"
#include "json.hpp"

#ifndef FTIS_VERSION
#define FTIS_VERSION "unknown"
#endif

namespace ftis::experiment {
namespace {

using nlohmann::json;

std::string_view style_name(task::ThinkStyle s) {
  switch (s) {
    case task::ThinkStyle::kEmpty:
      return "empty";
    case task::ThinkStyle::kRestate:
      return "restate";
    case task::ThinkStyle::kOperands:
      return "operands";
  }
  return "?";
}

std::string_view corpus_name(WarmupCorpus c) {
  switch (c) {
    case WarmupCorpus::kAll:
      return "all";
    case WarmupCorpus::kTrain:
      return "train";
    case WarmupCorpus::kPlusOnly:
      return "plus";
    case WarmupCorpus::kTimesOnly:
      return "times";
  }
  return "?";
}

std::string_view block_name(policy::Block b) {
  switch (b) {
    case policy::Block::kEmbedding:
      return "embedding";
    case policy::Block::kHidden:
      return "hidden";
    case policy::Block::kOutput:
      return "output";
  }
  return "?";
}

// Walks one JSON object, remembering the dotted path for error messages and
// rejecting keys nobody asked for.
class Reader {
 public:
  Reader(const json& object, std::string path)
      : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <typename Fn>
  void field(const char* key, Fn&& read) {
    seen_.insert(key);
    auto it = object_.find(key);
    if (it == object_.end()) return;
    try {
      read(*it, child(key));
    } catch (const json::exception&) {
      fail(child(key), "wrong type");
    }
  }

  void unsigned_int(const char* key, std::size_t& out) {
    field(key, [&](const json& v, const std::string& path) {
      if (!v.is_number_unsigned()) fail(path, "expected a non-negative integer");
      out = v.get<std::size_t>();
    });
  }

  void seed(const char* key, std::uint64_t& out) {
    field(key, [&](const json& v, const std::string& path) {
      if (!v.is_number_unsigned()) fail(path, "expected a non-negative integer");
      out = v.get<std::uint64_t>();
    });
  }

  void real(const char* key, double& out) {
    field(key, [&](const json& v, const std::string& path) {
      if (!v.is_number()) fail(path, "expected a number");
      out = v.get<double>();
    });
  }

  void boolean(const char* key, bool& out) {
    field(key, [&](const json& v, const std::string& path) {
      if (!v.is_boolean()) fail(path, "expected true or false");
      out = v.get<bool>();
    });
  }

  void string(const char* key, std::string& out) {
    field(key, [&](const json& v, const std::string& path) {
      if (!v.is_string()) fail(path, "expected a string");
      out = v.get<std::string>();
    });
  }

  // Parses a string field through `parse`, turning library errors into
  // field-level ones.
  template <typename T, typename Parse>
  void named(const char* key, T& out, Parse&& parse) {
    field(key, [&](const json& v, const std::string& path) {
      if (!v.is_string()) fail(path, "expected a string");
      try {
        out = parse(v.get<std::string>());
      } catch (const Error& e) {
        fail(path, e.what());
      }
    });
  }

  void finish() const {
    for (auto it = object_.begin(); it != object_.end(); ++it) {
      if (!seen_.count(it.key())) fail(child(it.key()), "unknown field");
    }
  }

  std::string child(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError("config field '" + path + "': " + what);
  }

 private:
  const json& object_;
  std::string path_;
  std::set<std::string> seen_;
};

task::ThinkStyle parse_style(const std::string& s) {
  for (auto v : {task::ThinkStyle::kEmpty, task::ThinkStyle::kRestate,
                 task::ThinkStyle::kOperands}) {
    if (s == style_name(v)) return v;
  }
  throw ConfigError("unknown think style '" + s +
                    "' (expected empty, restate or operands)");
}

WarmupCorpus parse_corpus(const std::string& s) {
  for (auto v : {WarmupCorpus::kAll, WarmupCorpus::kTrain,
                 WarmupCorpus::kPlusOnly, WarmupCorpus::kTimesOnly}) {
    if (s == corpus_name(v)) return v;
  }
  throw ConfigError("unknown warm-up corpus '" + s +
                    "' (expected all, train, plus or times)");
}

policy::Block parse_block(const std::string& s) {
  for (auto v : {policy::Block::kEmbedding, policy::Block::kHidden,
                 policy::Block::kOutput}) {
    if (s == block_name(v)) return v;
  }
  throw ConfigError("unknown block '" + s +
                    "' (expected embedding, hidden or output)");
}

WarmupSpec read_warmup(const json& j, const std::string& path) {
  WarmupSpec w;
  Reader r(j, path);
  r.unsigned_int("steps", w.steps);
  r.unsigned_int("batch_size", w.batch_size);
  r.real("learning_rate", w.learning_rate);
  r.named("style", w.style, parse_style);
  r.real("answer_noise", w.answer_noise);
  r.real("format_noise", w.format_noise);
  r.named("corpus", w.corpus, parse_corpus);
  r.finish();
  return w;
}

NodeSpec read_node(const json& j, const std::string& path) {
  NodeSpec n;
  Reader r(j, path);
  r.string("name", n.name);
  r.unsigned_int("hidden_dim", n.hidden_dim);
  r.unsigned_int("embed_dim", n.embed_dim);
  r.unsigned_int("context_window", n.context_window);
  r.unsigned_int("adapter_rank", n.adapter_rank);
  r.field("frozen", [&](const json& v, const std::string& p) {
    if (!v.is_array()) Reader::fail(p, "expected an array of block names");
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string item = p + "[" + std::to_string(i) + "]";
      if (!v[i].is_string()) Reader::fail(item, "expected a string");
      try {
        n.frozen.push_back(parse_block(v[i].get<std::string>()));
      } catch (const Error& e) {
        Reader::fail(item, e.what());
      }
    }
  });
  r.field("variant", [&](const json& v, const std::string& p) {
    if (v.is_null()) return;
    if (!v.is_string()) Reader::fail(p, "expected a string or null");
    try {
      n.variant = grpo::parse_variant(v.get<std::string>());
    } catch (const Error& e) {
      Reader::fail(p, e.what());
    }
  });
  r.field("warmup", [&](const json& v, const std::string& p) {
    n.warmup = read_warmup(v, p);
  });
  r.finish();
  return n;
}

RunConfig read_config(const json& j) {
  RunConfig c;
  Reader r(j, "");
  r.string("name", c.name);
  r.unsigned_int("iterations", c.iterations);
  r.unsigned_int("batch_size", c.batch_size);
  r.unsigned_int("group_size", c.group_size);
  r.real("learning_rate", c.learning_rate);
  r.real("epsilon", c.epsilon);
  r.real("cap", c.cap);
  r.real("kl_threshold", c.kl_threshold);
  r.named("variant", c.variant,
          [](const std::string& s) { return grpo::parse_variant(s); });
  r.boolean("detach_truncation", c.detach_truncation);
  r.boolean("renormalize_filtered", c.renormalize_filtered);
  r.named("topology", c.topology,
          [](const std::string& s) { return swarm::parse_topology(s); });
  r.field("nodes", [&](const json& v, const std::string& p) {
    if (!v.is_array()) Reader::fail(p, "expected an array of nodes");
    for (std::size_t i = 0; i < v.size(); ++i) {
      c.nodes.push_back(read_node(v[i], p + "[" + std::to_string(i) + "]"));
    }
  });
  r.seed("seed", c.seed);
  r.unsigned_int("validation_cadence", c.validation_cadence);
  r.unsigned_int("validation_size", c.validation_size);
  r.unsigned_int("max_len", c.max_len);
  r.real("temperature", c.temperature);
  r.unsigned_int("inner_epochs", c.inner_epochs);
  r.boolean("parallel", c.parallel);
  r.field("task", [&](const json& v, const std::string& p) {
    Reader t(v, p);
    t.boolean("allow_plus", c.task.allow_plus);
    t.boolean("allow_times", c.task.allow_times);
    t.field("validation_percent", [&](const json& x, const std::string& xp) {
      if (!x.is_number_unsigned()) Reader::fail(xp, "expected a non-negative integer");
      c.task.validation_percent = x.get<std::uint32_t>();
    });
    t.finish();
  });
  r.string("output_dir", c.output_dir);
  r.finish();
  return c;
}

json write_config(const RunConfig& c) {
  json nodes = json::array();
  for (const NodeSpec& n : c.nodes) {
    json frozen = json::array();
    for (policy::Block b : n.frozen) frozen.push_back(block_name(b));
    nodes.push_back({
        {"name", n.name},
        {"hidden_dim", n.hidden_dim},
        {"embed_dim", n.embed_dim},
        {"context_window", n.context_window},
        {"adapter_rank", n.adapter_rank},
        {"frozen", frozen},
        {"variant", n.variant ? json(grpo::to_string(*n.variant)) : json()},
        {"warmup",
         {{"steps", n.warmup.steps},
          {"batch_size", n.warmup.batch_size},
          {"learning_rate", n.warmup.learning_rate},
          {"style", style_name(n.warmup.style)},
          {"answer_noise", n.warmup.answer_noise},
          {"format_noise", n.warmup.format_noise},
          {"corpus", corpus_name(n.warmup.corpus)}}},
    });
  }
  return {
      {"name", c.name},
      {"iterations", c.iterations},
      {"batch_size", c.batch_size},
      {"group_size", c.group_size},
      {"learning_rate", c.learning_rate},
      {"epsilon", c.epsilon},
      {"cap", c.cap},
      {"kl_threshold", c.kl_threshold},
      {"variant", grpo::to_string(c.variant)},
      {"detach_truncation", c.detach_truncation},
      {"renormalize_filtered", c.renormalize_filtered},
      {"topology", swarm::to_string(c.topology)},
      {"nodes", nodes},
      {"seed", c.seed},
      {"validation_cadence", c.validation_cadence},
      {"validation_size", c.validation_size},
      {"max_len", c.max_len},
      {"temperature", c.temperature},
      {"inner_epochs", c.inner_epochs},
      {"parallel", c.parallel},
      {"task",
       {{"allow_plus", c.task.allow_plus},
        {"allow_times", c.task.allow_times},
        {"validation_percent", c.task.validation_percent}}},
      {"output_dir", c.output_dir},
  };
}

std::uint64_t name_hash(std::string_view name) {
  // FNV-1a, 64 bit.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<task::TaskInstance> warmup_corpus(const task::TaskConfig& tc,
                                              WarmupCorpus which) {
  std::vector<task::TaskInstance> out = task::instances(tc, task::Split::kTrain);
  if (which != WarmupCorpus::kTrain) {
    auto held_out = task::instances(tc, task::Split::kValidation);
    out.insert(out.end(), held_out.begin(), held_out.end());
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
  }
  if (which == WarmupCorpus::kPlusOnly || which == WarmupCorpus::kTimesOnly) {
    const task::Operation keep = which == WarmupCorpus::kPlusOnly
                                     ? task::Operation::kPlus
                                     : task::Operation::kTimes;
    std::erase_if(out, [&](const auto& inst) { return inst.op != keep; });
  }
  return out;
}

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("write failed: " + path.string());
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Shared preset ingredients.
constexpr std::size_t kPresetIterations = 200;
constexpr double kPresetLearningRate = 1.0;

WarmupSpec preset_warmup(task::ThinkStyle style) {
  WarmupSpec w;
  w.steps = 6000;
  w.learning_rate = 3.0;
  w.style = style;
  w.format_noise = 0.6;
  w.answer_noise = 0.1;
  return w;
}

NodeSpec preset_node(std::string name, std::size_t width,
                     task::ThinkStyle style) {
  NodeSpec n;
  n.name = std::move(name);
  n.embed_dim = 16;
  n.hidden_dim = width;
  n.warmup = preset_warmup(style);
  return n;
}

RunConfig preset_base(std::string name, std::uint64_t seed) {
  RunConfig c;
  c.name = name;
  c.iterations = kPresetIterations;
  c.learning_rate = kPresetLearningRate;
  c.seed = seed;
  c.output_dir = "runs/" + name + "-seed" + std::to_string(seed);
  return c;
}

struct PresetEntry {
  const char* name;
  RunConfig (*build)(std::uint64_t seed);
};

// Width-16 node that writes out the operands and width-32 node that restates
// the problem; the different habits make each other's samples off-policy.
RunConfig hetero(const char* name, grpo::Variant v, std::uint64_t seed) {
  RunConfig c = preset_base(name, seed);
  c.variant = v;
  c.nodes = {preset_node("w16", 16, task::ThinkStyle::kOperands),
             preset_node("w32", 32, task::ThinkStyle::kRestate)};
  return c;
}

RunConfig solo(const char* name, std::size_t width, task::ThinkStyle style,
               std::uint64_t seed) {
  RunConfig c = preset_base(name, seed);
  c.nodes = {preset_node("w" + std::to_string(width), width, style)};
  return c;
}

RunConfig size_pair(const char* name, std::size_t small, std::size_t large,
                    std::uint64_t seed) {
  RunConfig c = preset_base(name, seed);
  c.nodes = {preset_node("w" + std::to_string(small), small,
                         task::ThinkStyle::kOperands),
             preset_node("w" + std::to_string(large), large,
                         task::ThinkStyle::kRestate)};
  return c;
}

// Two specialists: one warmed only on sums, the other only on products.
RunConfig expertise_pair(const char* name, std::size_t width,
                         std::uint64_t seed) {
  RunConfig c = preset_base(name, seed);
  NodeSpec plus = preset_node("plus", width, task::ThinkStyle::kOperands);
  plus.warmup.corpus = WarmupCorpus::kPlusOnly;
  NodeSpec times = preset_node("times", width, task::ThinkStyle::kRestate);
  times.warmup.corpus = WarmupCorpus::kTimesOnly;
  c.nodes = {plus, times};
  return c;
}

// Full fine-tuning next to a low-rank adapter over a frozen output layer.
RunConfig peft_pair(const char* name, std::size_t width, std::uint64_t seed) {
  RunConfig c = preset_base(name, seed);
  NodeSpec full = preset_node("full", width, task::ThinkStyle::kOperands);
  NodeSpec adapter = preset_node("adapter", width, task::ThinkStyle::kRestate);
  adapter.adapter_rank = 4;
  adapter.frozen = {policy::Block::kEmbedding};
  c.nodes = {full, adapter};
  return c;
}

RunConfig horizontal(const char* name, grpo::Variant v, std::uint64_t seed) {
  RunConfig c = hetero(name, v, seed);
  c.topology = swarm::Topology::kHorizontal;
  return c;
}

const std::vector<PresetEntry>& presets() {
  using grpo::Variant;
  static const std::vector<PresetEntry> table = {
      {"solo-baseline",
       [](std::uint64_t s) { return solo("solo-baseline", 16, task::ThinkStyle::kOperands, s); }},
      {"solo-w16",
       [](std::uint64_t s) { return solo("solo-w16", 16, task::ThinkStyle::kOperands, s); }},
      {"solo-w32",
       [](std::uint64_t s) { return solo("solo-w32", 32, task::ThinkStyle::kRestate, s); }},
      {"hetero-nois", [](std::uint64_t s) { return hetero("hetero-nois", Variant::kNoIS, s); }},
      {"hetero-vis", [](std::uint64_t s) { return hetero("hetero-vis", Variant::kVIS, s); }},
      {"hetero-tis", [](std::uint64_t s) { return hetero("hetero-tis", Variant::kTIS, s); }},
      {"hetero-fnois", [](std::uint64_t s) { return hetero("hetero-fnois", Variant::kFNoIS, s); }},
      {"hetero-fvis", [](std::uint64_t s) { return hetero("hetero-fvis", Variant::kFVIS, s); }},
      {"hetero-ftis", [](std::uint64_t s) { return hetero("hetero-ftis", Variant::kFTIS, s); }},
      {"size-small", [](std::uint64_t s) { return size_pair("size-small", 8, 16, s); }},
      {"size-large", [](std::uint64_t s) { return size_pair("size-large", 16, 32, s); }},
      {"expertise-small", [](std::uint64_t s) { return expertise_pair("expertise-small", 16, s); }},
      {"expertise-large", [](std::uint64_t s) { return expertise_pair("expertise-large", 32, s); }},
      {"peft-small", [](std::uint64_t s) { return peft_pair("peft-small", 16, s); }},
      {"peft-large", [](std::uint64_t s) { return peft_pair("peft-large", 32, s); }},
      {"horizontal-nois",
       [](std::uint64_t s) { return horizontal("horizontal-nois", Variant::kNoIS, s); }},
      {"horizontal-ftis",
       [](std::uint64_t s) { return horizontal("horizontal-ftis", Variant::kFTIS, s); }},
  };
  return table;
}

const std::map<std::string, std::string>& sweep_aliases() {
  static const std::map<std::string, std::string> aliases = {
      {"g", "kl_threshold"}, {"C", "cap"},          {"eps", "epsilon"},
      {"lr", "learning_rate"}, {"G", "group_size"}, {"B", "batch_size"},
  };
  return aliases;
}

}  // namespace

void validate(const RunConfig& c) {
  auto fail = [](const std::string& field, const std::string& what) {
    throw ConfigError("config field '" + field + "': " + what);
  };
  if (c.nodes.empty()) fail("nodes", "at least one node is required");
  if (c.iterations == 0) fail("iterations", "must be positive");
  if (c.batch_size == 0) fail("batch_size", "must be positive");
  if (c.group_size < 2) fail("group_size", "must be at least 2");
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) {
    fail("learning_rate", "must be positive and finite");
  }
  if (!(c.epsilon > 0.0 && c.epsilon < 1.0)) fail("epsilon", "must lie in (0, 1)");
  if (!(c.cap >= 1.0)) fail("cap", "must be at least 1");
  if (!(c.kl_threshold > 0.0)) fail("kl_threshold", "must be positive");
  if (c.validation_cadence == 0) fail("validation_cadence", "must be positive");
  if (c.max_len < 6) fail("max_len", "must be at least 6 to fit an answer");
  if (!(c.temperature > 0.0)) fail("temperature", "must be positive");
  if (c.inner_epochs == 0) fail("inner_epochs", "must be positive");
  if (c.task.validation_percent > 100) {
    fail("task.validation_percent", "must be at most 100");
  }
  if (!c.task.allow_plus && !c.task.allow_times) {
    fail("task", "at least one operation must be allowed");
  }
  if (c.topology == swarm::Topology::kHorizontal &&
      c.group_size % c.nodes.size() != 0) {
    fail("group_size", "must be divisible by the node count (" +
                           std::to_string(c.nodes.size()) +
                           ") in horizontal mode");
  }
  std::set<std::string> names;
  for (std::size_t i = 0; i < c.nodes.size(); ++i) {
    const NodeSpec& n = c.nodes[i];
    const std::string p = "nodes[" + std::to_string(i) + "]";
    if (n.name.empty()) fail(p + ".name", "must not be empty");
    if (!names.insert(n.name).second) fail(p + ".name", "duplicate '" + n.name + "'");
    if (n.hidden_dim == 0) fail(p + ".hidden_dim", "must be positive");
    if (n.embed_dim == 0) fail(p + ".embed_dim", "must be positive");
    if (n.context_window == 0) fail(p + ".context_window", "must be positive");
    if (n.adapter_rank > 0 &&
        n.adapter_rank >= std::min(n.embed_dim, n.hidden_dim)) {
      fail(p + ".adapter_rank", "must be below min(embed_dim, hidden_dim)");
    }
    if (n.warmup.steps > 0 && n.warmup.batch_size == 0) {
      fail(p + ".warmup.batch_size", "must be positive");
    }
    if (!(n.warmup.learning_rate > 0.0)) {
      fail(p + ".warmup.learning_rate", "must be positive");
    }
    if (!(n.warmup.answer_noise >= 0.0 && n.warmup.answer_noise <= 1.0)) {
      fail(p + ".warmup.answer_noise", "must lie in [0, 1]");
    }
    if (!(n.warmup.format_noise >= 0.0 && n.warmup.format_noise <= 1.0)) {
      fail(p + ".warmup.format_noise", "must lie in [0, 1]");
    }
  }
}

RunConfig parse_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (j.is_object() && j.contains("config") && j.contains("version")) {
    j = j.at("config");
  }
  RunConfig c = read_config(j);
  validate(c);
  return c;
}

std::string to_json(const RunConfig& config) {
  return write_config(config).dump(2) + "\n";
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("config file not found: " + path.string());
  }
  return parse_config(read_file(path));
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& p : presets()) out.emplace_back(p.name);
  return out;
}

RunConfig preset(std::string_view name, std::uint64_t seed) {
  for (const auto& p : presets()) {
    if (name == p.name) return p.build(seed);
  }
  std::string known;
  for (const auto& p : presets()) known += std::string(known.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

std::vector<RunConfig> expand_sweep(const RunConfig& base,
                                    std::string_view sweep) {
  const std::size_t eq = sweep.find('=');
  if (eq == std::string_view::npos || eq == 0 || eq + 1 == sweep.size()) {
    throw ConfigError("sweep must look like key=v1,v2,...: '" +
                      std::string(sweep) + "'");
  }
  const std::string key(sweep.substr(0, eq));
  const auto alias = sweep_aliases().find(key);
  const std::string field = alias == sweep_aliases().end() ? key : alias->second;
  const json original = write_config(base);
  if (!original.contains(field) || original.at(field).is_object() ||
      original.at(field).is_array() || field == "output_dir") {
    throw ConfigError("cannot sweep over '" + key + "'");
  }
  std::vector<RunConfig> out;
  for (const std::string& value : split(sweep.substr(eq + 1), ',')) {
    if (value.empty()) throw ConfigError("empty value in sweep '" + std::string(sweep) + "'");
    json j = original;
    const json& slot = original.at(field);
    if (slot.is_string()) {
      j[field] = value;
    } else if (slot.is_boolean()) {
      if (value != "true" && value != "false") {
        throw ConfigError("sweep value '" + value + "' for '" + key + "' is not a boolean");
      }
      j[field] = value == "true";
    } else {
      json parsed;
      try {
        parsed = json::parse(value);
      } catch (const json::parse_error&) {
        throw ConfigError("sweep value '" + value + "' for '" + key + "' is not a number");
      }
      if (!parsed.is_number()) {
        throw ConfigError("sweep value '" + value + "' for '" + key + "' is not a number");
      }
      j[field] = parsed;
    }
    j["output_dir"] = base.output_dir + "/" + key + "=" + value;
    RunConfig c = read_config(j);
    validate(c);
    out.push_back(std::move(c));
  }
  return out;
}

policy::PolicyParams WarmStartCache::get_or_build(
    const std::string& key, const std::function<policy::PolicyParams()>& build) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = entries_.find(key);
    if (it != entries_.end()) return it->second;
  }
  policy::PolicyParams params = build();
  std::lock_guard<std::mutex> lock(mu_);
  entries_.emplace(key, params);
  return params;
}

std::vector<swarm::Node> build_nodes(const RunConfig& config,
                                     WarmStartCache* cache) {
  validate(config);
  std::vector<swarm::Node> nodes;
  for (std::size_t i = 0; i < config.nodes.size(); ++i) {
    const NodeSpec& ns = config.nodes[i];
    const std::uint64_t tag = name_hash(ns.name);

    policy::PolicySpec spec;
    spec.vocab_size = task::kVocabSize;
    spec.context_window = ns.context_window;
    spec.embed_dim = ns.embed_dim;
    spec.hidden_dim = ns.hidden_dim;
    spec.init_seed = derive_seed({config.seed, tag, 1});
    spec.adapter_rank = ns.adapter_rank;
    spec = policy::with_full_mask(spec);
    for (policy::Block b : ns.frozen) policy::freeze(spec, b);
    policy::validate(spec);

    // The warm start plays the role of pretraining: it updates every base
    // weight, before freezing or adapters come into play.
    auto build = [&] {
      policy::PolicySpec dense = spec;
      dense.adapter_rank = 0;
      dense = policy::with_full_mask(dense);
      policy::PolicyParams params = policy::init_policy(dense);
      const auto corpus = warmup_corpus(config.task, ns.warmup.corpus);
      task::WarmupConfig w;
      w.steps = ns.warmup.steps;
      w.batch_size = ns.warmup.batch_size;
      w.learning_rate = ns.warmup.learning_rate;
      w.style = ns.warmup.style;
      w.answer_noise = ns.warmup.answer_noise;
      w.format_noise = ns.warmup.format_noise;
      w.seed = derive_seed({config.seed, tag, 2});
      task::warm_start(params, corpus, w);
      return params;
    };
    policy::PolicyParams warmed;
    if (cache) {
      json key = write_config(config).at("nodes").at(i);
      key.erase("variant");
      key.erase("frozen");
      key.erase("adapter_rank");
      key["seed"] = config.seed;
      key["task"] = write_config(config).at("task");
      warmed = cache->get_or_build(key.dump(), build);
    } else {
      warmed = build();
    }

    policy::PolicyParams params = policy::init_policy(spec);
    params.base = warmed.base;

    swarm::Node node;
    node.id = static_cast<NodeId>(i);
    node.name = ns.name;
    node.policy = std::move(params);
    node.variant.variant = ns.variant.value_or(config.variant);
    node.variant.epsilon = config.epsilon;
    node.variant.cap = config.cap;
    node.variant.kl_threshold = config.kl_threshold;
    node.variant.detach_truncation = config.detach_truncation;
    node.variant.renormalize_filtered = config.renormalize_filtered;
    nodes.push_back(std::move(node));
  }
  return nodes;
}

swarm::TrainingConfig training_config(const RunConfig& config) {
  swarm::TrainingConfig t;
  t.iterations = config.iterations;
  t.batch_size = config.batch_size;
  t.group_size = config.group_size;
  t.topology = config.topology;
  t.round.max_len = config.max_len;
  t.round.temperature = config.temperature;
  t.round.learning_rate = config.learning_rate;
  t.round.inner_epochs = config.inner_epochs;
  t.round.seed = config.seed;
  t.round.parallel = config.parallel;
  t.validation_cadence = config.validation_cadence;
  t.validation_size = config.validation_size;
  t.task = config.task;
  t.task.max_len = config.max_len;
  return t;
}

RunResult execute(const RunConfig& config, WarmStartCache* cache) {
  std::vector<swarm::Node> nodes = build_nodes(config, cache);
  RunResult result;
  result.log = swarm::run_training(nodes, training_config(config));
  for (const swarm::Node& node : nodes) {
    NodeFinal f;
    f.name = node.name;
    f.variant = std::string(grpo::to_string(node.variant.variant));
    bool first = true;
    for (const auto& r : result.log.records) {
      if (r.node != node.id) continue;
      if (r.pass_at_1) {
        if (first) f.initial_pass_at_1 = *r.pass_at_1;
        f.final_pass_at_1 = *r.pass_at_1;
        first = false;
      }
      if (r.round) f.final_mean_reward = r.round->mean_reward;
    }
    result.finals.push_back(std::move(f));
  }
  return result;
}

std::string metrics_csv(const RunConfig& config, const swarm::MetricsLog& log) {
  std::map<NodeId, std::string> variants;
  for (std::size_t i = 0; i < config.nodes.size(); ++i) {
    variants[static_cast<NodeId>(i)] = std::string(
        grpo::to_string(config.nodes[i].variant.value_or(config.variant)));
  }
  std::string out(kMetricsColumns);
  out += '\n';
  for (const auto& r : log.records) {
    std::vector<std::string> cells = {std::to_string(r.iteration),
                                      std::to_string(r.node), r.node_name,
                                      variants[r.node]};
    if (r.round) {
      const auto& m = *r.round;
      cells.push_back(format_double(m.loss));
      cells.push_back(format_double(m.mean_reward));
    } else {
      cells.insert(cells.end(), {"", ""});
    }
    cells.push_back(r.pass_at_1 ? format_double(*r.pass_at_1) : "");
    if (r.round) {
      const auto& m = *r.round;
      cells.push_back(format_double(m.kl_mean));
      cells.push_back(format_double(m.kl_max));
      cells.push_back(format_double(m.filtered_fraction));
      cells.push_back(format_double(m.truncated_fraction));
      cells.push_back(format_double(m.clipped_fraction));
      cells.push_back(std::to_string(m.bytes_sent));
      cells.push_back(std::to_string(m.bytes_received));
    } else {
      cells.insert(cells.end(), {"", "", "", "", "", "", ""});
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  }
  return out;
}

std::string manifest_json(const RunConfig& config) {
  json seeds = json::object();
  for (const NodeSpec& n : config.nodes) {
    const std::uint64_t tag = name_hash(n.name);
    seeds[n.name] = {{"init", derive_seed({config.seed, tag, 1})},
                     {"warmup", derive_seed({config.seed, tag, 2})}};
  }
  json m = {
      {"version", FTIS_VERSION},
      {"seed", config.seed},
      {"node_seeds", seeds},
      {"config", write_config(config)},
  };
  return m.dump(2) + "\n";
}

std::string final_json(const RunConfig& config, const RunResult& result) {
  json nodes = json::array();
  for (const NodeFinal& f : result.finals) {
    nodes.push_back({{"name", f.name},
                     {"variant", f.variant},
                     {"initial_pass_at_1", f.initial_pass_at_1},
                     {"final_pass_at_1", f.final_pass_at_1},
                     {"final_mean_reward", f.final_mean_reward}});
  }
  json j = {{"name", config.name},
            {"seed", config.seed},
            {"iterations", config.iterations},
            {"nodes", nodes}};
  return j.dump(2) + "\n";
}

RunResult run(const RunConfig& config, WarmStartCache* cache) {
  RunResult result = execute(config, cache);
  const std::filesystem::path dir(config.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / "metrics.csv", metrics_csv(config, result.log));
  write_file(dir / "manifest.json", manifest_json(config));
  write_file(dir / "final.json", final_json(config, result));
  return result;
}

Comparison compare(std::span<const std::filesystem::path> run_dirs) {
  if (run_dirs.size() < 2) throw InputError("compare needs at least two runs");
  // Per run: (iteration, node name) -> pass@1.
  std::vector<std::map<std::pair<std::size_t, std::string>, double>> curves;
  std::vector<std::set<std::size_t>> grids;
  Comparison out;
  for (const auto& dir : run_dirs) {
    if (!std::filesystem::is_directory(dir)) {
      throw InputError("run directory not found: " + dir.string());
    }
    const auto path = dir / "metrics.csv";
    if (!std::filesystem::exists(path)) {
      throw InputError("no metrics.csv in " + dir.string());
    }
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);
    if (line != kMetricsColumns) {
      throw InputError(path.string() + ": unexpected column header");
    }
    auto& curve = curves.emplace_back();
    auto& grid = grids.emplace_back();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const std::vector<std::string> cells = split(line, ',');
      if (cells.size() != 14) {
        throw InputError(path.string() + ":" + std::to_string(line_no) +
                         ": expected 14 columns");
      }
      if (cells[6].empty()) continue;
      std::size_t iteration = 0;
      double value = 0.0;
      const auto r1 = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), iteration);
      const auto r2 = std::from_chars(cells[6].data(), cells[6].data() + cells[6].size(), value);
      if (r1.ec != std::errc() || r2.ec != std::errc()) {
        throw InputError(path.string() + ":" + std::to_string(line_no) +
                         ": malformed number");
      }
      curve[{iteration, cells[2]}] = value;
      grid.insert(iteration);
    }
    out.runs.push_back(dir.string());
  }
  for (std::size_t k = 1; k < grids.size(); ++k) {
    if (grids[k] != grids[0]) {
      throw InputError("validation iteration grids differ between " +
                       out.runs[0] + " and " + out.runs[k]);
    }
  }
  std::set<std::pair<std::size_t, std::string>> keys;
  for (const auto& curve : curves) {
    for (const auto& [key, value] : curve) keys.insert(key);
  }
  for (const auto& key : keys) {
    ComparisonRow row;
    row.iteration = key.first;
    row.node_name = key.second;
    for (const auto& curve : curves) {
      auto it = curve.find(key);
      row.pass_at_1.push_back(it == curve.end() ? std::nullopt
                                                : std::optional<double>(it->second));
    }
    for (const auto& v : row.pass_at_1) {
      if (v && row.pass_at_1[0]) {
        row.delta.push_back(*v - *row.pass_at_1[0]);
      } else {
        row.delta.push_back(std::nullopt);
      }
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string to_csv(const Comparison& c) {
  std::string out = "iteration,node_name";
  for (std::size_t k = 0; k < c.runs.size(); ++k) {
    out += ",pass_at_1_" + std::to_string(k);
  }
  for (std::size_t k = 1; k < c.runs.size(); ++k) {
    out += ",delta_" + std::to_string(k);
  }
  out += '\n';
  for (const auto& row : c.rows) {
    out += std::to_string(row.iteration) + "," + row.node_name;
    for (const auto& v : row.pass_at_1) out += "," + (v ? format_double(*v) : "");
    for (std::size_t k = 1; k < row.delta.size(); ++k) {
      out += "," + (row.delta[k] ? format_double(*row.delta[k]) : "");
    }
    out += '\n';
  }
  return out;
}

std::string to_text(const Comparison& c) {
  std::ostringstream out;
  for (std::size_t k = 0; k < c.runs.size(); ++k) {
    out << "[" << k << "] " << c.runs[k] << "\n";
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%9s  %-10s", "iteration", "node");
  out << buf;
  for (std::size_t k = 0; k < c.runs.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "  %8s", ("[" + std::to_string(k) + "]").c_str());
    out << buf;
  }
  for (std::size_t k = 1; k < c.runs.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "  %8s", ("d[" + std::to_string(k) + "]").c_str());
    out << buf;
  }
  out << "\n";
  for (const auto& row : c.rows) {
    std::snprintf(buf, sizeof(buf), "%9zu  %-10s", row.iteration, row.node_name.c_str());
    out << buf;
    for (const auto& v : row.pass_at_1) {
      if (v) {
        std::snprintf(buf, sizeof(buf), "  %8.3f", *v);
      } else {
        std::snprintf(buf, sizeof(buf), "  %8s", "-");
      }
      out << buf;
    }
    for (std::size_t k = 1; k < row.delta.size(); ++k) {
      if (row.delta[k]) {
        std::snprintf(buf, sizeof(buf), "  %+8.3f", *row.delta[k]);
      } else {
        std::snprintf(buf, sizeof(buf), "  %8s", "-");
      }
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace ftis::experiment
