#pragma once

// Flat key-value run configuration: file values override defaults, CLI flags
// override file values. Unknown keys are rejected.

#include <fstream>
#include <string>
#include <vector>

#include "rdg/data.hpp"
#include "rdg/gating.hpp"
#include "rdg/train.hpp"

namespace rdg {

struct RunConfig {
  EncoderConfig encoder;
  GateConfig gate;
  TrainConfig train;
  SynthSpec synth;
  std::string report_format = "html";  // plain | html | ansi
  std::size_t explain_top_k = 10;
  std::size_t explain_context = 2;
  // Which layer's attention maps feed the baseline; -1 means the last.
  long attn_layer = -1;

  void set(const std::string& key, const std::string& value);
  void load_file(const std::string& path);
  std::string serialize() const;
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: key '" + key + "' expects a boolean, got '" +
                              v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key +
                                "' expects a number, got '" + v + "'");
  }
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key +
                                "' expects a non-negative integer, got '" + v +
                                "'");
  }
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_size;
  if (key == "hidden") encoder.hidden = parse_size(key, value);
  else if (key == "layers") encoder.layers = parse_size(key, value);
  else if (key == "heads") encoder.heads = parse_size(key, value);
  else if (key == "ffn_dim") encoder.ffn_dim = parse_size(key, value);
  else if (key == "max_len") encoder.max_len = parse_size(key, value);
  else if (key == "layernorm_eps") encoder.layernorm_eps = parse_double(key, value);
  else if (key == "init_sigma") encoder.init_sigma = parse_double(key, value);
  else if (key == "gamma") gate.gamma = parse_double(key, value);
  else if (key == "kernel_size") gate.kernel_size = parse_size(key, value);
  else if (key == "history_mode") gate.history_mode = history_mode_from_string(value);
  else if (key == "use_conv") gate.use_conv = parse_bool(key, value);
  else if (key == "use_history") gate.use_history = parse_bool(key, value);
  else if (key == "per_layer_gate_params") gate.per_layer_params = parse_bool(key, value);
  else if (key == "protect_cls") gate.protect_cls = parse_bool(key, value);
  else if (key == "learning_rate") train.learning_rate = parse_double(key, value);
  else if (key == "warmup_ratio") train.warmup_ratio = parse_double(key, value);
  else if (key == "train_steps") train.train_steps = parse_size(key, value);
  else if (key == "batch_size") train.batch_size = parse_size(key, value);
  else if (key == "temperature") train.temperature = parse_double(key, value);
  else if (key == "seed") train.seed = parse_size(key, value);
  else if (key == "weight_decay") train.weight_decay = parse_double(key, value);
  else if (key == "loss_weight_ce") train.loss_weights.ce = parse_double(key, value);
  else if (key == "loss_weight_kd") train.loss_weights.kd = parse_double(key, value);
  else if (key == "loss_weight_cos") train.loss_weights.cos = parse_double(key, value);
  else if (key == "synth_values") synth.n_values = parse_size(key, value);
  else if (key == "synth_entities") synth.n_entities = parse_size(key, value);
  else if (key == "synth_attributes") synth.n_attributes = parse_size(key, value);
  else if (key == "synth_facts") synth.facts_per_passage = parse_size(key, value);
  else if (key == "synth_examples") synth.n_examples = parse_size(key, value);
  else if (key == "synth_distractors") {
    if (value == "passage") synth.distractors_from_passage = true;
    else if (value == "vocab") synth.distractors_from_passage = false;
    else throw std::invalid_argument(
        "config: synth_distractors must be passage|vocab, got '" + value + "'");
  }
  else if (key == "report_format") {
    if (value != "plain" && value != "html" && value != "ansi")
      throw std::invalid_argument(
          "config: report_format must be plain|html|ansi, got '" + value + "'");
    report_format = value;
  }
  else if (key == "explain_top_k") explain_top_k = parse_size(key, value);
  else if (key == "explain_context") explain_context = parse_size(key, value);
  else if (key == "attn_layer") attn_layer = static_cast<long>(parse_double(key, value));
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot read " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const std::size_t eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (eq == std::string::npos) {
      if (!trim(line).empty())
        throw std::invalid_argument("config: " + path + ":" +
                                    std::to_string(lineno) +
                                    ": expected 'key = value'");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set(key, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " +
                                  e.what());
    }
  }
}

inline std::string RunConfig::serialize() const {
  std::string out;
  auto kv = [&out](const std::string& k, const std::string& v) {
    out += k + " = " + v + "\n";
  };
  kv("hidden", std::to_string(encoder.hidden));
  kv("layers", std::to_string(encoder.layers));
  kv("heads", std::to_string(encoder.heads));
  kv("ffn_dim", std::to_string(encoder.ffn_dim));
  kv("max_len", std::to_string(encoder.max_len));
  kv("layernorm_eps", format_double(encoder.layernorm_eps));
  kv("init_sigma", format_double(encoder.init_sigma));
  kv("gamma", format_double(gate.gamma));
  kv("kernel_size", std::to_string(gate.kernel_size));
  kv("history_mode", to_string(gate.history_mode));
  kv("use_conv", gate.use_conv ? "true" : "false");
  kv("use_history", gate.use_history ? "true" : "false");
  kv("per_layer_gate_params", gate.per_layer_params ? "true" : "false");
  kv("protect_cls", gate.protect_cls ? "true" : "false");
  kv("learning_rate", format_double(train.learning_rate));
  kv("warmup_ratio", format_double(train.warmup_ratio));
  kv("train_steps", std::to_string(train.train_steps));
  kv("batch_size", std::to_string(train.batch_size));
  kv("temperature", format_double(train.temperature));
  kv("seed", std::to_string(train.seed));
  kv("weight_decay", format_double(train.weight_decay));
  kv("loss_weight_ce", format_double(train.loss_weights.ce));
  kv("loss_weight_kd", format_double(train.loss_weights.kd));
  kv("loss_weight_cos", format_double(train.loss_weights.cos));
  kv("synth_values", std::to_string(synth.n_values));
  kv("synth_entities", std::to_string(synth.n_entities));
  kv("synth_attributes", std::to_string(synth.n_attributes));
  kv("synth_facts", std::to_string(synth.facts_per_passage));
  kv("synth_examples", std::to_string(synth.n_examples));
  kv("synth_distractors", synth.distractors_from_passage ? "passage" : "vocab");
  kv("report_format", report_format);
  kv("explain_top_k", std::to_string(explain_top_k));
  kv("explain_context", std::to_string(explain_context));
  kv("attn_layer", std::to_string(attn_layer));
  return out;
}

}  // namespace rdg
