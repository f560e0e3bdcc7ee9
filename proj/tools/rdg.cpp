// Command-line front end: synthetic corpus generation, training, evaluation,
// explanation reports, and gradient checking, wired for reproducible runs.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rdg/config.hpp"
#include "rdg/explain.hpp"
#include "rdg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string data_path;
  std::string dev_path;
  std::string vocab_path;
  std::string checkpoint_path;
  std::string out_dir;
};

rdg::Vocab resolve_vocab(const std::string& explicit_path,
                         const std::string& near_file) {
  if (!explicit_path.empty()) return rdg::Vocab::load(explicit_path);
  if (!near_file.empty()) {
    const fs::path sibling = fs::path(near_file).parent_path() / "vocab.txt";
    if (fs::exists(sibling)) return rdg::Vocab::load(sibling.string());
  }
  throw std::runtime_error(
      "no vocabulary found: pass --vocab or keep vocab.txt next to " +
      (near_file.empty() ? std::string("the data") : near_file));
}

std::vector<rdg::McExample> load_examples(const std::string& path) {
  if (path.ends_with(".json")) return rdg::load_race_json(path);
  return rdg::load_jsonl(path);
}

json eval_to_json(const rdg::EvalResult& r) {
  return json{{"count", r.count},
              {"teacher_accuracy", r.teacher_accuracy},
              {"student_accuracy", r.student_accuracy},
              {"mean_passage_gate", r.mean_gate}};
}

// One complete training run for a single seed; returns the final summary.
json run_training(const rdg::RunConfig& cfg_in, const CommonOpts& opts,
                  const std::vector<rdg::McExample>& train_examples,
                  const std::vector<rdg::McExample>& dev_examples,
                  const rdg::Vocab& vocab, std::uint64_t seed,
                  const fs::path& out_dir, std::size_t eval_every,
                  std::size_t stop_after) {
  rdg::RunConfig cfg = cfg_in;
  cfg.train.seed = seed;
  cfg.encoder.vocab_size = vocab.size();
  cfg.encoder.validate();
  cfg.gate.validate();
  cfg.train.validate();

  fs::create_directories(out_dir);
  std::ofstream(out_dir / "run_config.txt") << cfg.serialize();
  vocab.save((out_dir / "vocab.txt").string());

  rdg::PackedCorpus train_corpus =
      rdg::prepack(train_examples, vocab, cfg.encoder.max_len);
  rdg::PackedCorpus eval_corpus =
      dev_examples.empty()
          ? train_corpus
          : rdg::prepack(dev_examples, vocab, cfg.encoder.max_len);

  std::size_t start_step = 0;
  rdg::RdgModel model;
  rdg::AdamW opt;
  if (!opts.checkpoint_path.empty()) {
    auto ckpt = rdg::load_checkpoint(opts.checkpoint_path);
    std::tie(model, opt) = rdg::model_from_checkpoint(
        ckpt, rdg::AdamConfig{.weight_decay = cfg.train.weight_decay});
    start_step = opt.step_count();
    std::cerr << "resuming from " << opts.checkpoint_path << " at step "
              << start_step << "\n";
  } else {
    model = rdg::RdgModel::init(cfg.encoder, cfg.gate, seed);
    opt = rdg::AdamW(model.named_params(),
                     rdg::AdamConfig{.weight_decay = cfg.train.weight_decay});
  }

  rdg::TrainRun run(std::move(model), std::move(opt), cfg.train,
                    std::move(train_corpus), start_step);
  std::ofstream metrics(out_dir / "metrics.jsonl",
                        start_step ? std::ios::app : std::ios::trunc);
  const std::size_t stop_at =
      stop_after ? start_step + stop_after : cfg.train.train_steps;
  while (!run.done() && run.completed_steps() < stop_at) {
    rdg::StepRecord rec = run.step();
    json line{{"step", rec.step},
              {"lr", rec.lr},
              {"ce", rec.loss.ce},
              {"kd", rec.loss.kd},
              {"cos", rec.loss.cos},
              {"total", rec.loss.total}};
    if (eval_every && rec.step % eval_every == 0) {
      rdg::EvalResult r = rdg::evaluate(run.model(), eval_corpus);
      line["teacher_accuracy"] = r.teacher_accuracy;
      line["student_accuracy"] = r.student_accuracy;
      line["mean_passage_gate"] = r.mean_gate;
    }
    metrics << line << "\n";
  }
  metrics.flush();

  rdg::Checkpoint ckpt = rdg::model_to_checkpoint(
      run.model(), run.optimizer(),
      {{"seed", std::to_string(seed)},
       {"train_steps", std::to_string(cfg.train.train_steps)}});
  rdg::save_checkpoint(ckpt, (out_dir / "model.ckpt").string());

  rdg::EvalResult final_eval = rdg::evaluate(run.model(), eval_corpus);
  json summary = eval_to_json(final_eval);
  summary["seed"] = seed;
  summary["steps"] = cfg.train.train_steps;
  summary["eval_data"] = dev_examples.empty() ? opts.data_path : opts.dev_path;
  std::ofstream(out_dir / "summary.json") << summary.dump(2) << "\n";
  return summary;
}

int cmd_train(const CommonOpts& opts, const rdg::RunConfig& cfg,
              std::uint64_t first_seed, std::size_t n_seeds,
              std::size_t eval_every, std::size_t stop_after) {
  auto train_examples = load_examples(opts.data_path);
  std::vector<rdg::McExample> dev_examples;
  if (!opts.dev_path.empty()) dev_examples = load_examples(opts.dev_path);

  rdg::Vocab vocab = [&] {
    if (!opts.vocab_path.empty()) return rdg::Vocab::load(opts.vocab_path);
    const fs::path sibling =
        fs::path(opts.data_path).parent_path() / "vocab.txt";
    if (fs::exists(sibling)) return rdg::Vocab::load(sibling.string());
    return rdg::Vocab::from_corpus(train_examples);
  }();

  const fs::path out_root = opts.out_dir;
  if (n_seeds <= 1) {
    json summary = run_training(cfg, opts, train_examples, dev_examples,
                                vocab, first_seed, out_root, eval_every,
                                stop_after);
    std::cout << summary.dump(2) << "\n";
    return 0;
  }

  std::vector<json> summaries;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    const std::uint64_t seed = first_seed + s;
    summaries.push_back(run_training(cfg, opts, train_examples, dev_examples,
                                     vocab, seed,
                                     out_root / ("seed" + std::to_string(seed)),
                                     eval_every, stop_after));
    std::cout << summaries.back().dump(2) << "\n";
  }
  json aggregate{{"seeds", json::array()}};
  double t_max = 0, t_sum = 0, s_max = 0, s_sum = 0;
  for (const json& s : summaries) {
    aggregate["seeds"].push_back(s);
    const double t = s["teacher_accuracy"].get<double>();
    const double st = s["student_accuracy"].get<double>();
    t_max = std::max(t_max, t);
    s_max = std::max(s_max, st);
    t_sum += t;
    s_sum += st;
  }
  aggregate["teacher_accuracy_max"] = t_max;
  aggregate["teacher_accuracy_avg"] = t_sum / static_cast<double>(n_seeds);
  aggregate["student_accuracy_max"] = s_max;
  aggregate["student_accuracy_avg"] = s_sum / static_cast<double>(n_seeds);
  std::ofstream(out_root / "aggregate.json") << aggregate.dump(2) << "\n";
  std::cout << aggregate.dump(2) << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts) {
  auto ckpt = rdg::load_checkpoint(opts.checkpoint_path);
  auto [model, opt] = rdg::model_from_checkpoint(ckpt);
  rdg::Vocab vocab = resolve_vocab(opts.vocab_path, opts.checkpoint_path);
  auto examples = load_examples(opts.data_path);
  rdg::PackedCorpus corpus = rdg::prepack(examples, vocab, model.ecfg.max_len);
  json out = eval_to_json(rdg::evaluate(model, corpus));
  out["checkpoint"] = opts.checkpoint_path;
  out["data"] = opts.data_path;
  std::cout << out.dump(2) << "\n";
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    std::ofstream(fs::path(opts.out_dir) / "eval.json") << out.dump(2) << "\n";
  }
  return 0;
}

int cmd_explain(const CommonOpts& opts, const rdg::RunConfig& cfg,
                const std::string& method, std::size_t limit) {
  auto ckpt = rdg::load_checkpoint(opts.checkpoint_path);
  auto [model, opt] = rdg::model_from_checkpoint(ckpt);
  rdg::Vocab vocab = resolve_vocab(opts.vocab_path, opts.checkpoint_path);
  auto examples = load_examples(opts.data_path);
  if (limit && examples.size() > limit) examples.resize(limit);

  const fs::path out_dir = opts.out_dir;
  fs::create_directories(out_dir);
  std::ofstream reports_jsonl(out_dir / "reports.jsonl");
  std::ofstream reports_txt;
  std::ofstream index_html;
  if (cfg.report_format == "plain") reports_txt.open(out_dir / "reports.txt");
  if (cfg.report_format == "html") {
    index_html.open(out_dir / "index.html");
    index_html << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
               << "<title>explanation reports</title></head>\n<body>\n";
  }

  std::vector<std::string> methods;
  if (method == "both")
    methods = {"rdg", "attention"};
  else
    methods = {method};

  std::map<std::string, std::pair<double, std::size_t>> summary;
  rdg::NoGradGuard no_grad;
  for (const rdg::McExample& raw : examples) {
    rdg::McExample ex = rdg::pad_dummy_choices(raw);
    rdg::PackedSequence packed =
        rdg::pack(ex, ex.answer, vocab, model.ecfg.max_len);
    const auto words = rdg::tokenize(ex.passage);

    rdg::GateTrace trace;
    rdg::EncoderOutput output = model.student(packed, &trace);
    for (const std::string& m : methods) {
      std::vector<rdg::TokenScore> scores;
      if (m == "rdg") {
        scores = rdg::extract_rdg_scores(trace, packed);
      } else {
        const std::size_t layer =
            cfg.attn_layer < 0 ? static_cast<std::size_t>(-1)
                               : static_cast<std::size_t>(cfg.attn_layer);
        scores = rdg::extract_attention_scores(output, packed, layer);
      }
      rdg::ExplanationReport report = rdg::build_report(
          ex.id, m, scores, ex, cfg.explain_top_k, cfg.explain_context);
      reports_jsonl << rdg::report_to_json(report) << "\n";
      if (report.has_localization) {
        summary[m].first += report.localization;
        summary[m].second += 1;
      }
      if (cfg.report_format == "plain") {
        reports_txt << ex.id << " [" << m
                    << "]: " << rdg::render_plain(report, words) << "\n";
      } else if (cfg.report_format == "ansi") {
        std::cout << ex.id << " [" << m
                  << "]: " << rdg::render_ansi(report, words) << "\n";
      } else {
        index_html << rdg::render_html(report, ex);
      }
    }
  }
  if (cfg.report_format == "html") index_html << "</body></html>\n";

  json loc_summary = json::object();
  for (const auto& [m, acc] : summary) {
    loc_summary[m] = {{"mean_localization", acc.first / acc.second},
                      {"count", acc.second}};
  }
  std::ofstream(out_dir / "localization.json") << loc_summary.dump(2) << "\n";
  std::cout << loc_summary.dump(2) << "\n";
  return 0;
}

int cmd_gradcheck(const rdg::RunConfig& cfg_in, std::uint64_t seed,
                  double tolerance, double corrupt, const std::string& mode) {
  rdg::RunConfig cfg = cfg_in;
  if (cfg.encoder.hidden > 32 || cfg.encoder.layers > 2 ||
      cfg.encoder.max_len > 32) {
    std::cerr << "gradcheck needs a tiny config (hidden <= 32, layers <= 2, "
                 "max_len <= 32); got hidden="
              << cfg.encoder.hidden << " layers=" << cfg.encoder.layers
              << " max_len=" << cfg.encoder.max_len << "\n";
    return 2;
  }
  rdg::SynthSpec spec;
  spec.n_values = 8;
  spec.n_entities = 3;
  spec.n_attributes = 2;
  spec.facts_per_passage = 2;
  spec.n_examples = 1;
  rdg::McExample ex = rdg::gen_synthetic(spec, seed)[0];
  rdg::Vocab vocab = rdg::Vocab::build(rdg::synth_token_set(spec));
  cfg.encoder.vocab_size = vocab.size();
  const auto choices = rdg::pack_choices(ex, vocab, cfg.encoder.max_len);

  std::vector<rdg::HistoryMode> modes;
  if (mode == "both")
    modes = {rdg::HistoryMode::recursive, rdg::HistoryMode::constant};
  else
    modes = {rdg::history_mode_from_string(mode)};

  bool ok = true;
  for (rdg::HistoryMode m : modes) {
    rdg::GateConfig gcfg = cfg.gate;
    gcfg.history_mode = m;
    rdg::RdgModel model = rdg::RdgModel::init(cfg.encoder, gcfg, seed);
    const auto report = rdg::model_gradcheck(
        model, choices, ex.answer, cfg.train.temperature,
        cfg.train.loss_weights, 1e-5, corrupt);
    std::cout << "history mode: " << rdg::to_string(m) << "\n";
    for (const auto& [group, rel] : report.per_group_norm) {
      const bool pass = rel < tolerance;
      ok = ok && pass;
      std::cout << "  " << (pass ? "pass" : "FAIL") << "  "
                << rdg::format_double(rel) << "  " << group << "\n";
    }
    std::cout << "  worst group " << report.worst_norm_group << " at "
              << rdg::format_double(report.max_group_norm_rel)
              << " (per-coordinate worst "
              << rdg::format_double(report.max_rel_err) << " in "
              << report.worst_group << ")\n";
  }
  std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED")
            << " at tolerance " << rdg::format_double(tolerance) << "\n";
  return ok ? 0 : 1;
}

int cmd_synth_gen(const rdg::RunConfig& cfg, const std::string& out_dir,
                  std::uint64_t seed, std::size_t n_train, std::size_t n_dev,
                  std::size_t n_test) {
  const fs::path out = out_dir;
  fs::create_directories(out);
  rdg::SynthSpec spec = cfg.synth;

  rdg::Vocab vocab = rdg::Vocab::build(rdg::synth_token_set(spec));
  vocab.save((out / "vocab.txt").string());

  const struct {
    const char* name;
    std::size_t count;
    std::uint64_t split_seed;
  } splits[] = {{"train.jsonl", n_train, seed},
                {"dev.jsonl", n_dev, seed + 1},
                {"test.jsonl", n_test, seed + 2}};
  for (const auto& split : splits) {
    rdg::SynthSpec s = spec;
    s.n_examples = split.count;
    rdg::save_jsonl(rdg::gen_synthetic(s, split.split_seed),
                    (out / split.name).string());
  }
  std::ofstream(out / "gen_config.txt") << cfg.serialize();
  std::cout << "wrote " << n_train << "/" << n_dev << "/" << n_test
            << " examples to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "recursive dynamic gating for multiple-choice reading comprehension"};
  app.require_subcommand(1);

  CommonOpts opts;

  // flag overrides applied on top of the config file
  std::vector<std::pair<std::string, std::string>> overrides;
  auto add_override = [&overrides](CLI::App* cmd, const std::string& flag,
                                   const std::string& key,
                                   const std::string& help) {
    cmd->add_option_function<std::string>(
        flag,
        [&overrides, key](const std::string& v) {
          overrides.emplace_back(key, v);
        },
        help);
  };

  auto add_common = [&](CLI::App* cmd, bool needs_data, bool needs_ckpt) {
    cmd->add_option("--config", opts.config_path, "key = value config file");
    if (needs_data)
      cmd->add_option("--data", opts.data_path, "dataset (.jsonl or .json)")
          ->required();
    if (needs_ckpt)
      cmd->add_option("--checkpoint", opts.checkpoint_path, "model checkpoint")
          ->required();
    cmd->add_option("--vocab", opts.vocab_path, "vocabulary file");
  };

  // ------------------------------------------------------------- synth-gen
  auto* gen = app.add_subcommand(
      "synth-gen", "generate a synthetic evidence-grounded corpus");
  std::uint64_t gen_seed = 1;
  std::size_t n_train = 2000, n_dev = 500, n_test = 500;
  gen->add_option("--config", opts.config_path, "key = value config file");
  gen->add_option("--out", opts.out_dir, "output directory")->required();
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--train", n_train, "training examples");
  gen->add_option("--dev", n_dev, "dev examples");
  gen->add_option("--test", n_test, "test examples");
  add_override(gen, "--values", "synth_values", "value vocabulary size");
  add_override(gen, "--entities", "synth_entities", "entity count");
  add_override(gen, "--attributes", "synth_attributes", "attribute count");
  add_override(gen, "--facts", "synth_facts", "facts per passage");
  add_override(gen, "--distractors", "synth_distractors",
               "distractor source: passage | vocab");

  // ----------------------------------------------------------------- train
  auto* train = app.add_subcommand("train", "train teacher and student");
  add_common(train, true, false);
  train->add_option("--checkpoint", opts.checkpoint_path,
                    "resume from this checkpoint");
  train->add_option("--dev", opts.dev_path, "held-out eval set");
  train->add_option("--out", opts.out_dir, "output directory")->required();
  std::uint64_t train_seed = 1;
  std::size_t n_seeds = 1, eval_every = 0, stop_after = 0;
  train->add_option("--seed", train_seed, "first training seed");
  train->add_option("--seeds", n_seeds, "number of sequential seeds");
  train->add_option("--eval-every", eval_every,
                    "evaluate every N steps into the metrics log");
  train->add_option("--stop-after", stop_after,
                    "checkpoint and stop after N steps of this invocation "
                    "(resume later with --checkpoint)");
  add_override(train, "--steps", "train_steps", "training steps");
  add_override(train, "--batch-size", "batch_size", "batch size");
  add_override(train, "--lr", "learning_rate", "base learning rate");
  add_override(train, "--gamma", "gamma", "gating decay rate");
  add_override(train, "--kernel-size", "kernel_size", "conv kernel size");
  add_override(train, "--history", "history_mode", "recursive|constant");
  add_override(train, "--hidden", "hidden", "hidden size");
  add_override(train, "--layers", "layers", "transformer depth");
  add_override(train, "--heads", "heads", "attention heads");
  add_override(train, "--ffn-dim", "ffn_dim", "feed-forward width");
  add_override(train, "--max-len", "max_len", "maximum sequence length");
  add_override(train, "--temperature", "temperature",
               "distillation temperature");
  add_override(train, "--init-sigma", "init_sigma",
               "weight init scale (truncated normal)");
  bool no_kd = false, no_cos = false, no_conv = false, no_history = false;
  train->add_flag("--no-kd", no_kd, "drop the distillation term");
  train->add_flag("--no-cos", no_cos, "drop the cosine term");
  train->add_flag("--no-conv", no_conv, "drop the conv smoothing");
  train->add_flag("--no-history", no_history, "drop the history blend");

  // ------------------------------------------------------------------ eval
  auto* eval = app.add_subcommand("eval", "teacher/student accuracy");
  add_common(eval, true, true);
  eval->add_option("--out", opts.out_dir, "optional output directory");

  // --------------------------------------------------------------- explain
  auto* explain = app.add_subcommand("explain", "evidence reports");
  add_common(explain, true, true);
  explain->add_option("--out", opts.out_dir, "output directory")->required();
  std::string method = "both";
  std::size_t limit = 0;
  explain->add_option("--method", method, "rdg | attention | both")
      ->check(CLI::IsMember({"rdg", "attention", "both"}));
  explain->add_option("--limit", limit, "cap the number of questions");
  add_override(explain, "--format", "report_format", "plain | html | ansi");
  add_override(explain, "--top-k", "explain_top_k", "words per explanation");
  add_override(explain, "--context", "explain_context", "context window");
  add_override(explain, "--attn-layer", "attn_layer",
               "attention layer probed by the baseline (-1 = last)");

  // ------------------------------------------------------------- gradcheck
  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->add_option("--config", opts.config_path,
                        "key = value config file");
  std::uint64_t gc_seed = 7;
  double tolerance = 1e-4, corrupt = 0.0;
  std::string gc_mode = "both";
  gradcheck->add_option("--seed", gc_seed, "model/data seed");
  gradcheck->add_option("--tolerance", tolerance, "per-group threshold");
  gradcheck->add_option("--mode", gc_mode, "recursive | constant | both")
      ->check(CLI::IsMember({"recursive", "constant", "both"}));
  gradcheck
      ->add_option("--corrupt", corrupt,
                   "inject this much error into one gradient (testing aid)")
      ->group("");
  add_override(gradcheck, "--hidden", "hidden", "hidden size");
  add_override(gradcheck, "--layers", "layers", "transformer depth");
  add_override(gradcheck, "--max-len", "max_len", "maximum sequence length");
  add_override(gradcheck, "--kernel-size", "kernel_size", "conv kernel size");

  CLI11_PARSE(app, argc, argv);

  try {
    rdg::RunConfig cfg;
    if (gradcheck->parsed()) {
      // audit-sized defaults; config and flags can still override
      cfg.encoder.hidden = 16;
      cfg.encoder.layers = 2;
      cfg.encoder.heads = 2;
      cfg.encoder.ffn_dim = 32;
      cfg.encoder.max_len = 32;
      cfg.gate.kernel_size = 3;
    }
    if (!opts.config_path.empty()) cfg.load_file(opts.config_path);
    for (const auto& [key, value] : overrides) cfg.set(key, value);

    if (gen->parsed())
      return cmd_synth_gen(cfg, opts.out_dir, gen_seed, n_train, n_dev,
                           n_test);
    if (train->parsed()) {
      if (no_kd) cfg.train.loss_weights.kd = 0.0;
      if (no_cos) cfg.train.loss_weights.cos = 0.0;
      if (no_conv) cfg.gate.use_conv = false;
      if (no_history) cfg.gate.use_history = false;
      return cmd_train(opts, cfg, train_seed, n_seeds, eval_every,
                       stop_after);
    }
    if (eval->parsed()) return cmd_eval(opts);
    if (explain->parsed()) return cmd_explain(opts, cfg, method, limit);
    if (gradcheck->parsed())
      return cmd_gradcheck(cfg, gc_seed, tolerance, corrupt, gc_mode);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
