#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "mtlsed/checkpoint.hpp"
#include "mtlsed/data.hpp"
#include "mtlsed/dsp.hpp"
#include "mtlsed/gradcheck.hpp"
#include "mtlsed/milpool.hpp"
#include "mtlsed/run_config.hpp"
#include "mtlsed/train.hpp"

namespace mtlsed::cli {

namespace fs = std::filesystem;

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
}

struct Prepared {
  data::Vocabulary vocab;
  std::vector<data::ClipAnnotation> eval_annotations;
  data::Dataset train_set, eval_set;
};

Prepared prepare_data(const fs::path& dir, const RunConfig& cfg, std::uint64_t split_seed) {
  Prepared p;
  p.vocab = data::load_directory_vocabulary(dir);
  auto anns = data::load_annotations(dir / data::kAnnotationsFile, p.vocab);
  if (anns.empty()) throw InvalidInput(dir.string() + ": no annotations");
  auto [train_anns, eval_anns] = data::train_eval_split(anns, cfg.train.eval_fraction, split_seed);
  p.train_set = data::load_dataset(train_anns, p.vocab, dir, cfg.dsp);
  p.eval_set = data::load_dataset(eval_anns, p.vocab, dir, cfg.dsp);
  for (auto& a : eval_anns) {
    if (fs::path(a.source).is_relative()) a.source = fs::absolute(dir / a.source).lexically_normal().string();
  }
  p.eval_annotations = std::move(eval_anns);
  return p;
}

model::ArchConfig resolve_arch(const RunConfig& cfg, const Prepared& p) {
  model::ArchConfig arch = cfg.arch;
  arch.n_mels = cfg.dsp.n_mels;
  arch.n_scenes = p.vocab.scenes.size();
  arch.n_events = p.vocab.events.size();
  const std::size_t frames = p.train_set.clips.front().features.n_frames();
  if (frames != arch.n_frames) {
    throw ShapeError("clips have " + std::to_string(frames) + " frames but arch.n_frames is " +
                     std::to_string(arch.n_frames) + "; set arch.n_frames in --config or --set");
  }
  arch.validate();
  return arch;
}

// Trains one configuration and writes config.txt, log.csv, final.ckpt,
// best.ckpt, metrics.json and eval_data/ under `out_dir`.
metrics::MetricsReport train_cell(const RunConfig& cfg, const Prepared& p, const fs::path& out_dir,
                                  std::ostream& out) {
  const model::ArchConfig arch = resolve_arch(cfg, p);
  fs::create_directories(out_dir / "eval_data");
  write_run_config(out_dir / "config.txt", cfg);
  data::write_annotations(out_dir / "eval_data" / data::kAnnotationsFile, p.eval_annotations);
  data::save_vocabulary(out_dir / "eval_data" / data::kVocabularyFile, p.vocab);

  std::size_t epoch = 0, steps = 0;
  double sum = 0;
  auto flush = [&] {
    if (steps) out << "epoch " << epoch << " mean loss " << shortest(sum / static_cast<double>(steps)) << '\n';
  };
  const auto result = train::train_loop(p.train_set, &p.eval_set, arch, cfg.train, [&](const train::LogRow& row) {
    if (row.epoch != epoch) {
      flush();
      epoch = row.epoch;
      steps = 0;
      sum = 0;
    }
    ++steps;
    sum += row.loss_total;
  });
  flush();

  train::write_log_csv(out_dir / "log.csv", result.log);
  const auto pooling = train::effective_pooling(cfg.train);
  model::save_checkpoint(out_dir / "final.ckpt", {arch, pooling, cfg.dsp, result.final_params});
  model::save_checkpoint(out_dir / "best.ckpt", {arch, pooling, cfg.dsp, result.best_params});
  write_text(out_dir / "metrics.json", metrics::to_json(*result.final_metrics) + "\n");
  out << "best epoch " << result.best_epoch << " (eval loss " << shortest(result.best_eval_loss) << ")\n";
  return *result.final_metrics;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  cfg.arch.n_mels = cfg.dsp.n_mels;
  if (!path.empty()) cfg = load_run_config(path);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidConfig("--set expects key=value, got '" + kv + "'");
    set_run_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::vector<double> read_numbers(const std::string& line) {
  std::istringstream ss(line);
  std::vector<double> v;
  std::string tok;
  while (ss >> tok) {
    double x = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) throw InvalidInput("not a number: '" + tok + "'");
    v.push_back(x);
  }
  return v;
}

struct SweepRow {
  std::string label;
  train::TrainMode mode;
  std::optional<milpool::PoolingKind> pooling;
  bool scene, event;
};

std::vector<SweepRow> sweep_rows(std::optional<milpool::PoolingKind> sed_pooling) {
  using milpool::PoolingKind;
  using train::TrainMode;
  return {
      {"CNN(ASC)", TrainMode::asc_only, std::nullopt, true, false},
      {"CNN-BiGRU(SED)", TrainMode::sed_only, sed_pooling, false, true},
      {"Conv. MTL", TrainMode::mtl_strong, std::nullopt, true, true},
      {"MTL w/o MIL", TrainMode::mtl_weak, std::nullopt, true, true},
      {"MTL w/ MIL (MP)", TrainMode::mtl_weak, PoolingKind::max, true, true},
      {"MTL w/ MIL (AP)", TrainMode::mtl_weak, PoolingKind::average, true, true},
      {"MTL w/ MIL (ES)", TrainMode::mtl_weak, PoolingKind::exp_softmax, true, true},
      {"MTL w/ MIL (AT)", TrainMode::mtl_weak, PoolingKind::attention, true, true},
  };
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multitask scene classification and sound event detection"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string out_dir, in_dir, data_dir, config_path, model_path, mode_name = "mtl-weak", pooling_name, op, kind;
  std::size_t clips = 100, seeds = 5, epochs = 0;
  std::uint64_t seed = 0;
  double clip_seconds = 10.0;
  std::vector<std::string> overrides;

  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic annotated corpus");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--clips", clips, "Number of clips")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Generator seed");
  synth->add_option("--clip-seconds", clip_seconds, "Clip length in seconds")->check(CLI::PositiveNumber);

  auto* extract = app.add_subcommand("extract-features", "Compute log-mel feature files for a data directory");
  extract->add_option("--in", in_dir, "Input data directory")->required();
  extract->add_option("--out", out_dir, "Output data directory")->required();
  extract->add_option("--config", config_path, "Run config file");

  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Run config file");
    cmd->add_option("--data", data_dir, "Data directory")->required();
    cmd->add_option("--set", overrides, "Config override key=value (repeatable)");
    cmd->add_option("--epochs", epochs, "Override train.epochs");
    cmd->add_option("--pooling", pooling_name, "mp, ap, es, at or none");
  };
  auto* train_cmd = app.add_subcommand("train", "Train one model");
  add_train_flags(train_cmd);
  train_cmd->add_option("--mode", mode_name, "mtl-weak, mtl-strong, asc-only or sed-only");
  train_cmd->add_option("--seed", seed, "Initialization, split and shuffle seed");
  train_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a data directory");
  eval_cmd->add_option("--model", model_path, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data_dir, "Data directory")->required();
  eval_cmd->add_option("--out", out_dir, "Metrics JSON output file")->required();
  double threshold = 0.5;
  eval_cmd->add_option("--threshold", threshold, "Frame decision threshold");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad_cmd->add_option("--op", op, "Single op to check");
  auto* seed_opt = grad_cmd->add_option("--seed", seed, "Check this seed only");
  std::size_t grad_seeds = 20;
  grad_cmd->add_option("--seeds", grad_seeds, "Number of seeds per op")->check(CLI::PositiveNumber);

  auto* pool_cmd = app.add_subcommand("pool", "Pool a vector read from standard input");
  pool_cmd->add_option("--kind", kind, "mp, ap, es or at (at reads attention logits on a second line)")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "Train every mode and pooling over several seeds");
  add_train_flags(sweep_cmd);
  sweep_cmd->add_option("--seeds", seeds, "Seeds per cell")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--out", out_dir, "Output directory (default ./sweep)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      data::SynthConfig cfg;
      cfg.n_clips = clips;
      cfg.seed = seed;
      cfg.clip_seconds = clip_seconds;
      const auto anns = data::write_corpus(out_dir, cfg);
      out << "wrote " << anns.size() << " clips to " << out_dir << '\n';
      return kExitOk;
    }

    if (extract->parsed()) {
      const RunConfig cfg = load_config(config_path, {});
      cfg.dsp.validate();
      const auto vocab = data::load_directory_vocabulary(in_dir);
      auto anns = data::load_annotations(fs::path(in_dir) / data::kAnnotationsFile, vocab);
      fs::create_directories(fs::path(out_dir) / "features");
      for (auto& a : anns) {
        fs::path src(a.source);
        if (src.is_relative()) src = fs::path(in_dir) / src;
        if (!fs::exists(src)) throw IoError("clip " + a.clip_id + ": missing source " + src.string());
        const auto fm = dsp::load_feature_source(src, cfg.dsp);
        a.source = "features/" + a.clip_id + ".lmel";
        dsp::write_features(fs::path(out_dir) / a.source, fm);
      }
      data::write_annotations(fs::path(out_dir) / data::kAnnotationsFile, anns);
      data::save_vocabulary(fs::path(out_dir) / data::kVocabularyFile, vocab);
      write_run_config(fs::path(out_dir) / "config.txt", cfg);
      out << "extracted " << anns.size() << " feature files to " << out_dir << '\n';
      return kExitOk;
    }

    if (train_cmd->parsed() || sweep_cmd->parsed()) {
      RunConfig cfg = load_config(config_path, overrides);
      if (epochs) cfg.train.epochs = epochs;
      if (!pooling_name.empty()) set_run_config_value(cfg, "train.pooling", pooling_name);
      if (train_cmd->parsed()) {
        if (train_cmd->get_option("--mode")->count()) cfg.train.mode = train::parse_mode(mode_name);
        if (train_cmd->get_option("--seed")->count()) cfg.train.seed = seed;
        cfg.validate();
        const Prepared p = prepare_data(data_dir, cfg, cfg.train.seed);
        const auto report = train_cell(cfg, p, out_dir, out);
        out << metrics::to_json(report) << '\n';
        return kExitOk;
      }

      cfg.validate();
      const fs::path root = out_dir.empty() ? fs::path("sweep") : fs::path(out_dir);
      fs::create_directories(root);
      write_run_config(root / "config.txt", cfg);
      const Prepared p = prepare_data(data_dir, cfg, cfg.train.seed);
      std::ofstream summary(root / "summary.tsv");
      if (!summary) throw IoError("cannot open " + (root / "summary.tsv").string());
      summary << "mode\tpooling\tseed\tscene_micro_f\tscene_macro_f\tevent_micro_f\tevent_macro_f\n";
      std::ofstream table(root / "table.tsv");
      table << "system\tscene_micro_f\tscene_macro_f\tevent_micro_f\tevent_macro_f\n";
      for (const SweepRow& row : sweep_rows(cfg.train.pooling ? cfg.train.pooling : milpool::PoolingKind::attention)) {
        std::vector<double> cols[4];
        const std::string pool = row.pooling ? std::string(milpool::to_string(*row.pooling)) : "none";
        for (std::size_t k = 0; k < seeds; ++k) {
          RunConfig cell = cfg;
          cell.train.mode = row.mode;
          cell.train.pooling = row.pooling;
          cell.train.seed = k;
          const std::string name = std::string(train::to_string(row.mode)) + "_" + pool + "_seed" + std::to_string(k);
          out << "== " << row.label << " seed " << k << '\n';
          const auto r = train_cell(cell, p, root / name, out);
          const double vals[4] = {r.scene_micro_f, r.scene_macro_f, r.event_micro_f, r.event_macro_f};
          const bool applies[4] = {row.scene, row.scene, row.event, row.event};
          summary << train::to_string(row.mode) << '\t' << (row.mode == train::TrainMode::asc_only ? "-" : pool) << '\t'
                  << k;
          for (int c = 0; c < 4; ++c) {
            summary << '\t' << (applies[c] ? fixed(vals[c]) : "-");
            cols[c].push_back(vals[c]);
          }
          summary << '\n' << std::flush;
        }
        table << row.label;
        const bool applies[4] = {row.scene, row.scene, row.event, row.event};
        for (int c = 0; c < 4; ++c) table << '\t' << (applies[c] ? fixed(median(cols[c])) : "-");
        table << '\n' << std::flush;
      }
      out << "summary written to " << (root / "summary.tsv").string() << '\n';
      return kExitOk;
    }

    if (eval_cmd->parsed()) {
      const auto ckpt = model::load_checkpoint(model_path);
      const auto ds = data::load_dataset(data_dir, ckpt.dsp);
      const auto report = train::evaluate(ckpt.arch, ckpt.pooling, ckpt.params, ds, threshold);
      write_text(out_dir, metrics::to_json(report) + "\n");
      out << metrics::to_json(report) << '\n';
      return kExitOk;
    }

    if (grad_cmd->parsed()) {
      const std::vector<std::string> ops = op.empty() ? gradcheck::registered_ops() : std::vector<std::string>{op};
      bool all_pass = true;
      for (const std::string& name : ops) {
        gradcheck::OpReport r;
        if (seed_opt->count()) {
          r = {name, gradcheck::grad_check(name, seed), gradcheck::tolerance(name), 1};
        } else {
          r = gradcheck::check_op(name, grad_seeds);
        }
        char line[160];
        std::snprintf(line, sizeof line, "%-20s max_rel_error %.3e  tol %.0e  %s\n", name.c_str(), r.max_rel_error,
                      r.tolerance, r.passed() ? "PASS" : "FAIL");
        out << line;
        all_pass = all_pass && r.passed();
      }
      return all_pass ? kExitOk : kExitData;
    }

    if (pool_cmd->parsed()) {
      const auto k = milpool::parse_pooling(kind);
      std::string line;
      std::getline(in, line);
      const auto x = read_numbers(line);
      if (x.empty()) throw InvalidInput("pool: empty input vector");
      std::vector<double> a;
      if (k == milpool::PoolingKind::attention) {
        std::string att_line;
        std::getline(in, att_line);
        a = read_numbers(att_line);
        if (a.size() != x.size()) throw InvalidInput("pool --kind at: expected a second line with one attention logit per value");
      }
      out << shortest(milpool::pool_scalar<double>(k, x, a)) << '\n';
      return kExitOk;
    }
  } catch (const InvalidConfig& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace mtlsed::cli
