#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ajepa/config.hpp"
#include "ajepa/dataset.hpp"
#include "ajepa/finetune.hpp"
#include "ajepa/io.hpp"
#include "ajepa/maskgen.hpp"
#include "ajepa/pretrain.hpp"
#include "ajepa/spectro.hpp"
#include "ajepa/wav.hpp"

namespace ajepa::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

inline constexpr char kConfigFile[] = "config.txt";
inline constexpr char kPretrainCheckpoint[] = "checkpoint.ajepa";
inline constexpr char kFinetuneCheckpoint[] = "finetune.ajepa";
inline constexpr char kPretrainCsv[] = "pretrain_loss.csv";
inline constexpr char kFinetuneCsv[] = "finetune_metrics.csv";

namespace detail {

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

/// Explicit --config wins; otherwise a config.txt beside the checkpoint;
/// otherwise defaults.
inline RunConfig resolve_config(const std::string& explicit_path, const fs::path& checkpoint) {
  if (!explicit_path.empty()) return load_config_file(explicit_path);
  if (!checkpoint.empty()) {
    const fs::path beside = checkpoint.parent_path() / kConfigFile;
    if (fs::exists(beside)) return load_config_file(beside);
  }
  return RunConfig{};
}

inline ParamStore<float> encoder_layout(const ModelConfig& model) {
  Rng rng(0);
  return init_encoder<float>(model, rng);
}

inline ParamStore<float> load_encoder(const std::vector<NamedArray>& arrays, const ModelConfig& model) {
  ParamStore<float> enc = encoder_layout(model);
  load_store(arrays, kContextPrefix, enc);
  return enc;
}

inline ParamStore<float> load_head(const std::vector<NamedArray>& arrays, const ModelConfig& model) {
  const std::string bias = std::string(kHeadPrefix) + "head.b";
  for (const auto& a : arrays) {
    if (a.name != bias) continue;
    Rng rng(0);
    ParamStore<float> head = init_head<float>(model.embed_dim, static_cast<int>(a.values.cols()), 0.0, rng);
    load_store(arrays, kHeadPrefix, head);
    return head;
  }
  throw CheckpointError("checkpoint has no classifier head; run finetune or probe first");
}

inline std::string format_indices(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

inline GridShape parse_grid(const std::string& s) {
  const auto x = s.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used_r = 0;
    std::size_t used_c = 0;
    const int r = std::stoi(s.substr(0, x), &used_r);
    const int c = std::stoi(s.substr(x + 1), &used_c);
    if (used_r != x || used_c != s.size() - x - 1 || r < 2 || c < 2) throw std::invalid_argument(s);
    return {r, c};
  } catch (const std::logic_error&) {
    throw CLI::ValidationError("--grid", "expected RxC with R, C >= 2, got '" + s + "'");
  }
}

}  // namespace detail

struct PretrainArgs {
  std::string data, config, out, resume;
  std::uint64_t seed = 0;
  std::optional<std::int64_t> epochs;
  std::int64_t checkpoint_every = 0;
  std::int64_t log_every = 100;
};

inline void cmd_pretrain(const PretrainArgs& a, std::ostream& log) {
  RunConfig cfg = detail::resolve_config(a.config, a.resume);
  cfg.validate();
  const fs::path out = a.out;
  detail::ensure_dir(out);
  const Dataset data = load_dataset(a.data, cfg.pretrain.frontend);
  TrainState state = a.resume.empty() ? init_train_state(cfg.pretrain, a.seed)
                                      : load_train_state(a.resume, cfg.pretrain.model);
  detail::write_text(out / kConfigFile, format_config(cfg));
  CsvWriter csv(out / kPretrainCsv, kPretrainCsvHeader, !a.resume.empty());
  log << "pretrain: " << data.size() << " clips, grid " << cfg.pretrain.grid().rows << "x"
      << cfg.pretrain.grid().cols << ", step " << state.step << " of " << cfg.pretrain.optim.total_steps
      << ", seed " << state.seed << "\n";

  PretrainHooks hooks;
  hooks.on_step = [&](const StepResult& r) {
    csv.row({static_cast<double>(r.step), r.loss, r.f_s, r.tf_fraction, r.lr});
    if (a.log_every > 0 && r.step % a.log_every == 0) {
      log << "step " << r.step << " loss " << r.loss << " f_s " << r.f_s << " lr " << r.lr << std::endl;
    }
  };
  hooks.checkpoint_every = a.checkpoint_every;
  hooks.on_checkpoint = [&](const TrainState& s) {
    char name[64];
    std::snprintf(name, sizeof(name), "checkpoint_step%06lld.ajepa", static_cast<long long>(s.step));
    save_train_state(out / name, s);
  };
  pretrain_loop(state, data, cfg.pretrain, a.epochs, hooks);
  save_train_state(out / kPretrainCheckpoint, state);
  log << "wrote " << (out / kPretrainCheckpoint).string() << "\n";
}

struct FinetuneArgs {
  std::string data, init, config, out;
  std::uint64_t seed = 0;
  bool freeze_encoder = false;
  bool random_init = false;
  std::optional<double> rm_ratio;
  std::optional<int> epochs;
  std::optional<double> lr;
  int folds = 5;
  int fold = 0;
};

/// Shared by finetune and probe. Returns the last epoch's metrics.
inline FinetuneRow cmd_finetune(const FinetuneArgs& a, std::ostream& log) {
  RunConfig cfg = detail::resolve_config(a.config, a.init);
  FinetuneConfig ft = cfg.finetune_config();
  ft.freeze_encoder = a.freeze_encoder;
  if (ft.freeze_encoder) {
    ft.epochs = cfg.probe_epochs;
    ft.lr = cfg.probe_lr;
  }
  if (a.rm_ratio) ft.rm.ratio = *a.rm_ratio;
  ft.rm.active = !ft.freeze_encoder && ft.rm.ratio > 0;
  if (a.epochs) ft.epochs = *a.epochs;
  if (a.lr) ft.lr = *a.lr;
  ft.validate();

  ParamStore<float> encoder;
  if (a.random_init) {
    Rng rng = Rng::stream(a.seed, "init");
    encoder = init_encoder<float>(ft.model, rng);
  } else {
    encoder = detail::load_encoder(read_checkpoint(a.init), ft.model);
  }
  const Dataset data = load_dataset(a.data, ft.frontend);
  const auto [train, held] = split_dataset(data, a.folds, a.fold);
  const fs::path out = a.out;
  detail::ensure_dir(out);
  detail::write_text(out / kConfigFile, format_config(cfg));
  CsvWriter csv(out / kFinetuneCsv, kFinetuneCsvHeader);
  log << (ft.freeze_encoder ? "probe" : "finetune") << ": " << train.size() << " train / " << held.size()
      << " eval clips, " << train.n_classes() << " classes, rm " << (ft.rm.active ? ft.rm.ratio : 0.0) << "\n";
  const FinetuneResult res = finetune_loop(encoder, train, held, ft, a.seed, [&](const FinetuneRow& r) {
    csv.row({static_cast<double>(r.epoch), r.train_loss, r.eval_accuracy, r.eval_map});
    log << "epoch " << r.epoch << " loss " << r.train_loss << " acc " << r.eval_accuracy << " mAP "
        << r.eval_map << "\n";
  });
  write_checkpoint(out / kFinetuneCheckpoint, finetune_arrays(res.encoder, res.head));
  log << "wrote " << (out / kFinetuneCheckpoint).string() << "\n";
  return res.rows.empty() ? FinetuneRow{} : res.rows.back();
}

inline EvalResult cmd_eval(const std::string& data_dir, const std::string& ckpt, const std::string& config,
                           std::ostream& out) {
  const RunConfig cfg = detail::resolve_config(config, ckpt);
  const auto arrays = read_checkpoint(ckpt);
  const ParamStore<float> enc = detail::load_encoder(arrays, cfg.pretrain.model);
  const ParamStore<float> head = detail::load_head(arrays, cfg.pretrain.model);
  const Dataset data = load_dataset(data_dir, cfg.pretrain.frontend);
  if (data.n_classes() != static_cast<int>(head.at("head.b").cols())) {
    throw PreconditionError("dataset has " + std::to_string(data.n_classes()) + " classes, head has " +
                            std::to_string(head.at("head.b").cols()));
  }
  const ModelGeometry<float> geo(cfg.pretrain.model, cfg.pretrain.grid());
  const EvalResult r = evaluate(data, enc, head, cfg.pretrain.frontend, geo);
  out << "accuracy " << r.accuracy << "\nmap " << r.map << "\n";
  return r;
}

struct MasksArgs {
  std::string grid = "8x8", config, out = "mask_plan.pgm", mode = "auto";
  std::int64_t step = 0;
  std::int64_t total_steps = 2000;
  std::uint64_t seed = 0;
};

inline MaskPlan cmd_masks(const MasksArgs& a, std::ostream& out) {
  const GridShape grid = detail::parse_grid(a.grid);
  const RunConfig cfg = a.config.empty() ? RunConfig{} : load_config_file(a.config);
  CurriculumSchedule sched = cfg.pretrain.curriculum;
  sched.total_steps = a.total_steps;
  sched.validate();
  std::optional<MaskMode> forced;
  if (a.mode == "block") forced = MaskMode::block;
  if (a.mode == "tf") forced = MaskMode::time_frequency;
  Rng rng = Rng::stream(a.seed, "masks", static_cast<std::uint64_t>(a.step), 0);
  const MaskPlan plan = build_mask_plan(grid, cfg.pretrain.sampler, a.step, sched, rng, forced);
  out << "grid " << grid.rows << "x" << grid.cols << "\nmode " << to_string(plan.mode) << "\nf_s "
      << curriculum_f(a.step, sched) << "\ncontext " << detail::format_indices(plan.context.indices) << "\n";
  for (std::size_t i = 0; i < plan.targets.size(); ++i) {
    out << "target" << i << " " << detail::format_indices(plan.targets[i].indices) << "\n";
  }
  write_file_bytes(a.out, mask_plan_pgm(plan));
  out << "wrote " << a.out << "\n";
  return plan;
}

struct GenDataArgs {
  std::string out;
  SyntheticSpec spec;
  bool no_noise = false;
};

inline void cmd_gen_data(GenDataArgs a, std::ostream& out) {
  if (a.no_noise) a.spec.noise = false;
  const std::size_t n = gen_synthetic(a.out, a.spec);
  out << "wrote " << n << " clips to " << a.out << "\n";
}

inline void cmd_dump_spec(const std::string& wav, const std::string& dest, const std::string& config, bool raw,
                          std::ostream& out) {
  const RunConfig cfg = config.empty() ? RunConfig{} : load_config_file(config);
  const Waveform w = read_wav_file(wav);
  const Mat<double> frames =
      raw ? log_mel_frames(w, cfg.pretrain.frontend) : log_mel(w, cfg.pretrain.frontend).values;
  write_file_bytes(dest, spectrogram_pgm(frames));
  out << "wrote " << frames.rows() << "x" << frames.cols() << " spectrogram to " << dest << "\n";
}

/// Parses and dispatches one command line (args excludes the program
/// name). Returns 0 on success, 1 on usage errors, 2 on runtime errors.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Audio joint-embedding predictive pretraining and evaluation", "ajepa"};
  app.require_subcommand(1);

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Self-supervised pretraining on a WAV directory");
  p->add_option("--data", pre.data, "dataset directory")->required();
  p->add_option("--config", pre.config, "key = value config file (default: config.txt beside --resume)");
  p->add_option("--out", pre.out, "output directory")->required();
  p->add_option("--seed", pre.seed, "root seed");
  p->add_option("--epochs", pre.epochs, "stop after this many epochs (default: run to total_steps)");
  p->add_option("--checkpoint-every", pre.checkpoint_every, "also save every N steps");
  p->add_option("--resume", pre.resume, "continue from a pretraining checkpoint");
  p->add_option("--log-every", pre.log_every, "progress line every N steps (0: off)");

  FinetuneArgs ft;
  auto* f = app.add_subcommand("finetune", "Fine-tune a pretrained encoder with a linear head");
  f->add_option("--data", ft.data, "labeled dataset directory")->required();
  f->add_option("--init", ft.init, "pretrained checkpoint")->required();
  f->add_option("--out", ft.out, "output directory")->required();
  f->add_option("--config", ft.config, "config file (default: config.txt beside --init)");
  f->add_option("--seed", ft.seed, "root seed");
  f->add_flag("--freeze-encoder", ft.freeze_encoder, "train the head only");
  f->add_option("--rm-ratio", ft.rm_ratio, "regularized masking ratio (0: off)");
  f->add_option("--epochs", ft.epochs, "training epochs");
  f->add_option("--lr", ft.lr, "peak learning rate");
  f->add_option("--folds", ft.folds, "split into this many folds");
  f->add_option("--fold", ft.fold, "held-out fold index");

  FinetuneArgs pr;
  pr.freeze_encoder = true;
  auto* pb = app.add_subcommand("probe", "Linear probe on a frozen encoder");
  pb->add_option("--data", pr.data, "labeled dataset directory")->required();
  auto* init_opt = pb->add_option("--init", pr.init, "pretrained checkpoint");
  auto* rand_opt = pb->add_flag("--random-init", pr.random_init, "probe a randomly initialized encoder");
  init_opt->excludes(rand_opt);
  pb->add_option("--out", pr.out, "output directory")->required();
  pb->add_option("--config", pr.config, "config file (default: config.txt beside --init)");
  pb->add_option("--seed", pr.seed, "root seed");
  pb->add_option("--epochs", pr.epochs, "training epochs");
  pb->add_option("--lr", pr.lr, "peak learning rate");
  pb->add_option("--folds", pr.folds, "split into this many folds");
  pb->add_option("--fold", pr.fold, "held-out fold index");

  std::string eval_data, eval_ckpt, eval_config;
  auto* e = app.add_subcommand("eval", "Accuracy and mAP of a fine-tuned checkpoint");
  e->add_option("--data", eval_data, "labeled dataset directory")->required();
  e->add_option("--ckpt", eval_ckpt, "checkpoint with a classifier head")->required();
  e->add_option("--config", eval_config, "config file (default: config.txt beside --ckpt)");

  MasksArgs ma;
  auto* m = app.add_subcommand("masks", "Sample one mask plan; print it and write a PGM raster");
  m->add_option("--grid", ma.grid, "token grid RxC (time x frequency)");
  m->add_option("--step", ma.step, "training step");
  m->add_option("--total-steps", ma.total_steps, "curriculum length");
  m->add_option("--seed", ma.seed, "root seed");
  m->add_option("--mode", ma.mode, "mask mode")->check(CLI::IsMember({"auto", "block", "tf"}));
  m->add_option("--config", ma.config, "config file for sampler settings");
  m->add_option("--out", ma.out, "PGM output path");

  GenDataArgs gd;
  auto* g = app.add_subcommand("gen-data", "Write a synthetic tone-recipe WAV dataset");
  g->add_option("--out", gd.out, "output directory")->required();
  g->add_option("--seed", gd.spec.seed, "root seed");
  g->add_option("--classes", gd.spec.n_classes, "number of classes");
  g->add_option("--clips-per-class", gd.spec.clips_per_class, "clips per class");
  g->add_option("--duration", gd.spec.duration_s, "clip length in seconds");
  g->add_option("--noise-db", gd.spec.noise_db, "white noise level relative to full scale");
  g->add_flag("--no-noise", gd.no_noise, "pure tone mixtures");
  g->add_flag("--multi-label", gd.spec.multi_label, "mixed clips with a labels.csv manifest");

  std::string ds_wav, ds_out, ds_config;
  bool ds_raw = false;
  auto* d = app.add_subcommand("dump-spec", "Write the log-mel spectrogram of a WAV file as PGM");
  d->add_option("--wav", ds_wav, "input WAV")->required();
  d->add_option("--out", ds_out, "PGM output path")->required();
  d->add_option("--config", ds_config, "config file for frontend settings");
  d->add_flag("--raw", ds_raw, "all frames, before cropping and standardization");

  if (!args.empty() && !args.front().empty() && args.front().front() != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == args.front();
    if (!known) {
      err << "unknown subcommand '" << args.front() << "'\n" << app.help();
      return kUsage;
    }
  }

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    if (app.get_subcommands().empty()) err << app.help();
    return kUsage;
  }

  try {
    if (p->parsed()) {
      cmd_pretrain(pre, out);
    } else if (f->parsed()) {
      cmd_finetune(ft, out);
    } else if (pb->parsed()) {
      if (pr.init.empty() && !pr.random_init) {
        err << "error: probe needs --init CKPT or --random-init\n";
        return kUsage;
      }
      cmd_finetune(pr, out);
    } else if (e->parsed()) {
      cmd_eval(eval_data, eval_ckpt, eval_config, out);
    } else if (m->parsed()) {
      cmd_masks(ma, out);
    } else if (g->parsed()) {
      cmd_gen_data(gd, out);
    } else if (d->parsed()) {
      cmd_dump_spec(ds_wav, ds_out, ds_config, ds_raw, out);
    }
  } catch (const CLI::ValidationError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

}  // namespace ajepa::cli
