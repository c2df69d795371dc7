#include "richunet/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <optional>

#include "richunet/checkpoint.hpp"
#include "richunet/config.hpp"
#include "richunet/dataset.hpp"
#include "richunet/error.hpp"
#include "richunet/pgm.hpp"
#include "richunet/report.hpp"
#include "richunet/selftest.hpp"
#include "richunet/trainer.hpp"

namespace richunet {
namespace fs = std::filesystem;

namespace {

struct TrainArgs {
  std::string config;
  std::string data;
  std::size_t synth = 0;
  std::size_t size = 64;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::string resume;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string report;
};

struct InferArgs {
  std::string checkpoint;
  std::string image;
  std::string mask;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

int train(const TrainArgs& a, std::ostream& out) {
  RunConfig config;
  if (!a.config.empty()) config = load_config(a.config);
  if (a.seed) config.train.seed = *a.seed;
  if (a.steps) config.train.steps = *a.steps;
  config.train.validate();
  config.model.validate();

  fs::create_directories(a.out);
  std::vector<SegmentationSample> data;
  if (a.synth > 0) {
    data = synth_dataset(a.synth, a.size, a.size, config.train.seed);
    save_dataset(data, fs::path(a.out) / "data");
    // Train on what was written so a later --data run sees the same pixels.
    data = load_dataset(fs::path(a.out) / "data");
  } else {
    data = load_dataset(a.data);
  }
  if (data.empty()) throw Error("no training samples");

  std::optional<Trainer> trainer;
  if (!a.resume.empty()) {
    trainer.emplace(Trainer::restore(load_checkpoint(a.resume)));
  } else {
    trainer.emplace(Trainer::create(config));
  }
  const RunConfig& used = trainer->config();
  for (const auto& s : data) used.model.validate_input(s.image.dim(1), s.image.dim(2));
  write_text(fs::path(a.out) / "config.txt", format_config(used));

  const std::size_t total = a.steps ? *a.steps : used.train.total_steps(data.size());
  const std::size_t every = used.train.checkpoint_every;
  out << "training " << data.size() << " samples, steps " << trainer->step_count() << " -> " << total << '\n';
  auto log = trainer->run(data, total, [&](Trainer& t, const StepRecord& r) {
    if (every != 0 && r.step % every == 0) {
      fs::create_directories(fs::path(a.out) / "checkpoints");
      save_checkpoint(t.checkpoint(), fs::path(a.out) / "checkpoints" / ("step_" + std::to_string(r.step) + ".bin"));
    }
    if (r.step % 25 == 0 || r.step == total) {
      char line[96];
      std::snprintf(line, sizeof line, "step %zu loss %.6f dice %.4f\n", r.step, r.loss, r.dice);
      out << line << std::flush;
    }
  });
  write_text(fs::path(a.out) / "train_log.csv", format_log(log));
  save_checkpoint(trainer->checkpoint(), fs::path(a.out) / "checkpoint.bin");
  return kExitOk;
}

int eval(const EvalArgs& a, std::ostream& out) {
  Trainer trainer = Trainer::restore(load_checkpoint(a.checkpoint));
  auto data = load_dataset(a.data);
  EvaluationReport report = evaluate(trainer.net(), data);
  if (!a.report.empty()) write_text(a.report, report.to_csv());
  out << report.to_text();
  return kExitOk;
}

int infer(const InferArgs& a, std::ostream&) {
  Trainer trainer = Trainer::restore(load_checkpoint(a.checkpoint));
  Tensor image = load_pgm(a.image);
  save_mask_pgm(predict_mask(trainer.net(), image), a.mask);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rich-U-Net segmentation: train, evaluate, infer", "richunet"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", ta.config, "key=value config file")->check(CLI::ExistingFile);
  auto* data_opt = train_cmd->add_option("--data", ta.data, "dataset directory with images/ and masks/");
  auto* synth_opt = train_cmd->add_option("--synth", ta.synth, "generate N synthetic samples");
  data_opt->excludes(synth_opt);
  train_cmd->add_option("--size", ta.size, "synthetic image side length")->capture_default_str();
  train_cmd->add_option("--out", ta.out, "output directory")->required();
  train_cmd->add_option("--seed", ta.seed, "seed for data, initialisation and batching");
  train_cmd->add_option("--steps", ta.steps, "total optimizer steps");
  train_cmd->add_option("--resume", ta.resume, "checkpoint to continue from")->check(CLI::ExistingFile);

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "trained checkpoint")->required();
  eval_cmd->add_option("--data", ea.data, "dataset directory with images/ and masks/")->required();
  eval_cmd->add_option("--report", ea.report, "CSV report path");

  InferArgs ia;
  auto* infer_cmd = app.add_subcommand("infer", "segment one image");
  infer_cmd->add_option("--checkpoint", ia.checkpoint, "trained checkpoint")->required();
  infer_cmd->add_option("--image", ia.image, "input 8-bit PGM")->required();
  infer_cmd->add_option("--mask", ia.mask, "output mask PGM (0 or 255)")->required();

  auto* selftest_cmd = app.add_subcommand("selftest", "run the built-in invariant suites");

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) {
      if (ta.data.empty() && ta.synth == 0) throw UsageError("train needs --data DIR or --synth N");
      return train(ta, out);
    }
    if (eval_cmd->parsed()) return eval(ea, out);
    if (infer_cmd->parsed()) return infer(ia, out);
    if (selftest_cmd->parsed()) {
      bool ok = true;
      for (const auto& r : run_selftest(out)) ok = ok && r.passed;
      return ok ? kExitOk : kExitNumerical;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace richunet
