// gcseg command-line driver.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gcseg/config.hpp"
#include "gcseg/data.hpp"
#include "gcseg/errors.hpp"
#include "gcseg/model.hpp"
#include "gcseg/selftest.hpp"
#include "gcseg/train.hpp"

namespace fs = std::filesystem;
using namespace gcseg;

namespace {

void fail_line(const std::string& cls, int code, const std::string& msg) {
  std::string flat = msg;
  for (char& c : flat)
    if (c == '\n') c = ' ';
  std::cerr << "error class=" << cls << " code=" << code << " message=" << flat << "\n";
}

RunConfig load_run_config(const std::string& file, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!file.empty()) apply_config_file(cfg, file);
  apply_overrides(cfg, overrides);
  return cfg;
}

void log_config(const RunConfig& cfg, const std::string& out_dir) {
  const std::string text = resolved_config(cfg);
  std::cerr << "resolved config:\n" << text;
  if (!out_dir.empty()) write_file((fs::path(out_dir) / "config.resolved").string(), text);
}

Mode checkpoint_mode(const Checkpoint& ck) {
  const std::string m = ck.meta_value("mode");
  if (m.empty()) throw InconsistentState("checkpoint does not record its training mode");
  return parse_mode(m);
}

int cmd_gen_data(const std::string& spec, const std::vector<std::string>& overrides, const std::string& out) {
  const RunConfig cfg = load_run_config(spec, overrides);
  cfg.data.validate();
  fs::create_directories(out);
  log_config(cfg, out);
  const auto entries = generate(cfg.data, out);
  std::cerr << "wrote " << entries.size() << " samples to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config, const std::vector<std::string>& overrides, const std::string& data,
              const std::string& mode, const std::string& out) {
  RunConfig cfg = load_run_config(config, overrides);
  if (!mode.empty()) cfg.train.mode = parse_mode(mode);
  cfg.train.validate();
  fs::create_directories(out);
  log_config(cfg, out);
  const auto train_set = load_split(data, "train");
  const auto val_set = load_split(data, "val");
  std::cerr << "train " << train_set.size() << " images, val " << val_set.size() << " images, "
            << resolve_threads(cfg.train.threads) << " threads\n";
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(cfg.train, train_set, val_set, out, &std::cerr);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << "best val dice " << format_number(r.best_val_dice) << " at epoch " << r.best_epoch << " ("
            << format_number(secs) << " s)\n";
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& image, const std::string& out, bool postprocess,
              double gamma) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const Mode mode = checkpoint_mode(ck);
  const Model model = model_from_checkpoint(ck);
  const Gray8 img = load_pgm(image);
  Sample s;
  s.id = fs::path(image).stem().string();
  s.height = img.height;
  s.width = img.width;
  s.image = to_unit(img);
  Labeling pred;
  if (postprocess) {
    if (mode != Mode::nographcut)
      throw InconsistentState("graph-cut post-processing needs a nographcut checkpoint, got " + mode_name(mode));
    pred = postprocess_graphcut(model, s, gamma >= 0.0 ? gamma : model.config().gamma);
  } else {
    pred = predict(model, s, mode);
  }
  save_mask(out, pred);
  return 0;
}

int cmd_eval(const std::vector<std::string>& ckpts, const std::string& config, const std::vector<std::string>& overrides,
             const std::string& data, const std::string& split, bool attack, bool postprocess, const std::string& out) {
  const RunConfig cfg = load_run_config(config, overrides);
  std::vector<Model> models;
  std::vector<Mode> modes;
  std::vector<std::array<double, 3>> alphas;
  models.reserve(ckpts.size());
  for (const auto& path : ckpts) {
    const Checkpoint ck = load_checkpoint(path);
    modes.push_back(checkpoint_mode(ck));
    alphas.push_back(checkpoint_alpha(ck));
    models.push_back(model_from_checkpoint(ck));
  }
  std::vector<EvalMethod> methods;
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::string name = mode_name(modes[i]);
    for (const auto& m : methods)
      if (m.name == name) name += "#" + std::to_string(i);
    methods.push_back(method_from_model(name, models[i], modes[i], alphas[i]));
    if (postprocess && modes[i] == Mode::nographcut) {
      EvalMethod pp;
      pp.name = "postprocess" + name.substr(std::string("nographcut").size());
      const Model& m = models[i];
      pp.predict = [&m](const Sample& s) { return postprocess_graphcut(m, s, m.config().gamma); };
      methods.push_back(std::move(pp));
    }
  }
  const auto samples = load_split(data, split);
  std::vector<MetricsRow> rows = evaluate(methods, samples, split, {}, cfg.train.threads);
  if (attack) {
    std::vector<EvalMethod> attackable;
    for (const auto& m : methods)
      if (m.attack) attackable.push_back(m);
    auto sweep = evaluate(attackable, samples, split, cfg.attack_eps, cfg.train.threads);
    rows.insert(rows.end(), sweep.begin(), sweep.end());
  }
  const std::string table = format_table(rows);
  if (out.empty()) std::cout << table;
  else write_file(out, table);
  for (const auto& r : rows)
    if (r.id == "mean")
      std::cerr << r.method << (r.epsilon ? " eps=" + format_number(*r.epsilon) : std::string()) << " dice "
                << format_number(r.dice.value_or(0.0)) << "\n";
  return 0;
}

int cmd_selftest(const std::string& level) {
  if (level != "fast" && level != "full") throw InvalidArgument("--level must be fast or full");
  const auto results = run_selftest(level == "full");
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.ok ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " (" << format_number(r.seconds)
              << " s)\n";
    ok = ok && r.ok;
  }
  if (!ok) throw NumericError("selftest failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-cut segmentation: data generation, training, inference and evaluation"};
  app.footer(config_help() + "\nenvironment: GCSEG_THREADS caps worker threads (0 = auto)");
  app.require_subcommand(1);

  std::vector<std::string> overrides;
  auto add_set = [&](CLI::App* sub) {
    sub->add_option("--set", overrides, "config override key=value (repeatable, wins over files)");
  };

  std::string spec, out, config, data, mode, ckpt_one, image, split = "test", level = "fast";
  std::vector<std::string> ckpts;
  bool postprocess = false, attack = false;
  double gamma = -1.0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--spec", spec, "config file with data.* keys");
  gen->add_option("--out", out, "output directory")->required();
  add_set(gen);

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", config, "config file");
  tr->add_option("--data", data, "dataset directory")->required();
  tr->add_option("--mode", mode, "gcdlseg or nographcut (overrides train.mode)");
  tr->add_option("--out", out, "output directory")->required();
  add_set(tr);

  auto* inf = app.add_subcommand("infer", "segment one PGM image");
  inf->add_option("--ckpt", ckpt_one, "checkpoint")->required();
  inf->add_option("--image", image, "input PGM")->required();
  inf->add_option("--out", out, "output mask PGM")->required();
  inf->add_flag("--postprocess-graphcut", postprocess, "min cut on a nographcut model's maps");
  inf->add_option("--gamma", gamma, "n-link weight for post-processing (default: checkpoint value)");

  auto* ev = app.add_subcommand("eval", "evaluate checkpoints on a split");
  ev->add_option("--ckpt", ckpts, "checkpoint (repeatable)")->required();
  ev->add_option("--config", config, "config file");
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--split", split, "split name");
  ev->add_flag("--attack", attack, "add the FGSM sweep over attack.eps");
  ev->add_flag("--postprocess-graphcut", postprocess, "also evaluate graph-cut post-processing of nographcut models");
  ev->add_option("--out", out, "metrics CSV (default stdout)");
  add_set(ev);

  auto* st = app.add_subcommand("selftest", "run the built-in oracle suites");
  st->add_option("--level", level, "fast or full");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_line("usage", 2, e.what());
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(spec, overrides, out);
    if (tr->parsed()) return cmd_train(config, overrides, data, mode, out);
    if (inf->parsed()) return cmd_infer(ckpt_one, image, out, postprocess, gamma);
    if (ev->parsed()) return cmd_eval(ckpts, config, overrides, data, split, attack, postprocess, out);
    if (st->parsed()) return cmd_selftest(level);
  } catch (const Error& e) {
    fail_line(e.class_name(), e.exit_code(), e.what());
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    fail_line("format", 3, e.what());
    return 3;
  } catch (const std::exception& e) {
    fail_line("inconsistent_state", 4, e.what());
    return 4;
  }
  return 2;
}
