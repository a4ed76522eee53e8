#include "mslr/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <optional>

#include "mslr/ablation.hpp"
#include "mslr/backbone.hpp"
#include "mslr/checkpoint.hpp"
#include "mslr/config.hpp"
#include "mslr/error.hpp"
#include "mslr/gradsuite.hpp"
#include "mslr/io.hpp"
#include "mslr/rng.hpp"
#include "mslr/shapes.hpp"
#include "mslr/training.hpp"

namespace fs = std::filesystem;

namespace mslr {
namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "overrides the config seed");
  cmd->add_option("--set", c.overrides, "extra key=value overrides, applied after the file");
}

Config resolve(const Common& c, std::ostream& out) {
  Config cfg = c.config_path.empty() ? Config{} : load_config(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  out << "# resolved config\n" << cfg.to_text();
  return cfg;
}

std::vector<PointCloud> load_clouds(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ArgumentError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".xyz") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ArgumentError("no .xyz files in " + dir.string());
  std::vector<PointCloud> clouds;
  for (const auto& f : files) {
    try {
      clouds.push_back(read_xyz(f));
    } catch (const ParseError& e) {
      throw ParseError(f.string() + ": " + e.what(), e.line());
    }
  }
  return clouds;
}

// A data directory holds train/ and test/ subdirectories (as written by
// gen-data) or, for unlabeled use, clouds directly. Without one, the synthetic
// set described by the config is generated in memory.
std::vector<PointCloud> dataset(const std::string& dir, const Config& cfg, bool test_split) {
  if (dir.empty()) {
    return synthetic_dataset(cfg.data, cfg.model.num_points, test_split ? cfg.data.test_per_class : cfg.data.per_class,
                             cfg.seed, test_split ? 1 : 0);
  }
  const fs::path sub = fs::path(dir) / (test_split ? "test" : "train");
  if (fs::is_directory(sub)) return load_clouds(sub);
  if (test_split) return {};
  return load_clouds(dir);
}

void maybe_restore(MaskedAutoencoder& model, const std::string& path, bool allow_mismatch, std::ostream& out) {
  if (path.empty()) return;
  const auto ckpt = load_checkpoint(path);
  restore_checkpoint(model, ckpt, allow_mismatch);
  out << "loaded checkpoint " << path << " (step " << ckpt.step << ")\n";
}

int cmd_gen_data(const Config& cfg, const std::string& out_dir, std::ostream& out) {
  for (bool test : {false, true}) {
    const fs::path dir = fs::path(out_dir) / (test ? "test" : "train");
    fs::create_directories(dir);
    const auto clouds = dataset("", cfg, test);
    const std::size_t per_class = test ? cfg.data.test_per_class : cfg.data.per_class;
    for (std::size_t i = 0; i < clouds.size(); ++i) {
      char name[96];
      std::snprintf(name, sizeof name, "%02d_%s_%04zu.xyz", *clouds[i].label,
                    cfg.data.kinds[static_cast<std::size_t>(*clouds[i].label)].c_str(), i % per_class);
      write_xyz(dir / name, clouds[i]);
    }
    out << "wrote " << clouds.size() << " clouds to " << dir.string() << "\n";
  }
  return 0;
}

struct TrainPaths {
  std::string data, checkpoint, out, metrics;
  bool allow_mismatch = false;
};

int cmd_pretrain(const Config& cfg, const TrainPaths& p, std::ostream& out) {
  const auto data = dataset(p.data, cfg, false);
  MaskedAutoencoder model(cfg.model, cfg.seed);
  maybe_restore(model, p.checkpoint, p.allow_mismatch, out);
  AdamW opt(pretrain_parameters(model), cfg.train.weight_decay, cfg.train.beta1, cfg.train.beta2, cfg.train.adam_eps);
  PretrainHooks hooks;
  if (!p.out.empty()) {
    hooks.save_checkpoint = [&](std::size_t, const AdamW& o) { save_checkpoint(p.out, capture_checkpoint(model, &o)); };
  }
  hooks.on_step = [&](const LogEntry& e) {
    out << "step " << e.step << " epoch " << e.epoch << " lr " << format_double(e.lr) << " loss "
        << format_double(e.loss) << "\n";
  };
  out << "pretraining on " << data.size() << " clouds, " << model.params().scalar_count() << " parameters\n";
  const auto log = pretrain_run(model, opt, data, cfg.train, Rng::mix(cfg.seed, 2), hooks);
  if (!p.metrics.empty()) write_metrics_csv(p.metrics, log);
  out << "final loss " << format_double(log.entries.back().loss) << "\n";
  return 0;
}

int cmd_finetune(const Config& cfg, const TrainPaths& p, std::ostream& out) {
  const auto train = dataset(p.data, cfg, false);
  const auto test = dataset(p.data, cfg, true);
  MaskedAutoencoder model(cfg.model, cfg.seed);
  maybe_restore(model, p.checkpoint, p.allow_mismatch, out);
  auto head = ClassifierHead::create(model.params(), "cls", 2 * cfg.model.dims.back(), cfg.model.head_hidden,
                                     cfg.data.kinds.size());
  const auto r = finetune_classify(model, head, train, test, cfg.finetune, Rng::mix(cfg.seed, 3));
  if (!p.metrics.empty()) write_metrics_csv(p.metrics, r.log);
  if (!p.out.empty()) save_checkpoint(p.out, capture_checkpoint(model));
  out << "train accuracy " << format_double(r.train_accuracy) << "\n";
  if (!test.empty()) out << "test accuracy " << format_double(r.test_accuracy) << "\n";
  return 0;
}

int cmd_fewshot(const Config& cfg, const TrainPaths& p, std::ostream& out) {
  const auto data = dataset(p.data, cfg, false);
  MaskedAutoencoder model(cfg.model, cfg.seed);
  maybe_restore(model, p.checkpoint, p.allow_mismatch, out);
  const auto r = few_shot_eval(model, data, cfg.finetune, Rng::mix(cfg.seed, 4));
  for (std::size_t t = 0; t < r.accuracies.size(); ++t) {
    out << "trial " << t << " accuracy " << format_double(r.accuracies[t]) << "\n";
  }
  out << cfg.finetune.way << "-way " << cfg.finetune.shot << "-shot accuracy " << format_double(r.mean) << " +- "
      << format_double(r.stddev) << "\n";
  return 0;
}

int cmd_reconstruct(const Config& cfg, const TrainPaths& p, const std::vector<std::string>& inputs,
                    std::ostream& out) {
  MaskedAutoencoder model(cfg.model, cfg.seed);
  maybe_restore(model, p.checkpoint, p.allow_mismatch, out);
  fs::create_directories(p.out);
  const TrainConfig no_aug;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    const PointCloud input = read_xyz(inputs[n]);
    const auto pyramid = prepare_pyramid(input, cfg.model, nullptr, no_aug);
    const auto plan = mask_and_backproject(pyramid, cfg.model.mask_ratio, Rng::mix(cfg.seed, n));
    const auto step = pretrain_forward(model, pyramid, plan);

    const auto base = pyramid.points(0);
    PointCloud original{{base.begin(), base.end()}, input.label};
    PointCloud masked{{}, input.label};
    for (auto i : plan.visible(1)) masked.points.push_back(pyramid.points(1)[i]);
    PointCloud rebuilt = masked;
    const auto pred = step.prediction.data();
    const std::size_t k = cfg.model.ks[1];
    for (std::size_t m = 0; m < step.masked_centers.size(); ++m) {
      const Point3& c = pyramid.points(2)[step.masked_centers[m]];
      for (std::size_t j = 0; j < k; ++j) {
        const double* q = pred.data() + (m * k + j) * 3;
        rebuilt.points.push_back({c[0] + q[0], c[1] + q[1], c[2] + q[2]});
      }
    }
    const std::string stem = fs::path(inputs[n]).stem().string();
    write_xyz(fs::path(p.out) / (stem + "_original.xyz"), original);
    write_xyz(fs::path(p.out) / (stem + "_masked.xyz"), masked);
    write_xyz(fs::path(p.out) / (stem + "_reconstructed.xyz"), rebuilt);
    out << stem << ": " << plan.masked(2).size() << " masked patches, chamfer loss "
        << format_double(step.loss.item()) << "\n";
  }
  return 0;
}

int cmd_gradcheck(const Config& cfg, const std::vector<std::string>& only, std::ostream& out) {
  const auto names = only.empty() ? gradcheck_case_names() : only;
  bool ok = true;
  double worst = 0.0;
  for (const auto& name : names) {
    const auto r = run_gradcheck_case(name, cfg.seed);
    std::size_t checked = 0, skipped = 0;
    for (const auto& pc : r.report.params) {
      checked += pc.checked;
      skipped += pc.skipped;
    }
    ok = ok && r.report.passed();
    worst = std::max(worst, r.report.max_rel_err());
    char line[160];
    std::snprintf(line, sizeof line, "%-22s max_rel_err %.3e  tol %.0e  checked %zu  skipped %zu  %s\n",
                  name.c_str(), r.report.max_rel_err(), r.report.tolerance, checked, skipped,
                  r.report.passed() ? "ok" : "FAIL");
    out << line;
  }
  out << "max relative error " << format_double(worst) << (ok ? "" : " (FAILED)") << "\n";
  return ok ? 0 : 1;
}

int cmd_ablate(const Config& cfg, const std::string& axis, const std::string& out_path, std::ostream& out) {
  const std::string csv = run_ablation(cfg, axis);
  if (out_path.empty()) {
    out << csv;
  } else {
    write_text_file(out_path, csv);
    out << "wrote " << out_path << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale masked point-cloud autoencoder", "mslr"};
  app.require_subcommand(1);

  Common common;
  TrainPaths paths;
  std::vector<std::string> inputs, cases;
  std::string data_out, axis = "all", csv_out;

  auto* gen = app.add_subcommand("gen-data", "write the synthetic train/test sets as xyz files");
  add_common(gen, common);
  gen->add_option("--out", data_out, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "masked-reconstruction pretraining");
  auto* ft = app.add_subcommand("finetune", "supervised classification fine-tuning");
  auto* few = app.add_subcommand("fewshot", "n-way m-shot evaluation on frozen features");
  auto* rec = app.add_subcommand("reconstruct", "write original/masked/reconstructed clouds");
  for (auto* cmd : {pre, ft, few, rec}) {
    add_common(cmd, common);
    cmd->add_option("--checkpoint", paths.checkpoint, "checkpoint to start from")->check(CLI::ExistingFile);
    cmd->add_flag("--allow-config-mismatch", paths.allow_mismatch, "load checkpoints written for another config");
  }
  for (auto* cmd : {pre, ft, few}) cmd->add_option("--data", paths.data, "data directory (default: synthetic)");
  for (auto* cmd : {pre, ft}) {
    cmd->add_option("--out", paths.out, "checkpoint to write");
    cmd->add_option("--metrics", paths.metrics, "metrics CSV to write");
  }
  rec->add_option("--input", inputs, "xyz clouds")->required()->check(CLI::ExistingFile);
  rec->add_option("--out", paths.out, "output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(gc, common);
  gc->add_option("--case", cases, "run only these checks")->check(CLI::IsMember(gradcheck_case_names()));

  auto* abl = app.add_subcommand("ablate", "mask-ratio, LA-parameter and LA-branch grids");
  add_common(abl, common);
  abl->add_option("--axis", axis, "mask-ratio | la-params | la-branches | all")
      ->check(CLI::IsMember({"mask-ratio", "la-params", "la-branches", "all"}));
  abl->add_option("--out", csv_out, "CSV path (default: stdout)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    const Config cfg = resolve(common, out);
    if (gen->parsed()) return cmd_gen_data(cfg, data_out, out);
    if (pre->parsed()) return cmd_pretrain(cfg, paths, out);
    if (ft->parsed()) return cmd_finetune(cfg, paths, out);
    if (few->parsed()) return cmd_fewshot(cfg, paths, out);
    if (rec->parsed()) return cmd_reconstruct(cfg, paths, inputs, out);
    if (gc->parsed()) return cmd_gradcheck(cfg, cases, out);
    return cmd_ablate(cfg, axis, csv_out, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mslr
