// ganet: gradient checks, complexity benchmark, synthetic data, training and
// evaluation of the global attention segmentation head.
//
// Exit codes: 0 success, 1 check or validation failure, 2 I/O failure.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ganet/ganet.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kIoFailure = 2;

std::vector<std::size_t> parse_sizes(const std::string& list) {
  std::vector<std::size_t> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(item, &pos);
    if (pos != item.size() || v == 0) throw std::invalid_argument("bad size '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw std::invalid_argument("--sizes is empty");
  return out;
}

int cmd_gradcheck(double tol, std::uint64_t seed, const std::string& fault) {
  const auto results = ganet::run_gradient_suite(seed, tol, fault);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-26s max_rel_err=%.3e  %s\n", r.name.c_str(), r.max_rel_error, r.passed ? "ok" : "FAIL");
    ok = ok && r.passed;
  }
  if (!ok) {
    for (const auto& r : results) {
      if (!r.passed) std::fprintf(stderr, "gradcheck failed: %s (%.3e > %.1e)\n", r.name.c_str(), r.max_rel_error, tol);
    }
    return kFailed;
  }
  std::printf("all %zu targets within %.1e\n", results.size(), tol);
  return kOk;
}

int cmd_bench(const ganet::BenchOptions& opt, const std::string& out) {
  std::ofstream file;
  if (!out.empty()) {
    file.open(out);
    if (!file) throw ganet::IoError("cannot open '" + out + "' for writing");
  }
  const auto rows = ganet::runtime_bench(opt);
  std::ostringstream csv;
  ganet::write_bench_csv(csv, rows);
  if (file.is_open()) {
    file << csv.str();
    if (!file) throw ganet::IoError("write to '" + out + "' failed");
  } else {
    std::cout << csv.str();
  }

  std::printf("# FLOP model: multiply-add = 2 FLOPs; attention only, projections excluded\n");
  std::printf("# %8s %6s %6s %14s %14s %10s\n", "n", "k1", "k2", "nonlocal", "rcab(2 blk)", "ratio");
  for (std::size_t n : opt.sizes) {
    const std::size_t k1 = ganet::default_k1(n);
    const auto r = ganet::flop_counts(n, opt.c, k1, (n + k1 - 1) / k1);
    std::printf("# %8zu %6zu %6zu %14.4e %14.4e %10.5f\n", n, r.k1, r.k2, r.flops_nonlocal, r.flops_rcab, r.ratio);
  }
  if (auto s = ganet::loglog_slope(rows, "rcab")) std::printf("rcab log-log slope: %.3f\n", *s);
  if (auto s = ganet::loglog_slope(rows, "nonlocal")) std::printf("nonlocal log-log slope: %.3f\n", *s);
  return kOk;
}

int cmd_synth(std::size_t scenes, std::size_t points, std::size_t clusters, std::uint64_t seed,
              const std::string& out) {
  if (scenes == 0) throw std::invalid_argument("--scenes must be >= 1");
  const auto data = ganet::gen_dataset(scenes, points, clusters, seed);
  ganet::save_dataset(data, out);
  std::vector<std::size_t> counts(clusters, 0);
  for (const auto& s : data) {
    for (std::size_t l : s.labels) ++counts[l];
  }
  std::printf("wrote %zu scenes to %s\n", scenes, out.c_str());
  for (std::size_t k = 0; k < clusters; ++k) std::printf("class %zu: %zu points\n", k, counts[k]);
  return kOk;
}

std::string sidecar(const std::string& checkpoint) { return checkpoint + ".cfg"; }

int cmd_train(const std::string& config, const std::map<std::string, std::string>& overrides,
              const std::string& data_path, const std::string& out) {
  auto kv = config.empty() ? std::map<std::string, std::string>{} : ganet::read_config_file(config);
  for (const auto& [k, v] : overrides) kv[k] = v;
  const auto data = ganet::load_dataset(data_path);
  if (data.empty()) throw std::invalid_argument("dataset is empty");

  ganet::GanetConfig cfg;
  std::size_t classes = 0;
  for (const auto& s : data) classes = std::max(classes, s.classes);
  cfg.num_classes = classes;
  cfg.in_channels = 3 + data.front().attributes.last();
  ganet::apply_settings(cfg, kv);
  cfg.validate();
  if (cfg.num_classes < classes) throw std::invalid_argument("num_classes is smaller than the dataset's class count");

  ganet::GanetParams params = ganet::init_params(cfg);
  std::printf("variant=%s params=%zu epochs=%zu lr=%g\n", std::string(ganet::variant_name(cfg.variant)).c_str(),
              ganet::active_parameter_count(params, cfg), cfg.epochs, cfg.lr);
  ganet::fit(data, params, cfg, [](std::size_t e, double loss) {
    std::printf("epoch %zu loss %.6f\n", e + 1, loss);
    std::fflush(stdout);
  });
  ganet::save_checkpoint(params, out);
  std::ofstream cfg_out(sidecar(out));
  cfg_out << ganet::config_to_text(cfg);
  if (!cfg_out) throw ganet::IoError("cannot write '" + sidecar(out) + "'");
  std::printf("checkpoint written to %s\n", out.c_str());
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_path) {
  ganet::GanetConfig cfg;
  ganet::apply_settings(cfg, ganet::read_config_file(sidecar(checkpoint)));
  ganet::GanetParams params = ganet::init_params(cfg);
  ganet::load_checkpoint(checkpoint, params);
  const auto data = ganet::load_dataset(data_path);
  const auto m = ganet::evaluate(data, params, cfg);
  std::printf("%-8s %10s\n", "class", "IoU");
  for (std::size_t k = 0; k < m.iou.size(); ++k) {
    if (std::isnan(m.iou[k])) {
      std::printf("%-8zu %10s\n", k, "n/a");
    } else {
      std::printf("%-8zu %10.6f\n", k, m.iou[k]);
    }
  }
  std::printf("%-8s %10.6f\n", "OA", m.oa);
  std::printf("%-8s %10.6f\n", "mIoU", m.miou);
  std::printf("METRICS oa=%.6f miou=%.6f\n", m.oa, m.miou);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Global attention point cloud segmentation toolkit"};
  app.require_subcommand(1);

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op and module");
  double tol = ganet::kGradTolerance;
  std::uint64_t grad_seed = 0;
  std::string fault;
  grad->add_option("--tol", tol, "Relative error tolerance")->capture_default_str();
  grad->add_option("--seed", grad_seed, "Seed for random inputs")->capture_default_str();
  grad->add_option("--inject-fault", fault, "Corrupt the analytic gradient of one target (checker self-test)");

  auto* bench = app.add_subcommand("bench", "Runtime and FLOP comparison of RCAB vs non-local attention");
  std::string sizes = "1024,2048,4096,8192,16384,32768,65536";
  ganet::BenchOptions bopt;
  std::string bench_out;
  bench->add_option("--sizes", sizes, "Comma-separated point counts, ascending")->capture_default_str();
  bench->add_option("--c", bopt.c, "Channel width")->capture_default_str();
  bench->add_option("--trials", bopt.trials, "Timed trials per size")->capture_default_str();
  bench->add_option("--seed", bopt.seed, "Seed")->capture_default_str();
  bench->add_option("--nonlocal-cap", bopt.nonlocal_cap, "Largest N timed for non-local")->capture_default_str();
  bench->add_flag("--parallel", bopt.parallel_trials, "Run trials concurrently");
  bench->add_option("--out", bench_out, "CSV output path (stdout if omitted)");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
  std::size_t scenes = 200, points = 1024, clusters = 4;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--scenes", scenes)->capture_default_str();
  synth->add_option("--points", points)->capture_default_str();
  synth->add_option("--clusters", clusters)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--out", synth_out)->required();

  auto* train = app.add_subcommand("train", "Train one model variant");
  std::string config, variant, data, train_out;
  std::vector<std::string> sets;
  std::string train_seed, epochs, lr;
  train->add_option("--config", config, "key=value config file");
  train->add_option("--variant", variant, "baseline|rcab1_plus|rcab1_pab|rcab2_pab|full");
  train->add_option("--seed", train_seed);
  train->add_option("--epochs", epochs);
  train->add_option("--lr", lr);
  train->add_option("--set", sets, "Extra key=value override (repeatable)");
  train->add_option("--data", data)->required();
  train->add_option("--out", train_out)->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string checkpoint, eval_data;
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data", eval_data)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kFailed;
  }

  try {
    if (*grad) return cmd_gradcheck(tol, grad_seed, fault);
    if (*bench) {
      bopt.sizes = parse_sizes(sizes);
      return cmd_bench(bopt, bench_out);
    }
    if (*synth) return cmd_synth(scenes, points, clusters, synth_seed, synth_out);
    if (*train) {
      std::map<std::string, std::string> overrides;
      for (const auto& s : sets) {
        const auto kv = ganet::parse_config_text(s);
        overrides.insert(kv.begin(), kv.end());
        if (kv.empty()) throw ganet::ConfigError("--set expects key=value");
      }
      if (!variant.empty()) overrides["variant"] = variant;
      if (!train_seed.empty()) overrides["seed"] = train_seed;
      if (!epochs.empty()) overrides["epochs"] = epochs;
      if (!lr.empty()) overrides["lr"] = lr;
      return cmd_train(config, overrides, data, train_out);
    }
    if (*eval) return cmd_eval(checkpoint, eval_data);
  } catch (const ganet::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIoFailure;
  } catch (const ganet::FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIoFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailed;
  }
  return kFailed;
}
