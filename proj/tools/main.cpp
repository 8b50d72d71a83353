#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "retflow/config.hpp"
#include "retflow/metrics.hpp"
#include "retflow/runner.hpp"

namespace {

using namespace retflow;

ConfigValue int_value(std::int64_t v) {
  ConfigValue cv;
  cv.type = ConfigType::integer;
  cv.i = v;
  return cv;
}

ConfigValue text_value(std::string v) {
  ConfigValue cv;
  cv.type = ConfigType::text;
  cv.s = std::move(v);
  return cv;
}

void print_metrics(const Metrics& m) {
  std::printf("return_time    %s\n", fmt_double(m.return_time).c_str());
  std::printf("retention      %s\n", fmt_double(m.retention).c_str());
  std::printf("click_rate     %s\n", fmt_double(m.click_rate).c_str());
  std::printf("long_view_rate %s\n", fmt_double(m.long_view_rate).c_str());
  std::printf("like_rate      %s\n", fmt_double(m.like_rate).c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"retention flow lab"};
  app.require_subcommand(1);

  std::string config_path;
  std::int64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  app.add_option("--config", config_path, "config file (key = value lines)");
  app.add_option("--seed", seed, "override run.seed")
      ->each([&](const std::string&) { seed_set = true; });
  app.add_option("--out", out_dir, "override run.out");

  const auto load_config = [&]() {
    RunConfig cfg = parse_config(config_path);
    if (seed_set) cfg.set("run.seed", int_value(seed));
    if (!out_dir.empty()) cfg.set("run.out", text_value(out_dir));
    return cfg;
  };

  CLI::App* train = app.add_subcommand("train", "train a policy");
  train->fallthrough();

  CLI::App* eval = app.add_subcommand("eval", "frozen-policy rollouts");
  eval->fallthrough();
  std::string checkpoint;
  std::size_t episodes = 2000;
  eval->add_option("--checkpoint", checkpoint,
                   "parameters to load (gfn and cem policies)");
  eval->add_option("--episodes", episodes, "number of evaluation episodes");

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference check of the training gradients");
  gradcheck->fallthrough();
  double eps = 1e-3;
  double tol = 1e-4;
  gradcheck->add_option("--eps", eps, "finite-difference step");
  gradcheck->add_option("--tol", tol, "max relative error allowed");

  CLI::App* sanity = app.add_subcommand(
      "sanity", "discrete flow matching on a complete reward tree");
  sanity->fallthrough();
  std::size_t depth = 3;
  std::size_t branching = 3;
  std::size_t steps = 50000;
  double lr = 0.05;
  double threshold = 0.05;
  sanity->add_option("--depth", depth, "tree depth");
  sanity->add_option("--branching", branching, "children per node");
  sanity->add_option("--steps", steps, "training trajectories");
  sanity->add_option("--lr", lr, "sgd learning rate");
  sanity->add_option("--threshold", threshold, "max terminal TV distance");

  CLI::App* calibrate = app.add_subcommand(
      "calibrate", "fit behavior weights from an interaction log");
  calibrate->fallthrough();
  std::string logs_path;
  std::string write_path;
  calibrate->add_option("--logs", logs_path, "interaction log csv")
      ->required();
  calibrate->add_option("--write", write_path,
                        "also write the overrides to this file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const TrainResult r = run_train(load_config());
      if (r.aborted) {
        std::fprintf(stderr,
                     "aborted: non-finite loss; checkpoint holds the last "
                     "good state (%s)\n",
                     r.out_dir.c_str());
        return r.exit_code;
      }
      std::printf("episodes %llu\n",
                  static_cast<unsigned long long>(r.episodes));
      std::printf("train_steps %zu\n", r.losses.size());
      if (r.final_metrics) print_metrics(*r.final_metrics);
      std::printf("wrote %s\n", r.out_dir.c_str());
      return r.exit_code;
    }
    if (eval->parsed()) {
      const EvalResult r = run_eval(load_config(), checkpoint, episodes);
      print_metrics(r.metrics);
      return r.exit_code;
    }
    if (gradcheck->parsed()) {
      const GradcheckResult r = run_gradcheck(
          static_cast<std::uint64_t>(seed), eps, tol);
      for (const auto& [net, err] : r.per_network) {
        std::printf("%-5s max rel error %s\n", net.c_str(),
                    fmt_double(err).c_str());
      }
      std::printf("worst %s (%s)\n", r.worst_param.c_str(),
                  fmt_double(r.max_rel_error).c_str());
      std::printf("%s\n", r.exit_code == 0 ? "PASS" : "FAIL");
      return r.exit_code;
    }
    if (sanity->parsed()) {
      const SanityResult r =
          run_sanity(depth, branching, steps, lr, threshold,
                     static_cast<std::uint64_t>(seed));
      std::printf("terminal tv %s (threshold %s)\n", fmt_double(r.tv).c_str(),
                  fmt_double(r.threshold).c_str());
      std::printf("%s\n", r.exit_code == 0 ? "PASS" : "FAIL");
      return r.exit_code;
    }
    if (calibrate->parsed()) {
      const CalibrationResult fit = run_calibrate(logs_path, write_path);
      std::fputs(format_calibration(fit).c_str(), stdout);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
