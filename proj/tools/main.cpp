// mvcl: synthetic data, view extraction, pretraining and evaluation.
//
// Exit status: 0 success, 1 usage or configuration error, 2 data or I/O
// error, 3 numeric error.

#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "mvcl/errors.hpp"
#include "run_config.hpp"

namespace {

namespace fs = std::filesystem;
using mvcl::cli::RunConfig;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Overrides {
  std::string config;
  std::optional<std::string> seed, planes, fraction, mode, threads, out, manifest, views, checkpoint;
  std::vector<std::string> sets;
};

void add_common_options(CLI::App& sub, Overrides& o) {
  sub.add_option("--config", o.config, "flat key = value configuration file");
  sub.add_option("--seed", o.seed, "seed");
  sub.add_option("--planes", o.planes, "comma-separated plane ids, e.g. 1,2,3");
  sub.add_option("--fraction", o.fraction, "labeled fraction of the training split");
  sub.add_option("--mode", o.mode, "loss mode")->check(CLI::IsMember({"cmc", "as-written"}));
  sub.add_option("--threads", o.threads, "worker threads");
  sub.add_option("--out", o.out, "root directory for run directories");
  sub.add_option("--manifest", o.manifest, "lesion manifest CSV");
  sub.add_option("--views", o.views, "directory of extracted views");
  sub.add_option("--checkpoint", o.checkpoint, "model checkpoint");
  sub.add_option("--set", o.sets, "override any configuration key: --set key=value")->take_all();
}

RunConfig resolve(const Overrides& o) {
  RunConfig config = o.config.empty() ? RunConfig() : RunConfig::load(o.config);
  RunConfig flags;  // command-line values, resolved against the working directory
  std::vector<std::string> given;
  auto put = [&](const char* key, const std::optional<std::string>& value) {
    if (value) {
      flags.set(key, *value);
      given.push_back(key);
    }
  };
  put("seed", o.seed);
  put("planes", o.planes);
  put("fraction", o.fraction);
  put("mode", o.mode);
  put("threads", o.threads);
  put("out", o.out);
  put("manifest", o.manifest);
  put("views", o.views);
  put("checkpoint", o.checkpoint);
  for (const auto& item : o.sets) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) mvcl::fail(mvcl::ErrorCode::kConfiguration, "--set expects key=value, got '" + item + "'");
    flags.set(item.substr(0, eq), item.substr(eq + 1));
    given.push_back(item.substr(0, eq));
  }
  flags.resolve_paths(fs::current_path());
  for (const auto& key : given) config.set(key, flags.raw(key));
  config.resolve_paths(fs::current_path());
  return config;
}

int exit_code_for(mvcl::ErrorCode code) {
  switch (mvcl::category_of(code)) {
    case mvcl::ErrorCategory::kUsage: return kExitUsage;
    case mvcl::ErrorCategory::kNumeric: return kExitNumeric;
    case mvcl::ErrorCategory::kData: return kExitData;
  }
  return kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view contrastive pretraining and evaluation for lesion classification"};
  app.require_subcommand(1);
  Overrides overrides;

  struct Command {
    const char* name;
    const char* help;
    std::function<void(RunConfig&, const fs::path&)> run;
  };
  const std::vector<Command> commands{
      {"gen-synthetic", "generate smooth and spiculated synthetic lesion cubes with a manifest",
       [](RunConfig& c, const fs::path& d) { mvcl::cli::cmd_gen_synthetic(c, d); }},
      {"extract-views", "extract the configured views of every manifest lesion",
       [](RunConfig& c, const fs::path& d) { mvcl::cli::cmd_extract_views(c, d); }},
      {"pretrain", "contrastive pretraining of the per-view networks",
       [](RunConfig& c, const fs::path& d) { mvcl::cli::cmd_pretrain(c, d); }},
      {"linear-eval", "linear classifier on frozen representations",
       [](RunConfig& c, const fs::path& d) { mvcl::cli::cmd_linear_eval(c, d); }},
      {"finetune", "fine-tune the encoders with a fresh classification head",
       [](RunConfig& c, const fs::path& d) { mvcl::cli::cmd_finetune(c, d); }},
      {"report", "aggregate metrics.json files under a directory into report.csv",
       [](RunConfig& c, const fs::path& d) { mvcl::cli::cmd_report(c, d); }},
  };
  std::string report_dir;
  for (const auto& command : commands) {
    auto* sub = app.add_subcommand(command.name, command.help);
    add_common_options(*sub, overrides);
    if (std::string(command.name) == "report") {
      sub->add_option("run_dir", report_dir, "directory holding evaluation run directories");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int status = app.exit(e);
    return status == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (!report_dir.empty()) overrides.sets.push_back("runs=" + report_dir);
    RunConfig config = resolve(overrides);
    for (const auto& command : commands) {
      if (!app.got_subcommand(command.name)) continue;
      if (std::string(command.name) == "pretrain") mvcl::cli::resolve_optimizer_keys(config);
      const fs::path latest = config.path("out") / "LATEST";
      std::error_code ec;
      const fs::path previous = fs::read_symlink(latest, ec);
      const fs::path run_dir = mvcl::cli::open_run_dir(config, command.name);
      try {
        command.run(config, run_dir);
      } catch (...) {
        // A failed command leaves no run directory behind.
        fs::remove_all(run_dir, ec);
        fs::remove(latest, ec);
        if (!previous.empty()) fs::create_directory_symlink(previous, latest, ec);
        throw;
      }
      std::cout << "run directory: " << run_dir.string() << '\n';
    }
  } catch (const mvcl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: io: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
