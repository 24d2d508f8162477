#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "qpburst/errors.hpp"
#include "qpburst/pipeline.hpp"
#include "qpburst/version.hpp"

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_events;
  unsigned workers = 0;
  std::string out;
  std::string calibration;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("qpburst");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");
  const char* env = std::getenv("QPBURST_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

qpburst::RunContext make_context(const Options& o) {
  qpburst::RunContext ctx;
  ctx.config = o.config_path.empty() ? qpburst::default_config() : qpburst::load_config(o.config_path);
  if (o.seed) ctx.config.simulation.seed = *o.seed;
  if (o.n_events) ctx.config.simulation.n_events = *o.n_events;
  if (!o.out.empty()) ctx.config.io.out_dir = o.out;
  ctx.out_dir = ctx.config.io.out_dir;
  ctx.workers = o.workers ? o.workers : std::max(1u, std::thread::hardware_concurrency());
  ctx.calibration_path = o.calibration;
  ctx.log = [](const std::string& msg) { spdlog::info(msg); };
  spdlog::debug("config hash {}", qpburst::config_hash(ctx.config));
  return ctx;
}

int fail(const std::string& category, const std::string& message) {
  nlohmann::json err = {{"error", category}, {"message", message}};
  std::cout << err.dump() << std::endl;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Quasiparticle burst analysis pipeline"};
  app.set_version_flag("--version", std::string(qpburst::kToolVersion));
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Override the master seed");
    sub->add_option("--workers", opt.workers, "Worker threads (0: all cores)");
    sub->add_option("--out", opt.out, "Run directory");
  };
  auto* simulate = app.add_subcommand("simulate", "Generate synthetic events and truth");
  add_common(simulate);
  simulate->add_option("--n-events", opt.n_events, "Override the number of events");
  auto* process = app.add_subcommand("process", "Extract features and apply quality cuts");
  add_common(process);
  auto* calibrate = app.add_subcommand("calibrate", "Calibrate r and tau_ss per qubit");
  add_common(calibrate);
  auto* fit = app.add_subcommand("fit", "Fit each passing waveform");
  add_common(fit);
  fit->add_option("--calibration", opt.calibration, "Calibration file (default: <out>/calibration.json)")
      ->check(CLI::ExistingFile);
  auto* reconstruct = app.add_subcommand("reconstruct", "Reconstruct vertices and the spectrum");
  add_common(reconstruct);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what());
  }

  try {
    const auto ctx = make_context(opt);
    if (simulate->parsed()) {
      const auto s = qpburst::cmd_simulate(ctx);
      std::cout << nlohmann::json{{"command", "simulate"}, {"events", s.n_events}}.dump() << '\n';
    } else if (process->parsed()) {
      const auto r = qpburst::cmd_process(ctx);
      std::cout << nlohmann::json{{"command", "process"}, {"rows", r.flags.size()}}.dump() << '\n';
    } else if (calibrate->parsed()) {
      const auto c = qpburst::cmd_calibrate(ctx);
      std::cout << nlohmann::json{{"command", "calibrate"}, {"qubits", c.size()}}.dump() << '\n';
    } else if (fit->parsed()) {
      const auto f = qpburst::cmd_fit(ctx);
      std::cout << nlohmann::json{{"command", "fit"}, {"records", f.size()}}.dump() << '\n';
    } else if (reconstruct->parsed()) {
      const auto r = qpburst::cmd_reconstruct(ctx);
      std::cout << nlohmann::json{{"command", "reconstruct"},
                                  {"vertices", r.vertices.size()},
                                  {"skipped_quality", r.skipped_quality},
                                  {"skipped_no_signal", r.skipped_no_signal}}
                       .dump()
                << '\n';
    }
  } catch (const qpburst::Error& e) {
    spdlog::error(e.what());
    return fail(e.category(), e.what());
  } catch (const std::exception& e) {
    spdlog::error(e.what());
    return fail("internal", e.what());
  }
  return 0;
}
