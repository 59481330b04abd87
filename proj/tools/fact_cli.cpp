// SPDX-License-Identifier: Apache-2.0
//
// fact: command-line front end.
//
//   fact train-base   --config run.cfg --out DIR [--seed N --gamma G --virtual V --eta E]
//   fact run-sessions --checkpoint DIR/base.ckpt [--config run.cfg] --out DIR --method fact
//   fact eval         --checkpoint DIR/base.ckpt [--config run.cfg]
//   fact gradcheck    --seed 0 --trials 200
//   fact report       --input DIR/fact_report.txt [--csv table.csv]
//
// Exit status: 0 ok, 1 usage, 2 data error, 3 numerical failure.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "fact/checkpoint.hpp"
#include "fact/config.hpp"
#include "fact/error.hpp"
#include "fact/experiment.hpp"
#include "fact/gradcheck.hpp"
#include "fact/protocol.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> gamma;
  std::optional<std::size_t> num_virtual;
  std::optional<double> eta;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Override the run seed");
  cmd->add_option("--gamma", o.gamma, "Override loss.gamma");
  cmd->add_option("--virtual", o.num_virtual, "Override the number of virtual prototypes");
  cmd->add_option("--eta", o.eta, "Override infer.eta");
}

void apply(const Overrides& o, fact::RunConfig& cfg) {
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.train.seed = *o.seed;
  }
  if (o.gamma) cfg.train.loss.gamma = *o.gamma;
  if (o.num_virtual) {
    cfg.num_virtual = *o.num_virtual;
    cfg.train.loss.num_virtual = *o.num_virtual;
  }
  if (o.eta) cfg.infer.eta = *o.eta;
  cfg.validate();
}

fact::RunConfig load_config(const fs::path& path) {
  if (!fs::is_regular_file(path)) {
    throw fact::Error(fact::ErrorCode::Usage, "config file not found: " + path.string());
  }
  return fact::load_run_config(path);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw fact::Error(fact::ErrorCode::IoError, "cannot write " + path.string());
}

fs::path output_dir(const std::string& flag, const fact::RunConfig& cfg) {
  fs::path dir = flag.empty() ? cfg.output_dir : fs::path(flag);
  if (dir.empty()) throw fact::Error(fact::ErrorCode::Usage, "no output directory (use --out)");
  fs::create_directories(dir);
  return dir;
}

/// The checkpoint's own config echo unless an explicit config is given.
fact::RunConfig session_config(const fact::Checkpoint& cp, const std::string& config_path, const Overrides& o) {
  fact::RunConfig cfg = config_path.empty() ? fact::parse_run_config(cp.config_echo) : load_config(config_path);
  apply(o, cfg);
  if (cp.state.head.num_known() < cfg.protocol.num_base) {
    throw fact::Error(fact::ErrorCode::CoverageMismatch,
                      "checkpoint holds " + std::to_string(cp.state.head.num_known()) + " classes, config needs " +
                          std::to_string(cfg.protocol.num_base) + " base classes");
  }
  return cfg;
}

int cmd_train_base(const std::string& config_path, const std::string& out_flag, const Overrides& o) {
  fact::RunConfig cfg = load_config(config_path);
  apply(o, cfg);
  const fs::path dir = output_dir(out_flag, cfg);

  const auto started = std::chrono::steady_clock::now();
  fact::BaseRun run = fact::train_base_from_config(cfg);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  fact::save_checkpoint(dir / "base.ckpt", fact::Checkpoint{run.state, fact::render_run_config(cfg)});
  std::ostringstream report;
  fact::write_train_report(report, run.report);
  write_file(dir / "train_report.txt", report.str());

  for (const auto& w : run.report.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "epochs=" << run.report.epochs.size() << " train_acc=" << std::fixed << std::setprecision(4)
            << run.report.final_train_acc << " wall_seconds=" << std::setprecision(3) << seconds << '\n';
  std::cout << "checkpoint: " << (dir / "base.ckpt").string() << '\n';
  return 0;
}

int cmd_run_sessions(const std::string& checkpoint, const std::string& config_path, const std::string& out_flag,
                     const std::string& method_name, const Overrides& o) {
  const fact::Method method = fact::parse_method(method_name);
  const fact::Checkpoint cp = fact::load_checkpoint(checkpoint);
  const fact::RunConfig cfg = session_config(cp, config_path, o);
  const fs::path dir = output_dir(out_flag, cfg);

  const fact::SessionStream stream = fact::make_stream(cfg);
  const fact::SessionMetrics metrics = fact::run_sessions(cp.state, stream, method, cfg.infer, cfg.adapt);

  std::ostringstream report;
  fact::write_run_report(report, metrics);
  write_file(dir / (fact::to_string(method) + "_report.txt"), report.str());
  std::cout << report.str();
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path, const Overrides& o) {
  const fact::Checkpoint cp = fact::load_checkpoint(checkpoint);
  const fact::RunConfig cfg = session_config(cp, config_path, o);
  const fact::SessionStream stream = fact::make_stream(cfg);

  std::cout << std::fixed << std::setprecision(4);
  for (auto mode : {fact::InferMode::fact, fact::InferMode::protonet}) {
    const double acc = fact::evaluate_session(cp.state, stream, 0, mode, cfg.infer);
    std::cout << (mode == fact::InferMode::fact ? "fact" : "protonet") << "_base_acc=" << 100.0 * acc << '\n';
  }
  const auto counts = fact::assignment_matrix(cp.state, stream.base_train);
  std::cout << "assignment (rows: base classes, columns: virtual prototypes)\n";
  for (std::size_t c = 0; c < counts.size(); ++c) {
    std::cout << std::setw(4) << c << ':';
    for (std::size_t n : counts[c]) std::cout << ' ' << std::setw(5) << n;
    std::cout << '\n';
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t trials, bool corrupt) {
  if (trials == 0) throw fact::Error(fact::ErrorCode::Usage, "--trials must be at least 1");
  fact::GradCheckOptions opt;
  opt.seed = seed;
  opt.trials = trials;
  opt.corrupt = corrupt;
  const fact::GradCheckReport report = fact::run_gradient_suite(opt);
  fact::write_gradcheck_report(std::cout, report);
  std::cout << "elapsed_seconds=" << std::fixed << std::setprecision(2) << report.elapsed_seconds << '\n';
  if (report.passed()) return 0;
  std::cerr << "failing terms:";
  for (const auto& name : report.failing()) std::cerr << ' ' << name;
  std::cerr << '\n';
  return fact::exit_status(fact::ErrorCode::NumericalFailure);
}

std::string percent_or_na(const std::optional<double>& v) {
  if (!v) return "na";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * *v;
  return s.str();
}

int cmd_report(const std::string& input, const std::string& csv_path) {
  std::ifstream in(input);
  if (!in) throw fact::Error(fact::ErrorCode::IoError, "cannot read " + input);
  const fact::SessionMetrics m = fact::read_run_report(in);

  std::cout << "method: " << m.method << '\n';
  std::cout << std::right << std::setw(8) << "session" << std::setw(10) << "acc" << std::setw(10) << "base"
            << std::setw(10) << "new" << std::setw(10) << "hmean" << '\n';
  for (const auto& r : m.sessions) {
    std::cout << std::setw(8) << r.session << std::setw(10) << percent_or_na(r.acc) << std::setw(10)
              << percent_or_na(r.base_acc) << std::setw(10) << percent_or_na(r.new_acc) << std::setw(10)
              << percent_or_na(r.hmean) << '\n';
  }
  std::cout << "pd: " << std::fixed << std::setprecision(2) << 100.0 * m.pd << '\n';

  if (!csv_path.empty()) {
    std::ostringstream csv;
    csv << "method,session,acc,base_acc,new_acc,hmean\n";
    for (const auto& r : m.sessions) {
      csv << m.method << ',' << r.session << ',' << percent_or_na(r.acc) << ',' << percent_or_na(r.base_acc) << ','
          << percent_or_na(r.new_acc) << ',' << percent_or_na(r.hmean) << '\n';
    }
    write_file(csv_path, csv.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Forward-compatible few-shot class-incremental learning"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  std::string checkpoint;
  std::string method = "fact";
  Overrides overrides;

  auto* train = app.add_subcommand("train-base", "Train the base session and write a checkpoint");
  train->add_option("--config", config_path, "Run config file")->required();
  train->add_option("--out", out_dir, "Output directory");
  add_overrides(train, overrides);

  auto* sessions = app.add_subcommand("run-sessions", "Run the incremental sessions from a base checkpoint");
  sessions->add_option("--checkpoint", checkpoint, "Base checkpoint")->required();
  sessions->add_option("--config", config_path, "Run config (default: the checkpoint's own)");
  sessions->add_option("--out", out_dir, "Output directory");
  sessions->add_option("--method", method, "fact | protonet | finetune | kd");
  add_overrides(sessions, overrides);

  auto* eval = app.add_subcommand("eval", "Base-session accuracy and virtual assignment of a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  eval->add_option("--config", config_path, "Run config (default: the checkpoint's own)");
  add_overrides(eval, overrides);

  std::uint64_t gc_seed = 0;
  std::size_t gc_trials = 200;
  bool corrupt = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Verify backward passes against finite differences");
  gradcheck->add_option("--seed", gc_seed, "Seed");
  gradcheck->add_option("--trials", gc_trials, "Random instances");
  gradcheck->add_flag("--corrupt-gradient", corrupt)->group("");

  std::string input;
  std::string csv_path;
  auto* report = app.add_subcommand("report", "Render a run report as a table and optional CSV");
  report->add_option("--input", input, "Run report file")->required();
  report->add_option("--csv", csv_path, "Write CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return cmd_train_base(config_path, out_dir, overrides);
    if (*sessions) return cmd_run_sessions(checkpoint, config_path, out_dir, method, overrides);
    if (*eval) return cmd_eval(checkpoint, config_path, overrides);
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_trials, corrupt);
    if (*report) return cmd_report(input, csv_path);
  } catch (const fact::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (e.code() == fact::ErrorCode::Usage) std::cerr << app.help();
    return fact::exit_status(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
