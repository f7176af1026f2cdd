// mcrnn: train, evaluate and inspect multi-channel recurrent models.
//
// Exit codes: 0 success, 1 usage/config, 2 data, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mcrnn/runner.hpp"

using namespace mcrnn;

namespace {

struct RunFlags {
  std::string config;
  std::uint64_t seed = 0;
  bool baseline = false;
  std::string out;
  std::vector<std::string> sets;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "config file (key = value lines)");
  cmd->add_option("--seed", f.seed, "override the seed");
  cmd->add_flag("--baseline", f.baseline, "conventional n=2 layer with identity W_1, parameter-matched");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--set", f.sets, "override a config key, KEY=VALUE (repeatable)");
}

// defaults < config file < --set < dedicated flags
RunConfig resolve(const RunFlags& f, const CLI::App* cmd) {
  RunConfig rc;
  if (!f.config.empty()) rc = load_config(f.config);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    set_config_value(rc, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  if (cmd->count("--seed")) rc.seed = f.seed;
  if (f.baseline) rc.baseline = true;
  if (!f.out.empty()) rc.out_dir = f.out;
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-channel recurrent network toolkit"};
  app.require_subcommand(1);

  RunFlags train_flags, gc_flags;
  auto* train = app.add_subcommand("train", "train to the stopping rule; writes checkpoint and metrics");
  add_run_flags(train, train_flags);

  std::string eval_ckpt, eval_split = "test";
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a data split");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--split", eval_split, "train|valid|test");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every model gradient");
  add_run_flags(gradcheck, gc_flags);

  int topo_n = 4;
  long topo_T = 10, topo_l = 12;
  auto* inspect = app.add_subcommand("inspect-topology", "dump in-degrees, blocks and path lengths");
  inspect->add_option("--n", topo_n, "block size")->check(CLI::Range(2, 1 << 20));
  inspect->add_option("--T", topo_T, "steps")->check(CLI::PositiveNumber);
  inspect->add_option("--max-offset", topo_l, "largest l in the path table")->check(CLI::PositiveNumber);

  std::string att_ckpt, att_text, att_out;
  auto* att = app.add_subcommand("export-attention", "per-step channel attention weights as CSV");
  att->add_option("--checkpoint", att_ckpt, "checkpoint file")->required();
  att->add_option("--text", att_text, "input text")->required();
  att->add_option("--out", att_out, "output directory (attention.csv); stdout if omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }

  return guarded(std::cerr, [&]() -> int {
    if (*train) {
      run_training(resolve(train_flags, train), std::cout);
      return exit_ok;
    }
    if (*eval) {
      const EvalOutcome r = run_eval(eval_ckpt, eval_split);
      const Checkpoint ck = load_checkpoint(eval_ckpt);
      std::cout << "loss " << format_double(r.loss) << "\n"
                << metric_name(ck.run.task) << " " << format_double(r.metric) << "\n";
      return exit_ok;
    }
    if (*gradcheck) {
      const RunConfig rc = resolve(gc_flags, gradcheck);
      const GradReport rep = run_gradcheck(rc);
      std::cout << render_table(rep);
      if (!gc_flags.out.empty()) {
        std::filesystem::create_directories(rc.out_dir);
        write_file(std::filesystem::path(rc.out_dir) / "gradcheck.json", to_json(rep).dump(2) + "\n");
      }
      return rep.pass ? exit_ok : exit_numeric;
    }
    if (*inspect) {
      std::cout << dump_topology(Topology(topo_n), topo_T, topo_l);
      return exit_ok;
    }
    if (*att) {
      const Checkpoint ck = load_checkpoint(att_ckpt);
      const std::string table = render_attention(attention_table(ck, att_text, std::cerr));
      if (att_out.empty()) {
        std::cout << table;
      } else {
        std::filesystem::create_directories(att_out);
        write_file(std::filesystem::path(att_out) / "attention.csv", table);
      }
      return exit_ok;
    }
    return exit_usage;
  });
}
