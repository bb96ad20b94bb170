// Copyright 2026 The LTDR Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ltdr/cli.hpp"

#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ltdr/config.hpp"
#include "ltdr/csv.hpp"
#include "ltdr/errors.hpp"
#include "ltdr/gradcheck.hpp"

namespace ltdr {
namespace {

namespace fs = std::filesystem;
constexpr const char* kVersion = "0.1.0";
constexpr const char* kMetaFile = "run_meta.json";

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  body(os);
  os.flush();
  if (!os) throw IoError("error writing " + path.string());
}

// Creates `dir`, refusing to reuse one that already holds a finished run
// (marked by `marker`) unless forced.
void prepare_output(const fs::path& dir, const char* marker, bool force) {
  std::error_code ec;
  if (fs::exists(dir / marker, ec) && !force) {
    throw IoError(dir.string() + " already holds a completed run; pass --force to overwrite");
  }
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string() +
                  (ec ? ": " + ec.message() : ""));
  }
  // The marker goes last, so a run that dies midway never looks complete.
  fs::remove(dir / marker, ec);
}

ExperimentConfig load_config(const CliInvocation& inv) {
  ExperimentConfig c = inv.config_path ? parse_config(*inv.config_path) : ExperimentConfig{};
  if (inv.seed) {
    c.seed = *inv.seed;
    c.seeds = {*inv.seed};
  }
  c.validate();
  return c;
}

nlohmann::json run_meta(const std::string& command, const ExperimentConfig& c) {
  return {{"tool", "ltdr"},
          {"version", kVersion},
          {"command", command},
          {"seed", c.seed},
          {"world_seed", c.resolved_world().seed},
          {"config", config_to_json(c)}};
}

// Maps the error taxonomy onto exit codes.
int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    if (!e.snapshot().empty()) err << e.snapshot() << '\n';
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "I/O failure: " << e.what() << '\n';
    return kExitIo;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

void print_stats(std::ostream& out, const RunStats& s) {
  out << "accuracy overall " << format_real(s.accuracy_overall) << "  head "
      << format_real(s.accuracy_head_concepts) << "  tail "
      << format_real(s.accuracy_tail_concepts) << "  language "
      << format_real(s.accuracy_language) << '\n'
      << "mean RPV vision " << format_real(s.mean_rpv_vision) << "  language "
      << format_real(s.mean_rpv_language) << "  head " << format_real(s.mean_rpv_head)
      << "  tail " << format_real(s.mean_rpv_tail) << '\n'
      << "tail fraction " << format_real(s.tail_fraction) << '\n';
  for (std::size_t l = 0; l < s.expert_load.size(); ++l) {
    out << "layer " << l << " load ratio vision "
        << format_real(load_ratio(s.expert_load[l][0])) << "  language "
        << format_real(load_ratio(s.expert_load[l][1])) << '\n';
  }
}

}  // namespace

int command_train(const CliInvocation& inv, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig c = load_config(inv);
    const fs::path dir = inv.output_dir;
    prepare_output(dir, kMetaFile, inv.force);

    StepCallback progress;
    if (inv.verbosity > 0) {
      progress = [&](int step, const StepLosses& l) {
        if ((step + 1) % 100 == 0 || step + 1 == c.steps) {
          err << "step " << step + 1 << "/" << c.steps << "  task " << format_real(l.task)
              << "  balance " << format_real(l.balance) << '\n';
        }
      };
    }
    const ExperimentResult r = run_experiment(c, progress);

    write_file(dir / "trace.csv", [&](std::ostream& os) {
      CsvWriter w(os, {"step", "task_loss", "balance_loss", "step_time_ms"});
      for (std::size_t i = 0; i < r.trace.size(); ++i) {
        w.cell(i).cell(r.trace.task_loss[i]).cell(r.trace.balance_loss[i]);
        w.cell(r.trace.step_time_ms[i]).end_row();
      }
    });
    write_stats_csv(dir / "stats", r.stats);
    write_file(dir / "router_log.jsonl",
               [&](std::ostream& os) { write_router_log(os, r.records); });
    write_file(dir / kMetaFile, [&](std::ostream& os) {
      nlohmann::json meta = run_meta("train", c);
      meta["steps_completed"] = r.trace.size();
      os << meta.dump(2) << '\n';
    });

    out << "arm " << to_string(c.arm) << "  seed " << c.seed << "  steps " << c.steps << '\n';
    print_stats(out, r.stats);
    out << "wrote " << dir.string() << '\n';
    return kExitOk;
  });
}

int command_ablate(const CliInvocation& inv, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig c = load_config(inv);
    const std::vector<Arm> arms = c.arms.empty() ? all_arms() : c.arms;
    const fs::path dir = inv.output_dir;
    prepare_output(dir, kMetaFile, inv.force);
    if (inv.verbosity > 0) {
      err << "running " << arms.size() * c.seeds.size() << " cells, " << c.steps
          << " steps each\n";
    }
    const AblationTable table = ablation_suite(c, arms, c.seeds, c.workers);

    write_file(dir / "ablation.csv", [&](std::ostream& os) {
      CsvWriter w(os, {"arm", "seed", "acc_overall", "acc_head", "acc_tail", "mean_rpv_vision",
                       "tail_fraction", "step_time_ms", "status"});
      for (const auto& cell : table.cells) {
        const double nan = std::nan("");
        w.cell(to_string(cell.arm)).cell(static_cast<long long>(cell.seed));
        w.cell(cell.ok ? cell.acc_overall : nan).cell(cell.ok ? cell.acc_head : nan);
        w.cell(cell.ok ? cell.acc_tail : nan).cell(cell.ok ? cell.mean_rpv_vision : nan);
        w.cell(cell.ok ? cell.tail_fraction : nan).cell(cell.ok ? cell.step_time_ms : nan);
        w.cell(cell.status).end_row();
      }
    });
    write_file(dir / "ablation_summary.csv", [&](std::ostream& os) {
      CsvWriter w(os, {"arm", "cells_ok", "acc_overall", "acc_head", "acc_tail",
                       "mean_rpv_vision", "mean_rpv_language", "tail_fraction", "step_time_ms"});
      for (const auto& s : table.summary) {
        w.cell(to_string(s.arm)).cell(s.cells_ok).cell(s.acc_overall).cell(s.acc_head);
        w.cell(s.acc_tail).cell(s.mean_rpv_vision).cell(s.mean_rpv_language);
        w.cell(s.tail_fraction).cell(s.step_time_ms).end_row();
      }
    });
    write_file(dir / "ablation_load.csv", [&](std::ostream& os) {
      CsvWriter w(os, {"arm", "seed", "layer", "modality", "expert", "count"});
      for (const auto& cell : table.cells) {
        for (std::size_t l = 0; l < cell.expert_load.size(); ++l)
          for (int m = 0; m < 2; ++m)
            for (std::size_t e = 0; e < cell.expert_load[l][m].size(); ++e) {
              w.cell(to_string(cell.arm)).cell(static_cast<long long>(cell.seed)).cell(l);
              w.cell(m ? "language" : "vision").cell(e).cell(cell.expert_load[l][m][e]).end_row();
            }
      }
    });
    write_file(dir / kMetaFile, [&](std::ostream& os) {
      nlohmann::json meta = run_meta("ablate", c);
      nlohmann::json names = nlohmann::json::array();
      for (Arm a : arms) names.push_back(to_string(a));
      meta["arms"] = names;
      os << meta.dump(2) << '\n';
    });

    int ok = 0;
    for (const auto& cell : table.cells) {
      ok += cell.ok;
      if (!cell.ok) err << to_string(cell.arm) << " seed " << cell.seed << ": " << cell.status << '\n';
    }
    for (const auto& s : table.summary) {
      out << to_string(s.arm) << "  cells " << s.cells_ok << "  acc_tail "
          << format_real(s.acc_tail) << "  rpv_vision " << format_real(s.mean_rpv_vision)
          << "  tail_fraction " << format_real(s.tail_fraction) << '\n';
    }
    out << "wrote " << dir.string() << '\n';
    return ok > 0 ? kExitOk : kExitFailure;
  });
}

int command_stats(const CliInvocation& inv, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!inv.router_log) throw ConfigError("stats needs a router_log.jsonl path");
    std::ifstream in(*inv.router_log, std::ios::binary);
    if (!in) throw IoError("cannot read " + inv.router_log->string());
    std::vector<RouterRecord> records;
    try {
      records = read_router_log(in);
    } catch (const IoError&) {
      throw;
    } catch (const std::exception& e) {
      throw IoError(inv.router_log->string() + ": " + e.what());
    }
    const RunStats stats = compute_run_stats(records);
    if (!inv.output_dir.empty()) {
      prepare_output(inv.output_dir, "summary.csv", inv.force);
      write_stats_csv(inv.output_dir, stats);
    }
    out << records.size() << " records, " << stats.evaluated_tokens << " tokens\n";
    print_stats(out, stats);
    return kExitOk;
  });
}

int command_gradcheck(const CliInvocation& inv, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig c = load_config(inv);
    const GradcheckOptions opt;
    const GradcheckReport r = run_gradcheck(c, opt);
    std::size_t coords = 0;
    for (const auto& b : r.blocks) {
      coords += b.coordinates;
      if (inv.verbosity > 0) {
        out << "  " << b.name << "  coords " << b.coordinates << "  worst "
            << format_real(b.worst_error) << '\n';
      }
    }
    out << "checked " << r.blocks.size() << " blocks, " << coords << " coordinates\n";
    out << "worst relative error " << format_real(r.worst_error) << " in " << r.worst_block
        << '\n';
    out << "language-only balancing gradient on vision logits: max |g| "
        << format_real(r.vision_logit_grad_max_abs)
        << (r.vision_logit_grad_exact_zero ? " (exactly zero)" : " (NOT zero)")
        << "; on language logits: max |g| " << format_real(r.language_logit_grad_max_abs)
        << '\n';
    bool ok = r.passed(opt.tolerance) && r.vision_logit_grad_exact_zero;
    for (const auto& b : r.blocks) {
      if (b.worst_error >= opt.tolerance) {
        err << "FAIL " << b.name << ": relative error " << format_real(b.worst_error) << '\n';
      }
    }
    if (!r.vision_logit_grad_exact_zero) err << "FAIL vision logits receive balancing gradient\n";
    out << (ok ? "gradcheck passed" : "gradcheck FAILED") << '\n';
    return ok ? kExitOk : kExitFailure;
  });
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Long-tail distribution-aware routing on a synthetic multimodal task", "ltdr"};
  app.require_subcommand(1);
  CliInvocation inv;
  std::string config;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string log;

  auto common = [&](CLI::App* sub, bool takes_out) {
    sub->add_option("--config", config, "JSON experiment config");
    if (takes_out) sub->add_option("--out", out_dir, "output directory (default: out)");
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_flag("--force", inv.force, "overwrite a completed run");
    sub->add_flag("-v", inv.verbosity, "verbose progress");
  };
  CLI::App* train = app.add_subcommand("train", "train one arm and write traces and statistics");
  common(train, true);
  CLI::App* ablate = app.add_subcommand("ablate", "run every configured arm x seed");
  common(ablate, true);
  CLI::App* stats = app.add_subcommand("stats", "recompute statistics from a router log");
  stats->add_option("router_log", log, "router_log.jsonl")->required();
  stats->add_option("--out", out_dir, "write stats CSVs here");
  stats->add_flag("--force", inv.force, "overwrite existing stats");
  stats->add_flag("-v", inv.verbosity, "verbose");
  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  common(grad, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? kExitOk : kExitFailure;
  }

  CLI::App* sub = app.get_subcommands().front();
  inv.command = sub->get_name();
  if (!config.empty()) inv.config_path = config;
  if (inv.command != "stats" && sub->count("--seed")) inv.seed = seed;
  if (!log.empty()) inv.router_log = log;
  if (inv.command == "stats") {
    inv.output_dir = out_dir;  // empty: print only
  } else if (!out_dir.empty()) {
    inv.output_dir = out_dir;
  }

  if (inv.command == "train") return command_train(inv, out, err);
  if (inv.command == "ablate") return command_ablate(inv, out, err);
  if (inv.command == "stats") return command_stats(inv, out, err);
  return command_gradcheck(inv, out, err);
}

}  // namespace ltdr
