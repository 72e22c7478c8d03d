#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "boxcbf/cli.hpp"

int main(int argc, char** argv) {
  using namespace boxcbf::cli;
  CLI::App app{"Closed-form box-constrained CBF safety filter: simulation and verification"};
  app.require_subcommand(1);

  SimulateOptions sim_opt;
  int decimate = 0;
  auto* sim = app.add_subcommand("simulate", "run a scenario file, audit it, write trace.csv, audit.txt, plot.gp");
  sim->add_option("config", sim_opt.config_path, "scenario file")->required();
  sim->add_option("--out", sim_opt.out_dir, "output directory")->capture_default_str();
  auto* dec = sim->add_option("--decimate", decimate, "write every K-th step to trace.csv");

  CompareQpOptions qp_opt;
  auto* qp = app.add_subcommand("compare-qp", "closed form against the enumeration oracle on random samples");
  qp->add_option("--model", qp_opt.model, "planar_drone or double_integrator")->required();
  qp->add_option("-n", qp_opt.samples, "sample count")->capture_default_str();
  qp->add_option("--seed", qp_opt.seed, "sampling seed")->capture_default_str();

  VerifyRelDegOptions rd_opt;
  auto* rd = app.add_subcommand("verify-reldeg", "numeric relative-degree and decoupling audit");
  rd->add_option("--model", rd_opt.model, "planar_drone or double_integrator")->required();
  rd->add_option("-n", rd_opt.samples, "sample count")->capture_default_str();
  rd->add_option("--seed", rd_opt.seed, "sampling seed")->capture_default_str();
  rd->add_option("--margin", rd_opt.theta_margin, "drone attitude margin from pi/2")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (sim->parsed()) {
      if (dec->count() > 0) sim_opt.decimate = decimate;
      sim_opt.seed_override = seed_from_env();
      return cmd_simulate(sim_opt, std::cout, std::cerr);
    }
    if (qp->parsed()) return cmd_compare_qp(qp_opt, std::cout, std::cerr);
    if (rd->parsed()) return cmd_verify_reldeg(rd_opt, std::cout, std::cerr);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
  return kExitUsage;
}
