#include <filesystem>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "rwf/rwf.hpp"

namespace fs = std::filesystem;

namespace {

int exit_code(const std::string& stage) {
  if (stage == "config") return 2;
  if (stage == "io") return 3;
  return 4;
}

fs::path out_dir(const std::string& sub) {
  const fs::path p(sub);
  return p.is_absolute() ? p : fs::path(rwf::output_root()) / p;
}

void print_report(const rwf::RunReport& r) {
  std::cout << std::setprecision(6) << r.name << ": m=" << r.m << " cells=" << r.cells
            << (r.homogeneous ? " homogeneous" : " inhomogeneous") << "\n  errors %:";
  for (double e : r.errors) std::cout << ' ' << e;
  std::cout << " (joint " << r.joint_error << ")\n  alpha:";
  for (std::size_t i = 0; i < std::min<std::size_t>(3, r.eigenvalues.size()); ++i) std::cout << ' ' << r.eigenvalues[i];
  std::cout << "  gap " << r.gap << "  max cond " << r.max_condition << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reverse weak formulation parameter reconstruction"};
  app.require_subcommand(1);

  std::string config;
  auto* run = app.add_subcommand("run", "run one scenario");
  run->add_option("config", config, "scenario file")->required()->check(CLI::ExistingFile);

  std::string axis, values;
  unsigned threads = 0;
  auto* sw = app.add_subcommand("sweep", "run a scenario over one axis");
  sw->add_option("config", config, "scenario file")->required()->check(CLI::ExistingFile);
  sw->add_option("--axis", axis, "m, omega_count, noise or h")->required();
  sw->add_option("--values", values, "comma separated values")->required();
  sw->add_option("--threads", threads, "worker threads (0: all cores)");

  auto* ex = app.add_subcommand("export-matrices", "write the assembled system as Matrix Market files");
  ex->add_option("config", config, "scenario file")->required()->check(CLI::ExistingFile);

  auto* pr = app.add_subcommand("probe-conservativity", "estimate the conservativity degree of B");
  pr->add_option("config", config, "probe file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  std::string stage = "config";
  try {
    rwf::ForwardCache cache;
    if (*run) {
      const rwf::Scenario s = rwf::load_scenario(config);
      stage = "run";
      const rwf::RunReport r = rwf::run_scenario(s, cache);
      const fs::path dir = out_dir(s.output_dir);
      stage = "io";
      rwf::write_outputs(r, s, dir);
      print_report(r);
      std::cout << "  output " << dir.string() << '\n';
    } else if (*sw) {
      const rwf::Scenario s = rwf::load_scenario(config);
      const rwf::SweepAxis ax = rwf::parse_axis(axis);
      const auto v = rwf::detail::parse_list(values, "--values");
      stage = "sweep";
      const auto reports = rwf::sweep(s, ax, v, cache, threads);
      const fs::path dir = out_dir(s.output_dir) / ("sweep_" + axis);
      stage = "io";
      for (std::size_t i = 0; i < reports.size(); ++i) {
        rwf::write_outputs(reports[i], rwf::with_axis(s, ax, v[i]), dir / (axis + "_" + rwf::detail::format_number(v[i])));
        print_report(reports[i]);
      }
      rwf::write_sweep_table(reports, axis, v, dir / "sweep.csv");
      std::cout << "output " << dir.string() << '\n';
    } else if (*ex) {
      const rwf::Scenario s = rwf::load_scenario(config);
      stage = "export";
      const fs::path dir = out_dir(s.output_dir) / "matrices";
      const rwf::RwfSystem sys = rwf::export_matrices(s, cache, dir);
      std::cout << "A " << sys.rows() << 'x' << sys.cols() << ", S_V " << sys.S_V.rows() << ", output " << dir.string()
                << '\n';
    } else if (*pr) {
      const rwf::ProbeConfig c = rwf::load_probe(config);
      stage = "probe";
      const auto results = rwf::run_probe(c, cache);
      const fs::path dir = out_dir(c.output_dir);
      stage = "io";
      rwf::write_probe(results, c, dir);
      for (const auto& [x, r] : results)
        std::cout << "(" << x.x() << ", " << x.y() << ") k = " << r.k << " of " << c.n << '\n';
      std::cout << "output " << dir.string() << '\n';
    }
  } catch (const rwf::Error& e) {
    std::cerr << "error [" << e.stage() << "]: " << e.what() << '\n';
    return exit_code(e.stage());
  } catch (const std::exception& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << '\n';
    return exit_code(stage);
  }
  return 0;
}
