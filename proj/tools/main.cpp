#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cli_support.hpp"

int main(int argc, char** argv) {
  using namespace fracdiff;
  using namespace fracdiff::cli;

  CLI::App app{"time-fractional reaction-diffusion toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  bool check = false;
  unsigned seed = 12345;
  app.add_option("--config", config_path, "run configuration file");
  app.add_option("--out", out_override, "output directory (overrides the config)");
  app.add_flag("--check", check,
               "compare against the stored outputs instead of writing");
  app.add_option("--seed", seed, "random seed for synthetic noise");

  CLI::App* direct = app.add_subcommand("direct", "solve the forward problem");
  CLI::App* invert =
      app.add_subcommand("invert", "reconstruct the space-dependent factor from data");
  CLI::App* audit = app.add_subcommand(
      "audit", "evaluate the sign-preservation and uniqueness hypotheses");
  CLI::App* conv =
      app.add_subcommand("convergence", "refinement study against a known solution");
  CLI::App* ml = app.add_subcommand("ml", "evaluate the Mittag-Leffler function");
  double ml_alpha = 1.0, ml_z = 0.0;
  ml->add_option("alpha", ml_alpha, "order in (0, 1]")->required();
  ml->add_option("z", ml_z, "argument")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    CommandContext ctx;
    ctx.check = check;
    ctx.seed = seed;
    if (!ml->parsed()) {
      if (config_path.empty())
        throw ValidationError("--config is required for this command");
      ctx.config = load_config(config_path);
      ctx.config.restrict_keys("output", {"directory", "emit_plots"});
    }
    ctx.out_dir = !out_override.empty()
                      ? std::filesystem::path(out_override)
                      : std::filesystem::path(
                            ctx.config.raw_or("output", "directory", "out"));

    if (direct->parsed()) return cmd_direct(ctx);
    if (invert->parsed()) return cmd_invert(ctx);
    if (audit->parsed()) return cmd_audit(ctx);
    if (conv->parsed()) return cmd_convergence(ctx);
    return cmd_ml(ml_alpha, ml_z, ctx);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const SolverError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const IllPosedError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
}
