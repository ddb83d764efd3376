#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "nhflow/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"nhflow: N-adapted Ricci flow pipelines"};
  std::string config, out;
  nhflow::cli::Overrides ov;
  int resolution = 0, steps = -1;
  nhflow::WForm w = nhflow::WForm::Printed;
  const std::map<std::string, nhflow::WForm> wforms{{"printed", nhflow::WForm::Printed},
                                                   {"squared", nhflow::WForm::Squared}};
  app.add_option("--config", config, "run config (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out, "artifact path prefix");
  auto* res_opt = app.add_option("--resolution", resolution, "resolution of every non-fixed axis")->check(CLI::Range(8, 4096));
  auto* steps_opt = app.add_option("--steps", steps, "flow step count")->check(CLI::NonNegativeNumber);
  auto* w_opt = app.add_option("--w-variant", w, "W integrand: printed or squared")
                    ->transform(CLI::CheckedTransformer(wforms, CLI::ignore_case));
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (*res_opt) ov.resolution = resolution;
  if (*steps_opt) ov.steps = steps;
  if (*w_opt) ov.w_variant = w;
  return nhflow::cli::run_file(config, out, ov, std::cout, std::cerr);
}
