#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nhflow/functionals.hpp"
#include "nhflow/grid.hpp"

namespace nhflow::cli {

enum class Command { Verify, Flow, Functional, Thermo, Catalog, DEnergy };

// Malformed config document. location is a JSON pointer into the document,
// or "line L, column C" for syntax errors.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string location, const std::string& what);
  const std::string& location() const { return location_; }

 private:
  std::string location_;
};

struct Overrides {
  std::optional<int> resolution;  // every axis not listed in chart.fixed_axes
  std::optional<int> steps;
  std::optional<WForm> w_variant;
};

struct Document;

struct RunConfig {
  Command command = Command::Verify;
  ChartSpec chart;
  std::vector<std::string> names;  // coordinate names used by expressions
  StencilConfig stencil;
  WForm w_variant = WForm::Printed;
  std::optional<int> steps;
  std::string source;  // config path, for messages
  std::string output;  // artifact prefix; empty writes nothing
  std::shared_ptr<const Document> doc;
};

RunConfig parse_config(const std::string& text, const std::string& source, const Overrides& ov = {});
RunConfig load_config(const std::string& path, const Overrides& ov = {});

// Named scalar results of a run, in output order.
using Record = std::vector<std::pair<std::string, double>>;

// 0: all declared checks met. 1: a check failed or the pipeline broke down.
// 2: malformed config. Tables go to out, failures to err.
int run(const RunConfig& cfg, std::ostream& out, std::ostream& err);

// load_config + run, mapping ConfigError to exit 2.
int run_file(const std::string& path, const std::string& output, const Overrides& ov, std::ostream& out,
             std::ostream& err);

// %.17g
std::string format_double(double x);

const char* command_name(Command c);

}  // namespace nhflow::cli
