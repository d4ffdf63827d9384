#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace sabre::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitMissingFile = 3;
inline constexpr int kExitBadConfig = 4;

struct RunCommand {
  std::string config_path;
  std::string out_path;
  std::optional<std::string> embeddings_out;
  bool serial = false;
};

/// The aux store's labels are clean (0) / poisoned (1) flags.
struct TrainDetectorCommand {
  std::string aux_path;
  std::string out_path;
  std::optional<int> hidden;
  std::optional<double> lr;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<std::uint64_t> seed;
};

struct ScoreStoreCommand {
  std::string model_path;
  std::string store_path;
};

struct ExportToyCommand {
  std::string out_path;
  int samples = 200;
  int classes = 4;
  int pixels = 16;
  int dim = 16;
  std::uint64_t seed = 0;
  /// Write clean/poisoned pairs labelled 0/1 instead of class labels.
  bool aux = false;
  double epsilon = 0.16;
};

struct InspectCommand {
  std::string path;
};

using Command = std::variant<RunCommand, TrainDetectorCommand, ScoreStoreCommand, ExportToyCommand, InspectCommand>;

/// Thrown by parse_args with the exit code to report.
class CliError : public std::exception {
 public:
  CliError(int code, std::string message) : code_(code), message_(std::move(message)) {}
  int code() const { return code_; }
  const char* what() const noexcept override { return message_.c_str(); }

 private:
  int code_;
  std::string message_;
};

/// Validates flags and input paths. Throws CliError: code 2 for usage
/// problems (the message names the offending flag), 3 for missing input
/// files. `--help` is reported as code 0 with the help text as message.
Command parse_args(const std::vector<std::string>& args);

/// Runs a parsed command. Data goes to `out`, diagnostics to `err`.
int execute(const Command& command, std::ostream& out, std::ostream& err);

/// parse_args + execute; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sabre::cli
