#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pcens::cli {

inline constexpr std::string_view kVersion = "1.0.0";

enum class ExitCode : int { ok = 0, config_error = 2, runtime_error = 3 };

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Command { gen_data, simple_ensemble, bagging, weight_search, random_factors, head_ensemble, frustum, timing };

std::string_view command_name(Command c);
Command parse_command(std::string_view name);
std::span<const Command> all_commands();

/// Raw `key = value` pairs. Blank lines and everything after `#` are
/// ignored; duplicate keys and lines without `=` are errors.
struct Config {
  std::map<std::string, std::string> values;

  static Config parse(std::istream& in);
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);
};

std::uint64_t fnv1a64(std::string_view bytes);

struct RunOptions {
  std::filesystem::path out_dir = ".";
  std::optional<std::uint64_t> seed;  // overrides the `seed` key
  std::size_t jobs = 1;
};

/// A config checked against its command's schema: every key known, every
/// value parsed and in range, defaults filled in.
class ResolvedConfig {
 public:
  Command command() const { return command_; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string str(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  std::size_t size(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  /// `command=<name>` then every resolved `key=value` in key order.
  std::string canonical_text() const;
  std::uint64_t hash() const { return fnv1a64(canonical_text()); }

 private:
  friend ResolvedConfig resolve(Command, const Config&, const RunOptions&);
  Command command_ = Command::gen_data;
  std::map<std::string, std::string> values_;
};

/// Throws ConfigError on any schema violation. Reads nothing but the
/// existence of input files.
ResolvedConfig resolve(Command command, const Config& config, const RunOptions& options);

/// Runs a resolved command, writing its outputs under options.out_dir and a
/// short summary to `log`. Returns the paths written.
std::vector<std::filesystem::path> execute(const ResolvedConfig& config, const RunOptions& options, std::ostream& log);

/// Full command line (`args[0]` is the program name). Never throws; maps
/// config problems to 2 and runtime failures to 3.
int run_main(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace pcens::cli
