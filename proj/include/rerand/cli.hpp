#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

#include "rerand/population.hpp"
#include "rerand/simulation.hpp"

namespace rerand {

inline constexpr std::string_view kToolVersion = "1.0.0";

/// 64-bit FNV-1a over length-prefixed key/value records, so reordering or
/// re-splitting inputs changes the digest.
class InputDigest {
 public:
  void add(std::string_view key, std::string_view value);
  void add_file(std::string_view key, const std::filesystem::path& path);
  std::string hex() const;

 private:
  void feed(std::string_view bytes);
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t master_seed = 0;
  std::string tool_version{kToolVersion};
  std::string started_at;
  std::string finished_at;
};

/// Parsed `simulate` configuration: key = value lines, '#' starts a comment.
/// Relative paths resolve against the config file's directory.
struct SimulationSpec {
  std::filesystem::path population_path;
  SimConfig config;
  std::optional<TrimSpec> trim;
  bool seed_given = false;
};

SimulationSpec parse_simulation_config(std::string_view text,
                                       const std::filesystem::path& base_dir);
SimulationSpec load_simulation_config(const std::filesystem::path& path);

/// One row per (design, method, hc) cell.
std::string simulation_csv(const SimulationReport& report);

/// Entry point of the `rerand` tool. Returns the process exit code; errors
/// are reported on `err` as "error: <message>".
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rerand
