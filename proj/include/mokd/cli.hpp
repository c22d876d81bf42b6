#pragma once

#include "mokd/adapt.hpp"
#include "mokd/tasks.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mokd::cli {

enum ExitCode : int { kOk = 0, kIoError = 1, kUsage = 2 };

/// Everything `mokd eval` can be configured with.
struct RunSettings {
  AdaptConfig adapt;
  SamplerConfig sampler;
  int episodes = 100;
  std::uint64_t seed = 0;
  unsigned jobs = 0;  // 0 = logical cores
};

/// Keys accepted in config files, in documentation order.
const std::vector<std::string_view>& config_keys();

/// Applies one `key=value` setting. Unknown keys and unparsable values throw
/// InvalidArgument naming the key.
void apply_setting(RunSettings& settings, std::string_view key, std::string_view value);

/// Parses a flat `key = value` file (`#` starts a comment) into ordered pairs.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

std::vector<double> parse_double_list(std::string_view text);

/// Entry point shared by the `mokd` binary and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mokd::cli
