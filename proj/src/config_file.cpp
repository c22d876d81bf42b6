#include "mokd/cli.hpp"
#include "mokd/error.hpp"

#include <charconv>
#include <fstream>

namespace mokd::cli {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw InvalidArgument("invalid value '" + std::string(value) + "' for '" + std::string(key) +
                        "' (expected " + std::string(want) + ")");
}

double to_double(std::string_view key, std::string_view value) {
  value = trim(value);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
    bad_value(key, value, "a number");
  }
  return v;
}

template <typename Int>
Int to_int(std::string_view key, std::string_view value) {
  value = trim(value);
  Int v{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
    bad_value(key, value, "an integer");
  }
  return v;
}

bool to_bool(std::string_view key, std::string_view value) {
  value = trim(value);
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "true or false");
}

}  // namespace

const std::vector<std::string_view>& config_keys() {
  static const std::vector<std::string_view> keys{
      "gamma",      "learning_rate",        "steps",         "weight_decay",
      "epsilon",    "grid",                 "kernel",        "share_zz_coefficient",
      "normalize_features", "rho",          "opt_eps",       "loss",
      "n_max",      "max_support",          "max_query_per_class", "max_shots_per_class",
      "way",        "shot",                 "query",         "episodes",
      "seed",       "jobs"};
  return keys;
}

std::vector<double> parse_double_list(std::string_view text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto cell = text.substr(start, comma == std::string_view::npos ? text.size() - start
                                                                         : comma - start);
    out.push_back(to_double("grid", cell));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

void apply_setting(RunSettings& s, std::string_view key, std::string_view value) {
  value = trim(value);
  if (key == "gamma") s.adapt.gamma = to_double(key, value);
  else if (key == "learning_rate") s.adapt.learning_rate = to_double(key, value);
  else if (key == "steps") s.adapt.steps = to_int<int>(key, value);
  else if (key == "weight_decay") s.adapt.weight_decay = to_double(key, value);
  else if (key == "epsilon") s.adapt.grid.epsilon = to_double(key, value);
  else if (key == "grid") s.adapt.grid.coefficients = parse_double_list(value);
  else if (key == "kernel") s.adapt.kernel_family = parse_kernel_family(value);
  else if (key == "share_zz_coefficient") s.adapt.share_zz_coefficient = to_bool(key, value);
  else if (key == "normalize_features") s.adapt.normalize_features = to_bool(key, value);
  else if (key == "rho") s.adapt.optimizer.rho = to_double(key, value);
  else if (key == "opt_eps") s.adapt.optimizer.eps = to_double(key, value);
  else if (key == "loss") s.adapt.loss = parse_adapt_loss(value);
  else if (key == "n_max") s.sampler.n_max = to_int<int>(key, value);
  else if (key == "max_support") s.sampler.max_support = to_int<int>(key, value);
  else if (key == "max_query_per_class") s.sampler.max_query_per_class = to_int<int>(key, value);
  else if (key == "max_shots_per_class") s.sampler.max_shots_per_class = to_int<int>(key, value);
  else if (key == "way") s.sampler.fixed_way = to_int<int>(key, value);
  else if (key == "shot") s.sampler.fixed_shot = to_int<int>(key, value);
  else if (key == "query") s.sampler.fixed_query = to_int<int>(key, value);
  else if (key == "episodes") s.episodes = to_int<int>(key, value);
  else if (key == "seed") s.seed = to_int<std::uint64_t>(key, value);
  else if (key == "jobs") s.jobs = to_int<unsigned>(key, value);
  else throw InvalidArgument("unknown config key '" + std::string(key) + "'");
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path.string() + "'");
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw InvalidArgument(path.string() + ":" + std::to_string(line_no) +
                            ": expected key=value, got '" + std::string(view) + "'");
    }
    const std::string key(trim(view.substr(0, eq)));
    bool known = false;
    for (auto k : config_keys()) known = known || k == key;
    if (!known) {
      throw InvalidArgument(path.string() + ":" + std::to_string(line_no) +
                            ": unknown config key '" + key + "'");
    }
    out.emplace_back(key, std::string(trim(view.substr(eq + 1))));
  }
  return out;
}

}  // namespace mokd::cli
