#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "icelab/editing.hpp"
#include "icelab/metrics.hpp"
#include "icelab/model.hpp"

namespace icelab {

// Flat `key = value` text. Blank lines and lines starting with '#' are
// skipped; a repeated key is a parse error.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
KeyValues read_key_values(const std::filesystem::path& path);

int kv_int(const KeyValues& kv, const std::string& key, int fallback);
double kv_double(const KeyValues& kv, const std::string& key, double fallback);
std::uint64_t kv_u64(const KeyValues& kv, const std::string& key, std::uint64_t fallback);
std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback);

const std::vector<std::string>& model_config_keys();
const std::vector<std::string>& edit_config_keys();
const std::vector<std::string>& metrics_config_keys();

// With `strict`, keys outside model_config_keys() are rejected.
ModelConfig parse_model_config(const KeyValues& kv, bool strict);
// Overrides the fields of `base` present in `kv`.
EditConfig parse_edit_config(const KeyValues& kv, EditConfig base = {});
MetricsConfig parse_metrics_config(const KeyValues& kv, MetricsConfig base = {});

std::string edit_config_text(const EditConfig& c);
std::string metrics_config_text(const MetricsConfig& c);

// Throws ConfigError naming the first key found in none of `allowed`.
void reject_unknown_keys(const KeyValues& kv,
                         std::initializer_list<const std::vector<std::string>*> allowed);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace icelab
