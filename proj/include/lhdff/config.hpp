#pragma once

#include <map>
#include <string>

namespace lhdff {

// Flat key=value text, one pair per line, '#' comments. Used for config files
// and for the config snapshot embedded in checkpoints.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> load_config_file(const std::string& path);
std::string config_to_text(const std::map<std::string, std::string>& kv);

}  // namespace lhdff
