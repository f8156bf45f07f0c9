#ifndef PEG_CONFIG_HPP_
#define PEG_CONFIG_HPP_

#include <map>
#include <string>
#include <vector>

#include "peg/trainer.hpp"

namespace peg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sets `key` (e.g. "sim.max_ticks", "ppo.learning_rate") from its text form.
void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Parses "key = value" lines; '#' starts a comment.
void apply_config_text(TrainConfig& cfg, const std::string& text, const std::string& origin = "config");
TrainConfig load_config(const std::string& path);

/// Applies "key=value" overrides in order.
void apply_overrides(TrainConfig& cfg, const std::vector<std::string>& overrides);

/// Every setting in text form; feeding it back through apply_setting
/// reproduces `cfg` exactly.
std::map<std::string, std::string> dump_config(const TrainConfig& cfg);
std::string config_text(const TrainConfig& cfg);

}  // namespace peg

#endif  // PEG_CONFIG_HPP_
