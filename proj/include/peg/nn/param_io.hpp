#ifndef PEG_NN_PARAM_IO_HPP_
#define PEG_NN_PARAM_IO_HPP_

#include <string>

#include "peg/nn/network.hpp"
#include "peg/nn/optimizer.hpp"

namespace peg::nn {

// Checkpoint blob: "PEGPARAM" magic, u32 version, u64 spec hash, u64 init
// seed, u64 count, then count little-endian float64 values.
inline constexpr char kParamMagic[] = "PEGPARAM";
inline constexpr std::uint32_t kParamVersion = 1;

std::string encode_params(const NetSpec& spec, const ParamSet<double>& params);
ParamSet<double> decode_params(const NetSpec& spec, const std::string& bytes);

void save_params(const std::string& path, const NetSpec& spec, const ParamSet<double>& params);
ParamSet<double> load_params(const std::string& path, const NetSpec& spec);

std::string encode_optimizer(const OptimizerState<double>& state);
OptimizerState<double> decode_optimizer(const std::string& bytes);

}  // namespace peg::nn

#endif  // PEG_NN_PARAM_IO_HPP_
