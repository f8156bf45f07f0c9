#include "peg/nn/param_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "peg/binary_io.hpp"

namespace peg {

std::string bin::read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void bin::write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace nn {

std::string encode_params(const NetSpec& spec, const ParamSet<double>& params) {
  if (params.size() != param_count(spec)) throw ShapeError("parameter count mismatch");
  std::string out(kParamMagic, 8);
  bin::put_u32(out, kParamVersion);
  bin::put_u64(out, spec_hash(spec));
  bin::put_u64(out, params.init_seed);
  bin::put_u64(out, static_cast<std::uint64_t>(params.size()));
  bin::put_f64s(out, params.values);
  return out;
}

ParamSet<double> decode_params(const NetSpec& spec, const std::string& bytes) {
  bin::Reader r(bytes);
  if (r.raw(8) != std::string(kParamMagic, 8)) throw bin::FormatError("not a parameter blob");
  if (r.u32() != kParamVersion) throw bin::FormatError("unsupported parameter blob version");
  if (r.u64() != spec_hash(spec)) throw bin::FormatError("parameter blob was written for another network");
  ParamSet<double> p;
  p.init_seed = r.u64();
  const std::uint64_t n = r.u64();
  if (n != static_cast<std::uint64_t>(param_count(spec)))
    throw bin::FormatError("parameter count does not match network");
  if (r.remaining() != n * 8) throw bin::FormatError("parameter blob has wrong length");
  p.values.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < p.values.size(); ++i) p.values[i] = r.f64();
  if (!p.values.allFinite()) throw bin::FormatError("non-finite parameter in blob");
  p.offsets = layer_offsets<double>(spec);
  return p;
}

void save_params(const std::string& path, const NetSpec& spec, const ParamSet<double>& params) {
  bin::write_file(path, encode_params(spec, params));
}

ParamSet<double> load_params(const std::string& path, const NetSpec& spec) {
  return decode_params(spec, bin::read_file(path));
}

std::string encode_optimizer(const OptimizerState<double>& s) {
  std::string out;
  bin::put_u32(out, static_cast<std::uint32_t>(s.kind));
  bin::put_f64(out, s.beta1);
  bin::put_f64(out, s.beta2);
  bin::put_f64(out, s.epsilon);
  bin::put_u64(out, static_cast<std::uint64_t>(s.steps));
  bin::put_u64(out, static_cast<std::uint64_t>(s.first_moment.size()));
  bin::put_f64s(out, s.first_moment);
  bin::put_f64s(out, s.second_moment);
  return out;
}

OptimizerState<double> decode_optimizer(const std::string& bytes) {
  bin::Reader r(bytes);
  OptimizerState<double> s;
  const std::uint32_t kind = r.u32();
  if (kind > 1) throw bin::FormatError("unknown optimizer kind");
  s.kind = static_cast<OptimizerKind>(kind);
  s.beta1 = r.f64();
  s.beta2 = r.f64();
  s.epsilon = r.f64();
  s.steps = static_cast<std::int64_t>(r.u64());
  const auto n = static_cast<Eigen::Index>(r.u64());
  if (r.remaining() != static_cast<std::size_t>(n) * 16) throw bin::FormatError("optimizer state length");
  s.first_moment.resize(n);
  s.second_moment.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) s.first_moment[i] = r.f64();
  for (Eigen::Index i = 0; i < n; ++i) s.second_moment[i] = r.f64();
  return s;
}

}  // namespace nn
}  // namespace peg
