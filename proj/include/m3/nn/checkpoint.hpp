#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "m3/nn/tensor.hpp"

namespace m3::nn {

/// Versioned textual checkpoint of named parameter sets.
///
/// Format (one file, plain text):
///   m3ckpt 1
///   set <set-name> <tensor-count>
///   tensor <name> <ndims> <d0> [d1]
///   values <v0> <v1> ...          (row-major, %.17g)
///   m1 <...>
///   m2 <...>
///   step <n>
/// Repeated per tensor, per set. Values round-trip bit-exactly.
void save_checkpoint(std::ostream& out, const std::map<std::string, const ParameterSet*>& sets);
void load_checkpoint(std::istream& in, const std::map<std::string, ParameterSet*>& sets);

void save_checkpoint_file(const std::string& path, const std::map<std::string, const ParameterSet*>& sets);
void load_checkpoint_file(const std::string& path, const std::map<std::string, ParameterSet*>& sets);

}  // namespace m3::nn
