#pragma once

#include <iosfwd>
#include <string>

#include "cimate/nn/tensor.hpp"
#include "json.hpp"

namespace cimate::nn {

// Layout: magic "CIMATECK", uint32 version, uint64 header length, a JSON
// header {config, tensors: [{name, rows, cols, dtype, decay, trainable,
// pad_row}]}, then raw little-endian tensor data in header order.
template <typename T>
void save_checkpoint(std::ostream& out, const ParamSet<T>& params, const nlohmann::json& config);

template <typename T>
struct Checkpoint {
  ParamSet<T> params;
  nlohmann::json config;
};

// Stored dtype must match T.
template <typename T>
Checkpoint<T> load_checkpoint(std::istream& in);

template <typename T>
void save_checkpoint_file(const std::string& path, const ParamSet<T>& params,
                          const nlohmann::json& config);
template <typename T>
Checkpoint<T> load_checkpoint_file(const std::string& path);

}  // namespace cimate::nn
