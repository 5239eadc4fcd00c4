#pragma once

#include "viewset/model.hpp"
#include "viewset/tensor.hpp"

#include <map>
#include <string>

namespace viewset {

// Flat key -> tensor archive. Binary layout: magic "VSARCH01", u64 entry
// count, then per entry: u32 key length + key bytes, u32 rank, u32 extents,
// then the values as little-endian 64-bit floats. Byte-identical for
// identical contents.
void save_archive(const std::string& path, const std::map<std::string, Tensor>& entries);
std::map<std::string, Tensor> load_archive(const std::string& path);

// Collects every parameter and state tensor of the model under its key.
std::map<std::string, Tensor> snapshot(Model& model);
// Writes a snapshot of the model to path.
void save_checkpoint(const std::string& path, Model& model);
// Restores a snapshot. The archive must carry exactly the model's keys with
// matching shapes; violations raise a state error naming the offending key.
void load_checkpoint(const std::string& path, Model& model);

} // namespace viewset
