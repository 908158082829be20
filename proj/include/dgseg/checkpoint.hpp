#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dgseg/controller.hpp"
#include "dgseg/nn.hpp"

namespace dgseg {

/// Single-array container:
///   8 bytes  magic "DGARR\0\1\0"
///   u32      name length, then the name bytes (UTF-8)
///   u8       dtype (1 = float64)
///   u8       ndim
///   u64      dims[ndim]
///   f64      row-major data
/// All integers and floats little-endian.
void write_array(const std::filesystem::path& path, const std::string& name, const RowMatrix& value);
RowMatrix read_array(const std::filesystem::path& path, std::string* name = nullptr);

struct CheckpointData {
    int stage = 0;
    long iteration = 0;  // global iterations completed
    std::string config_hash;
    ControllerState controller;
    std::optional<nn::ParamSet> teacher;
    std::optional<nn::ParamSet> student;
    bool fusion_active = false;
    // Optimizer state for the model currently being trained.
    std::vector<RowMatrix> adam_m, adam_v;
    std::vector<long> adam_t;
};

/// Directory layout: manifest.json, teacher/<param>.bin, student/<param>.bin,
/// optim/m/<param>.bin, optim/v/<param>.bin. `templ` supplies names/order.
void save_checkpoint(const std::filesystem::path& dir, const CheckpointData& ck, const nn::ParamSet& templ);
/// Throws DataError when the directory or any array is missing or malformed.
CheckpointData load_checkpoint(const std::filesystem::path& dir, const nn::ParamSet& templ);

}  // namespace dgseg
