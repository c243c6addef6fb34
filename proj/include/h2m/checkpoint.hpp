#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "h2m/nn.hpp"
#include "h2m/optim.hpp"

namespace h2m {

// Binary layout, little-endian:
//   "H2MC" | version u32 | count u32 |
//   count x ( name_len u16 | name | rank u8 | dims u32 x rank | f64 x numel )
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& records);
std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

std::vector<NamedTensor> to_records(const ParamSet& params, const std::string& prefix = "");
// Copies every parameter of `params` from records named prefix+name.
void assign_from_records(ParamSet& params, const std::vector<NamedTensor>& records, const std::string& prefix = "");

// Optimizer moments travel as "<prefix>m.<param>", "<prefix>v.<param>" plus a
// one-element "<prefix>step" record.
void append_adam_records(std::vector<NamedTensor>& out, const ParamSet& params, const AdamState& state,
                         const std::string& prefix = "adam.");
AdamState adam_from_records(const ParamSet& params, const std::vector<NamedTensor>& records,
                            const std::string& prefix = "adam.");

const NamedTensor* find_record(const std::vector<NamedTensor>& records, const std::string& name);

}  // namespace h2m
