#pragma once

#include <string>

#include "dmhe/system_model.hpp"

namespace dmhe {

// Linear model files (YAML):
//   partition: {state_dims: [..], output_dims: [..]}
//   A: [{row: i, col: l, data: [[..], ..]}, ..]   absent blocks are zero
//   C: [ C_11, C_22, .. ]                         one matrix per subsystem
//   Q, R, P0: one entry per subsystem, a scalar (×I) or a matrix
PartitionedLinearModel parse_linear_model(const std::string& yaml_text);
PartitionedLinearModel load_linear_model(const std::string& path);
std::string linear_model_to_yaml(const PartitionedLinearModel& model);

}  // namespace dmhe
