#pragma once

#include <string>

#include "uaplab/model.hpp"

namespace uaplab {

// Binary checkpoint: magic "UAPM", version u16 LE, arch_id (u16 length prefix,
// UTF-8), num_classes u32, input dims 3x u32, parameter count u64, parameters
// f32 LE, trailing CRC32 over all preceding bytes.
constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const ClassifierModel& model, const std::string& path);
ClassifierModel load_checkpoint(const std::string& path);

} // namespace uaplab
