#pragma once

#include <string>

#include "icicle/model.hpp"

namespace icicle {

// "ICKP" binary checkpoint: magic, format version u16, the model
// configuration, named f64 parameter blocks, per-head metadata
// (task id, class list, prototypes, assignment), trailing CRC32.
// All integers little-endian; round-trip is bitwise lossless.
void save_checkpoint(const std::string& path, const IcicleModel& model);
IcicleModel load_checkpoint(const std::string& path);

}  // namespace icicle
