#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>

#include "ngmf/model.h"

namespace ngmf {

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::int64_t step = 0;
  std::optional<ModelParams> adam_m;
  std::optional<ModelParams> adam_v;
  std::map<std::string, std::string> metadata;
};

// Little-endian binary container: magic "ngmf-ckpt v1", config text, step,
// metadata, named f64 tensors, then optional optimizer moments.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
// Throws ParseError on a bad magic, truncation, or tensors that do not fit
// the stored config.
Checkpoint read_checkpoint(std::istream& in, const std::string& source_name);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ngmf
