#pragma once

#include <iosfwd>
#include <string>

#include "icelab/model.hpp"

namespace icelab {

// Single-file checkpoint: a text header with the model configuration and a
// manifest of (name, shape, byte offset), then the parameter arrays as
// little-endian IEEE-754 doubles.
void write_checkpoint(std::ostream& os, const Model& m);
Model read_checkpoint(std::istream& is);

void save_checkpoint(const std::string& path, const Model& m);
Model load_checkpoint(const std::string& path);

// key = value lines for the model configuration, as used in the header and in
// config files.
std::string model_config_text(const ModelConfig& c);

}  // namespace icelab
