#pragma once

#include <string>
#include <vector>

#include "warpcell/synth.hpp"

namespace warpcell {

/// JSON object text <-> generator configuration. Unknown keys are ignored;
/// missing keys keep their defaults.
std::string synth_config_to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const std::string& text);

/// Directory layout: dataset.json (per-sequence config, boxes, centers and
/// occlusion flags) plus seqNNN/frameTTT.ten and seqNNN/flowTTT.ten blobs.
void save_sequences(const std::string& dir, const std::vector<SynthSequence>& sequences);
std::vector<SynthSequence> load_sequences(const std::string& dir);

}  // namespace warpcell
