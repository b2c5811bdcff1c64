#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msd/core.hpp"
#include "msd/sampling.hpp"

namespace msd {

// Writes `bytes` to a sibling temp file, then renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& bytes);

// Raw dump: "MSD1", u32 C, u32 H, u32 W (little-endian), then C*H*W little-endian f64.
std::string encode_raw(const LatentImage& z);
LatentImage decode_raw(const std::string& bytes);
void write_raw(const std::string& path, const LatentImage& z);
LatentImage read_raw(const std::string& path);

// Values in [-3, 3] map linearly onto the full intensity range (clamped). Three channels
// become 8-bit RGB; anything else is written as 16-bit grayscale of channel 0.
std::string encode_png(const LatentImage& z);
void write_png(const std::string& path, const LatentImage& z);

nlohmann::json to_json(const StepTrace& trace);
std::string trace_line(const StepTrace& trace);

}  // namespace msd
