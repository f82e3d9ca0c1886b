#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "core/png.hpp"

namespace storygen::cli {

// One row per story, one column per frame, written as a single PNG with the
// captions in a text file next to it. Frames are planar [0,1] floats of
// identical size. Output bytes are a pure function of the inputs.
void render_frame_grid(const std::vector<std::vector<std::vector<double>>>& stories,
                       const std::vector<std::vector<std::string>>& captions, int image_size,
                       const std::filesystem::path& out_png);

}  // namespace storygen::cli
