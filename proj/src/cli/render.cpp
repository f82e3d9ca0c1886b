#include "cli/render.hpp"

#include <sstream>
#include <stdexcept>

#include "core/io.hpp"
#include "data/story.hpp"

namespace storygen::cli {

void render_frame_grid(const std::vector<std::vector<std::vector<double>>>& stories,
                       const std::vector<std::vector<std::string>>& captions, int image_size,
                       const std::filesystem::path& out_png) {
  if (stories.empty() || stories.front().empty())
    throw std::invalid_argument("render_frame_grid: nothing to render");
  const int rows = static_cast<int>(stories.size());
  const int cols = static_cast<int>(stories.front().size());
  for (const auto& story : stories)
    if (static_cast<int>(story.size()) != cols)
      throw std::invalid_argument("render_frame_grid: stories have differing frame counts");
  if (captions.size() != stories.size())
    throw std::invalid_argument("render_frame_grid: one caption list per story required");

  const int h = image_size;
  Rgb8Image grid;
  grid.width = cols * h;
  grid.height = rows * h;
  grid.pixels.assign(static_cast<size_t>(3) * grid.width * grid.height, 0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Rgb8Image frame = data::chw_to_frame(stories[static_cast<size_t>(r)][static_cast<size_t>(c)], h);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < h; ++x)
          for (int ch = 0; ch < 3; ++ch)
            grid.pixels[((static_cast<size_t>(r) * h + y) * grid.width + c * h + x) * 3 + ch] =
                frame.pixels[(static_cast<size_t>(y) * h + x) * 3 + ch];
    }
  }
  write_png(out_png, grid);

  std::ostringstream text;
  for (size_t r = 0; r < captions.size(); ++r) {
    text << "story " << r << "\n";
    for (size_t c = 0; c < captions[r].size(); ++c)
      text << "  " << (c + 1) << ". " << captions[r][c] << "\n";
  }
  auto caption_path = out_png;
  caption_path.replace_extension(".txt");
  write_text_file(caption_path, text.str());
}

}  // namespace storygen::cli
