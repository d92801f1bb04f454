#pragma once

#include <array>
#include <string>
#include <vector>

namespace docie::glyphs {

inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;

// Row-major 5x7 bitmap for a character; unknown characters get a filled block.
const std::array<const char*, kGlyphHeight>& bitmap(char c);

// Stamps `text` into a grayscale page buffer (ink value 1.0) with the glyph
// scaled by `scale`, starting at (x, y). Advance per character is 6*scale.
void render_text(std::vector<double>& page, int page_width, int page_height,
                 const std::string& text, int x, int y, int scale);

// Box size the renderer needs for `n` characters at `scale`, including a
// one-glyph-pixel margin on each side.
int text_box_width(int n_chars, int scale);
int text_box_height(int scale);

}  // namespace docie::glyphs
