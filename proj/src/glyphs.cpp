#include "docie/glyphs.hpp"

#include <unordered_map>

namespace docie::glyphs {

namespace {

using Bitmap = std::array<const char*, kGlyphHeight>;

const Bitmap kUnknown = {"XXXXX", "X.X.X", "XX.XX", "X.X.X", "XX.XX", "X.X.X", "XXXXX"};
const Bitmap kSpace = {".....", ".....", ".....", ".....", ".....", ".....", "....."};

const std::unordered_map<char, Bitmap>& table() {
  static const std::unordered_map<char, Bitmap> glyphs = {
      {'0', {".XXX.", "X...X", "X..XX", "X.X.X", "XX..X", "X...X", ".XXX."}},
      {'1', {"..X..", ".XX..", "..X..", "..X..", "..X..", "..X..", ".XXX."}},
      {'2', {".XXX.", "X...X", "....X", "...X.", "..X..", ".X...", "XXXXX"}},
      {'3', {"XXXXX", "...X.", "..X..", "...X.", "....X", "X...X", ".XXX."}},
      {'4', {"...X.", "..XX.", ".X.X.", "X..X.", "XXXXX", "...X.", "...X."}},
      {'5', {"XXXXX", "X....", "XXXX.", "....X", "....X", "X...X", ".XXX."}},
      {'6', {"..XX.", ".X...", "X....", "XXXX.", "X...X", "X...X", ".XXX."}},
      {'7', {"XXXXX", "....X", "...X.", "..X..", ".X...", ".X...", ".X..."}},
      {'8', {".XXX.", "X...X", "X...X", ".XXX.", "X...X", "X...X", ".XXX."}},
      {'9', {".XXX.", "X...X", "X...X", ".XXXX", "....X", "...X.", ".XX.."}},
      {'A', {".XXX.", "X...X", "X...X", "XXXXX", "X...X", "X...X", "X...X"}},
      {'B', {"XXXX.", "X...X", "X...X", "XXXX.", "X...X", "X...X", "XXXX."}},
      {'C', {".XXX.", "X...X", "X....", "X....", "X....", "X...X", ".XXX."}},
      {'D', {"XXXX.", "X...X", "X...X", "X...X", "X...X", "X...X", "XXXX."}},
      {'E', {"XXXXX", "X....", "X....", "XXXX.", "X....", "X....", "XXXXX"}},
      {'F', {"XXXXX", "X....", "X....", "XXXX.", "X....", "X....", "X...."}},
      {'G', {".XXX.", "X...X", "X....", "X.XXX", "X...X", "X...X", ".XXXX"}},
      {'H', {"X...X", "X...X", "X...X", "XXXXX", "X...X", "X...X", "X...X"}},
      {'I', {".XXX.", "..X..", "..X..", "..X..", "..X..", "..X..", ".XXX."}},
      {'J', {"..XXX", "...X.", "...X.", "...X.", "...X.", "X..X.", ".XX.."}},
      {'K', {"X...X", "X..X.", "X.X..", "XX...", "X.X..", "X..X.", "X...X"}},
      {'L', {"X....", "X....", "X....", "X....", "X....", "X....", "XXXXX"}},
      {'M', {"X...X", "XX.XX", "X.X.X", "X.X.X", "X...X", "X...X", "X...X"}},
      {'N', {"X...X", "X...X", "XX..X", "X.X.X", "X..XX", "X...X", "X...X"}},
      {'O', {".XXX.", "X...X", "X...X", "X...X", "X...X", "X...X", ".XXX."}},
      {'P', {"XXXX.", "X...X", "X...X", "XXXX.", "X....", "X....", "X...."}},
      {'Q', {".XXX.", "X...X", "X...X", "X...X", "X.X.X", "X..X.", ".XX.X"}},
      {'R', {"XXXX.", "X...X", "X...X", "XXXX.", "X.X..", "X..X.", "X...X"}},
      {'S', {".XXXX", "X....", "X....", ".XXX.", "....X", "....X", "XXXX."}},
      {'T', {"XXXXX", "..X..", "..X..", "..X..", "..X..", "..X..", "..X.."}},
      {'U', {"X...X", "X...X", "X...X", "X...X", "X...X", "X...X", ".XXX."}},
      {'V', {"X...X", "X...X", "X...X", "X...X", "X...X", ".X.X.", "..X.."}},
      {'W', {"X...X", "X...X", "X...X", "X.X.X", "X.X.X", "XX.XX", "X...X"}},
      {'X', {"X...X", "X...X", ".X.X.", "..X..", ".X.X.", "X...X", "X...X"}},
      {'Y', {"X...X", "X...X", ".X.X.", "..X..", "..X..", "..X..", "..X.."}},
      {'Z', {"XXXXX", "....X", "...X.", "..X..", ".X...", "X....", "XXXXX"}},
      {':', {".....", "..X..", "..X..", ".....", "..X..", "..X..", "....."}},
      {'-', {".....", ".....", ".....", "XXXXX", ".....", ".....", "....."}},
      {'/', {"....X", "....X", "...X.", "..X..", ".X...", "X....", "X...."}},
      {'.', {".....", ".....", ".....", ".....", ".....", ".XX..", ".XX.."}},
      {' ', kSpace},
  };
  return glyphs;
}

}  // namespace

const std::array<const char*, kGlyphHeight>& bitmap(char c) {
  auto it = table().find(c);
  return it == table().end() ? kUnknown : it->second;
}

void render_text(std::vector<double>& page, int page_width, int page_height,
                 const std::string& text, int x, int y, int scale) {
  for (size_t i = 0; i < text.size(); ++i) {
    const auto& glyph = bitmap(text[i]);
    const int base_x = x + static_cast<int>(i) * 6 * scale;
    for (int gy = 0; gy < kGlyphHeight; ++gy)
      for (int gx = 0; gx < kGlyphWidth; ++gx) {
        if (glyph[static_cast<size_t>(gy)][gx] != 'X') continue;
        for (int sy = 0; sy < scale; ++sy)
          for (int sx = 0; sx < scale; ++sx) {
            const int px = base_x + gx * scale + sx;
            const int py = y + gy * scale + sy;
            if (px >= 0 && px < page_width && py >= 0 && py < page_height)
              page[static_cast<size_t>(py) * page_width + px] = 1.0;
          }
      }
  }
}

int text_box_width(int n_chars, int scale) { return (n_chars * 6 + 1) * scale; }

int text_box_height(int scale) { return (kGlyphHeight + 2) * scale; }

}  // namespace docie::glyphs
