#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace docie::docdata {

struct parse_error : std::runtime_error {
  explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct validation_error : std::runtime_error {
  explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct usage_error : std::runtime_error {
  explicit usage_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Pixel box, top-left inclusive, bottom-right exclusive-ish per x0<x1, y0<y1.
struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool operator==(const BoundingBox&) const = default;
};

struct TextInstance {
  BoundingBox box;
  std::string text;
  std::vector<std::string> tags;  // per character: "O", "B-<class>", "I-<class>"
};

struct Entity {
  std::string cls;
  std::string value;
  bool operator==(const Entity&) const = default;
};

struct DocumentSample {
  int page_width = 0;
  int page_height = 0;
  std::string category;  // "I", "II", "III", "IV"
  std::vector<TextInstance> instances;
  std::vector<double> raster;  // row-major page_height x page_width in [0,1]

  bool has_raster() const { return !raster.empty(); }
};

// Character set with reserved PAD/GO/EOS/UNK at indices 0..3, then characters
// in first-appearance order over the corpus.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kGo = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocabulary();

  int size() const { return static_cast<int>(chars_.size()) + 4; }
  void add_char(char c);
  int encode_char(char c) const;  // unseen -> kUnk
  std::vector<int> encode(const std::string& text) const;
  // Reserved indices decode to nothing; unknown index is a contract violation.
  std::string decode(const std::vector<int>& indices) const;
  // One output character per index; reserved symbols become '?'.
  std::string decode_aligned(const std::vector<int>& indices) const;
  char char_at(int index) const;  // index must be >= 4
  const std::string& charset() const { return chars_; }

 private:
  std::string chars_;
  std::unordered_map<char, int> index_;
};

Vocabulary build_vocabulary(const std::vector<DocumentSample>& samples);

struct Tag {
  char kind = 'O';  // 'O', 'B', 'I'
  std::string cls;  // empty for O
};

Tag parse_tag(const std::string& tag);

// Maximal B-k (I-k)* runs; an I-k without a preceding B-k/I-k of the same
// class starts a new entity.
std::vector<Entity> entities_from_tags(const std::string& text,
                                       const std::vector<std::string>& tags);
std::vector<Entity> gold_entities(const TextInstance& instance);
std::vector<Entity> collect_gold_entities(const DocumentSample& sample);

void validate(const DocumentSample& sample, size_t sample_index);

// Annotation JSON plus sibling "<stem>_rasters/NNNNNN.pgm" files (P5).
std::vector<DocumentSample> load_annotations(const std::string& path);
void save_annotations(const std::string& path, const std::vector<DocumentSample>& samples);

void write_pgm(const std::string& path, int width, int height,
               const std::vector<double>& gray);
std::vector<double> read_pgm(const std::string& path, int& width, int& height);

// Deterministic per (seed, index). Category I: fixed key/value template.
// II: fixed layout free-text lines with embedded entities. III: shuffled and
// jittered key/value rows. IV: shuffled free-text lines.
std::vector<DocumentSample> synthesize_documents(const std::string& category, int count,
                                                 std::uint64_t seed);

// Entity classes a category's generator emits.
std::vector<std::string> category_entity_classes(const std::string& category);

}  // namespace docie::docdata
