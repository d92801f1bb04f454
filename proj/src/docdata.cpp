#include "docie/docdata.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>

#include "docie/glyphs.hpp"

namespace docie::docdata {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// vocabulary

Vocabulary::Vocabulary() = default;

void Vocabulary::add_char(char c) {
  if (index_.count(c)) return;
  index_[c] = static_cast<int>(chars_.size()) + 4;
  chars_.push_back(c);
}

int Vocabulary::encode_char(char c) const {
  auto it = index_.find(c);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(encode_char(c));
  return out;
}

char Vocabulary::char_at(int index) const {
  if (index < 4 || index >= size()) {
    throw validation_error("vocabulary: index " + std::to_string(index) +
                           " is not a character index");
  }
  return chars_[static_cast<size_t>(index - 4)];
}

std::string Vocabulary::decode(const std::vector<int>& indices) const {
  std::string out;
  for (int idx : indices) {
    if (idx >= 4) out.push_back(char_at(idx));
  }
  return out;
}

std::string Vocabulary::decode_aligned(const std::vector<int>& indices) const {
  std::string out;
  for (int idx : indices) out.push_back(idx >= 4 ? char_at(idx) : '?');
  return out;
}

Vocabulary build_vocabulary(const std::vector<DocumentSample>& samples) {
  Vocabulary vocab;
  for (const auto& sample : samples)
    for (const auto& instance : sample.instances)
      for (char c : instance.text) vocab.add_char(c);
  return vocab;
}

// ---------------------------------------------------------------------------
// IOB tags and entities

Tag parse_tag(const std::string& tag) {
  if (tag == "O") return {'O', ""};
  if (tag.size() >= 3 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
    return {tag[0], tag.substr(2)};
  }
  throw validation_error("unknown tag string \"" + tag + "\"");
}

std::vector<Entity> entities_from_tags(const std::string& text,
                                       const std::vector<std::string>& tags) {
  if (text.size() != tags.size()) {
    throw validation_error("tags length " + std::to_string(tags.size()) +
                           " does not match text length " + std::to_string(text.size()));
  }
  std::vector<Entity> entities;
  std::string open_cls;
  std::string open_value;
  auto flush = [&] {
    if (!open_cls.empty()) {
      entities.push_back({open_cls, open_value});
      open_cls.clear();
      open_value.clear();
    }
  };
  for (size_t i = 0; i < tags.size(); ++i) {
    const Tag tag = parse_tag(tags[i]);
    if (tag.kind == 'O') {
      flush();
    } else if (tag.kind == 'B' || (tag.kind == 'I' && tag.cls != open_cls)) {
      flush();
      open_cls = tag.cls;
      open_value.push_back(text[i]);
    } else {  // I continuing the open run
      open_value.push_back(text[i]);
    }
  }
  flush();
  return entities;
}

std::vector<Entity> gold_entities(const TextInstance& instance) {
  return entities_from_tags(instance.text, instance.tags);
}

std::vector<Entity> collect_gold_entities(const DocumentSample& sample) {
  std::vector<Entity> all;
  for (const auto& instance : sample.instances) {
    auto part = gold_entities(instance);
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

// ---------------------------------------------------------------------------
// validation

void validate(const DocumentSample& sample, size_t sample_index) {
  const std::string where = "sample " + std::to_string(sample_index);
  if (sample.page_width <= 0 || sample.page_height <= 0) {
    throw validation_error(where + ": page_size must be positive");
  }
  if (sample.category != "I" && sample.category != "II" && sample.category != "III" &&
      sample.category != "IV") {
    throw validation_error(where + ": category \"" + sample.category + "\" unknown");
  }
  if (sample.instances.empty()) {
    throw validation_error(where + ": instances must be non-empty");
  }
  if (sample.has_raster() &&
      sample.raster.size() !=
          static_cast<size_t>(sample.page_width) * static_cast<size_t>(sample.page_height)) {
    throw validation_error(where + ": raster size does not match page_size");
  }
  for (size_t i = 0; i < sample.instances.size(); ++i) {
    const auto& inst = sample.instances[i];
    const std::string field = where + " instance " + std::to_string(i);
    if (!(inst.box.x0 < inst.box.x1 && inst.box.y0 < inst.box.y1 && inst.box.x0 >= 0 &&
          inst.box.y0 >= 0)) {
      throw validation_error(field + ": bbox is degenerate");
    }
    if (inst.box.x1 > sample.page_width || inst.box.y1 > sample.page_height) {
      throw validation_error(field + ": bbox exceeds page_size");
    }
    if (inst.text.empty()) {
      throw validation_error(field + ": text must be non-empty");
    }
    if (inst.tags.size() != inst.text.size()) {
      throw validation_error(field + ": tags length " + std::to_string(inst.tags.size()) +
                             " does not match text length " + std::to_string(inst.text.size()));
    }
    for (const auto& tag : inst.tags) parse_tag(tag);  // throws on unknown tag
  }
}

// ---------------------------------------------------------------------------
// PGM

void write_pgm(const std::string& path, int width, int height,
               const std::vector<double>& gray) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pgm: cannot open " + path + " for writing");
  out << "P5\n" << width << " " << height << "\n255\n";
  for (double v : gray) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    out.put(static_cast<char>(static_cast<unsigned char>(clamped * 255.0 + 0.5)));
  }
}

std::vector<double> read_pgm(const std::string& path, int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pgm: cannot open " + path);
  std::string magic;
  int maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (magic != "P5" || maxval != 255 || width <= 0 || height <= 0) {
    throw parse_error("pgm: " + path + " is not an 8-bit P5 file");
  }
  in.get();  // single whitespace after header
  std::vector<double> gray(static_cast<size_t>(width) * height);
  for (auto& v : gray) {
    const int byte = in.get();
    if (byte == EOF) throw parse_error("pgm: " + path + " truncated");
    v = static_cast<double>(byte) / 255.0;
  }
  return gray;
}

// ---------------------------------------------------------------------------
// annotation JSON

namespace {

std::string raster_dir_for(const std::string& path) {
  fs::path p(path);
  fs::path dir = p.parent_path();
  std::string stem = p.stem().string();
  return (dir / (stem + "_rasters")).string();
}

std::string raster_file_for(const std::string& path, size_t index) {
  char name[32];
  std::snprintf(name, sizeof(name), "%06zu.pgm", index);
  return (fs::path(raster_dir_for(path)) / name).string();
}

}  // namespace

std::vector<DocumentSample> load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("annotations: cannot open " + path);
  json root;
  try {
    root = json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error("annotations: " + path + ": parse error at byte " +
                      std::to_string(e.byte) + ": " + e.what());
  }
  std::vector<DocumentSample> samples;
  if (!root.contains("samples") || !root["samples"].is_array()) {
    throw validation_error("annotations: " + path + ": missing \"samples\" array");
  }
  size_t index = 0;
  for (const auto& js : root["samples"]) {
    DocumentSample sample;
    try {
      sample.page_width = js.at("page_size").at(0).get<int>();
      sample.page_height = js.at("page_size").at(1).get<int>();
      sample.category = js.at("category").get<std::string>();
      for (const auto& ji : js.at("instances")) {
        TextInstance inst;
        inst.box.x0 = ji.at("bbox").at(0).get<int>();
        inst.box.y0 = ji.at("bbox").at(1).get<int>();
        inst.box.x1 = ji.at("bbox").at(2).get<int>();
        inst.box.y1 = ji.at("bbox").at(3).get<int>();
        inst.text = ji.at("text").get<std::string>();
        inst.tags = ji.at("tags").get<std::vector<std::string>>();
        sample.instances.push_back(std::move(inst));
      }
    } catch (const nlohmann::json::exception& e) {
      throw validation_error("annotations: sample " + std::to_string(index) + ": " + e.what());
    }
    const std::string raster_path = raster_file_for(path, index);
    if (fs::exists(raster_path)) {
      int w = 0, h = 0;
      sample.raster = read_pgm(raster_path, w, h);
      if (w != sample.page_width || h != sample.page_height) {
        throw validation_error("annotations: sample " + std::to_string(index) +
                               ": raster dimensions do not match page_size");
      }
    }
    validate(sample, index);
    samples.push_back(std::move(sample));
    ++index;
  }
  return samples;
}

void save_annotations(const std::string& path, const std::vector<DocumentSample>& samples) {
  for (size_t i = 0; i < samples.size(); ++i) validate(samples[i], i);
  json root;
  root["samples"] = json::array();
  bool any_raster = false;
  for (const auto& sample : samples) {
    json js;
    js["page_size"] = {sample.page_width, sample.page_height};
    js["category"] = sample.category;
    js["instances"] = json::array();
    for (const auto& inst : sample.instances) {
      json ji;
      ji["bbox"] = {inst.box.x0, inst.box.y0, inst.box.x1, inst.box.y1};
      ji["text"] = inst.text;
      ji["tags"] = inst.tags;
      js["instances"].push_back(std::move(ji));
    }
    root["samples"].push_back(std::move(js));
    any_raster = any_raster || sample.has_raster();
  }
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("annotations: cannot open " + path + " for writing");
  out << root.dump(2) << "\n";
  if (any_raster) {
    fs::create_directories(raster_dir_for(path));
    for (size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].has_raster()) {
        write_pgm(raster_file_for(path, i), samples[i].page_width, samples[i].page_height,
                  samples[i].raster);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// synthetic generator

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string random_digits(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<int> d(0, 9);
  std::string s;
  for (int i = 0; i < n; ++i) s.push_back(static_cast<char>('0' + d(rng)));
  return s;
}

std::string random_letters(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<int> d(0, 25);
  std::string s;
  for (int i = 0; i < n; ++i) s.push_back(static_cast<char>('A' + d(rng)));
  return s;
}

std::string random_date(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> month(1, 12), day(1, 28);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d/%02d", month(rng), day(rng));
  return buf;
}

std::string random_time(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> hour(0, 23), minute(0, 59);
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%02d:%02d", hour(rng), minute(rng));
  return buf;
}

std::string random_amount(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> whole(0, 99), cents(0, 9);
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%02d.%d", whole(rng), cents(rng));
  return buf;
}

std::vector<std::string> tags_for(const std::string& text, const std::string& cls) {
  std::vector<std::string> tags(text.size(), "O");
  if (!cls.empty() && !text.empty()) {
    tags[0] = "B-" + cls;
    for (size_t i = 1; i < text.size(); ++i) tags[i] = "I-" + cls;
  }
  return tags;
}

// A text segment with an optional entity class covering it.
struct Segment {
  std::string text;
  std::string cls;  // empty = outside any entity
};

TextInstance make_instance(const std::vector<Segment>& segments, int x, int y, int scale,
                           DocumentSample& sample) {
  std::string text;
  std::vector<std::string> tags;
  for (const auto& seg : segments) {
    auto seg_tags = tags_for(seg.text, seg.cls);
    text += seg.text;
    tags.insert(tags.end(), seg_tags.begin(), seg_tags.end());
  }
  TextInstance inst;
  inst.box = {x, y, x + glyphs::text_box_width(static_cast<int>(text.size()), scale),
              y + glyphs::text_box_height(scale)};
  inst.text = text;
  inst.tags = std::move(tags);
  glyphs::render_text(sample.raster, sample.page_width, sample.page_height, text,
                      x + scale, y + scale, scale);
  return inst;
}

DocumentSample blank_page(const std::string& category, int width, int height) {
  DocumentSample sample;
  sample.category = category;
  sample.page_width = width;
  sample.page_height = height;
  sample.raster.assign(static_cast<size_t>(width) * height, 0.0);
  return sample;
}

std::string value_for(const std::string& cls, std::mt19937_64& rng) {
  if (cls == "DATE") return random_date(rng);
  if (cls == "ON" || cls == "OFF" || cls == "WAIT") return random_time(rng);
  if (cls == "PRICE" || cls == "DIST" || cls == "TOTAL" || cls == "AMT")
    return random_amount(rng);
  if (cls == "CODE" || cls == "NUM") return random_digits(rng, 4);
  if (cls == "NAME") return random_letters(rng, 5);
  if (cls == "ORG") return random_letters(rng, 4);
  if (cls == "REF") return random_letters(rng, 3);
  return random_digits(rng, 4);
}

// Base glyph scale 1 keeps the 5x7 bitmaps nearly intact through the 8-row
// crop resize, which the toy recognizer depends on.
constexpr int kScale = 1;

DocumentSample make_category1(std::mt19937_64& rng) {
  DocumentSample sample = blank_page("I", 280, 200);
  sample.instances.push_back(make_instance({{"TAXI INVOICE", ""}}, 90, 6, kScale, sample));
  const auto classes = category_entity_classes("I");
  for (size_t i = 0; i < classes.size(); ++i) {
    const int y = 26 + 18 * static_cast<int>(i);
    sample.instances.push_back(
        make_instance({{classes[i] + ":", ""}}, 16, y, kScale, sample));
    sample.instances.push_back(
        make_instance({{value_for(classes[i], rng), classes[i]}}, 90, y, kScale, sample));
  }
  return sample;
}

DocumentSample make_category2(std::mt19937_64& rng) {
  DocumentSample sample = blank_page("II", 300, 160);
  sample.instances.push_back(make_instance({{"BUSINESS EMAIL", ""}}, 80, 6, kScale, sample));
  sample.instances.push_back(make_instance({{"FROM ", ""},
                                            {random_letters(rng, 8), "NAME"},
                                            {" SENT ", ""},
                                            {random_date(rng), "DATE"}},
                                           16, 36, kScale, sample));
  sample.instances.push_back(make_instance({{"ORG ", ""},
                                            {random_letters(rng, 6), "ORG"},
                                            {" REF ", ""},
                                            {random_letters(rng, 5), "REF"}},
                                           16, 60, kScale, sample));
  sample.instances.push_back(
      make_instance({{"PLEASE REVIEW THE REPORT", ""}}, 16, 84, kScale, sample));
  sample.instances.push_back(make_instance({{"CONTACT ", ""},
                                            {random_letters(rng, 8), "NAME"}},
                                           16, 108, kScale, sample));
  return sample;
}

DocumentSample make_category3(std::mt19937_64& rng) {
  DocumentSample sample = blank_page("III", 280, 220);
  std::uniform_int_distribution<int> title_x(80, 140);
  sample.instances.push_back(
      make_instance({{"RECEIPT", ""}}, title_x(rng), 6, kScale, sample));
  auto classes = category_entity_classes("III");
  std::shuffle(classes.begin(), classes.end(), rng);
  std::uniform_int_distribution<int> jitter_x(-8, 8), jitter_y(-3, 3), gap(10, 26);
  for (size_t i = 0; i < classes.size(); ++i) {
    const int y = 30 + 28 * static_cast<int>(i) + jitter_y(rng);
    const int key_x = 16 + 8 + jitter_x(rng);
    const std::string key = classes[i] + ":";
    sample.instances.push_back(make_instance({{key, ""}}, key_x, y, kScale, sample));
    const int value_scale = classes[i] == "TOTAL" ? 2 * kScale : kScale;
    const int value_x =
        key_x + glyphs::text_box_width(static_cast<int>(key.size()), kScale) + gap(rng);
    sample.instances.push_back(
        make_instance({{value_for(classes[i], rng), classes[i]}}, value_x, y, value_scale,
                      sample));
  }
  return sample;
}

DocumentSample make_category4(std::mt19937_64& rng) {
  DocumentSample sample = blank_page("IV", 300, 200);
  std::uniform_int_distribution<int> title_x(100, 150);
  sample.instances.push_back(
      make_instance({{"CONTRACT", ""}}, title_x(rng), 6, kScale, sample));
  std::vector<std::vector<Segment>> lines;
  lines.push_back({{"PAID ", ""},
                   {random_amount(rng), "AMT"},
                   {" ON ", ""},
                   {random_date(rng), "DATE"}});
  lines.push_back({{"SIGNED ", ""}, {random_letters(rng, 8), "NAME"}});
  lines.push_back({{"REF ", ""}, {random_letters(rng, 5), "REF"}, {" APPROVED", ""}});
  lines.push_back({{"SEE ATTACHED TERMS", ""}});
  std::shuffle(lines.begin(), lines.end(), rng);
  std::uniform_int_distribution<int> jitter_x(-8, 10), jitter_y(-4, 4);
  for (size_t i = 0; i < lines.size(); ++i) {
    const int y = 36 + 30 * static_cast<int>(i) + jitter_y(rng);
    const int x = 20 + jitter_x(rng);
    sample.instances.push_back(make_instance(lines[i], x, y, kScale, sample));
  }
  return sample;
}

}  // namespace

std::vector<std::string> category_entity_classes(const std::string& category) {
  if (category == "I")
    return {"CODE", "NUM", "DATE", "ON", "OFF", "PRICE", "DIST", "WAIT", "TOTAL"};
  if (category == "II") return {"NAME", "DATE", "ORG", "REF"};
  if (category == "III") return {"DATE", "NUM", "PRICE", "DIST", "WAIT", "TOTAL"};
  if (category == "IV") return {"NAME", "DATE", "AMT", "REF"};
  throw usage_error("unknown category \"" + category + "\" (expected I, II, III or IV)");
}

std::vector<DocumentSample> synthesize_documents(const std::string& category, int count,
                                                 std::uint64_t seed) {
  category_entity_classes(category);  // validates the category name
  if (count < 1) throw usage_error("count must be >= 1");
  std::vector<DocumentSample> samples;
  samples.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(i) + 1)));
    DocumentSample sample;
    if (category == "I") sample = make_category1(rng);
    else if (category == "II") sample = make_category2(rng);
    else if (category == "III") sample = make_category3(rng);
    else sample = make_category4(rng);
    validate(sample, static_cast<size_t>(i));
    samples.push_back(std::move(sample));
  }
  return samples;
}

}  // namespace docie::docdata
